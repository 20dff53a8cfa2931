#include "cmrf/cam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "cmrf/cie.hpp"
#include "cmrf/codec.hpp"
#include "cmrf/error.hpp"
#include "cmrf/prompts.hpp"
#include "cmrf/rdu.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

void validate(const CamScorerParams& params) {
  for (double w : params.weights) {
    if (!std::isfinite(w)) throw Error(Errc::invalid_argument, "scorer weight is not finite");
  }
  if (!std::isfinite(params.bias)) throw Error(Errc::invalid_argument, "scorer bias is not finite");
  if (!std::isfinite(params.margin) || params.margin <= 0) {
    throw Error(Errc::invalid_argument, "scorer margin must be > 0");
  }
}

std::string_view to_string(CamMode m) {
  switch (m) {
    case CamMode::prompted: return "prompted";
    case CamMode::trained: return "trained";
    case CamMode::mean_of_both: return "mean-of-both";
  }
  return "prompted";
}

std::optional<CamMode> cam_mode_from_string(std::string_view s) {
  if (s == "prompted") return CamMode::prompted;
  if (s == "trained") return CamMode::trained;
  if (s == "mean-of-both") return CamMode::mean_of_both;
  return std::nullopt;
}

std::optional<Verdict> parse_verdict(std::string_view reply, bool require_flaw) {
  static const std::regex score_re(R"(^\s*\**SCORE\**\s*:\s*\**\s*(\d+)(?:\s*/\s*10)?\s*\**\s*$)",
                                   std::regex::icase);
  static const std::regex flaw_re(R"(^\s*\**FLAW\**\s*:\s*\**\s*([A-Za-z\-]+)\s*\**\s*$)",
                                  std::regex::icase);
  static const std::regex reason_re(R"(^\s*\**REASON\**\s*:\s*(.*)$)", std::regex::icase);
  Verdict v;
  bool have_score = false;
  for (const auto& line : text::split_lines(reply)) {
    std::smatch m;
    if (!have_score && std::regex_match(line, m, score_re)) {
      const auto digits = m[1].str();
      if (digits.size() > 2) return std::nullopt;
      v.score = std::stoi(digits);
      if (v.score > 10) return std::nullopt;
      have_score = true;
    } else if (!v.flaw && std::regex_match(line, m, flaw_re)) {
      auto name = m[1].str();
      std::transform(name.begin(), name.end(), name.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      v.flaw = flaw_from_string(name);
      if (!v.flaw) return std::nullopt;
    } else if (v.reason.empty() && std::regex_match(line, m, reason_re)) {
      v.reason = trim(m[1].str());
    }
  }
  if (!have_score || (require_flaw && !v.flaw)) return std::nullopt;
  return v;
}

namespace {

std::vector<ReasoningStep> prefix_of(const ReasoningChain& chain, int step) {
  return {chain.steps.begin(), chain.steps.begin() + (step - 1)};
}

PromptRequest final_verdict_request(const ReasoningChain& chain, const MultimodalQuery& query,
                                    const AssessOptions& options) {
  PromptRequest req;
  req.role = Role::cam;
  req.template_id = std::string(prompts::kVerdictFinal.id);
  req.image_refs = image_refs(query);
  req.sampling = options.sampling;
  req.text_parts.push_back(prompts::render(prompts::kVerdictFinal,
                                           {{"image_note", image_note(query)},
                                            {"question", query.text},
                                            {"steps", format_steps(chain.steps)},
                                            {"final_answer", chain.final_answer}}));
  return req;
}

struct VerdictCall {
  std::optional<Verdict> verdict;
  double latency = 0.0;
};

VerdictCall request_verdict(Backend& backend, const PromptRequest& request, bool require_flaw,
                            std::vector<std::string>& template_ids) {
  VerdictCall out;
  template_ids.push_back(request.template_id);
  const auto first = backend.generate(request);
  out.latency += first.latency;
  out.verdict = parse_verdict(first.text, require_flaw);
  if (out.verdict) return out;
  auto repair = request;
  repair.template_id = std::string(prompts::kVerdictRepair.id);
  repair.text_parts.push_back(prompts::render(prompts::kVerdictRepair, {{"reply", first.text}}));
  template_ids.push_back(repair.template_id);
  const auto second = backend.generate(repair);
  out.latency += second.latency;
  out.verdict = parse_verdict(second.text, require_flaw);
  return out;
}

}  // namespace

PromptRequest step_verdict_request(const ReasoningChain& chain, const MultimodalQuery& query,
                                   int step, const AssessOptions& options) {
  const auto& s = chain.steps.at(static_cast<std::size_t>(step - 1));
  PromptRequest req;
  req.role = Role::cam;
  req.template_id = std::string(prompts::kVerdictStep.id);
  req.image_refs = image_refs(query);
  req.sampling = options.sampling;
  req.text_parts.push_back(prompts::render(prompts::kVerdictStep,
                                           {{"image_note", image_note(query)},
                                            {"question", query.text},
                                            {"prior", format_steps(prefix_of(chain, step))},
                                            {"index", std::to_string(step)},
                                            {"sub", s.sub.text},
                                            {"answer", s.answer.text}}));
  return req;
}

AssessOutcome assess(const ReasoningChain& chain, const MultimodalQuery& query, Backend& backend,
                     const AssessOptions& options) {
  if (auto v = validate_chain(chain); !v) {
    throw Error(Errc::invalid_argument, "cannot assess invalid chain: " + v.violation, v.step);
  }
  const int n = static_cast<int>(chain.size());
  std::vector<std::string> template_ids;
  std::vector<StepVerdict> verdicts;
  std::vector<std::string> reasons;
  std::vector<std::string> notes;
  double latency = 0.0;
  long total = 0;

  for (int i = 1; i <= n; ++i) {
    auto call = request_verdict(backend, step_verdict_request(chain, query, i, options), true,
                                template_ids);
    latency += call.latency;
    if (call.verdict) {
      total += call.verdict->score;
      verdicts.push_back({call.verdict->score / 10.0, *call.verdict->flaw});
      reasons.push_back(call.verdict->reason);
    } else {
      verdicts.push_back({0.0, FlawClass::inference_flaw});
      reasons.emplace_back();
      notes.push_back("step " + std::to_string(i) + " verdict unparseable after repair; scored 0");
    }
  }
  auto final_call =
      request_verdict(backend, final_verdict_request(chain, query, options), false, template_ids);
  latency += final_call.latency;
  double final_score = 0.0;
  if (final_call.verdict) {
    total += final_call.verdict->score;
    final_score = final_call.verdict->score / 10.0;
  } else {
    notes.push_back("final-answer verdict unparseable after repair; scored 0");
  }

  int flaw_step = 1;
  for (int i = 2; i <= n; ++i) {
    if (verdicts[static_cast<std::size_t>(i - 1)].score <
        verdicts[static_cast<std::size_t>(flaw_step - 1)].score) {
      flaw_step = i;
    }
  }
  const auto& worst = verdicts[static_cast<std::size_t>(flaw_step - 1)];
  std::string feedback = "step " + std::to_string(flaw_step) + " (" +
                         std::string(to_string(worst.flaw)) + ")";
  if (const auto& why = reasons[static_cast<std::size_t>(flaw_step - 1)]; !why.empty()) {
    feedback += ": " + why;
  }
  if (final_call.verdict && !final_call.verdict->reason.empty()) {
    feedback += "\nfinal answer: " + final_call.verdict->reason;
  }
  for (const auto& note : notes) feedback += "\n" + note;

  // Integer sum over one division keeps S exact for scripted verdicts.
  const double s = static_cast<double>(total) / (10.0 * static_cast<double>(n + 1));
  return {ChainAssessment::create(s, std::move(verdicts), std::move(feedback), flaw_step,
                                  final_score),
          std::move(template_ids), latency};
}

CamFeatureVector featurize(const ReasoningChain& chain, const ChainAssessment& assessment,
                           std::string_view question, int n_max) {
  CamFeatureVector x{};
  const auto& verdicts = assessment.step_verdicts();
  const double n = static_cast<double>(chain.size());
  if (chain.steps.empty() || n_max < 1) return x;

  x[0] = std::min(1.0, n / static_cast<double>(n_max));
  if (!verdicts.empty()) {
    double sum = 0.0;
    double lo = 1.0;
    int flagged = 0;
    bool factual = false;
    for (const auto& v : verdicts) {
      sum += v.score;
      lo = std::min(lo, v.score);
      flagged += v.flaw != FlawClass::consistent;
      factual = factual || v.flaw == FlawClass::factual_flaw;
    }
    const double m = static_cast<double>(verdicts.size());
    x[1] = sum / m;
    x[2] = lo;
    x[3] = flagged / m;
    x[7] = factual ? 1.0 : 0.0;
  }
  if (chain.size() > 1) {
    double overlap = 0.0;
    for (std::size_t i = 1; i < chain.size(); ++i) {
      overlap += text::jaccard(chain.steps[i - 1].answer.text, chain.steps[i].answer.text);
    }
    x[4] = overlap / static_cast<double>(chain.size() - 1);
  }
  x[5] = text::jaccard(chain.final_answer, question);
  int degenerate = 0;
  for (const auto& s : chain.steps) degenerate += text::tokens(s.answer.text).empty();
  x[6] = degenerate / n;
  return x;
}

double score(const CamScorerParams& params, const CamFeatureVector& features) {
  double z = params.bias;
  for (std::size_t j = 0; j < kFeatureDim; ++j) z += params.weights[j] * features[j];
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double hinge_loss(double s_pos, double s_neg, double margin) {
  if (!(margin > 0)) {
    throw Error(Errc::nonpositive_margin, "margin must be > 0, got " + std::to_string(margin));
  }
  return std::max(0.0, margin - (s_pos - s_neg));
}

double mean_loss(const CamScorerParams& params, const std::vector<FeaturePair>& pairs) {
  if (pairs.empty()) throw Error(Errc::no_pairs, "no training pairs");
  double sum = 0.0;
  for (const auto& p : pairs) {
    sum += hinge_loss(score(params, p.positive), score(params, p.negative), params.margin);
  }
  return sum / static_cast<double>(pairs.size());
}

LossGradient loss_gradient(const CamScorerParams& params, const std::vector<FeaturePair>& pairs) {
  if (pairs.empty()) throw Error(Errc::no_pairs, "no training pairs");
  LossGradient g;
  for (const auto& p : pairs) {
    const double sp = score(params, p.positive);
    const double sn = score(params, p.negative);
    if (params.margin - (sp - sn) <= 0) continue;
    const double dp = sp * (1.0 - sp);
    const double dn = sn * (1.0 - sn);
    for (std::size_t j = 0; j < kFeatureDim; ++j) {
      g.weights[j] -= dp * p.positive[j] - dn * p.negative[j];
    }
    g.bias -= dp - dn;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  for (auto& w : g.weights) w *= inv;
  g.bias *= inv;
  return g;
}

TrainResult train_cam(const std::vector<FeaturePair>& pairs, const CamScorerParams& init,
                      const TrainHyper& hyper) {
  if (pairs.empty()) throw Error(Errc::no_pairs, "no training pairs");
  validate(init);
  if (!std::isfinite(hyper.learning_rate) || hyper.learning_rate <= 0 || hyper.epochs < 0) {
    throw Error(Errc::invalid_argument, "learning rate must be > 0 and epochs >= 0");
  }
  TrainResult result;
  result.params = init;
  auto current = init;
  double best = mean_loss(current, pairs);
  result.loss_history.push_back(best);
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    const auto g = loss_gradient(current, pairs);
    for (std::size_t j = 0; j < kFeatureDim; ++j) current.weights[j] -= hyper.learning_rate * g.weights[j];
    current.bias -= hyper.learning_rate * g.bias;
    const double loss = mean_loss(current, pairs);
    result.loss_history.push_back(loss);
    if (loss < best) {
      best = loss;
      result.params = current;
      result.best_epoch = epoch;
    }
  }
  return result;
}

CamScorerParams initial_params(double margin, std::uint64_t seed) {
  CamScorerParams p;
  p.margin = margin;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  for (auto& w : p.weights) w = jitter(gen);
  validate(p);
  return p;
}

double pairwise_accuracy(const CamScorerParams& params, const std::vector<FeaturePair>& pairs) {
  if (pairs.empty()) throw Error(Errc::no_pairs, "no pairs to rank");
  int correct = 0;
  for (const auto& p : pairs) correct += score(params, p.positive) > score(params, p.negative);
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::string params_to_text(const CamScorerParams& params) {
  validate(params);
  Json j;
  j["schema"] = std::string(kFeatureSchema);
  j["weights"] = params.weights;
  j["bias"] = params.bias;
  j["margin"] = params.margin;
  return j.dump();
}

CamScorerParams params_from_text(std::string_view text) {
  const auto j = parse_json(text, "scorer params");
  ObjectReader r(j, "scorer params");
  const auto schema = r.string("schema");
  if (schema != kFeatureSchema) {
    throw Error(Errc::schema_mismatch, "scorer params were written for feature schema '" + schema +
                                          "', expected '" + std::string(kFeatureSchema) + "'");
  }
  CamScorerParams p;
  const auto& w = r.array("weights");
  if (w.size() != kFeatureDim) r.fail("expected " + std::to_string(kFeatureDim) + " weights");
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    if (!w[i].is_number()) r.fail("weights must be numbers");
    p.weights[i] = w[i].get<double>();
  }
  p.bias = r.number("bias");
  p.margin = r.number("margin");
  r.finish();
  try {
    validate(p);
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return p;
}

void save_params(const CamScorerParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write scorer params: " + path.string());
  out << params_to_text(params) << '\n';
}

CamScorerParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot read scorer params: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return params_from_text(buf.str());
}

namespace {

CamFeatureVector feature_vector(const Json& j, ObjectReader& r) {
  if (!j.is_array() || j.size() != kFeatureDim) {
    r.fail("feature vectors need " + std::to_string(kFeatureDim) + " numbers");
  }
  CamFeatureVector x{};
  for (std::size_t i = 0; i < kFeatureDim; ++i) {
    if (!j[i].is_number() || !std::isfinite(j[i].get<double>())) r.fail("non-numeric feature");
    x[i] = j[i].get<double>();
  }
  return x;
}

}  // namespace

std::vector<FeaturePair> feature_pairs_from_text(std::string_view text) {
  const auto j = parse_json(text, "feature pairs");
  ObjectReader r(j, "feature pairs");
  if (r.string("schema") != kFeatureSchema) {
    throw Error(Errc::schema_mismatch, "feature pairs use another feature schema");
  }
  std::vector<FeaturePair> out;
  for (const auto& pj : r.array("pairs")) {
    ObjectReader pr(pj, "feature pair " + std::to_string(out.size() + 1));
    FeaturePair p;
    p.source_id = pr.string("id");
    p.positive = feature_vector(pr.required("positive"), pr);
    p.negative = feature_vector(pr.required("negative"), pr);
    pr.finish();
    out.push_back(std::move(p));
  }
  r.finish();
  return out;
}

std::string feature_pairs_to_text(const std::vector<FeaturePair>& pairs) {
  Json j;
  j["schema"] = std::string(kFeatureSchema);
  Json arr = Json::array();
  for (const auto& p : pairs) {
    Json pj;
    pj["id"] = p.source_id;
    pj["positive"] = p.positive;
    pj["negative"] = p.negative;
    arr.push_back(std::move(pj));
  }
  j["pairs"] = std::move(arr);
  return j.dump() + "\n";
}

std::vector<FeaturePair> load_feature_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot read feature pairs: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return feature_pairs_from_text(buf.str());
}

double effective_score(CamMode mode, const ChainAssessment& assessment,
                       const std::optional<CamScorerParams>& scorer,
                       const CamFeatureVector& features) {
  if (mode == CamMode::prompted) return assessment.score();
  if (!scorer) throw Error(Errc::invalid_argument, "cam mode requires trained scorer params");
  const double trained = score(*scorer, features);
  if (mode == CamMode::trained) return trained;
  return 0.5 * (assessment.score() + trained);
}

}  // namespace cmrf
