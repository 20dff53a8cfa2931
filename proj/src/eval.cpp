#include "cmrf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "cmrf/error.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

std::optional<std::string> match_choice(const std::string& prediction,
                                        const std::vector<std::string>& choices) {
  const auto pred = text::normalize_answer(prediction);
  for (const auto& c : choices) {
    if (text::normalize_answer(c) == pred) return c;
  }
  const auto padded = " " + pred + " ";
  std::optional<std::string> found;
  for (const auto& c : choices) {
    const auto norm = text::normalize_answer(c);
    if (norm.empty() || padded.find(" " + norm + " ") == std::string::npos) continue;
    if (found) return std::nullopt;  // names more than one choice
    found = c;
  }
  return found;
}

bool is_correct(const std::string& prediction, const std::string& gold,
                const std::optional<std::vector<std::string>>& choices) {
  if (choices) {
    const auto picked = match_choice(prediction, *choices);
    return picked && *picked == gold;
  }
  return text::normalize_answer(prediction) == text::normalize_answer(gold);
}

namespace {

/// Mean taken around the first value, so n equal inputs return that value
/// exactly.
double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double shift = 0.0;
  for (double x : xs) shift += x - xs.front();
  return xs.front() + shift / static_cast<double>(xs.size());
}

struct Best {
  double score = 0.0;
  bool correct = false;
};

/// Best-so-far value of a run at every k in 0..k_max.
std::vector<Best> best_so_far(const GradedTrace& run, int k_max) {
  std::vector<Best> out(static_cast<std::size_t>(k_max) + 1);
  const auto& its = run.trace.iterations;
  if (run.trace.termination == Termination::aborted || its.empty()) return out;
  int best = 0;
  for (int k = 0; k <= k_max; ++k) {
    const int last = std::min(k, static_cast<int>(its.size()) - 1);
    for (int i = best + 1; i <= last; ++i) {
      if (its[static_cast<std::size_t>(i)].score > its[static_cast<std::size_t>(best)].score) best = i;
    }
    const auto& it = its[static_cast<std::size_t>(best)];
    out[static_cast<std::size_t>(k)] = {it.score,
                                        is_correct(it.chain.final_answer, run.gold, run.choices)};
  }
  return out;
}

}  // namespace

std::vector<IterationPoint> dynamics_report(const std::vector<GradedTrace>& runs, int k_max) {
  if (k_max < 0) throw Error(Errc::invalid_argument, "k_max must be >= 0");
  std::vector<IterationPoint> series(static_cast<std::size_t>(k_max) + 1);
  for (int k = 0; k <= k_max; ++k) series[static_cast<std::size_t>(k)].k = k;
  if (runs.empty()) return series;
  std::vector<std::vector<double>> scores(series.size());
  std::vector<int> correct(series.size(), 0);
  for (const auto& run : runs) {
    const auto values = best_so_far(run, k_max);
    for (std::size_t k = 0; k < values.size(); ++k) {
      scores[k].push_back(values[k].score);
      correct[k] += values[k].correct;
    }
  }
  const double n = static_cast<double>(runs.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    series[k].coherence = mean_of(scores[k]);
    series[k].accuracy = correct[k] / n;
  }
  return series;
}

LatencyReport latency_report(const std::vector<RefinementTrace>& traces) {
  LatencyReport r;
  if (traces.empty()) return r;
  double seconds = 0.0;
  std::size_t iterations = 0;
  for (const auto& t : traces) {
    for (const auto& it : t.iterations) seconds += it.wall_time;
    iterations += t.iterations.size();
  }
  const double n = static_cast<double>(traces.size());
  r.mean_seconds = seconds / n;
  r.mean_iterations = static_cast<double>(iterations) / n;
  return r;
}

EvalOutcome evaluate(const std::vector<MdarRecord>& dataset, const EngineConfig& config,
                     const BackendFactory& backends, const EvalOptions& options) {
  if (dataset.empty()) throw Error(Errc::invalid_argument, "dataset is empty");
  validate(config);
  const std::size_t n = dataset.size();
  std::vector<RefinementTrace> traces(n);
  std::vector<std::optional<std::string>> errors(n);

  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      const auto& record = dataset[i];
      const auto query = to_query(record, options.base_dir);
      try {
        auto backend = backends(record);
        traces[i] = run(query, config, *backend).trace;
      } catch (const RunAborted& e) {
        traces[i] = e.partial_trace();
        errors[i] = traces[i].error;
      } catch (const Error& e) {
        traces[i].query = query;
        traces[i].config = snapshot(config);
        traces[i].termination = Termination::aborted;
        traces[i].error = std::string(to_string(e.code())) + ": " + e.what();
        errors[i] = traces[i].error;
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(options.workers, 1, static_cast<int>(n)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  EvalOutcome out;
  auto& rep = out.report;
  rep.n = static_cast<int>(n);
  rep.k_max = config.k_max;
  std::vector<GradedTrace> graded;
  std::map<Modality, std::pair<int, std::vector<double>>> by_modality;
  std::vector<double> f1s, coherences;
  int correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& record = dataset[i];
    const auto& trace = traces[i];
    RecordOutcome r;
    r.id = record.id;
    r.gold = record.answer;
    r.iterations = static_cast<int>(trace.iterations.size());
    r.termination = std::string(to_string(trace.termination));
    r.error = errors[i];
    if (!errors[i]) {
      r.prediction = trace.final_answer;
      r.selected = trace.selected;
      r.correct = is_correct(r.prediction, record.answer, record.choices);
      r.f1 = text::token_f1(r.prediction, record.answer);
      r.coherence = trace.iterations[static_cast<std::size_t>(trace.selected)].score;
    } else {
      rep.failed.push_back(record.id);
    }
    correct += r.correct;
    f1s.push_back(r.f1);
    coherences.push_back(r.coherence);
    std::set<Modality> modalities;
    for (const auto& s : record.steps) modalities.insert(s.modality);
    for (auto m : modalities) {
      auto& [hits, values] = by_modality[m];
      hits += r.correct;
      values.push_back(r.coherence);
    }
    graded.push_back({trace, record.answer, record.choices});
    rep.records.push_back(std::move(r));
  }
  const double dn = static_cast<double>(n);
  rep.accuracy = correct / dn;
  rep.f1 = mean_of(f1s);
  rep.coherence = mean_of(coherences);
  rep.per_iteration = dynamics_report(graded, config.k_max);
  rep.latency = latency_report(traces);
  for (const auto& [m, stats] : by_modality) {
    const auto& [hits, values] = stats;
    const auto count = static_cast<int>(values.size());
    rep.per_modality.push_back({std::string(to_string(m)), count,
                                hits / static_cast<double>(count), mean_of(values)});
  }
  out.traces = std::move(traces);
  return out;
}

// ---------------------------------------------------------------------------
// Report document

Json to_json(const EvalReport& r) {
  Json j;
  j["schema"] = "cmrf.report.v1";
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["coherence"] = r.coherence;
  j["k_max"] = r.k_max;
  Json series = Json::array();
  for (const auto& p : r.per_iteration) {
    series.push_back(Json{{"k", p.k}, {"accuracy", p.accuracy}, {"coherence", p.coherence}});
  }
  j["per_iteration"] = std::move(series);
  j["latency"] = Json{{"mean_seconds", r.latency.mean_seconds},
                      {"mean_iterations", r.latency.mean_iterations}};
  Json mods = Json::array();
  for (const auto& m : r.per_modality) {
    mods.push_back(Json{{"modality", m.modality},
                        {"n", m.n},
                        {"accuracy", m.accuracy},
                        {"coherence", m.coherence}});
  }
  j["per_modality"] = std::move(mods);
  Json records = Json::array();
  for (const auto& o : r.records) {
    Json rj;
    rj["id"] = o.id;
    rj["prediction"] = o.prediction;
    rj["gold"] = o.gold;
    rj["correct"] = o.correct;
    rj["f1"] = o.f1;
    rj["coherence"] = o.coherence;
    rj["iterations"] = o.iterations;
    rj["selected"] = o.selected;
    rj["termination"] = o.termination;
    if (o.error) rj["error"] = *o.error;
    records.push_back(std::move(rj));
  }
  j["records"] = std::move(records);
  j["failed"] = r.failed;
  return j;
}

namespace {

double fraction(ObjectReader& r, std::string_view key) {
  const double v = r.number(key);
  if (v < 0.0 || v > 1.0) r.fail("field '" + std::string(key) + "' must be in [0,1]");
  return v;
}

}  // namespace

EvalReport report_from_json(const Json& j) {
  ObjectReader r(j, "report");
  if (r.string("schema") != "cmrf.report.v1") {
    throw Error(Errc::schema_mismatch, "unsupported report schema");
  }
  EvalReport rep;
  rep.n = static_cast<int>(r.integer("n"));
  rep.accuracy = fraction(r, "accuracy");
  rep.f1 = fraction(r, "f1");
  rep.coherence = fraction(r, "coherence");
  rep.k_max = static_cast<int>(r.integer("k_max"));
  for (const auto& pj : r.array("per_iteration")) {
    ObjectReader p(pj, "per_iteration entry");
    IterationPoint pt;
    pt.k = static_cast<int>(p.integer("k"));
    pt.accuracy = fraction(p, "accuracy");
    pt.coherence = fraction(p, "coherence");
    p.finish();
    rep.per_iteration.push_back(pt);
  }
  if (static_cast<int>(rep.per_iteration.size()) != rep.k_max + 1) {
    r.fail("per_iteration must have k_max + 1 entries");
  }
  {
    ObjectReader l(r.required("latency"), "latency");
    rep.latency.mean_seconds = l.number("mean_seconds");
    rep.latency.mean_iterations = l.number("mean_iterations");
    l.finish();
  }
  for (const auto& mj : r.array("per_modality")) {
    ObjectReader m(mj, "per_modality entry");
    ModalityStats s;
    s.modality = m.string("modality");
    s.n = static_cast<int>(m.integer("n"));
    s.accuracy = fraction(m, "accuracy");
    s.coherence = fraction(m, "coherence");
    m.finish();
    rep.per_modality.push_back(std::move(s));
  }
  for (const auto& oj : r.array("records")) {
    ObjectReader o(oj, "record outcome");
    RecordOutcome out;
    out.id = o.string("id");
    out.prediction = o.string("prediction");
    out.gold = o.string("gold");
    out.correct = o.boolean("correct");
    out.f1 = fraction(o, "f1");
    out.coherence = fraction(o, "coherence");
    out.iterations = static_cast<int>(o.integer("iterations"));
    out.selected = static_cast<int>(o.integer("selected"));
    out.termination = o.string("termination");
    out.error = o.opt_string("error");
    o.finish();
    rep.records.push_back(std::move(out));
  }
  for (const auto& f : r.array("failed")) {
    if (!f.is_string()) r.fail("failed must list ids");
    rep.failed.push_back(f.get<std::string>());
  }
  r.finish();
  return rep;
}

std::string serialize_report(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

EvalReport deserialize_report(std::string_view text) {
  return report_from_json(parse_json(text, "report"));
}

// ---------------------------------------------------------------------------
// Config file

Json to_json(const Script& script) {
  Json j;
  for (Role role : {Role::rdu, Role::cie, Role::cam}) {
    Json replies = Json::array();
    for (int ordinal = 1;; ++ordinal) {
      const auto it = script.find({role, ordinal});
      if (it == script.end()) break;
      replies.push_back(it->second);
    }
    j[std::string(to_string(role))] = std::move(replies);
  }
  return j;
}

Script script_from_json(const Json& j) {
  ObjectReader r(j, "script");
  Script s;
  for (Role role : {Role::rdu, Role::cie, Role::cam}) {
    const auto* replies = r.optional(to_string(role));
    if (!replies) continue;
    if (!replies->is_array()) r.fail("replies must be an array of strings");
    int ordinal = 0;
    for (const auto& reply : *replies) {
      if (!reply.is_string()) r.fail("replies must be strings");
      s[{role, ++ordinal}] = reply.get<std::string>();
    }
  }
  r.finish();
  return s;
}

namespace {

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str(), path.string());
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

EvalSetup load_eval_config(const std::filesystem::path& path) {
  const auto base = path.parent_path();
  const auto j = read_json_file(path);
  ObjectReader r(j, "eval config");
  EvalSetup setup;
  auto& e = setup.engine;
  if (r.optional("tau")) e.tau = r.number("tau");
  if (r.optional("k_max")) e.k_max = static_cast<int>(r.integer("k_max"));
  if (r.optional("n_max")) e.n_max = static_cast<int>(r.integer("n_max"));
  if (r.optional("seed")) e.seed = r.integer("seed");
  if (r.optional("temperature")) e.temperature = r.number("temperature");
  if (r.optional("max_tokens")) e.max_tokens = static_cast<int>(r.integer("max_tokens"));
  if (r.optional("context_budget")) e.context_budget = static_cast<int>(r.integer("context_budget"));
  if (auto mode = r.opt_string("cam_mode")) {
    const auto m = cam_mode_from_string(*mode);
    if (!m) r.fail("unknown cam_mode '" + *mode + "'");
    e.cam_mode = *m;
  }
  if (auto scorer = r.opt_string("scorer")) e.scorer = load_params(resolve(base, *scorer));

  ObjectReader b(r.required("backend"), "eval config backend");
  const auto kind = b.string("kind");
  if (kind == "scripted") {
    e.backend.kind = BackendKind::scripted;
    const auto script_path = resolve(base, b.string("script"));
    const auto sj = read_json_file(script_path);
    if (sj.is_object() && (sj.contains("records") || sj.contains("default"))) {
      ObjectReader sr(sj, "script file");
      if (const auto* recs = sr.optional("records")) {
        if (!recs->is_object()) sr.fail("records must map ids to scripts");
        for (auto it = recs->begin(); it != recs->end(); ++it) {
          setup.record_scripts[it.key()] = script_from_json(it.value());
        }
      }
      if (const auto* d = sr.optional("default")) setup.default_script = script_from_json(*d);
      sr.finish();
    } else {
      setup.default_script = script_from_json(sj);
    }
    e.backend.script = setup.default_script ? *setup.default_script : Script{};
  } else if (kind == "http") {
    e.backend.kind = BackendKind::http;
    e.backend.base_url = b.opt_string("base_url");
    if (!e.backend.base_url) {
      if (const char* env = std::getenv("CMRF_BASE_URL")) e.backend.base_url = env;
    }
    if (auto model = b.opt_string("model")) e.backend.model_name = *model;
    if (b.optional("timeout")) e.backend.timeout = b.number("timeout");
    if (b.optional("max_retries")) e.backend.max_retries = static_cast<int>(b.integer("max_retries"));
  } else {
    b.fail("backend kind must be scripted or http");
  }
  b.finish();
  r.finish();
  validate(e);
  validate(e.backend);
  return setup;
}

BackendFactory make_factory(const EvalSetup& setup) {
  if (setup.engine.backend.kind == BackendKind::scripted) {
    return [&setup](const MdarRecord& record) -> std::unique_ptr<Backend> {
      if (const auto it = setup.record_scripts.find(record.id); it != setup.record_scripts.end()) {
        return std::make_unique<ScriptedBackend>(it->second);
      }
      if (setup.default_script) return std::make_unique<ScriptedBackend>(*setup.default_script);
      throw Error(Errc::script_exhausted, "no script for record '" + record.id + "'");
    };
  }
  return [&setup](const MdarRecord&) { return make_backend(setup.engine.backend); };
}

}  // namespace cmrf
