#include "cmrf/engine.hpp"

#include <cmath>

#include "cmrf/cie.hpp"

namespace cmrf {

void validate(const EngineConfig& config) {
  if (!(config.tau > 0.0 && config.tau <= 1.0)) {
    throw Error(Errc::invalid_argument, "tau must be in (0,1]");
  }
  if (config.k_max < 0) throw Error(Errc::invalid_argument, "k_max must be >= 0");
  if (config.n_max < 1) throw Error(Errc::invalid_argument, "n_max must be >= 1");
  if (config.max_tokens < 1) throw Error(Errc::invalid_argument, "max_tokens must be >= 1");
  if (!(config.temperature >= 0.0)) throw Error(Errc::invalid_argument, "temperature must be >= 0");
  if (config.cam_mode != CamMode::prompted && !config.scorer) {
    throw Error(Errc::invalid_argument,
                "cam mode '" + std::string(to_string(config.cam_mode)) + "' needs scorer params");
  }
  if (config.scorer) validate(*config.scorer);
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::initial: return "initial";
    case Action::redecomposed: return "redecomposed";
    case Action::reinferred: return "reinferred";
  }
  return "initial";
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::threshold_met: return "threshold-met";
    case Termination::k_max_exhausted: return "k-max-exhausted";
    case Termination::aborted: return "aborted";
  }
  return "aborted";
}

ConfigSnapshot snapshot(const EngineConfig& config) {
  ConfigSnapshot s;
  s.tau = config.tau;
  s.k_max = config.k_max;
  s.n_max = config.n_max;
  s.cam_mode = std::string(to_string(config.cam_mode));
  s.seed = config.seed;
  s.backend = config.backend.kind == BackendKind::scripted ? "scripted" : "http";
  if (config.backend.transcript_mode == TranscriptMode::replay) s.backend = "replay";
  s.model = config.backend.model_name;
  return s;
}

std::vector<double> RefinementTrace::scores() const {
  std::vector<double> out;
  out.reserve(iterations.size());
  for (const auto& it : iterations) out.push_back(it.score);
  return out;
}

bool should_terminate(double s, int k, const EngineConfig& config) {
  return s >= config.tau || k >= config.k_max;
}

RefineAction route_feedback(const ChainAssessment& assessment, const ReasoningChain& chain) {
  const auto& verdicts = assessment.step_verdicts();
  if (verdicts.empty()) throw Error(Errc::invalid_argument, "assessment has no step verdicts");
  if (verdicts.size() != chain.size()) {
    throw Error(Errc::invalid_argument, "assessment does not match the chain");
  }
  int step = 1;
  if (assessment.flaw_step()) {
    step = *assessment.flaw_step();
  } else {
    for (int i = 2; i <= static_cast<int>(verdicts.size()); ++i) {
      if (verdicts[static_cast<std::size_t>(i - 1)].score <
          verdicts[static_cast<std::size_t>(step - 1)].score) {
        step = i;
      }
    }
  }
  const auto flaw = verdicts[static_cast<std::size_t>(step - 1)].flaw;
  if (flaw == FlawClass::decomposition_flaw) {
    return Redecompose{{step, flaw, assessment.feedback(), chain.subproblems()}};
  }
  return Reinfer{step};
}

int argmax_earliest(const std::vector<double>& scores) {
  if (scores.empty()) throw Error(Errc::empty_trace, "no iterations to select from");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

Selection select_best(const RefinementTrace& trace) {
  const int index = argmax_earliest(trace.scores());
  return {&trace.iterations[static_cast<std::size_t>(index)].chain, index};
}

namespace {

void append(std::vector<std::string>& to, const std::vector<std::string>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

class Runner {
 public:
  Runner(const MultimodalQuery& query, const EngineConfig& config, Backend& backend)
      : query_(query), config_(config), backend_(backend) {
    Sampling sampling;
    sampling.temperature = config.temperature;
    sampling.seed = config.seed;
    sampling.max_tokens = config.max_tokens;
    decompose_.n_max = config.n_max;
    decompose_.sampling = sampling;
    infer_.sampling = sampling;
    infer_.context_budget = config.context_budget;
    assess_.sampling = sampling;
    trace_.query = query;
    trace_.config = snapshot(config);
  }

  RunResult operator()() {
    try {
      initial();
      while (!should_terminate(trace_.iterations.back().score,
                               trace_.iterations.back().k, config_)) {
        refine();
      }
      const auto& last = trace_.iterations.back();
      trace_.termination = last.score >= config_.tau ? Termination::threshold_met
                                                     : Termination::k_max_exhausted;
      const auto best = select_best(trace_);
      trace_.selected = best.index;
      trace_.final_answer = best.chain->final_answer;
      return {trace_.final_answer, std::move(trace_)};
    } catch (const Error& e) {
      trace_.termination = Termination::aborted;
      trace_.error = std::string(to_string(e.code())) + ": " + e.what();
      if (!trace_.iterations.empty()) {
        const auto best = select_best(trace_);
        trace_.selected = best.index;
        trace_.final_answer = best.chain->final_answer;
      }
      throw RunAborted(e, std::move(trace_));
    }
  }

 private:
  void initial() {
    Iteration it;
    it.k = 0;
    it.action = Action::initial;
    const auto d = decompose(query_, std::nullopt, backend_, decompose_);
    append(it.template_ids, d.template_ids);
    append(it.notes, d.warnings);
    it.wall_time += d.latency;
    auto run = run_chain(query_, d.subproblems, backend_, infer_);
    finish(it, std::move(run));
  }

  void refine() {
    const auto& prev = trace_.iterations.back();
    Iteration it;
    it.k = prev.k + 1;
    const auto action = route_feedback(prev.assessment, prev.chain);
    ChainRun run;
    if (const auto* redo = std::get_if<Redecompose>(&action)) {
      it.action = Action::redecomposed;
      it.refined_from = redo->feedback.flaw_step;
      const auto d = decompose(query_, redo->feedback, backend_, decompose_);
      append(it.template_ids, d.template_ids);
      append(it.notes, d.warnings);
      it.wall_time += d.latency;
      const auto keep = static_cast<std::size_t>(redo->feedback.flaw_step - 1);
      const std::vector<ReasoningStep> prefix(prev.chain.steps.begin(),
                                              prev.chain.steps.begin() + static_cast<long>(keep));
      run = run_chain(query_, d.subproblems, backend_, infer_, prefix);
    } else {
      const int step = std::get<Reinfer>(action).step;
      it.action = Action::reinferred;
      it.refined_from = step;
      const std::vector<ReasoningStep> prefix(prev.chain.steps.begin(),
                                              prev.chain.steps.begin() + (step - 1));
      run = run_chain(query_, prev.chain.subproblems(), backend_, infer_, prefix, step);
    }
    finish(it, std::move(run));
  }

  void finish(Iteration& it, ChainRun run) {
    append(it.template_ids, run.template_ids);
    append(it.notes, run.notes);
    it.wall_time += run.latency;
    it.chain = std::move(run.chain);
    it.chain.iteration = it.k;
    auto outcome = assess(it.chain, query_, backend_, assess_);
    append(it.template_ids, outcome.template_ids);
    it.wall_time += outcome.latency;
    it.assessment = std::move(outcome.assessment);
    const auto features = featurize(it.chain, it.assessment, query_.text, config_.n_max);
    it.score = effective_score(config_.cam_mode, it.assessment, config_.scorer, features);
    trace_.iterations.push_back(std::move(it));
  }

  const MultimodalQuery& query_;
  const EngineConfig& config_;
  Backend& backend_;
  DecomposeOptions decompose_;
  InferenceOptions infer_;
  AssessOptions assess_;
  RefinementTrace trace_;
};

}  // namespace

RunResult run(const MultimodalQuery& query, const EngineConfig& config, Backend& backend) {
  validate(config);
  if (auto v = validate_query(query); !v) {
    throw Error(Errc::invalid_argument, "invalid query: " + v.violation);
  }
  return Runner(query, config, backend)();
}

RunResult run(const MultimodalQuery& query, const EngineConfig& config) {
  validate(config);
  auto backend = make_backend(config.backend);
  return run(query, config, *backend);
}

// ---------------------------------------------------------------------------
// Trace document

namespace {

Json to_json(const ConfigSnapshot& c) {
  Json j;
  j["tau"] = c.tau;
  j["k_max"] = c.k_max;
  j["n_max"] = c.n_max;
  j["cam_mode"] = c.cam_mode;
  j["seed"] = c.seed;
  j["backend"] = c.backend;
  j["model"] = c.model;
  return j;
}

ConfigSnapshot snapshot_from_json(const Json& j) {
  ObjectReader r(j, "trace config");
  ConfigSnapshot c;
  c.tau = r.number("tau");
  c.k_max = static_cast<int>(r.integer("k_max"));
  c.n_max = static_cast<int>(r.integer("n_max"));
  c.cam_mode = r.string("cam_mode");
  c.seed = r.integer("seed");
  c.backend = r.string("backend");
  c.model = r.string("model");
  r.finish();
  return c;
}

std::vector<std::string> string_list(const Json& j, ObjectReader& r) {
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) r.fail("expected a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

Json to_json(const RefinementTrace& trace) {
  Json j;
  j["schema"] = "cmrf.trace.v1";
  j["query"] = cmrf::to_json(trace.query);
  j["config"] = to_json(trace.config);
  Json iterations = Json::array();
  for (const auto& it : trace.iterations) {
    Json ij;
    ij["k"] = it.k;
    ij["action"] = std::string(to_string(it.action));
    if (it.refined_from) ij["refined_from"] = *it.refined_from;
    ij["score"] = it.score;
    ij["wall_time"] = it.wall_time;
    ij["template_ids"] = it.template_ids;
    ij["notes"] = it.notes;
    ij["chain"] = cmrf::to_json(it.chain);
    ij["assessment"] = cmrf::to_json(it.assessment);
    iterations.push_back(std::move(ij));
  }
  j["iterations"] = std::move(iterations);
  j["selected"] = trace.selected;
  j["termination"] = std::string(to_string(trace.termination));
  j["final_answer"] = trace.final_answer;
  if (!trace.error.empty()) j["error"] = trace.error;
  return j;
}

RefinementTrace trace_from_json(const Json& j) {
  ObjectReader r(j, "trace");
  if (r.string("schema") != "cmrf.trace.v1") {
    throw Error(Errc::schema_mismatch, "unsupported trace schema");
  }
  RefinementTrace t;
  t.query = query_from_json(r.required("query"));
  t.config = snapshot_from_json(r.required("config"));
  for (const auto& ij : r.array("iterations")) {
    ObjectReader ir(ij, "trace iteration " + std::to_string(t.iterations.size()));
    Iteration it;
    it.k = static_cast<int>(ir.integer("k"));
    const auto action = ir.string("action");
    if (action == "initial") it.action = Action::initial;
    else if (action == "redecomposed") it.action = Action::redecomposed;
    else if (action == "reinferred") it.action = Action::reinferred;
    else ir.fail("unknown action '" + action + "'");
    if (ir.optional("refined_from")) it.refined_from = static_cast<int>(ir.integer("refined_from"));
    it.score = ir.number("score");
    if (it.score < 0.0 || it.score > 1.0) ir.fail("score out of [0,1]");
    it.wall_time = ir.number("wall_time");
    if (it.wall_time < 0.0) ir.fail("negative wall_time");
    it.template_ids = string_list(ir.array("template_ids"), ir);
    it.notes = string_list(ir.array("notes"), ir);
    it.chain = chain_from_json(ir.required("chain"));
    it.assessment = assessment_from_json(ir.required("assessment"));
    if (it.assessment.step_verdicts().size() != it.chain.size()) {
      ir.fail("verdict count does not match step count");
    }
    ir.finish();
    t.iterations.push_back(std::move(it));
  }
  t.selected = static_cast<int>(r.integer("selected"));
  const auto term = r.string("termination");
  if (term == "threshold-met") t.termination = Termination::threshold_met;
  else if (term == "k-max-exhausted") t.termination = Termination::k_max_exhausted;
  else if (term == "aborted") t.termination = Termination::aborted;
  else r.fail("unknown termination '" + term + "'");
  t.final_answer = r.string("final_answer");
  if (auto e = r.opt_string("error")) t.error = *e;
  r.finish();
  if (t.iterations.empty() && t.termination != Termination::aborted) {
    r.fail("completed trace has no iterations");
  }
  if (!t.iterations.empty() &&
      (t.selected < 0 || t.selected >= static_cast<int>(t.iterations.size()))) {
    r.fail("selected does not index an iteration");
  }
  return t;
}

std::string serialize_trace(const RefinementTrace& trace) { return to_json(trace).dump(2) + "\n"; }

RefinementTrace deserialize_trace(std::string_view text) {
  return trace_from_json(parse_json(text, "trace"));
}

}  // namespace cmrf
