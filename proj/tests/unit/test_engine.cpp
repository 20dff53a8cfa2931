#include <random>

#include <doctest.h>

#include "builders.hpp"
#include "cmrf/engine.hpp"
#include "cmrf/error.hpp"
#include "oracles.hpp"

using namespace cmrf;

namespace {

EngineConfig config(double tau, int k_max, int n_max = 8) {
  EngineConfig c;
  c.tau = tau;
  c.k_max = k_max;
  c.n_max = n_max;
  return c;
}

RefinementTrace trace_with(const std::vector<double>& scores) {
  RefinementTrace t;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    Iteration it;
    it.k = static_cast<int>(k);
    it.score = scores[k];
    it.chain = tb::chain(1, "answer " + std::to_string(k));
    t.iterations.push_back(it);
  }
  return t;
}

}  // namespace

TEST_SUITE("refinement_engine") {

TEST_CASE("termination rule") {
  CHECK(should_terminate(0.90, 1, config(0.85, 3)));
  CHECK(should_terminate(0.80, 3, config(0.85, 3)));
  CHECK_FALSE(should_terminate(0.80, 1, config(0.85, 3)));
  CHECK(should_terminate(0.85, 0, config(0.85, 3)));
}

TEST_CASE("selection examples") {
  CHECK(argmax_earliest({0.6, 0.8, 0.7}) == 1);
  CHECK(argmax_earliest({0.8, 0.8}) == 0);
  CHECK(argmax_earliest({0.9}) == 0);
  const auto t = trace_with({0.6, 0.8, 0.7});
  const auto s = select_best(t);
  CHECK(s.index == 1);
  CHECK(s.chain->final_answer == "answer 1");
  try {
    argmax_earliest({});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_trace);
  }
}

TEST_CASE("routing: decomposition flaw goes back to the decomposer") {
  const auto chain = tb::chain(3);
  const auto a = ChainAssessment::create(
      0.5,
      {{0.9, FlawClass::consistent}, {0.2, FlawClass::decomposition_flaw}, {0.6, FlawClass::consistent}},
      "step 2 is off", 2, 0.5);
  const auto action = route_feedback(a, chain);
  const auto* redo = std::get_if<Redecompose>(&action);
  REQUIRE(redo);
  CHECK(redo->feedback.flaw_step == 2);
  CHECK(redo->feedback.rationale == "step 2 is off");
  CHECK(redo->feedback.prior_subproblems == chain.subproblems());
}

TEST_CASE("routing: factual flaw re-infers") {
  const auto a = ChainAssessment::create(
      0.5, {{0.9, FlawClass::consistent}, {0.2, FlawClass::factual_flaw}}, "", 2, 0.5);
  const auto action = route_feedback(a, tb::chain(2));
  REQUIRE(std::holds_alternative<Reinfer>(action));
  CHECK(std::get<Reinfer>(action).step == 2);
}

TEST_CASE("routing: all consistent falls back to the lowest step") {
  const auto a = ChainAssessment::create(
      0.7,
      {{0.9, FlawClass::consistent}, {0.6, FlawClass::consistent}, {0.6, FlawClass::consistent}},
      "", std::nullopt, 0.7);
  const auto action = route_feedback(a, tb::chain(3));
  CHECK(std::get<Reinfer>(action).step == 2);
}

TEST_CASE("four-iteration loop") {
  // 9 steps + final = 10 verdicts, so integer sums give exact hundredths.
  const int n = 9;
  ScriptedBackend b(tb::loop_script(
      n, {tb::summing(78, n), tb::summing(83, n), tb::summing(87, n), tb::summing(88, n)}));
  const auto r = run(tb::query(), config(0.9, 3, 10), b);
  CHECK(r.trace.iterations.size() == 4);
  CHECK(r.trace.termination == Termination::k_max_exhausted);
  CHECK(r.trace.selected == 3);
  CHECK(r.trace.scores() == std::vector<double>{0.78, 0.83, 0.87, 0.88});
  CHECK(r.final_answer == "final 3");
}

TEST_CASE("accepted at once") {
  ScriptedBackend b(tb::loop_script(4, {tb::summing(46, 4)}));
  const auto r = run(tb::query(), config(0.85, 3), b);
  CHECK(r.trace.iterations.size() == 1);
  CHECK(r.trace.termination == Termination::threshold_met);
  CHECK(r.trace.scores()[0] == 0.92);
}

TEST_CASE("a regression keeps the earlier chain") {
  ScriptedBackend b(tb::loop_script(1, {tb::summing(16, 1), tb::summing(14, 1)}));
  const auto r = run(tb::query(), config(0.85, 1), b);
  CHECK(r.trace.scores() == std::vector<double>{0.8, 0.7});
  CHECK(r.trace.selected == 0);
  CHECK(r.final_answer == "final 0");
}

TEST_CASE("k_max 0 stops after the first chain") {
  ScriptedBackend b(tb::loop_script(2, {tb::summing(3, 2)}));
  const auto r = run(tb::query(), config(0.85, 0), b);
  CHECK(r.trace.iterations.size() == 1);
  CHECK(r.trace.termination == Termination::k_max_exhausted);
}

TEST_CASE("no further calls after the threshold is met") {
  auto script = tb::loop_script(3, {tb::summing(38, 3)});
  script[{Role::rdu, 2}] = "1. [T] spare";
  script[{Role::cie, 5}] = "spare";
  ScriptedBackend b(script);
  run(tb::query(), config(0.85, 3), b);
  CHECK(b.call_count(Role::rdu) == 1);
  CHECK(b.call_count(Role::cie) == 4);
  CHECK(b.call_count(Role::cam) == 4);
}

TEST_CASE("re-inference reuses the prefix and marks the step") {
  tb::Assessment first{{9, 3, 8}, 6, {"consistent", "inference-flaw", "consistent"}};
  ScriptedBackend b(tb::loop_script(3, {first, tb::summing(38, 3)}));
  const auto r = run(tb::query(), config(0.85, 3), b);
  REQUIRE(r.trace.iterations.size() == 2);
  const auto& it = r.trace.iterations[1];
  CHECK(it.action == Action::reinferred);
  CHECK(it.refined_from == 2);
  CHECK(it.chain.steps[0] == r.trace.iterations[0].chain.steps[0]);
  CHECK(it.chain.steps[1].answer.text == "answer 2 at iteration 1");
  CHECK(b.call_count(Role::cie) == 4 + 3);
  const auto calls = b.calls();
  bool alternative_seen = false;
  for (const auto& c : calls) alternative_seen = alternative_seen || c.text_parts.size() == 2;
  CHECK(alternative_seen);
}

TEST_CASE("decomposition flaw re-decomposes from the flaw step") {
  tb::Assessment first{{9, 2, 8}, 5, {"consistent", "decomposition-flaw", "consistent"}};
  ScriptedBackend b(tb::loop_script(3, {first, tb::summing(38, 3)}));
  const auto r = run(tb::query(), config(0.85, 3), b);
  REQUIRE(r.trace.iterations.size() == 2);
  const auto& it = r.trace.iterations[1];
  CHECK(it.action == Action::redecomposed);
  CHECK(it.refined_from == 2);
  CHECK(b.call_count(Role::rdu) == 2);
  CHECK(it.chain.steps[0] == r.trace.iterations[0].chain.steps[0]);
  CHECK(it.chain.size() == 3);
  std::vector<std::string> rdu_templates;
  for (const auto& call : b.calls()) {
    if (call.role == Role::rdu) rdu_templates.push_back(call.template_id);
  }
  CHECK(rdu_templates == std::vector<std::string>{"rdu.decompose.v1", "rdu.revise.v1"});
}

TEST_CASE("a failing refinement keeps the finished iterations") {
  auto script = tb::loop_script(2, {tb::summing(10, 2)});  // second iteration has no replies
  ScriptedBackend b(script);
  try {
    run(tb::query(), config(0.85, 3), b);
    FAIL("no error");
  } catch (const RunAborted& e) {
    CHECK(e.code() == Errc::script_exhausted);
    const auto& t = e.partial_trace();
    CHECK(t.iterations.size() == 1);
    CHECK(t.termination == Termination::aborted);
    CHECK(t.selected == 0);
    CHECK(t.final_answer == "final 0");
    CHECK(t.error.find("script-exhausted") == 0);
  }
}

TEST_CASE("config validation") {
  ScriptedBackend b(tb::loop_script(1, {tb::summing(20, 1)}));
  CHECK_THROWS_AS(run(tb::query(), config(0.0, 3), b), Error);
  CHECK_THROWS_AS(run(tb::query(), config(1.5, 3), b), Error);
  CHECK_THROWS_AS(run(tb::query(), config(0.8, -1), b), Error);
  auto c = config(0.8, 3);
  c.cam_mode = CamMode::trained;
  CHECK_THROWS_AS(run(tb::query(), c, b), Error);
  CHECK_THROWS_AS(run(tb::query(""), config(0.8, 3), b), Error);
  CHECK(b.calls().empty());
}

TEST_CASE("trained mode scores with the scorer") {
  ScriptedBackend b(tb::loop_script(2, {tb::summing(30, 2)}));
  auto c = config(0.4, 3);
  c.cam_mode = CamMode::trained;
  c.scorer = CamScorerParams{};  // always 0.5
  const auto r = run(tb::query(), c, b);
  CHECK(r.trace.scores() == std::vector<double>{0.5});
  CHECK(r.trace.iterations[0].assessment.score() == 1.0);
}

TEST_CASE("same script, same trace") {
  const auto script =
      tb::loop_script(3, {tb::summing(20, 3), tb::summing(25, 3), tb::summing(30, 3)});
  ScriptedBackend b1(script), b2(script);
  const auto t1 = serialize_trace(run(tb::query(), config(0.9, 2), b1).trace);
  const auto t2 = serialize_trace(run(tb::query(), config(0.9, 2), b2).trace);
  CHECK(t1 == t2);
}

TEST_CASE("trace documents round-trip and stay strict") {
  ScriptedBackend b(tb::loop_script(2, {tb::summing(10, 2), tb::summing(20, 2), tb::summing(29, 2)}));
  const auto trace = run(tb::query("q?", "img.png"), config(0.95, 2), b).trace;
  const auto text = serialize_trace(trace);
  CHECK(deserialize_trace(text) == trace);
  CHECK(serialize_trace(deserialize_trace(text)) == text);

  auto j = parse_json(text, "t");
  j["iterations"][0]["extra"] = 1;
  CHECK_THROWS_AS(deserialize_trace(j.dump()), Error);
  j = parse_json(text, "t");
  j["schema"] = "cmrf.trace.v0";
  try {
    deserialize_trace(j.dump());
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::schema_mismatch);
  }
  j = parse_json(text, "t");
  j["selected"] = 7;
  CHECK_THROWS_AS(deserialize_trace(j.dump()), Error);
}

TEST_CASE("selection matches the oracle on random score runs") {
  std::mt19937 gen(5);
  std::uniform_int_distribution<int> len(1, 6), v(0, 8);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(len(gen)));
    for (auto& x : s) x = v(gen) / 8.0;
    CHECK(argmax_earliest(s) == oracle::first_argmax(s));
  }
}

}  // TEST_SUITE
