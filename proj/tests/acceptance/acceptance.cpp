// One PASS/FAIL line per acceptance criterion. Exits 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "builders.hpp"
#include "cmrf/cam.hpp"
#include "cmrf/codec.hpp"
#include "cmrf/dataset.hpp"
#include "cmrf/engine.hpp"
#include "cmrf/error.hpp"
#include "cmrf/eval.hpp"
#include "oracles.hpp"
#include "stub_server.hpp"

using namespace cmrf;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CMRF_DATA_DIR;

struct Outcome {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

EngineConfig config(double tau, int k_max, int n_max = 8) {
  EngineConfig c;
  c.tau = tau;
  c.k_max = k_max;
  c.n_max = n_max;
  return c;
}

// ---------------------------------------------------------------------------

Outcome loop_shape() {
  Outcome o;
  const auto t0 = Clock::now();
  const int n = 9;  // 10 verdicts per assessment: integer sums give hundredths exactly
  ScriptedBackend b(tb::loop_script(
      n, {tb::summing(78, n), tb::summing(83, n), tb::summing(87, n), tb::summing(88, n)}));
  const auto r = run(tb::query(), config(0.9, 3, 10), b);
  const auto series = dynamics_report({GradedTrace{r.trace, "final 3", std::nullopt}}, 3);
  const double elapsed = seconds_since(t0);

  o.expect(r.trace.iterations.size() == 4, "iterations " + std::to_string(r.trace.iterations.size()));
  o.expect(r.trace.termination == Termination::k_max_exhausted, "termination");
  o.expect(r.trace.selected == 3, "selected " + std::to_string(r.trace.selected));
  const std::vector<double> want{0.78, 0.83, 0.87, 0.88};
  std::vector<double> got;
  for (const auto& p : series) got.push_back(p.coherence);
  o.expect(got == want, "dynamics series differs");
  o.expect(elapsed < 1.0, "runtime " + fmt(elapsed));
  if (o.ok) o.detail = "S = 0.78 0.83 0.87 0.88, selected 3, " + fmt(elapsed) + " s";
  return o;
}

Outcome iteration_accounting() {
  Outcome o;
  const std::vector<int> counts{1, 2, 3, 2, 1, 2, 2, 2, 1, 2};
  std::vector<MdarRecord> records;
  std::map<std::string, Script> scripts;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    records.push_back(adapt_text_only("question " + std::to_string(i), "yes"));
    std::vector<tb::Assessment> its(static_cast<std::size_t>(counts[i] - 1), tb::summing(25, 4));
    its.push_back(tb::summing(45, 4));  // 0.9 clears tau
    scripts[records.back().id] = tb::loop_script(4, its);
  }
  const BackendFactory factory = [&](const MdarRecord& r) {
    return std::make_unique<ScriptedBackend>(scripts.at(r.id));
  };
  const auto out = evaluate(records, config(0.85, 3), factory);
  std::vector<int> seen;
  for (const auto& t : out.traces) seen.push_back(static_cast<int>(t.iterations.size()));
  o.expect(seen == counts, "per-run iteration counts differ");
  o.expect(out.report.latency.mean_iterations == oracle::mean_int(counts), "oracle mean");
  o.expect(out.report.latency.mean_iterations == 1.8,
           "mean " + fmt(out.report.latency.mean_iterations));
  if (o.ok) o.detail = "mean iterations 1.8";
  return o;
}

Outcome hinge_exactness() {
  Outcome o;
  int cases = 0, mismatches = 0, boundary_bad = 0;
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j <= 20; ++j) {
      for (double m : {0.05, 0.1, 0.2, 0.5, 1.0}) {
        const double sp = i / 20.0, sn = j / 20.0;
        ++cases;
        if (hinge_loss(sp, sn, m) != oracle::hinge(sp, sn, m)) ++mismatches;
      }
    }
  }
  for (double m : {0.05, 0.1, 0.2, 0.5, 1.0}) {
    for (double sn : {0.0, 0.25, 0.5}) {
      const double sp = sn + m;
      const double d = sp - sn;  // may differ from m by rounding
      const double at = hinge_loss(sp, sn, d);
      const double below = hinge_loss(sp, sn, std::nextafter(d, 2.0));
      const double above = hinge_loss(sp, sn, std::nextafter(d, 0.0));
      if (at != 0.0 || !(below > 0.0) || above != 0.0) ++boundary_bad;
    }
  }
  o.expect(mismatches == 0, std::to_string(mismatches) + " grid mismatches");
  o.expect(boundary_bad == 0, std::to_string(boundary_bad) + " boundary cases off");
  if (o.ok) o.detail = std::to_string(cases) + " grid points bit-identical, boundary exact";
  return o;
}

/// Reads the pair file with plain JSON, independent of the library reader.
std::vector<oracle::Pair> oracle_pairs(const fs::path& path) {
  const auto j = nlohmann::json::parse(read(path));
  std::vector<oracle::Pair> out;
  for (const auto& p : j.at("pairs")) {
    oracle::Pair q;
    for (std::size_t i = 0; i < 8; ++i) {
      q.pos[i] = p.at("positive").at(i).get<double>();
      q.neg[i] = p.at("negative").at(i).get<double>();
    }
    out.push_back(q);
  }
  return out;
}

double oracle_accuracy(const oracle::Theta& t, const std::vector<oracle::Pair>& pairs) {
  oracle::Vec w{};
  std::copy(t.begin(), t.begin() + 8, w.begin());
  int good = 0;
  for (const auto& p : pairs) {
    good += oracle::sigmoid(oracle::dot(w, p.pos) + t[8]) > oracle::sigmoid(oracle::dot(w, p.neg) + t[8]);
  }
  return double(good) / double(pairs.size());
}

oracle::Theta theta_of(const CamScorerParams& p) {
  oracle::Theta t{};
  std::copy(p.weights.begin(), p.weights.end(), t.begin());
  t[8] = p.bias;
  return t;
}

Outcome gradient_check() {
  Outcome o;
  const auto pairs = load_feature_pairs(kData / "cam_pairs.json");
  const auto opairs = oracle_pairs(kData / "cam_pairs.json");
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-6;
  int tested = 0, skipped = 0, flat = 0, bad = 0;
  double worst = 0.0;
  while (tested < 100) {
    CamScorerParams p;
    for (auto& w : p.weights) w = u(gen);
    p.bias = u(gen);
    p.margin = 0.2;
    // stay well clear of the hinge kink
    bool near_kink = false;
    for (const auto& q : opairs) {
      const auto t = theta_of(p);
      oracle::Vec w{};
      std::copy(t.begin(), t.begin() + 8, w.begin());
      const double arg = 0.2 - (oracle::sigmoid(oracle::dot(w, q.pos) + t[8]) -
                                oracle::sigmoid(oracle::dot(w, q.neg) + t[8]));
      if (std::abs(arg) < 1e-4) near_kink = true;
    }
    if (near_kink) {
      ++skipped;
      continue;
    }
    const auto num = oracle::numeric_gradient(theta_of(p), opairs, 0.2, h);
    if (std::all_of(num.begin(), num.end(), [](double x) { return x == 0.0; })) {
      ++flat;  // every pair past the margin: nothing to compare
      continue;
    }
    ++tested;
    const auto g = loss_gradient(p, pairs);
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      diff = std::max(diff, std::abs(g.weights[i] - num[i]));
      scale = std::max(scale, std::abs(num[i]));
    }
    diff = std::max(diff, std::abs(g.bias - num[8]));
    scale = std::max(scale, std::abs(num[8]));
    const double rel = diff / std::max(scale, 1e-8);
    worst = std::max(worst, rel);
    if (rel > 1e-5) ++bad;
  }
  o.expect(bad == 0, std::to_string(bad) + " points above 1e-5 (worst " + fmt(worst) + ")");
  if (o.ok) {
    o.detail = "100 points, worst relative error " + fmt(worst) + ", " + std::to_string(skipped) +
               " near-kink and " + std::to_string(flat) + " flat draws skipped";
  }
  return o;
}

Outcome contrastive_training() {
  Outcome o;
  const auto opairs = oracle_pairs(kData / "cam_pairs.json");
  const auto oheld = oracle_pairs(kData / "cam_pairs_heldout.json");

  // Reference first: a derivative-free search must reach the same regime.
  const auto ref = oracle::coordinate_search(opairs, 0.2, 1.0, 5000, 1e-4);
  const double ref_acc = oracle_accuracy(ref.theta, opairs);
  o.expect(ref.loss < 1e-3, "reference search loss " + fmt(ref.loss));
  o.expect(ref_acc == 1.0, "reference accuracy " + fmt(ref_acc));
  if (!o.ok) return o;

  const auto pairs = load_feature_pairs(kData / "cam_pairs.json");
  const auto held = load_feature_pairs(kData / "cam_pairs_heldout.json");
  const auto result = train_cam(pairs, initial_params(0.2, 42), {0.5, 1000});
  const double loss = mean_loss(result.params, pairs);
  const double oracle_loss = oracle::mean_hinge(theta_of(result.params), opairs, 0.2);
  const double acc = pairwise_accuracy(result.params, pairs);
  const double held_acc = pairwise_accuracy(result.params, held);
  o.expect(std::abs(loss - oracle_loss) <= 1e-12, "library and oracle loss disagree");
  o.expect(loss < 1e-3, "loss " + fmt(loss));
  o.expect(acc == 1.0, "accuracy " + fmt(acc));
  o.expect(acc == oracle_accuracy(theta_of(result.params), opairs), "oracle accuracy disagrees");
  if (o.ok) {
    o.detail = "reference loss " + fmt(ref.loss) + " after " + std::to_string(ref.sweeps) +
               " sweeps; trained loss " + fmt(loss) + " at epoch " +
               std::to_string(result.best_epoch) + ", accuracy 1, held-out accuracy " +
               fmt(held_acc);
  }
  return o;
}

Outcome selection_exhaustive() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
  // N = 1: a step verdict and a final verdict; their sum over 20 is S.
  const std::vector<std::pair<int, int>> verdicts{{0, 0}, {2, 3}, {5, 5}, {7, 8}, {10, 10}};
  int cases = 0, bad = 0;
  for (int len = 1; len <= 5; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= 5;
    for (int code = 0; code < total; ++code) {
      std::vector<int> idx;
      for (int i = 0, c = code; i < len; ++i, c /= 5) idx.push_back(c % 5);
      std::vector<tb::Assessment> its;
      std::vector<double> expected;
      for (int v : idx) {
        its.push_back({{verdicts[v].first}, verdicts[v].second, {}});
        expected.push_back(grid[v]);
        if (grid[v] >= 1.0) break;  // tau = 1 stops the run here
      }
      ScriptedBackend b(tb::loop_script(1, its));
      const auto r = run(tb::query(), config(1.0, len - 1), b);
      ++cases;
      if (r.trace.scores() != expected || r.trace.selected != oracle::first_argmax(expected)) ++bad;
    }
  }
  const double elapsed = seconds_since(t0);
  o.expect(bad == 0, std::to_string(bad) + " of " + std::to_string(cases) + " disagree");
  o.expect(elapsed < 10.0, "runtime " + fmt(elapsed));
  if (o.ok) o.detail = std::to_string(cases) + " sequences, " + fmt(elapsed) + " s";
  return o;
}

Outcome call_counts() {
  Outcome o;
  const int n = 3;
  // Iteration 0: step 1 is worst, so iteration 1 re-answers every step.
  tb::Assessment first{{2, 6, 7}, 5, {"inference-flaw", "consistent", "consistent"}};
  auto script = tb::loop_script(n, {first, tb::summing(38, n)});
  script[{Role::rdu, 2}] = "1. [T] unused";
  script[{Role::cie, 2 * (n + 1) + 1}] = "unused";
  ScriptedBackend b(script);
  const auto r = run(tb::query(), config(0.85, 3), b);
  o.expect(r.trace.termination == Termination::threshold_met, "not threshold-terminated");

  // Split the log at each cam final-answer call.
  std::vector<std::array<int, 3>> per_iteration(1);
  int cam_in_iteration = 0;
  for (const auto& c : b.calls()) {
    ++per_iteration.back()[static_cast<std::size_t>(c.role)];
    if (c.role == Role::cam && ++cam_in_iteration == n + 1) {
      per_iteration.push_back({});
      cam_in_iteration = 0;
    }
  }
  o.expect(per_iteration.size() == 3, "iteration split");
  if (per_iteration.size() == 3) {
    const auto& i0 = per_iteration[0];
    const auto& i1 = per_iteration[1];
    o.expect(i0[0] == 1 && i0[1] == n + 1 && i0[2] == n + 1, "iteration 0 counts");
    o.expect(i1[0] == 0 && i1[1] == n + 1 && i1[2] == n + 1, "iteration 1 counts");
    o.expect(per_iteration[2] == std::array<int, 3>{0, 0, 0}, "calls after threshold");
  }
  if (o.ok) o.detail = "N=3: 4 cie + 4 cam per full iteration, nothing after acceptance";
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CMRF_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

struct EvalRun {
  std::string report;
  std::map<std::string, std::string> traces;
};

EvalRun eval_run(const fs::path& dir, int workers) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const int rc = run_cli("eval --dataset \"" + (kData / "mdar_synthetic.jsonl").string() +
                         "\" --config \"" + (kData / "eval_scripted.json").string() +
                         "\" --report \"" + (dir / "report.json").string() + "\" --trace-dir \"" +
                         (dir / "traces").string() + "\" --workers " + std::to_string(workers));
  if (rc != 0) throw std::runtime_error("cmrf eval exited with " + std::to_string(rc));
  EvalRun out;
  out.report = read(dir / "report.json");
  for (const auto& e : fs::directory_iterator(dir / "traces")) {
    out.traces[e.path().filename().string()] = read(e.path());
  }
  return out;
}

const fs::path kWork = fs::temp_directory_path() / "cmrf-acceptance";

Outcome determinism() {
  Outcome o;
  const auto a1 = eval_run(kWork / "w1a", 1);
  const auto b1 = eval_run(kWork / "w1b", 1);
  const auto a4 = eval_run(kWork / "w4a", 4);
  const auto b4 = eval_run(kWork / "w4b", 4);
  o.expect(a1.traces.size() == 25, std::to_string(a1.traces.size()) + " traces");
  for (const auto* other : {&b1, &a4, &b4}) {
    o.expect(other->report == a1.report, "report bytes differ");
    o.expect(other->traces == a1.traces, "trace bytes differ");
  }
  if (o.ok) {
    o.detail = "4 runs (workers 1,1,4,4): report " + std::to_string(a1.report.size()) +
               " bytes and 25 traces identical";
  }
  return o;
}

Outcome round_trips() {
  Outcome o;
  const auto path = kData / "mdar_synthetic.jsonl";
  const auto first = load_mdar(path, true).records;
  const auto text = serialize_mdar(first);
  const auto second = parse_mdar(text, true).records;
  o.expect(second == first, "dataset load-serialize-load");
  o.expect(text == read(path), "dataset bytes");

  const auto run = eval_run(kWork / "rt", 2);
  int traces = 0;
  for (const auto& [name, bytes] : run.traces) {
    const auto t = deserialize_trace(bytes);
    o.expect(serialize_trace(t) == bytes, "trace " + name);
    o.expect(deserialize_trace(serialize_trace(t)) == t, "trace value " + name);
    ++traces;
  }
  const auto report = deserialize_report(run.report);
  o.expect(serialize_report(report) == run.report, "report bytes");
  o.expect(deserialize_report(serialize_report(report)) == report, "report value");
  if (o.ok) {
    o.detail = std::to_string(first.size()) + " records, " + std::to_string(traces) +
               " traces, 1 report";
  }
  return o;
}

Outcome wire_conformance() {
  Outcome o;
  const auto image = kWork / "pixel.png";
  fs::create_directories(kWork);
  std::ofstream(image, std::ios::binary) << std::string("\x89PNG\r\n\x1a\n", 8) << "fake";

  auto config_for = [](const StubServer& s, int retries) {
    BackendConfig c;
    c.kind = BackendKind::http;
    c.base_url = s.base_url();
    c.model_name = "stub-model";
    c.api_key = "sk-accept";
    c.max_retries = retries;
    c.timeout = 5.0;
    c.backoff_base = 0.001;
    return c;
  };

  PromptRequest req;
  req.role = Role::cie;
  req.template_id = "cie.step.v1";
  req.text_parts = {"What is on the table?", "Answer briefly."};
  req.image_refs = {image.string(), "https://example.org/b.jpg"};
  {
    StubServer stub;
    HttpBackend b(config_for(stub, 2));
    b.generate(req);
    const auto seen = stub.last();
    const auto body = nlohmann::json::parse(seen.body);
    o.expect(seen.authorization == "Bearer sk-accept", "auth header");
    o.expect(body.value("model", "") == "stub-model", "model field");
    int texts = 0, images = 0, data_urls = 0;
    for (const auto& m : body.at("messages")) {
      if (!m.at("content").is_array()) continue;
      for (const auto& part : m.at("content")) {
        const auto type = part.value("type", "");
        texts += type == "text";
        if (type == "image_url") {
          ++images;
          data_urls += part.at("image_url").at("url").get<std::string>().rfind(
                           "data:image/png;base64," + oracle::base64(read(image)), 0) == 0;
        }
      }
    }
    o.expect(texts >= 1 && images == 2, "content parts text=" + std::to_string(texts) +
                                            " image=" + std::to_string(images));
    o.expect(data_urls == 1, "local image not inlined as a data URL");
  }
  for (int retries : {0, 1, 2, 4}) {
    StubServer stub;
    stub.fail_first = 1000;
    HttpBackend b(config_for(stub, retries));
    try {
      b.generate(req);
      o.expect(false, "no error on persistent 500");
    } catch (const Error&) {
    }
    o.expect(stub.hits() == retries + 1, "retries " + std::to_string(retries) + " gave " +
                                             std::to_string(stub.hits()) + " requests");
  }
  if (o.ok) o.detail = "model, mixed text/image content, bearer auth; 500s give max_retries+1 requests";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"loop-shape", loop_shape},
      {"iteration-accounting", iteration_accounting},
      {"hinge-exactness", hinge_exactness},
      {"gradient-check", gradient_check},
      {"contrastive-training", contrastive_training},
      {"selection-exhaustive", selection_exhaustive},
      {"call-counts", call_counts},
      {"determinism", determinism},
      {"round-trips", round_trips},
      {"wire-conformance", wire_conformance},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.ok;
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << " : " << o.detail << std::endl;
  }
  fs::remove_all(kWork);
  return failures == 0 ? 0 : 1;
}
