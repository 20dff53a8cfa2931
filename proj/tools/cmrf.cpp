// cmrf: command-line surface for the refinement engine.
//
//   cmrf ask --question STR [--image PATH] [--tau R] [--k-max N]
//            [--backend scripted|http] [--script PATH] [--trace-out PATH]
//   cmrf eval --dataset PATH --config PATH --report PATH [--workers N]
//   cmrf train-cam --dataset PATH --margin 0.2 --lr 0.05 --epochs 500
//                  --seed 42 --out PATH
//   cmrf replay --transcript PATH --question STR ...
//
// Exit codes: 0 success, 1 run error, 2 bad input.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cmrf/dataset.hpp"
#include "cmrf/engine.hpp"
#include "cmrf/eval.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRunError = 1;
constexpr int kBadInput = 2;

int exit_code_for(cmrf::Errc code) {
  switch (code) {
    case cmrf::Errc::invalid_argument:
    case cmrf::Errc::malformed_input:
    case cmrf::Errc::validation_failed:
    case cmrf::Errc::io_error:
    case cmrf::Errc::schema_mismatch:
      return kBadInput;
    default:
      return kRunError;
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cmrf::Error(cmrf::Errc::io_error, "cannot write " + path.string());
  out << content;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cmrf::Error(cmrf::Errc::io_error, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Trace file name for a record id; anything outside [A-Za-z0-9._-] becomes '_'.
std::string trace_file_name(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
    out.push_back(keep ? c : '_');
  }
  return out + ".trace.json";
}

struct AskArgs {
  std::string question;
  std::string image;
  std::string id = "query";
  double tau = cmrf::kDefaultTau;
  int k_max = cmrf::kDefaultKMax;
  int n_max = cmrf::kDefaultMaxSubproblems;
  std::string backend = "scripted";
  std::string script;
  std::string trace_out;
  std::string base_url;
  std::string model = "llava-v1.6-34b";
  int max_retries = 2;
  double timeout = 60.0;
  std::string record;
  std::string cam_mode = "prompted";
  std::string scorer;
};

void add_ask_options(CLI::App* cmd, AskArgs& a, bool with_backend) {
  cmd->add_option("--question", a.question, "Question text")->required();
  cmd->add_option("--image", a.image, "Image path or URL");
  cmd->add_option("--id", a.id, "Query id recorded in the trace");
  cmd->add_option("--tau", a.tau, "Confidence threshold in (0,1]");
  cmd->add_option("--k-max", a.k_max, "Maximum refinement iterations");
  cmd->add_option("--n-max", a.n_max, "Maximum sub-problems per chain");
  cmd->add_option("--trace-out", a.trace_out, "Write the refinement trace here");
  cmd->add_option("--cam-mode", a.cam_mode, "prompted | trained | mean-of-both");
  cmd->add_option("--scorer", a.scorer, "Trained scorer params (for trained modes)");
  if (with_backend) {
    cmd->add_option("--backend", a.backend, "scripted | http")
        ->check(CLI::IsMember({"scripted", "http"}));
    cmd->add_option("--script", a.script, "Scripted reply table (JSON)");
    cmd->add_option("--base-url", a.base_url, "Chat endpoint base URL (default $CMRF_BASE_URL)");
    cmd->add_option("--model", a.model, "Model name sent to the endpoint");
    cmd->add_option("--max-retries", a.max_retries, "Retries on transient HTTP failures");
    cmd->add_option("--timeout", a.timeout, "HTTP timeout in seconds");
    cmd->add_option("--record", a.record, "Record a replayable transcript here");
  }
}

cmrf::EngineConfig engine_config(const AskArgs& a) {
  cmrf::EngineConfig c;
  c.tau = a.tau;
  c.k_max = a.k_max;
  c.n_max = a.n_max;
  const auto mode = cmrf::cam_mode_from_string(a.cam_mode);
  if (!mode) throw cmrf::Error(cmrf::Errc::invalid_argument, "unknown cam mode " + a.cam_mode);
  c.cam_mode = *mode;
  if (!a.scorer.empty()) c.scorer = cmrf::load_params(a.scorer);
  if (a.backend == "scripted") {
    c.backend.kind = cmrf::BackendKind::scripted;
    if (!a.script.empty()) {
      c.backend.script = cmrf::script_from_json(cmrf::parse_json(read_file(a.script), a.script));
    }
  } else {
    c.backend.kind = cmrf::BackendKind::http;
    if (!a.base_url.empty()) {
      c.backend.base_url = a.base_url;
    } else if (const char* env = std::getenv("CMRF_BASE_URL")) {
      c.backend.base_url = env;
    }
    c.backend.model_name = a.model;
    c.backend.max_retries = a.max_retries;
    c.backend.timeout = a.timeout;
    c.backend.jitter_seed = static_cast<std::uint64_t>(c.seed);
  }
  if (!a.record.empty()) {
    c.backend = cmrf::record_replay(c.backend, a.record, cmrf::TranscriptMode::record);
  }
  return c;
}

int run_query(const AskArgs& a, const cmrf::EngineConfig& config) {
  cmrf::MultimodalQuery q;
  q.id = a.id;
  q.text = a.question;
  if (!a.image.empty()) q.image = a.image;
  if (auto v = cmrf::validate_query(q); !v) {
    throw cmrf::Error(cmrf::Errc::invalid_argument, v.violation);
  }
  try {
    const auto result = cmrf::run(q, config);
    if (!a.trace_out.empty()) write_file(a.trace_out, cmrf::serialize_trace(result.trace));
    std::cout << result.final_answer << '\n';
    return kOk;
  } catch (const cmrf::RunAborted& e) {
    if (!a.trace_out.empty()) write_file(a.trace_out, cmrf::serialize_trace(e.partial_trace()));
    throw;
  }
}

int cmd_eval(const std::string& dataset, const std::string& config_path,
             const std::string& report_path, int workers, const std::string& trace_dir,
             bool strict) {
  const auto loaded = cmrf::load_mdar(dataset, strict);
  for (const auto& e : loaded.errors) {
    std::cerr << dataset << ":" << e.line << ": rejected: " << e.reason << '\n';
  }
  if (loaded.records.empty()) {
    throw cmrf::Error(cmrf::Errc::validation_failed, "dataset has no valid records");
  }
  const auto setup = cmrf::load_eval_config(config_path);
  cmrf::EvalOptions options;
  options.workers = workers;
  options.base_dir = std::filesystem::path(dataset).parent_path();
  const auto outcome =
      cmrf::evaluate(loaded.records, setup.engine, cmrf::make_factory(setup), options);
  write_file(report_path, cmrf::serialize_report(outcome.report));
  if (!trace_dir.empty()) {
    for (const auto& t : outcome.traces) {
      write_file(std::filesystem::path(trace_dir) / trace_file_name(t.query.id),
                 cmrf::serialize_trace(t));
    }
  }
  const auto& r = outcome.report;
  std::cout << "n=" << r.n << " accuracy=" << r.accuracy << " f1=" << r.f1
            << " coherence=" << r.coherence << " mean_iterations=" << r.latency.mean_iterations
            << " failed=" << r.failed.size() << '\n';
  return kOk;
}

std::vector<cmrf::FeaturePair> dataset_pairs(const std::string& dataset, int n_max) {
  const auto loaded = cmrf::load_mdar(dataset);
  for (const auto& e : loaded.errors) {
    std::cerr << dataset << ":" << e.line << ": rejected: " << e.reason << '\n';
  }
  // Without a judging model every step gets the same neutral verdict, so
  // only the content features separate the pairs.
  const auto neutral = [](const cmrf::ReasoningChain& c) {
    std::vector<cmrf::StepVerdict> v(c.size(), {0.5, cmrf::FlawClass::consistent});
    return cmrf::ChainAssessment::create(0.5, std::move(v), "", 1, 0.5);
  };
  std::vector<cmrf::FeaturePair> pairs;
  for (const auto& record : loaded.records) {
    for (const auto& p : cmrf::contrastive_pairs(record)) {
      pairs.push_back({cmrf::featurize(p.positive, neutral(p.positive), record.question, n_max),
                       cmrf::featurize(p.negative, neutral(p.negative), record.question, n_max),
                       p.source_id});
    }
  }
  return pairs;
}

int cmd_train(const std::string& dataset, const std::string& pairs_path, double margin, double lr,
              int epochs, std::uint64_t seed, int n_max, const std::string& out) {
  if (dataset.empty() && pairs_path.empty()) {
    throw cmrf::Error(cmrf::Errc::invalid_argument, "train-cam needs --dataset or --pairs");
  }
  const auto pairs =
      pairs_path.empty() ? dataset_pairs(dataset, n_max) : cmrf::load_feature_pairs(pairs_path);
  if (pairs.empty()) throw cmrf::Error(cmrf::Errc::no_pairs, "dataset yields no contrastive pairs");
  const auto init = cmrf::initial_params(margin, seed);
  const auto result = cmrf::train_cam(pairs, init, {lr, epochs});
  cmrf::save_params(result.params, out);
  std::cout << "pairs=" << pairs.size() << " initial_loss=" << result.loss_history.front()
            << " final_loss=" << result.loss_history[static_cast<std::size_t>(result.best_epoch)]
            << " pairwise_accuracy=" << cmrf::pairwise_accuracy(result.params, pairs) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decompose, answer, assess and refine multimodal questions"};
  app.require_subcommand(1);

  AskArgs ask;
  auto* ask_cmd = app.add_subcommand("ask", "Answer one question");
  add_ask_options(ask_cmd, ask, true);

  std::string dataset, config_path, report_path, trace_dir;
  int workers = 1;
  bool strict = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate over a dataset");
  eval_cmd->add_option("--dataset", dataset, "Dataset file (one record per line)")->required();
  eval_cmd->add_option("--config", config_path, "Evaluation config (JSON)")->required();
  eval_cmd->add_option("--report", report_path, "Report output path")->required();
  eval_cmd->add_option("--workers", workers, "Concurrent runs")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--trace-dir", trace_dir, "Write one trace per record here");
  eval_cmd->add_flag("--strict", strict, "Fail on the first invalid record");

  std::string train_dataset, train_pairs, train_out;
  double margin = cmrf::kDefaultMargin, lr = 0.05;
  int epochs = 500, n_max = cmrf::kDefaultMaxSubproblems;
  std::uint64_t seed = 42;
  auto* train_cmd = app.add_subcommand("train-cam", "Fit the trained coherence scorer");
  auto* train_src = train_cmd->add_option("--dataset", train_dataset, "Dataset with erroneous chains");
  train_cmd->add_option("--pairs", train_pairs, "Precomputed feature pairs instead of a dataset")
      ->excludes(train_src);
  train_cmd->add_option("--margin", margin, "Hinge margin m > 0");
  train_cmd->add_option("--lr", lr, "Learning rate");
  train_cmd->add_option("--epochs", epochs, "Full-batch epochs");
  train_cmd->add_option("--seed", seed, "Seed for the initial weights");
  train_cmd->add_option("--n-max", n_max, "N_max used by the length feature");
  train_cmd->add_option("--out", train_out, "Output params path")->required();

  AskArgs replay;
  std::string transcript;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a question from a recorded transcript");
  replay_cmd->add_option("--transcript", transcript, "Transcript recorded with ask --record")
      ->required();
  add_ask_options(replay_cmd, replay, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadInput;
  }

  try {
    if (*ask_cmd) return run_query(ask, engine_config(ask));
    if (*eval_cmd) return cmd_eval(dataset, config_path, report_path, workers, trace_dir, strict);
    if (*train_cmd) return cmd_train(train_dataset, train_pairs, margin, lr, epochs, seed, n_max, train_out);
    if (*replay_cmd) {
      auto config = engine_config(replay);
      config.backend.kind = cmrf::BackendKind::http;
      config.backend = cmrf::record_replay(config.backend, transcript, cmrf::TranscriptMode::replay);
      return run_query(replay, config);
    }
  } catch (const cmrf::Error& e) {
    std::cerr << "cmrf: " << cmrf::to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "cmrf: " << e.what() << '\n';
    return kRunError;
  }
  return kBadInput;
}
