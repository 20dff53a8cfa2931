#pragma once

// Batch evaluation: accuracy, token F1, coherence, iteration dynamics and
// latency over a dataset run through the refinement engine.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cmrf/dataset.hpp"
#include "cmrf/engine.hpp"

namespace cmrf {

/// Exact match after normalization; with choices, the prediction is first
/// mapped to the choice it names.
bool is_correct(const std::string& prediction, const std::string& gold,
                const std::optional<std::vector<std::string>>& choices = std::nullopt);

/// The choice a free-text prediction names: the choice equal to it after
/// normalization, else the only choice contained in it as a phrase.
std::optional<std::string> match_choice(const std::string& prediction,
                                        const std::vector<std::string>& choices);

struct IterationPoint {
  int k = 0;
  double accuracy = 0.0;   // best-so-far chain
  double coherence = 0.0;  // best-so-far score

  bool operator==(const IterationPoint&) const = default;
};

struct LatencyReport {
  double mean_seconds = 0.0;
  double mean_iterations = 0.0;

  bool operator==(const LatencyReport&) const = default;
};

struct ModalityStats {
  std::string modality;
  int n = 0;
  double accuracy = 0.0;
  double coherence = 0.0;

  bool operator==(const ModalityStats&) const = default;
};

struct RecordOutcome {
  std::string id;
  std::string prediction;
  std::string gold;
  bool correct = false;
  double f1 = 0.0;
  double coherence = 0.0;
  int iterations = 0;
  int selected = 0;
  std::string termination;
  std::optional<std::string> error;

  bool operator==(const RecordOutcome&) const = default;
};

struct EvalReport {
  int n = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double coherence = 0.0;
  int k_max = 0;
  std::vector<IterationPoint> per_iteration;  // k = 0..k_max
  LatencyReport latency;
  std::vector<ModalityStats> per_modality;
  std::vector<RecordOutcome> records;  // dataset order
  std::vector<std::string> failed;     // ids of aborted runs

  bool operator==(const EvalReport&) const = default;
};

/// A finished trace with what is needed to grade it.
struct GradedTrace {
  RefinementTrace trace;
  std::string gold;
  std::optional<std::vector<std::string>> choices;
};

/// For k in 0..k_max: mean best-so-far score and best-so-far accuracy.
/// Runs that stopped before k carry their last values forward; aborted runs
/// count as incorrect with score 0.
std::vector<IterationPoint> dynamics_report(const std::vector<GradedTrace>& runs, int k_max);

/// Mean summed backend time per trace and mean iteration count.
LatencyReport latency_report(const std::vector<RefinementTrace>& traces);

using BackendFactory = std::function<std::unique_ptr<Backend>(const MdarRecord&)>;

struct EvalOptions {
  int workers = 1;
  std::filesystem::path base_dir;  // resolves relative image paths
};

struct EvalOutcome {
  EvalReport report;
  std::vector<RefinementTrace> traces;  // dataset order
};

/// Runs every record through the engine, at most `workers` at a time.
/// Results are merged in dataset order, so the report does not depend on
/// the worker count.
EvalOutcome evaluate(const std::vector<MdarRecord>& dataset, const EngineConfig& config,
                     const BackendFactory& backends, const EvalOptions& options = {});

Json to_json(const EvalReport& report);
EvalReport report_from_json(const Json& j);
std::string serialize_report(const EvalReport& report);
EvalReport deserialize_report(std::string_view text);

// ---------------------------------------------------------------------------
// Evaluation config file

Json to_json(const Script& script);
Script script_from_json(const Json& j);

/// Engine settings plus, for scripted runs, one script per record id (or a
/// shared default script that every record replays from the start).
struct EvalSetup {
  EngineConfig engine;
  std::map<std::string, Script> record_scripts;
  std::optional<Script> default_script;
};

/// Relative paths inside the config resolve against its directory.
EvalSetup load_eval_config(const std::filesystem::path& path);
BackendFactory make_factory(const EvalSetup& setup);

}  // namespace cmrf
