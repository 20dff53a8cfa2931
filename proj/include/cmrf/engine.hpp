#pragma once

// Adaptive iterative refinement: decompose, infer, assess, then refine from
// the flaw point until the score reaches tau or k_max refinements are spent.
// The highest-scoring chain across all iterations is returned.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cmrf/backend.hpp"
#include "cmrf/cam.hpp"
#include "cmrf/codec.hpp"
#include "cmrf/error.hpp"
#include "cmrf/rdu.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

inline constexpr double kDefaultTau = 0.85;
inline constexpr int kDefaultKMax = 3;

struct EngineConfig {
  double tau = kDefaultTau;
  int k_max = kDefaultKMax;
  int n_max = kDefaultMaxSubproblems;
  BackendConfig backend;
  CamMode cam_mode = CamMode::prompted;
  std::optional<CamScorerParams> scorer;
  std::int64_t seed = 42;
  double temperature = 0.0;
  int max_tokens = 512;
  int context_budget = 3072;
};

/// Throws invalid_argument on tau outside (0,1], k_max < 0, n_max < 1, or a
/// trained cam mode without scorer params.
void validate(const EngineConfig& config);

enum class Action { initial, redecomposed, reinferred };
enum class Termination { threshold_met, k_max_exhausted, aborted };

std::string_view to_string(Action a);
std::string_view to_string(Termination t);

struct Iteration {
  int k = 0;
  Action action = Action::initial;
  std::optional<int> refined_from;  // flaw step the refinement started at
  ReasoningChain chain;
  ChainAssessment assessment;
  double score = 0.0;      // score under the configured cam mode
  double wall_time = 0.0;  // summed backend latency, seconds
  std::vector<std::string> template_ids;
  std::vector<std::string> notes;

  bool operator==(const Iteration&) const = default;
};

/// Settings recorded with every trace.
struct ConfigSnapshot {
  double tau = kDefaultTau;
  int k_max = kDefaultKMax;
  int n_max = kDefaultMaxSubproblems;
  std::string cam_mode = "prompted";
  std::int64_t seed = 42;
  std::string backend = "scripted";
  std::string model;

  bool operator==(const ConfigSnapshot&) const = default;
};

ConfigSnapshot snapshot(const EngineConfig& config);

struct RefinementTrace {
  MultimodalQuery query;
  ConfigSnapshot config;
  std::vector<Iteration> iterations;
  int selected = 0;
  Termination termination = Termination::aborted;
  std::string final_answer;
  std::string error;  // set when aborted

  std::vector<double> scores() const;
  bool operator==(const RefinementTrace&) const = default;
};

/// Raised when any stage fails mid-run; carries everything completed so far.
class RunAborted : public Error {
 public:
  RunAborted(const Error& cause, RefinementTrace partial)
      : Error(cause.code(), cause.what(), cause.step()), partial_(std::move(partial)) {}

  const RefinementTrace& partial_trace() const noexcept { return partial_; }

 private:
  RefinementTrace partial_;
};

struct Redecompose {
  DecompositionFeedback feedback;
};
struct Reinfer {
  int step = 1;
};
using RefineAction = std::variant<Redecompose, Reinfer>;

/// true iff s >= tau or k >= k_max.
bool should_terminate(double s, int k, const EngineConfig& config);

/// A decomposition flaw at the flaw step goes back to decomposition from that
/// step; anything else re-infers the flaw step (lowest-scoring, ties to the
/// lowest index).
RefineAction route_feedback(const ChainAssessment& assessment, const ReasoningChain& chain);

struct Selection {
  const ReasoningChain* chain = nullptr;
  int index = 0;
};

/// Argmax of iteration scores, ties to the earliest. Throws empty_trace.
Selection select_best(const RefinementTrace& trace);
int argmax_earliest(const std::vector<double>& scores);

struct RunResult {
  std::string final_answer;
  RefinementTrace trace;
};

RunResult run(const MultimodalQuery& query, const EngineConfig& config, Backend& backend);
/// Builds the backend from config.backend.
RunResult run(const MultimodalQuery& query, const EngineConfig& config);

Json to_json(const RefinementTrace& trace);
RefinementTrace trace_from_json(const Json& j);
std::string serialize_trace(const RefinementTrace& trace);
RefinementTrace deserialize_trace(std::string_view text);

}  // namespace cmrf
