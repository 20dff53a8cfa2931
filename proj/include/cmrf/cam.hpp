#pragma once

// Coherence assessment. Two scorers share the ChainAssessment output:
//  - prompted: per-step verdicts from the backend, averaged;
//  - trained: a logistic scorer over fixed chain features, fit with the
//    pairwise hinge loss max(0, m - (s_pos - s_neg)).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmrf/backend.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

inline constexpr std::size_t kFeatureDim = 8;
inline constexpr std::string_view kFeatureSchema = "cmrf.cam-features.v1";
inline constexpr double kDefaultMargin = 0.2;

/// [N/N_max, mean verdict, min verdict, fraction non-consistent,
///  mean Jaccard of consecutive answers, Jaccard(final answer, question),
///  fraction degenerate answers, any factual flaw]
using CamFeatureVector = std::array<double, kFeatureDim>;

struct CamScorerParams {
  std::array<double, kFeatureDim> weights{};
  double bias = 0.0;
  double margin = kDefaultMargin;

  bool operator==(const CamScorerParams&) const = default;
};

/// Throws invalid_argument on non-finite entries or a non-positive margin.
void validate(const CamScorerParams& params);

struct TrainingPair {
  ReasoningChain positive;
  ReasoningChain negative;
  std::string source_id;
};

struct FeaturePair {
  CamFeatureVector positive{};
  CamFeatureVector negative{};
  std::string source_id;
};

enum class CamMode { prompted, trained, mean_of_both };
std::string_view to_string(CamMode m);
std::optional<CamMode> cam_mode_from_string(std::string_view s);

// ---------------------------------------------------------------------------
// Prompted assessment

struct Verdict {
  int score = 0;  // 0..10
  std::optional<FlawClass> flaw;
  std::string reason;
};

/// Reads `SCORE: <0..10>` and, when `require_flaw`, `FLAW: <class>`.
/// An optional `REASON:` line is kept. Returns nullopt when unreadable.
std::optional<Verdict> parse_verdict(std::string_view reply, bool require_flaw);

struct AssessOptions {
  Sampling sampling;
};

struct AssessOutcome {
  ChainAssessment assessment;
  std::vector<std::string> template_ids;
  double latency = 0.0;
};

/// One cam call per step plus one for the final answer (each may be
/// followed by a single repair call). S is the mean of all N+1 verdicts on
/// the 0..10 scale divided by 10; the flaw step is the lowest-scoring step,
/// ties to the lowest index. An unreadable verdict scores 0 as an
/// inference flaw and is noted in the feedback.
AssessOutcome assess(const ReasoningChain& chain, const MultimodalQuery& query, Backend& backend,
                     const AssessOptions& options = {});

PromptRequest step_verdict_request(const ReasoningChain& chain, const MultimodalQuery& query,
                                   int step, const AssessOptions& options);

// ---------------------------------------------------------------------------
// Trained scorer

CamFeatureVector featurize(const ReasoningChain& chain, const ChainAssessment& assessment,
                           std::string_view question, int n_max = kDefaultMaxSubproblems);

/// logistic(w . x + b)
double score(const CamScorerParams& params, const CamFeatureVector& features);

/// max(0, m - (s_pos - s_neg)); throws nonpositive_margin unless m > 0.
double hinge_loss(double s_pos, double s_neg, double margin);

double mean_loss(const CamScorerParams& params, const std::vector<FeaturePair>& pairs);

struct LossGradient {
  std::array<double, kFeatureDim> weights{};
  double bias = 0.0;
};

/// Gradient of mean_loss in (weights, bias); the subgradient of max(0, .)
/// at zero is taken as 0.
LossGradient loss_gradient(const CamScorerParams& params, const std::vector<FeaturePair>& pairs);

struct TrainHyper {
  double learning_rate = 0.05;
  int epochs = 500;
};

struct TrainResult {
  CamScorerParams params;
  std::vector<double> loss_history;  // mean loss before each epoch, then final
  int best_epoch = 0;
};

/// Full-batch subgradient descent on the mean hinge loss. Returns the
/// lowest-loss iterate (earliest on ties), so the returned loss never
/// exceeds the initial one. Throws no_pairs on an empty set.
TrainResult train_cam(const std::vector<FeaturePair>& pairs, const CamScorerParams& init,
                      const TrainHyper& hyper);

/// Zero bias, weights uniform in [-0.01, 0.01] drawn from `seed`.
CamScorerParams initial_params(double margin, std::uint64_t seed);

/// Fraction of pairs whose positive scores strictly above its negative.
double pairwise_accuracy(const CamScorerParams& params, const std::vector<FeaturePair>& pairs);

void save_params(const CamScorerParams& params, const std::filesystem::path& path);
/// Refuses (schema_mismatch) records written for another feature schema.
CamScorerParams load_params(const std::filesystem::path& path);
std::string params_to_text(const CamScorerParams& params);
CamScorerParams params_from_text(std::string_view text);

/// Precomputed feature pairs: {"schema", "pairs": [{"id", "positive", "negative"}]}.
std::vector<FeaturePair> feature_pairs_from_text(std::string_view text);
std::string feature_pairs_to_text(const std::vector<FeaturePair>& pairs);
std::vector<FeaturePair> load_feature_pairs(const std::filesystem::path& path);

/// Score used by the refinement loop under the given mode.
double effective_score(CamMode mode, const ChainAssessment& assessment,
                       const std::optional<CamScorerParams>& scorer,
                       const CamFeatureVector& features);

}  // namespace cmrf
