#pragma once

// Chain data model shared by every stage of the pipeline.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cmrf {

inline constexpr int kDefaultMaxSubproblems = 8;

enum class Modality { visual, textual, cross_modal };

enum class FlawClass { consistent, decomposition_flaw, inference_flaw, factual_flaw };

std::string_view to_string(Modality m);
std::string_view to_string(FlawClass f);
/// Single-letter grammar tag: V, T or X.
char modality_tag(Modality m);
std::optional<Modality> modality_from_tag(std::string_view tag);
std::optional<Modality> modality_from_string(std::string_view s);
std::optional<FlawClass> flaw_from_string(std::string_view s);

/// Normalized box, all coordinates in [0,1].
struct Region {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const Region&) const = default;
};

bool region_in_bounds(const Region& r);

struct MultimodalQuery {
  std::string id;
  std::optional<std::string> image;  // filesystem path or absolute URL
  std::string text;

  bool operator==(const MultimodalQuery&) const = default;
};

bool is_valid_image_ref(std::string_view ref);

struct SubProblem {
  int index = 1;
  std::string text;
  std::optional<Region> region;
  Modality modality = Modality::textual;

  bool operator==(const SubProblem&) const = default;
};

struct StepAnswer {
  int index = 1;
  std::string text;
  std::string raw;  // unmodified backend output

  bool operator==(const StepAnswer&) const = default;
};

struct ReasoningStep {
  SubProblem sub;
  StepAnswer answer;

  bool operator==(const ReasoningStep&) const = default;
};

struct ReasoningChain {
  std::string query_id;
  std::vector<ReasoningStep> steps;
  std::string final_answer;
  int iteration = 0;

  std::size_t size() const noexcept { return steps.size(); }
  std::vector<SubProblem> subproblems() const;

  bool operator==(const ReasoningChain&) const = default;
};

struct StepVerdict {
  double score = 0.0;
  FlawClass flaw = FlawClass::consistent;

  bool operator==(const StepVerdict&) const = default;
};

/// Coherence verdict for one chain. Populated only through `create`, which
/// rejects scores outside [0,1] and a flaw step that indexes no verdict.
class ChainAssessment {
 public:
  ChainAssessment() = default;
  static ChainAssessment create(double score, std::vector<StepVerdict> verdicts,
                                std::string feedback, std::optional<int> flaw_step,
                                double final_score);

  double score() const noexcept { return score_; }
  const std::vector<StepVerdict>& step_verdicts() const noexcept { return verdicts_; }
  const std::string& feedback() const noexcept { return feedback_; }
  std::optional<int> flaw_step() const noexcept { return flaw_step_; }
  /// Verdict on the synthesized final answer.
  double final_score() const noexcept { return final_score_; }

  bool operator==(const ChainAssessment&) const = default;

 private:
  double score_ = 0.0;
  std::vector<StepVerdict> verdicts_;
  std::string feedback_;
  std::optional<int> flaw_step_;
  double final_score_ = 0.0;
};

/// Returned rather than thrown; `ok()` when no invariant is violated.
struct ValidationResult {
  std::string violation;
  std::optional<int> step;

  bool ok() const noexcept { return violation.empty(); }
  explicit operator bool() const noexcept { return ok(); }

  static ValidationResult pass() { return {}; }
  static ValidationResult fail(std::string what, std::optional<int> at = std::nullopt) {
    return {std::move(what), at};
  }
};

ValidationResult validate_query(const MultimodalQuery& q);
/// Contiguity from 1, non-empty text, region bounds.
ValidationResult validate_subproblems(const std::vector<SubProblem>& subs);
/// Checks every chain invariant; the final answer is only required when
/// `require_final` is set.
ValidationResult validate_chain(const ReasoningChain& chain, bool require_final = true);

std::string trim(std::string_view s);

}  // namespace cmrf
