#pragma once

// Contextual inference: answers sub-problems in order, each with the image,
// the original question and every earlier answer in its prompt.

#include <optional>
#include <string>
#include <vector>

#include "cmrf/backend.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

struct InferenceContext {
  MultimodalQuery query;
  std::vector<ReasoningStep> prior;  // steps 1..i-1, in order
};

struct InferenceOptions {
  Sampling sampling;
  /// Word budget for a rendered step prompt; beyond it the oldest prior
  /// answers are shortened to one line each.
  int context_budget = 3072;
};

/// Throws non_contiguous_prefix unless the prefix is indexed 1..k.
InferenceContext build_context(const MultimodalQuery& query,
                               const std::vector<ReasoningStep>& answered_prefix);

struct StepRequest {
  PromptRequest request;
  int summarized = 0;  // prior answers shortened to fit the budget
};

StepRequest step_request(const SubProblem& sub, const InferenceContext& ctx,
                         const InferenceOptions& options, bool alternative = false);

struct StepResult {
  StepAnswer answer;
  std::string template_id;
  int summarized = 0;
  double latency = 0.0;
};

/// One cie call (two if the first reply is blank). `alternative` appends
/// the re-interpretation instruction used when re-inferring a flawed step.
StepResult answer_step(const SubProblem& sub, const InferenceContext& ctx, Backend& backend,
                       const InferenceOptions& options = {}, bool alternative = false);

PromptRequest synthesis_request(const MultimodalQuery& query,
                                const std::vector<ReasoningStep>& steps,
                                const InferenceOptions& options);

struct ChainRun {
  ReasoningChain chain;
  std::vector<std::string> template_ids;
  std::vector<std::string> notes;
  double latency = 0.0;  // summed backend latency
};

/// Answers every sub-problem after `prefix` strictly in order, then makes one
/// synthesis call for the final answer. Steps in `prefix` are reused as-is.
/// A failing step is rethrown with its index attached.
ChainRun run_chain(const MultimodalQuery& query, const std::vector<SubProblem>& subproblems,
                   Backend& backend, const InferenceOptions& options = {},
                   const std::vector<ReasoningStep>& prefix = {},
                   std::optional<int> alternative_step = std::nullopt);

std::string format_steps(const std::vector<ReasoningStep>& steps);

}  // namespace cmrf
