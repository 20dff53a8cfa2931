#pragma once

// Reasoning decomposition: query (+ optional critique) -> ordered sub-problems.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmrf/backend.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

/// Critique of a previous decomposition, routed back from assessment.
struct DecompositionFeedback {
  int flaw_step = 1;
  FlawClass flaw_class = FlawClass::decomposition_flaw;
  std::string rationale;
  std::vector<SubProblem> prior_subproblems;
};

struct DecomposeOptions {
  int n_max = kDefaultMaxSubproblems;
  Sampling sampling;
};

struct Decomposition {
  std::vector<SubProblem> subproblems;
  std::vector<std::string> template_ids;
  std::vector<std::string> warnings;
  double latency = 0.0;
};

/// Lines of the form `<int>. [V|T|X] (x,y,w,h)? text` become sub-problems,
/// renumbered 1..N in order of appearance; other lines are ignored.
/// Throws empty_decomposition when no line matches and malformed_input when
/// a matched line carries an out-of-bounds region.
std::vector<SubProblem> parse_decomposition(std::string_view raw);

/// One rdu call (plus one repair call if the reply does not parse). With
/// feedback, steps before the flaw step are kept verbatim and the reply
/// supplies replacements from the flaw step onward. At most n_max
/// sub-problems are returned; the excess is dropped with a warning.
Decomposition decompose(const MultimodalQuery& query,
                        const std::optional<DecompositionFeedback>& feedback, Backend& backend,
                        const DecomposeOptions& options = {});

/// Renders the request `decompose` sends first; exposed for prompt tests.
PromptRequest decomposition_request(const MultimodalQuery& query,
                                    const std::optional<DecompositionFeedback>& feedback,
                                    const DecomposeOptions& options);

/// `1. [V] (0.1,0.2,0.5,0.5) text` form of a sub-problem list.
std::string format_subproblems(const std::vector<SubProblem>& subs);

std::string image_note(const MultimodalQuery& query);
std::vector<std::string> image_refs(const MultimodalQuery& query);

}  // namespace cmrf
