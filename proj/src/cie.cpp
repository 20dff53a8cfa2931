#include "cmrf/cie.hpp"

#include <sstream>

#include "cmrf/error.hpp"
#include "cmrf/prompts.hpp"
#include "cmrf/rdu.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

namespace {

constexpr int kSummaryWords = 12;

std::string summarize(const std::string& answer) {
  auto line = trim(answer.substr(0, answer.find('\n')));
  if (const auto stop = line.find(". "); stop != std::string::npos) line = line.substr(0, stop + 1);
  std::istringstream in(line);
  std::string out;
  int n = 0;
  for (std::string w; in >> w;) {
    if (n == kSummaryWords) {
      out += " ...";
      break;
    }
    if (n++) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string region_note(const SubProblem& sub) {
  if (!sub.region) return {};
  std::ostringstream out;
  out << "Focus on the image area x=" << sub.region->x << ", y=" << sub.region->y
      << ", w=" << sub.region->w << ", h=" << sub.region->h << " (normalized coordinates).\n";
  return out.str();
}

}  // namespace

std::string format_steps(const std::vector<ReasoningStep>& steps) {
  if (steps.empty()) return "(none)";
  std::string out;
  for (const auto& s : steps) {
    if (!out.empty()) out.push_back('\n');
    out += "Step " + std::to_string(s.sub.index) + ": " + s.sub.text + "\n";
    out += "Answer " + std::to_string(s.answer.index) + ": " + s.answer.text;
  }
  return out;
}

InferenceContext build_context(const MultimodalQuery& query,
                               const std::vector<ReasoningStep>& answered_prefix) {
  for (std::size_t i = 0; i < answered_prefix.size(); ++i) {
    const int want = static_cast<int>(i) + 1;
    const auto& s = answered_prefix[i];
    if (s.sub.index != want || s.answer.index != want) {
      throw Error(Errc::non_contiguous_prefix,
                  "answered prefix is not contiguous at position " + std::to_string(want), want);
    }
  }
  return {query, answered_prefix};
}

StepRequest step_request(const SubProblem& sub, const InferenceContext& ctx,
                         const InferenceOptions& options, bool alternative) {
  auto prior = ctx.prior;
  const auto render = [&] {
    PromptRequest req;
    req.role = Role::cie;
    req.template_id = std::string(prompts::kStep.id);
    req.image_refs = image_refs(ctx.query);
    req.sampling = options.sampling;
    req.text_parts.push_back(prompts::render(
        prompts::kStep, {{"image_note", image_note(ctx.query)},
                         {"question", ctx.query.text},
                         {"prior", format_steps(prior)},
                         {"index", std::to_string(sub.index)},
                         {"modality", std::string(to_string(sub.modality))},
                         {"sub", sub.text},
                         {"region_note", region_note(sub)}}));
    if (alternative) req.text_parts.push_back(std::string(prompts::kAlternative.body));
    return req;
  };
  StepRequest out{render(), 0};
  while (text::word_count(out.request.joined_text()) > options.context_budget &&
         out.summarized < static_cast<int>(prior.size())) {
    auto& answer = prior[static_cast<std::size_t>(out.summarized)].answer;
    answer.text = summarize(answer.text);
    ++out.summarized;
    out.request = render();
  }
  return out;
}

StepResult answer_step(const SubProblem& sub, const InferenceContext& ctx, Backend& backend,
                       const InferenceOptions& options, bool alternative) {
  if (static_cast<int>(ctx.prior.size()) != sub.index - 1) {
    throw Error(Errc::non_contiguous_prefix,
                "context covers " + std::to_string(ctx.prior.size()) + " steps, sub-problem is step " +
                    std::to_string(sub.index),
                sub.index);
  }
  const auto built = step_request(sub, ctx, options, alternative);
  StepResult result;
  result.template_id = built.request.template_id;
  result.summarized = built.summarized;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto reply = backend.generate(built.request);
    result.latency += reply.latency;
    auto text = trim(reply.text);
    if (!text.empty()) {
      result.answer = {sub.index, std::move(text), reply.text};
      return result;
    }
  }
  throw Error(Errc::empty_answer, "blank answer for step " + std::to_string(sub.index) + " after retry",
              sub.index);
}

PromptRequest synthesis_request(const MultimodalQuery& query,
                                const std::vector<ReasoningStep>& steps,
                                const InferenceOptions& options) {
  PromptRequest req;
  req.role = Role::cie;
  req.template_id = std::string(prompts::kSynthesize.id);
  req.image_refs = image_refs(query);
  req.sampling = options.sampling;
  req.text_parts.push_back(prompts::render(prompts::kSynthesize,
                                           {{"image_note", image_note(query)},
                                            {"question", query.text},
                                            {"steps", format_steps(steps)}}));
  return req;
}

ChainRun run_chain(const MultimodalQuery& query, const std::vector<SubProblem>& subproblems,
                   Backend& backend, const InferenceOptions& options,
                   const std::vector<ReasoningStep>& prefix, std::optional<int> alternative_step) {
  if (auto v = validate_subproblems(subproblems); !v) {
    throw Error(Errc::invalid_argument, "sub-problems: " + v.violation, v.step);
  }
  if (prefix.size() > subproblems.size()) {
    throw Error(Errc::invalid_argument, "answered prefix longer than the decomposition");
  }
  ChainRun run;
  run.chain.query_id = query.id;
  run.chain.steps = build_context(query, prefix).prior;
  for (std::size_t i = prefix.size(); i < subproblems.size(); ++i) {
    const auto& sub = subproblems[i];
    try {
      const auto ctx = build_context(query, run.chain.steps);
      const auto step = answer_step(sub, ctx, backend, options, alternative_step == sub.index);
      run.template_ids.push_back(step.template_id);
      run.latency += step.latency;
      if (step.summarized > 0) {
        run.notes.push_back("step " + std::to_string(sub.index) + ": " +
                            std::to_string(step.summarized) +
                            " prior answers shortened to fit the context budget");
      }
      run.chain.steps.push_back({sub, step.answer});
    } catch (const Error& e) {
      if (e.step() == sub.index) throw;
      throw Error(e.code(), "step " + std::to_string(sub.index) + ": " + e.what(), sub.index);
    }
  }
  const auto req = synthesis_request(query, run.chain.steps, options);
  run.template_ids.push_back(req.template_id);
  std::string final_answer;
  for (int attempt = 0; attempt < 2 && final_answer.empty(); ++attempt) {
    const auto reply = backend.generate(req);
    run.latency += reply.latency;
    final_answer = trim(reply.text);
  }
  if (final_answer.empty()) throw Error(Errc::empty_answer, "blank final answer after retry");
  run.chain.final_answer = std::move(final_answer);
  return run;
}

}  // namespace cmrf
