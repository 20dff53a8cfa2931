#include "cmrf/rdu.hpp"

#include <regex>
#include <sstream>

#include "cmrf/error.hpp"
#include "cmrf/prompts.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

namespace {

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

std::string image_note(const MultimodalQuery& query) {
  return query.image ? "An image is attached." : "No image is attached; rely on the text alone.";
}

std::vector<std::string> image_refs(const MultimodalQuery& query) {
  if (query.image) return {*query.image};
  return {};
}

std::string format_subproblems(const std::vector<SubProblem>& subs) {
  std::string out;
  for (const auto& s : subs) {
    if (!out.empty()) out.push_back('\n');
    out += std::to_string(s.index) + ". [" + modality_tag(s.modality) + "] ";
    if (s.region) {
      out += "(" + format_number(s.region->x) + "," + format_number(s.region->y) + "," +
             format_number(s.region->w) + "," + format_number(s.region->h) + ") ";
    }
    out += s.text;
  }
  return out;
}

std::vector<SubProblem> parse_decomposition(std::string_view raw) {
  static const std::regex line_re(
      R"(^\s*\d+\.\s*\[([VTX])\]\s*(?:\(\s*([^,()]+),\s*([^,()]+),\s*([^,()]+),\s*([^,()]+)\)\s*)?(\S.*?)\s*$)");
  std::vector<SubProblem> out;
  for (const auto& line : text::split_lines(raw)) {
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    SubProblem s;
    s.index = static_cast<int>(out.size()) + 1;
    s.modality = *modality_from_tag(m[1].str());
    if (m[2].matched) {
      Region r;
      try {
        r = {std::stod(m[2].str()), std::stod(m[3].str()), std::stod(m[4].str()),
             std::stod(m[5].str())};
      } catch (const std::exception&) {
        throw Error(Errc::malformed_input, "unreadable region, step " + std::to_string(s.index),
                    s.index);
      }
      if (!region_in_bounds(r)) {
        throw Error(Errc::malformed_input, "region out of bounds, step " + std::to_string(s.index),
                    s.index);
      }
      s.region = r;
    }
    s.text = m[6].str();
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(Errc::empty_decomposition, "no decomposition line matched");
  return out;
}

PromptRequest decomposition_request(const MultimodalQuery& query,
                                    const std::optional<DecompositionFeedback>& feedback,
                                    const DecomposeOptions& options) {
  PromptRequest req;
  req.role = Role::rdu;
  req.image_refs = image_refs(query);
  req.sampling = options.sampling;
  if (!feedback) {
    req.template_id = std::string(prompts::kDecompose.id);
    req.text_parts.push_back(prompts::render(
        prompts::kDecompose, {{"n_max", std::to_string(options.n_max)},
                              {"image_note", image_note(query)},
                              {"question", query.text}}));
    return req;
  }
  const int keep = feedback->flaw_step - 1;
  std::string instruction;
  if (keep == 0) {
    instruction = "Write a new list of at most " + std::to_string(options.n_max) +
                  " sub-questions, numbered from 1.";
  } else {
    instruction = "Steps 1 to " + std::to_string(keep) +
                  " stay as they are. Write replacement sub-questions for step " +
                  std::to_string(feedback->flaw_step) + " onward, numbered from " +
                  std::to_string(feedback->flaw_step) + ", at most " +
                  std::to_string(options.n_max - keep) + " lines.";
  }
  req.template_id = std::string(prompts::kRevise.id);
  req.text_parts.push_back(prompts::render(
      prompts::kRevise, {{"flaw_step", std::to_string(feedback->flaw_step)},
                         {"flaw_class", std::string(to_string(feedback->flaw_class))},
                         {"rationale", feedback->rationale.empty() ? "(none given)" : feedback->rationale},
                         {"prior", format_subproblems(feedback->prior_subproblems)},
                         {"instruction", instruction},
                         {"image_note", image_note(query)},
                         {"question", query.text}}));
  return req;
}

Decomposition decompose(const MultimodalQuery& query,
                        const std::optional<DecompositionFeedback>& feedback, Backend& backend,
                        const DecomposeOptions& options) {
  if (auto v = validate_query(query); !v) throw Error(Errc::invalid_argument, v.violation);
  if (options.n_max < 1) throw Error(Errc::invalid_argument, "n_max must be >= 1");
  if (feedback) {
    if (auto v = validate_subproblems(feedback->prior_subproblems); !v) {
      throw Error(Errc::invalid_argument, "feedback prior decomposition: " + v.violation);
    }
    if (feedback->flaw_step < 1 ||
        feedback->flaw_step > static_cast<int>(feedback->prior_subproblems.size())) {
      throw Error(Errc::invalid_argument, "feedback flaw_step does not index the prior steps");
    }
  }

  Decomposition result;
  auto request = decomposition_request(query, feedback, options);
  result.template_ids.push_back(request.template_id);
  auto first_reply = backend.generate(request);
  result.latency += first_reply.latency;
  auto reply = first_reply.text;

  std::vector<SubProblem> parsed;
  try {
    parsed = parse_decomposition(reply);
  } catch (const Error& first) {
    auto repair = request;
    repair.template_id = std::string(prompts::kDecomposeRepair.id);
    repair.text_parts.push_back(prompts::render(prompts::kDecomposeRepair, {{"reply", reply}}));
    result.template_ids.push_back(repair.template_id);
    result.warnings.push_back(std::string("decomposition reply rejected (") + first.what() +
                              "); repair requested");
    const auto second_reply = backend.generate(repair);
    result.latency += second_reply.latency;
    reply = second_reply.text;
    try {
      parsed = parse_decomposition(reply);
    } catch (const Error& second) {
      throw Error(Errc::decomposition_unparseable,
                  std::string("decomposition unparseable after repair: ") + second.what());
    }
  }

  std::vector<SubProblem> subs;
  if (feedback) {
    subs.assign(feedback->prior_subproblems.begin(),
                feedback->prior_subproblems.begin() + (feedback->flaw_step - 1));
  }
  for (auto& s : parsed) subs.push_back(std::move(s));
  if (static_cast<int>(subs.size()) > options.n_max) {
    result.warnings.push_back("decomposition truncated from " + std::to_string(subs.size()) +
                              " to " + std::to_string(options.n_max) + " sub-problems");
    subs.resize(static_cast<std::size_t>(options.n_max));
  }
  for (std::size_t i = 0; i < subs.size(); ++i) subs[i].index = static_cast<int>(i) + 1;
  result.subproblems = std::move(subs);
  return result;
}

}  // namespace cmrf
