#include "cmrf/types.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "cmrf/error.hpp"

namespace cmrf {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::malformed_input: return "malformed-input";
    case Errc::validation_failed: return "validation-failed";
    case Errc::io_error: return "io-error";
    case Errc::schema_mismatch: return "schema-mismatch";
    case Errc::script_exhausted: return "script-exhausted";
    case Errc::transport_error: return "transport-error";
    case Errc::endpoint_error: return "endpoint-error";
    case Errc::replay_mismatch: return "replay-mismatch";
    case Errc::empty_decomposition: return "empty-decomposition";
    case Errc::decomposition_unparseable: return "decomposition-unparseable";
    case Errc::non_contiguous_prefix: return "non-contiguous-prefix";
    case Errc::empty_answer: return "empty-answer";
    case Errc::verdict_unparseable: return "verdict-unparseable";
    case Errc::nonpositive_margin: return "nonpositive-margin";
    case Errc::no_pairs: return "no-pairs";
    case Errc::empty_trace: return "empty-trace";
  }
  return "unknown";
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::visual: return "visual";
    case Modality::textual: return "textual";
    case Modality::cross_modal: return "cross-modal";
  }
  return "textual";
}

std::string_view to_string(FlawClass f) {
  switch (f) {
    case FlawClass::consistent: return "consistent";
    case FlawClass::decomposition_flaw: return "decomposition-flaw";
    case FlawClass::inference_flaw: return "inference-flaw";
    case FlawClass::factual_flaw: return "factual-flaw";
  }
  return "consistent";
}

char modality_tag(Modality m) {
  switch (m) {
    case Modality::visual: return 'V';
    case Modality::textual: return 'T';
    case Modality::cross_modal: return 'X';
  }
  return 'T';
}

std::optional<Modality> modality_from_tag(std::string_view tag) {
  if (tag == "V") return Modality::visual;
  if (tag == "T") return Modality::textual;
  if (tag == "X") return Modality::cross_modal;
  return std::nullopt;
}

std::optional<Modality> modality_from_string(std::string_view s) {
  if (s == "visual") return Modality::visual;
  if (s == "textual") return Modality::textual;
  if (s == "cross-modal") return Modality::cross_modal;
  return std::nullopt;
}

std::optional<FlawClass> flaw_from_string(std::string_view s) {
  if (s == "consistent") return FlawClass::consistent;
  if (s == "decomposition-flaw") return FlawClass::decomposition_flaw;
  if (s == "inference-flaw") return FlawClass::inference_flaw;
  if (s == "factual-flaw") return FlawClass::factual_flaw;
  return std::nullopt;
}

bool region_in_bounds(const Region& r) {
  const auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  return unit(r.x) && unit(r.y) && unit(r.w) && unit(r.h) && r.w > 0.0 && r.h > 0.0 &&
         r.x + r.w <= 1.0 && r.y + r.h <= 1.0;
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

bool is_valid_image_ref(std::string_view ref) {
  if (trim(ref).empty() || trim(ref).size() != ref.size()) return false;
  for (char c : ref) {
    if (c == '\0' || c == '\n' || c == '\r') return false;
  }
  static const std::regex scheme(R"(^([A-Za-z][A-Za-z0-9+.\-]*):)");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(ref.begin(), ref.end(), m, scheme)) {
    const auto name = m[1].str();
    if (name == "data") return ref.find(',') != std::string_view::npos;
    // Single letter before ':' is a Windows drive, not a scheme.
    if (name.size() > 1) {
      static const std::regex url(R"(^[A-Za-z][A-Za-z0-9+.\-]*://[^\s/?#]+\S*$)");
      return std::regex_match(ref.begin(), ref.end(), url);
    }
  }
  return true;
}

std::vector<SubProblem> ReasoningChain::subproblems() const {
  std::vector<SubProblem> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.sub);
  return out;
}

ChainAssessment ChainAssessment::create(double score, std::vector<StepVerdict> verdicts,
                                        std::string feedback, std::optional<int> flaw_step,
                                        double final_score) {
  constexpr double kSlop = 1e-12;
  const auto unit = [&](double v, const char* what) {
    if (!std::isfinite(v) || v < -kSlop || v > 1.0 + kSlop) {
      throw Error(Errc::invalid_argument,
                  std::string(what) + " out of [0,1]: " + std::to_string(v));
    }
    return std::clamp(v, 0.0, 1.0);
  };
  ChainAssessment a;
  a.score_ = unit(score, "assessment score");
  a.final_score_ = unit(final_score, "final-answer score");
  for (auto& v : verdicts) v.score = unit(v.score, "step verdict score");
  if (flaw_step && (*flaw_step < 1 || *flaw_step > static_cast<int>(verdicts.size()))) {
    throw Error(Errc::invalid_argument,
                "flaw_step " + std::to_string(*flaw_step) + " does not index a step");
  }
  a.verdicts_ = std::move(verdicts);
  a.feedback_ = std::move(feedback);
  a.flaw_step_ = flaw_step;
  return a;
}

ValidationResult validate_query(const MultimodalQuery& q) {
  if (q.id.empty()) return ValidationResult::fail("query id is empty");
  if (trim(q.text).empty()) return ValidationResult::fail("query text is empty");
  if (q.image && !is_valid_image_ref(*q.image)) {
    return ValidationResult::fail("invalid image reference '" + *q.image + "'");
  }
  return ValidationResult::pass();
}

ValidationResult validate_subproblems(const std::vector<SubProblem>& subs) {
  if (subs.empty()) return ValidationResult::fail("no steps");
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const int pos = static_cast<int>(i) + 1;
    const auto& s = subs[i];
    if (s.index != pos) {
      return ValidationResult::fail("non-contiguous index at position " + std::to_string(pos),
                                    pos);
    }
    if (trim(s.text).empty()) {
      return ValidationResult::fail("empty sub-problem text, step " + std::to_string(pos), pos);
    }
    if (s.region && !region_in_bounds(*s.region)) {
      return ValidationResult::fail("region out of bounds, step " + std::to_string(pos), pos);
    }
  }
  return ValidationResult::pass();
}

ValidationResult validate_chain(const ReasoningChain& chain, bool require_final) {
  if (chain.iteration < 0) return ValidationResult::fail("negative iteration");
  if (auto r = validate_subproblems(chain.subproblems()); !r) return r;
  for (std::size_t i = 0; i < chain.steps.size(); ++i) {
    const int pos = static_cast<int>(i) + 1;
    const auto& a = chain.steps[i].answer;
    if (a.index != chain.steps[i].sub.index) {
      return ValidationResult::fail("answer index mismatch at position " + std::to_string(pos),
                                    pos);
    }
    if (trim(a.text).empty()) {
      return ValidationResult::fail("empty answer, step " + std::to_string(pos), pos);
    }
  }
  if (require_final && trim(chain.final_answer).empty()) {
    return ValidationResult::fail("final answer is empty");
  }
  return ValidationResult::pass();
}

}  // namespace cmrf
