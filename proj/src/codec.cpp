#include "cmrf/codec.hpp"

#include <cmath>
#include <limits>

#include "cmrf/error.hpp"

namespace cmrf {

ObjectReader::ObjectReader(const Json& j, std::string context)
    : j_(j), context_(std::move(context)) {
  if (!j_.is_object()) fail("expected an object");
}

void ObjectReader::fail(const std::string& what) const {
  throw Error(Errc::malformed_input, context_ + ": " + what);
}

bool ObjectReader::has(std::string_view key) const {
  return j_.find(std::string(key)) != j_.end();
}

const Json& ObjectReader::required(std::string_view key) {
  const auto it = j_.find(std::string(key));
  if (it == j_.end()) fail("missing field '" + std::string(key) + "'");
  seen_.emplace(key);
  return *it;
}

const Json* ObjectReader::optional(std::string_view key) {
  const auto it = j_.find(std::string(key));
  if (it == j_.end()) return nullptr;
  seen_.emplace(key);
  return it->is_null() ? nullptr : &*it;
}

std::string ObjectReader::string(std::string_view key) {
  const auto& v = required(key);
  if (!v.is_string()) fail("field '" + std::string(key) + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> ObjectReader::opt_string(std::string_view key) {
  const auto* v = optional(key);
  if (!v) return std::nullopt;
  if (!v->is_string()) fail("field '" + std::string(key) + "' must be a string");
  return v->get<std::string>();
}

long long ObjectReader::integer(std::string_view key) {
  const auto& v = required(key);
  if (!v.is_number_integer()) fail("field '" + std::string(key) + "' must be an integer");
  return v.get<long long>();
}

double ObjectReader::number(std::string_view key) {
  const auto& v = required(key);
  if (!v.is_number()) fail("field '" + std::string(key) + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail("field '" + std::string(key) + "' must be finite");
  return d;
}

bool ObjectReader::boolean(std::string_view key) {
  const auto& v = required(key);
  if (!v.is_boolean()) fail("field '" + std::string(key) + "' must be a boolean");
  return v.get<bool>();
}

const Json& ObjectReader::array(std::string_view key) {
  const auto& v = required(key);
  if (!v.is_array()) fail("field '" + std::string(key) + "' must be an array");
  return v;
}

void ObjectReader::finish() const {
  for (auto it = j_.begin(); it != j_.end(); ++it) {
    if (!seen_.count(it.key())) fail("unknown field '" + it.key() + "'");
  }
}

Json parse_json(std::string_view text, const std::string& context) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(Errc::malformed_input, context + ": empty input");
  }
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::malformed_input, context + ": " + e.what());
  }
}

Json to_json(const Region& r) { return Json::array({r.x, r.y, r.w, r.h}); }

Region region_from_json(const Json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4) {
    throw Error(Errc::malformed_input, context + ": region must be a 4-array [x, y, w, h]");
  }
  for (const auto& v : j) {
    if (!v.is_number()) throw Error(Errc::malformed_input, context + ": region entries must be numbers");
  }
  Region r{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!region_in_bounds(r)) throw Error(Errc::malformed_input, context + ": region out of bounds");
  return r;
}

Json to_json(const MultimodalQuery& q) {
  Json j;
  j["id"] = q.id;
  if (q.image) j["image"] = *q.image;
  j["text"] = q.text;
  return j;
}

MultimodalQuery query_from_json(const Json& j) {
  ObjectReader r(j, "query");
  MultimodalQuery q;
  q.id = r.string("id");
  q.image = r.opt_string("image");
  q.text = r.string("text");
  r.finish();
  if (auto v = validate_query(q); !v) r.fail(v.violation);
  return q;
}

Json to_json(const ReasoningChain& c) {
  Json j;
  j["query_id"] = c.query_id;
  j["iteration"] = c.iteration;
  Json steps = Json::array();
  for (const auto& s : c.steps) {
    Json step;
    step["index"] = s.sub.index;
    step["modality"] = std::string(to_string(s.sub.modality));
    if (s.sub.region) step["region"] = to_json(*s.sub.region);
    step["q"] = s.sub.text;
    step["a"] = s.answer.text;
    step["raw"] = s.answer.raw;
    steps.push_back(std::move(step));
  }
  j["steps"] = std::move(steps);
  j["final_answer"] = c.final_answer;
  return j;
}

ReasoningChain chain_from_json(const Json& j) {
  ObjectReader r(j, "chain");
  ReasoningChain c;
  c.query_id = r.string("query_id");
  c.iteration = static_cast<int>(r.integer("iteration"));
  for (const auto& sj : r.array("steps")) {
    ObjectReader s(sj, "chain step " + std::to_string(c.steps.size() + 1));
    ReasoningStep step;
    step.sub.index = static_cast<int>(s.integer("index"));
    const auto mod = modality_from_string(s.string("modality"));
    if (!mod) s.fail("unknown modality");
    step.sub.modality = *mod;
    if (const auto* reg = s.optional("region")) step.sub.region = region_from_json(*reg, s.context());
    step.sub.text = s.string("q");
    step.answer.index = step.sub.index;
    step.answer.text = s.string("a");
    step.answer.raw = s.string("raw");
    s.finish();
    c.steps.push_back(std::move(step));
  }
  c.final_answer = r.string("final_answer");
  r.finish();
  if (auto v = validate_chain(c); !v) r.fail(v.violation);
  return c;
}

Json to_json(const ChainAssessment& a) {
  Json j;
  j["score"] = a.score();
  Json verdicts = Json::array();
  for (const auto& v : a.step_verdicts()) {
    verdicts.push_back(Json{{"score", v.score}, {"flaw", std::string(to_string(v.flaw))}});
  }
  j["step_verdicts"] = std::move(verdicts);
  j["final_score"] = a.final_score();
  if (a.flaw_step()) j["flaw_step"] = *a.flaw_step();
  j["feedback"] = a.feedback();
  return j;
}

ChainAssessment assessment_from_json(const Json& j) {
  ObjectReader r(j, "assessment");
  const double score = r.number("score");
  std::vector<StepVerdict> verdicts;
  for (const auto& vj : r.array("step_verdicts")) {
    ObjectReader v(vj, "step verdict");
    StepVerdict sv;
    sv.score = v.number("score");
    const auto flaw = flaw_from_string(v.string("flaw"));
    if (!flaw) v.fail("unknown flaw class");
    sv.flaw = *flaw;
    v.finish();
    verdicts.push_back(sv);
  }
  const double final_score = r.number("final_score");
  std::optional<int> flaw_step;
  if (r.optional("flaw_step")) flaw_step = static_cast<int>(r.integer("flaw_step"));
  auto feedback = r.string("feedback");
  r.finish();
  try {
    return ChainAssessment::create(score, std::move(verdicts), std::move(feedback), flaw_step,
                                   final_score);
  } catch (const Error& e) {
    r.fail(e.what());
  }
}

Json to_json(const PromptRequest& q) {
  Json j;
  j["role"] = std::string(to_string(q.role));
  j["template_id"] = q.template_id;
  j["text_parts"] = q.text_parts;
  j["image_refs"] = q.image_refs;
  Json s;
  s["temperature"] = q.sampling.temperature;
  if (q.sampling.seed) s["seed"] = *q.sampling.seed;
  s["max_tokens"] = q.sampling.max_tokens;
  j["sampling"] = std::move(s);
  return j;
}

PromptRequest request_from_json(const Json& j) {
  ObjectReader r(j, "request");
  PromptRequest q;
  const auto role = role_from_string(r.string("role"));
  if (!role) r.fail("unknown role");
  q.role = *role;
  q.template_id = r.string("template_id");
  for (const auto& t : r.array("text_parts")) {
    if (!t.is_string()) r.fail("text_parts entries must be strings");
    q.text_parts.push_back(t.get<std::string>());
  }
  for (const auto& t : r.array("image_refs")) {
    if (!t.is_string()) r.fail("image_refs entries must be strings");
    q.image_refs.push_back(t.get<std::string>());
  }
  ObjectReader s(r.required("sampling"), "sampling");
  q.sampling.temperature = s.number("temperature");
  if (s.optional("seed")) q.sampling.seed = s.integer("seed");
  else q.sampling.seed.reset();
  q.sampling.max_tokens = static_cast<int>(s.integer("max_tokens"));
  s.finish();
  r.finish();
  return q;
}

Json to_json(const ModelResponse& m) {
  Json j;
  j["text"] = m.text;
  j["latency"] = m.latency;
  j["prompt_tokens"] = m.tokens.prompt;
  j["completion_tokens"] = m.tokens.completion;
  return j;
}

ModelResponse response_from_json(const Json& j) {
  ObjectReader r(j, "response");
  ModelResponse m;
  m.text = r.string("text");
  m.latency = r.number("latency");
  if (m.latency < 0) r.fail("latency must be >= 0");
  m.tokens.prompt = static_cast<int>(r.integer("prompt_tokens"));
  m.tokens.completion = static_cast<int>(r.integer("completion_tokens"));
  r.finish();
  return m;
}

std::string serialize_chain(const ReasoningChain& chain) {
  if (auto v = validate_chain(chain); !v) {
    throw Error(Errc::validation_failed, "cannot serialize invalid chain: " + v.violation, v.step);
  }
  return to_json(chain).dump();
}

ReasoningChain deserialize_chain(std::string_view text) {
  return chain_from_json(parse_json(text, "chain"));
}

}  // namespace cmrf
