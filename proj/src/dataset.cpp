#include "cmrf/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <cstdint>
#include <sstream>

#include "cmrf/error.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

namespace {

ValidationResult validate_steps(const std::vector<MdarStep>& steps, const std::string& what) {
  if (steps.empty()) return ValidationResult::fail(what + " has no steps");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int pos = static_cast<int>(i) + 1;
    if (trim(steps[i].q).empty()) {
      return ValidationResult::fail(what + " step " + std::to_string(pos) + " has an empty q", pos);
    }
    if (trim(steps[i].a).empty()) {
      return ValidationResult::fail(what + " step " + std::to_string(pos) + " has an empty a", pos);
    }
    if (steps[i].region && !region_in_bounds(*steps[i].region)) {
      return ValidationResult::fail(what + " step " + std::to_string(pos) + " region out of bounds",
                                    pos);
    }
  }
  return ValidationResult::pass();
}

Json steps_to_json(const std::vector<MdarStep>& steps) {
  Json arr = Json::array();
  for (const auto& s : steps) {
    Json j;
    j["q"] = s.q;
    j["modality"] = std::string(1, modality_tag(s.modality));
    if (s.region) j["region"] = to_json(*s.region);
    j["a"] = s.a;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<MdarStep> steps_from_json(const Json& arr, const std::string& context) {
  if (!arr.is_array()) throw Error(Errc::malformed_input, context + ": steps must be an array");
  std::vector<MdarStep> out;
  for (const auto& sj : arr) {
    ObjectReader r(sj, context + " step " + std::to_string(out.size() + 1));
    MdarStep s;
    s.q = r.string("q");
    const auto mod = modality_from_tag(r.string("modality"));
    if (!mod) r.fail("modality must be V, T or X");
    s.modality = *mod;
    if (const auto* reg = r.optional("region")) s.region = region_from_json(*reg, r.context());
    s.a = r.string("a");
    r.finish();
    out.push_back(std::move(s));
  }
  return out;
}

ReasoningChain chain_of(const std::string& id, const std::vector<MdarStep>& steps,
                        std::string final_answer) {
  ReasoningChain c;
  c.query_id = id;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int index = static_cast<int>(i) + 1;
    const auto& s = steps[i];
    c.steps.push_back({SubProblem{index, s.q, s.region, s.modality}, StepAnswer{index, s.a, s.a}});
  }
  c.final_answer = std::move(final_answer);
  return c;
}

}  // namespace

ValidationResult validate_record(const MdarRecord& record) {
  if (trim(record.id).empty()) return ValidationResult::fail("id is empty");
  if (trim(record.question).empty()) return ValidationResult::fail("question is empty");
  if (trim(record.answer).empty()) return ValidationResult::fail("answer is empty");
  if (record.image && !is_valid_image_ref(*record.image)) {
    return ValidationResult::fail("invalid image path");
  }
  if (auto v = validate_steps(record.steps, "gold"); !v) return v;
  for (std::size_t e = 0; e < record.erroneous_chains.size(); ++e) {
    const auto& chain = record.erroneous_chains[e];
    const auto what = "erroneous chain " + std::to_string(e + 1);
    if (auto v = validate_steps(chain.steps, what); !v) return v;
    if (chain.flaw_step < 1 || chain.flaw_step > static_cast<int>(chain.steps.size())) {
      return ValidationResult::fail(what + ": flaw_step " + std::to_string(chain.flaw_step) +
                                    " does not index its " + std::to_string(chain.steps.size()) +
                                    " steps");
    }
    if (chain.flaw == FlawClass::consistent) {
      return ValidationResult::fail(what + ": flaw must name a flaw class");
    }
    if (chain.steps == record.steps) return ValidationResult::fail(what + " repeats the gold steps");
  }
  if (record.choices) {
    if (record.choices->empty()) return ValidationResult::fail("choices is empty");
    if (std::find(record.choices->begin(), record.choices->end(), record.answer) ==
        record.choices->end()) {
      return ValidationResult::fail("answer '" + record.answer + "' is not one of the choices");
    }
  }
  return ValidationResult::pass();
}

Json to_json(const MdarRecord& record) {
  Json j;
  j["id"] = record.id;
  if (record.image) j["image"] = *record.image;
  j["question"] = record.question;
  j["steps"] = steps_to_json(record.steps);
  j["answer"] = record.answer;
  Json errs = Json::array();
  for (const auto& e : record.erroneous_chains) {
    Json ej;
    ej["steps"] = steps_to_json(e.steps);
    ej["flaw"] = std::string(to_string(e.flaw));
    ej["flaw_step"] = e.flaw_step;
    errs.push_back(std::move(ej));
  }
  j["erroneous_chains"] = std::move(errs);
  if (record.choices) j["choices"] = *record.choices;
  return j;
}

MdarRecord record_from_json(const Json& j) {
  ObjectReader r(j, "record");
  MdarRecord rec;
  rec.id = r.string("id");
  rec.image = r.opt_string("image");
  rec.question = r.string("question");
  rec.steps = steps_from_json(r.required("steps"), "gold");
  rec.answer = r.string("answer");
  if (const auto* errs = r.optional("erroneous_chains")) {
    if (!errs->is_array()) r.fail("erroneous_chains must be an array");
    for (const auto& ej : *errs) {
      const auto ctx = "erroneous chain " + std::to_string(rec.erroneous_chains.size() + 1);
      ObjectReader er(ej, ctx);
      ErroneousChain e;
      e.steps = steps_from_json(er.required("steps"), ctx);
      const auto flaw = flaw_from_string(er.string("flaw"));
      if (!flaw) er.fail("unknown flaw class");
      e.flaw = *flaw;
      e.flaw_step = static_cast<int>(er.integer("flaw_step"));
      er.finish();
      rec.erroneous_chains.push_back(std::move(e));
    }
  }
  if (const auto* choices = r.optional("choices")) {
    if (!choices->is_array()) r.fail("choices must be an array");
    std::vector<std::string> list;
    for (const auto& c : *choices) {
      if (!c.is_string()) r.fail("choices must be strings");
      list.push_back(c.get<std::string>());
    }
    rec.choices = std::move(list);
  }
  r.finish();
  if (auto v = validate_record(rec); !v) {
    throw Error(Errc::validation_failed, "record '" + rec.id + "': " + v.violation, v.step);
  }
  return rec;
}

std::string serialize_record(const MdarRecord& record) { return to_json(record).dump(); }

LoadResult parse_mdar(std::string_view text, bool strict) {
  LoadResult out;
  int line_no = 0;
  for (const auto& line : text::split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.records.push_back(record_from_json(parse_json(line, "line " + std::to_string(line_no))));
    } catch (const Error& e) {
      if (strict) {
        throw Error(Errc::validation_failed, "line " + std::to_string(line_no) + ": " + e.what());
      }
      out.errors.push_back({line_no, e.what()});
    }
  }
  return out;
}

LoadResult load_mdar(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open dataset: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_mdar(buf.str(), strict);
}

std::string serialize_mdar(const std::vector<MdarRecord>& records) {
  std::string out;
  for (const auto& r : records) out += serialize_record(r) + "\n";
  return out;
}

void save_mdar(const std::vector<MdarRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write dataset: " + path.string());
  out << serialize_mdar(records);
}

ReasoningChain gold_chain(const MdarRecord& record) {
  return chain_of(record.id, record.steps, record.answer);
}

ReasoningChain erroneous_chain(const MdarRecord& record, std::size_t which) {
  const auto& steps = record.erroneous_chains.at(which).steps;
  return chain_of(record.id, steps, steps.back().a);
}

std::vector<TrainingPair> contrastive_pairs(const MdarRecord& record) {
  std::vector<TrainingPair> pairs;
  if (record.erroneous_chains.empty()) return pairs;
  const auto positive = gold_chain(record);
  for (std::size_t i = 0; i < record.erroneous_chains.size(); ++i) {
    pairs.push_back({positive, erroneous_chain(record, i),
                     record.id + "#" + std::to_string(i + 1)});
  }
  return pairs;
}

MdarRecord adapt_text_only(const std::string& question, const std::string& answer,
                           const std::optional<std::vector<std::string>>& choices) {
  MdarRecord r;
  // FNV-1a over question and answer: stable ids across platforms.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : question + '\x1f' + answer) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream id;
  id << "text-" << std::hex << h;
  r.id = id.str();
  r.question = question;
  r.answer = answer;
  r.steps.push_back({question, Modality::textual, std::nullopt, answer});
  r.choices = choices;
  if (auto v = validate_record(r); !v) {
    throw Error(Errc::validation_failed, "adapted record: " + v.violation);
  }
  return r;
}

MultimodalQuery to_query(const MdarRecord& record, const std::filesystem::path& base_dir) {
  MultimodalQuery q;
  q.id = record.id;
  q.text = record.question;
  if (record.image) {
    const std::filesystem::path p(*record.image);
    const bool url = record.image->find("://") != std::string::npos;
    q.image = (url || p.is_absolute() || base_dir.empty()) ? *record.image
                                                            : (base_dir / p).lexically_normal().string();
  }
  return q;
}

}  // namespace cmrf
