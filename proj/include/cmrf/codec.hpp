#pragma once

// Structured-text (JSON) encodings of the chain data model. Object keys are
// emitted in a fixed order so serialized documents are byte-stable. Decoding
// is strict: unknown keys, wrong types and violated invariants are reported
// as Errc::malformed_input.

#include <initializer_list>
#include <set>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cmrf/backend.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

using Json = nlohmann::ordered_json;

/// Strict accessor over one JSON object; call `finish()` to reject keys that
/// were never read.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string context);

  bool has(std::string_view key) const;
  const Json& required(std::string_view key);
  /// Absent and null both read as "not present".
  const Json* optional(std::string_view key);

  std::string string(std::string_view key);
  std::optional<std::string> opt_string(std::string_view key);
  long long integer(std::string_view key);
  double number(std::string_view key);
  bool boolean(std::string_view key);
  const Json& array(std::string_view key);

  void finish() const;

  [[noreturn]] void fail(const std::string& what) const;
  const std::string& context() const { return context_; }

 private:
  const Json& j_;
  std::string context_;
  std::set<std::string, std::less<>> seen_;
};

Json parse_json(std::string_view text, const std::string& context);

Json to_json(const Region& r);
Region region_from_json(const Json& j, const std::string& context);

Json to_json(const MultimodalQuery& q);
MultimodalQuery query_from_json(const Json& j);

Json to_json(const ReasoningChain& c);
ReasoningChain chain_from_json(const Json& j);

Json to_json(const ChainAssessment& a);
ChainAssessment assessment_from_json(const Json& j);

Json to_json(const PromptRequest& r);
PromptRequest request_from_json(const Json& j);

Json to_json(const ModelResponse& r);
ModelResponse response_from_json(const Json& j);

/// One self-describing JSON record. Throws validation_failed when the chain
/// does not pass validate_chain.
std::string serialize_chain(const ReasoningChain& chain);
ReasoningChain deserialize_chain(std::string_view text);

}  // namespace cmrf
