#pragma once

// Newline-delimited dataset records with gold reasoning steps and
// intentionally erroneous chains, plus contrastive pair construction.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cmrf/cam.hpp"
#include "cmrf/codec.hpp"
#include "cmrf/types.hpp"

namespace cmrf {

struct MdarStep {
  std::string q;
  Modality modality = Modality::textual;
  std::optional<Region> region;
  std::string a;

  bool operator==(const MdarStep&) const = default;
};

struct ErroneousChain {
  std::vector<MdarStep> steps;
  FlawClass flaw = FlawClass::inference_flaw;
  int flaw_step = 1;

  bool operator==(const ErroneousChain&) const = default;
};

struct MdarRecord {
  std::string id;
  std::optional<std::string> image;  // relative to the dataset file
  std::string question;
  std::vector<MdarStep> steps;
  std::string answer;
  std::vector<ErroneousChain> erroneous_chains;
  std::optional<std::vector<std::string>> choices;

  bool operator==(const MdarRecord&) const = default;
};

ValidationResult validate_record(const MdarRecord& record);

Json to_json(const MdarRecord& record);
/// Parses and validates one record.
MdarRecord record_from_json(const Json& j);
std::string serialize_record(const MdarRecord& record);

struct LoadError {
  int line = 0;
  std::string reason;
};

struct LoadResult {
  std::vector<MdarRecord> records;
  std::vector<LoadError> errors;
};

/// Blank lines are skipped. Invalid records are collected in `errors` with
/// their line numbers; `strict` turns the first one into a thrown
/// validation_failed.
LoadResult parse_mdar(std::string_view text, bool strict = false);
LoadResult load_mdar(const std::filesystem::path& path, bool strict = false);

std::string serialize_mdar(const std::vector<MdarRecord>& records);
void save_mdar(const std::vector<MdarRecord>& records, const std::filesystem::path& path);

/// Gold steps + answer as a complete chain.
ReasoningChain gold_chain(const MdarRecord& record);
/// Erroneous steps as a chain; its final answer is the last erroneous step's
/// answer.
ReasoningChain erroneous_chain(const MdarRecord& record, std::size_t which);

/// One pair per erroneous chain, all sharing the gold positive.
std::vector<TrainingPair> contrastive_pairs(const MdarRecord& record);

/// Image-free single-step textual record for text-only QA sets. Throws
/// validation_failed when the answer is not one of the choices.
MdarRecord adapt_text_only(const std::string& question, const std::string& answer,
                           const std::optional<std::vector<std::string>>& choices = std::nullopt);

/// The query a record poses; relative image paths resolve against base_dir.
MultimodalQuery to_query(const MdarRecord& record, const std::filesystem::path& base_dir = {});

}  // namespace cmrf
