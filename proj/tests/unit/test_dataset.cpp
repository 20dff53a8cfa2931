#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "cmrf/dataset.hpp"
#include "cmrf/error.hpp"

using namespace cmrf;

namespace {

const char* kRecord =
    R"({"id":"r1","image":"img/r1.png","question":"What is the man holding?",)"
    R"("steps":[{"q":"Who is in the picture?","modality":"V","region":[0.1,0.1,0.5,0.8],"a":"A man."},)"
    R"({"q":"What is in his hand?","modality":"V","a":"An umbrella."}],"answer":"umbrella",)"
    R"("erroneous_chains":[{"steps":[{"q":"Who is in the picture?","modality":"V","a":"A man."},)"
    R"({"q":"What is in his hand?","modality":"V","a":"A cane."}],"flaw":"inference-flaw","flaw_step":2}]})";

std::string with_flaw_step(int step) {
  std::string s = kRecord;
  s.replace(s.find("\"flaw_step\":2"), 13, "\"flaw_step\":" + std::to_string(step));
  return s;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

MdarRecord two_errors() {
  auto r = parse_mdar(kRecord).records.at(0);
  auto e = r.erroneous_chains[0];
  e.steps[1].a = "A broom.";
  e.flaw = FlawClass::factual_flaw;
  r.erroneous_chains.push_back(e);
  return r;
}

}  // namespace

TEST_SUITE("dataset_io") {

TEST_CASE("two valid lines give two records") {
  std::string second = kRecord;
  second.replace(second.find("\"r1\""), 4, "\"r2\"");
  const auto r = parse_mdar(std::string(kRecord) + "\n" + second + "\n");
  CHECK(r.records.size() == 2);
  CHECK(r.errors.empty());
  CHECK(r.records[1].id == "r2");
  CHECK(r.records[0].steps[0].region == Region{0.1, 0.1, 0.5, 0.8});
}

TEST_CASE("flaw step past the chain is rejected with a reason") {
  const auto r = parse_mdar(std::string(kRecord) + "\n" + with_flaw_step(5) + "\n");
  CHECK(r.records.size() == 1);
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].line == 2);
  CHECK(r.errors[0].reason.find("flaw_step 5") != std::string::npos);
  CHECK_THROWS_AS(parse_mdar(with_flaw_step(5), true), Error);
}

TEST_CASE("empty input") {
  const auto r = parse_mdar("");
  CHECK(r.records.empty());
  CHECK(r.errors.empty());
  CHECK(parse_mdar("\n\n  \n").records.empty());
}

TEST_CASE("broken lines are reported, not fatal") {
  const auto r = parse_mdar(std::string("{not json\n") + kRecord + "\n{\"id\":\"x\"}\n");
  CHECK(r.records.size() == 1);
  REQUIRE(r.errors.size() == 2);
  CHECK(r.errors[0].line == 1);
  CHECK(r.errors[1].line == 3);
}

TEST_CASE("record invariants") {
  auto r = parse_mdar(kRecord).records.at(0);
  CHECK(validate_record(r).ok());
  auto same = r;
  same.erroneous_chains[0].steps = same.steps;
  CHECK_FALSE(validate_record(same).ok());
  auto consistent = r;
  consistent.erroneous_chains[0].flaw = FlawClass::consistent;
  CHECK_FALSE(validate_record(consistent).ok());
  auto choices = r;
  choices.choices = std::vector<std::string>{"cane", "broom"};
  CHECK_FALSE(validate_record(choices).ok());
  choices.choices->push_back("umbrella");
  CHECK(validate_record(choices).ok());
}

TEST_CASE("two erroneous chains give two pairs sharing a positive") {
  const auto pairs = contrastive_pairs(two_errors());
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].positive == pairs[1].positive);
  CHECK(pairs[0].positive.final_answer == "umbrella");
  CHECK(pairs[0].negative.final_answer == "A cane.");
  CHECK(pairs[1].negative.final_answer == "A broom.");
  CHECK(pairs[1].source_id == "r1#2");
  CHECK(validate_chain(pairs[1].negative).ok());
}

TEST_CASE("no erroneous chains, no pairs") {
  auto r = parse_mdar(kRecord).records.at(0);
  r.erroneous_chains.clear();
  CHECK(contrastive_pairs(r).empty());
}

TEST_CASE("text-only adaptation") {
  const auto r = adapt_text_only("Is ice cold?", "yes");
  CHECK_FALSE(r.image);
  REQUIRE(r.steps.size() == 1);
  CHECK(r.steps[0].modality == Modality::textual);
  CHECK(r.steps[0].q == "Is ice cold?");
  CHECK(r.id == adapt_text_only("Is ice cold?", "yes").id);
  CHECK(r.id != adapt_text_only("Is ice cold?", "no").id);
  const auto c = adapt_text_only("Is ice cold?", "yes", std::vector<std::string>{"yes", "no"});
  CHECK(c.choices->size() == 2);
  try {
    adapt_text_only("Is ice cold?", "maybe", std::vector<std::string>{"yes", "no"});
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::validation_failed);
  }
}

TEST_CASE("queries resolve images against the dataset directory") {
  const auto r = parse_mdar(kRecord).records.at(0);
  CHECK(to_query(r, "/data/set").image == "/data/set/img/r1.png");
  CHECK(to_query(r).image == "img/r1.png");
  auto url = r;
  url.image = "https://example.org/a.png";
  CHECK(to_query(url, "/data").image == "https://example.org/a.png");
}

TEST_CASE("fixture corpus: load, serialize, load") {
  const auto path = std::filesystem::path(CMRF_DATA_DIR) / "mdar_synthetic.jsonl";
  const auto first = load_mdar(path, true);
  CHECK(first.records.size() == 25);
  const auto text = serialize_mdar(first.records);
  CHECK(text == read(path));
  const auto second = parse_mdar(text, true);
  CHECK(second.records == first.records);
}

TEST_CASE("missing file is an io error") {
  try {
    load_mdar("/nonexistent/nowhere.jsonl");
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io_error);
  }
}

}  // TEST_SUITE
