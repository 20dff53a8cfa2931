#include "cmrf/prompts.hpp"

#include "cmrf/error.hpp"

namespace cmrf::prompts {

namespace {

constexpr std::string_view kDecomposeBody =
    R"(You are the planning stage of a step-by-step visual reasoning system.
Break the question below into a short ordered list of sub-questions that, answered in order, lead to the final answer.
Write one sub-question per line in exactly this format:
<number>. [<tag>] <sub-question>
The tag is V for a question answered by looking at the image, T for a question answered from general knowledge, and X for a question that combines what is seen with what is known.
A V or X sub-question may name an image area as (x,y,w,h) in normalized coordinates, written right after the tag.
Use at most {{n_max}} lines and write nothing else.

Example
Question: Why is the woman holding an open umbrella indoors?
1. [V] Is the woman indoors or outdoors?
2. [V] (0.35,0.10,0.40,0.45) What is she holding above her head?
3. [T] Why do people usually open umbrellas?
4. [X] Given where she is, what explains the open umbrella?

Example
Question: Is it safe for the child to touch the stove?
1. [V] Is the stove in the picture switched on?
2. [T] What happens when skin touches a hot surface?
3. [X] Should the child touch this stove right now?

{{image_note}}
Question: {{question}})";

constexpr std::string_view kReviseBody =
    R"(You are the planning stage of a step-by-step visual reasoning system.
A previous list of sub-questions for the question below was judged flawed at step {{flaw_step}} ({{flaw_class}}).
Reviewer rationale: {{rationale}}

Previous sub-questions:
{{prior}}

{{instruction}}
Write one sub-question per line in exactly this format:
<number>. [<tag>] <sub-question>
The tag is V (answered from the image), T (general knowledge) or X (combines both). A V or X line may name an image area as (x,y,w,h) right after the tag.
Write nothing else.

{{image_note}}
Question: {{question}})";

constexpr std::string_view kDecomposeRepairBody =
    R"(Your previous reply could not be read:
{{reply}}

Rewrite it using only lines of the form
<number>. [V|T|X] <sub-question>)";

constexpr std::string_view kStepBody =
    R"(You are answering one sub-question of a larger question about the image.
{{image_note}}
Original question: {{question}}

Answers so far:
{{prior}}

Current sub-question (step {{index}}, {{modality}}): {{sub}}
{{region_note}}Answer in one or two sentences, consistent with the answers so far.)";

constexpr std::string_view kAlternativeBody =
    R"(An earlier answer to this sub-question was judged flawed. Consider an alternative interpretation of the image and the question, and phrase a different answer.)";

constexpr std::string_view kSynthesizeBody =
    R"(You have worked through a question about the image step by step.
{{image_note}}
Original question: {{question}}

Steps:
{{steps}}

Give the final answer to the original question as one short phrase.)";

constexpr std::string_view kVerdictStepBody =
    R"(You are checking one step of a reasoning chain about the image.
{{image_note}}
Original question: {{question}}

Earlier steps:
{{prior}}

Step {{index}} sub-question: {{sub}}
Step {{index}} answer: {{answer}}

Is this answer consistent with the previous answers, the image and the original question, and is it factually correct? Is the sub-question itself a useful step?
Reply with exactly these lines:
SCORE: <integer from 0 to 10>
FLAW: <consistent|decomposition-flaw|inference-flaw|factual-flaw>
REASON: <one sentence>)";

constexpr std::string_view kVerdictFinalBody =
    R"(You are checking the conclusion of a reasoning chain about the image.
{{image_note}}
Original question: {{question}}

Steps:
{{steps}}

Final answer: {{final_answer}}

Does the final answer follow from the steps and answer the original question?
Reply with exactly these lines:
SCORE: <integer from 0 to 10>
REASON: <one sentence>)";

constexpr std::string_view kVerdictRepairBody =
    R"(Your previous reply could not be read:
{{reply}}

Reply again with exactly these lines:
SCORE: <integer from 0 to 10>
FLAW: <consistent|decomposition-flaw|inference-flaw|factual-flaw>)";

}  // namespace

const Template kDecompose{"rdu.decompose.v1", kDecomposeBody};
const Template kRevise{"rdu.revise.v1", kReviseBody};
const Template kDecomposeRepair{"rdu.repair.v1", kDecomposeRepairBody};
const Template kStep{"cie.step.v1", kStepBody};
const Template kAlternative{"cie.alternative.v1", kAlternativeBody};
const Template kSynthesize{"cie.synthesize.v1", kSynthesizeBody};
const Template kVerdictStep{"cam.step.v1", kVerdictStepBody};
const Template kVerdictFinal{"cam.final.v1", kVerdictFinalBody};
const Template kVerdictRepair{"cam.repair.v1", kVerdictRepairBody};

std::string render(const Template& t, const std::map<std::string, std::string>& values) {
  std::string out;
  std::string_view body = t.body;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto open = body.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(body.substr(pos));
      break;
    }
    const auto close = body.find("}}", open);
    if (close == std::string_view::npos) {
      throw Error(Errc::invalid_argument, std::string(t.id) + ": unterminated placeholder");
    }
    out.append(body.substr(pos, open - pos));
    const std::string key(body.substr(open + 2, close - open - 2));
    const auto it = values.find(key);
    if (it == values.end()) {
      throw Error(Errc::invalid_argument, std::string(t.id) + ": no value for {{" + key + "}}");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

}  // namespace cmrf::prompts
