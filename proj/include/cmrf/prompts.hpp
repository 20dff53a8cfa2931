#pragma once

// Versioned prompt templates. Placeholders are written {{name}}; every
// request records the id of the template it was rendered from.

#include <map>
#include <string>
#include <string_view>

namespace cmrf::prompts {

struct Template {
  std::string_view id;
  std::string_view body;
};

extern const Template kDecompose;
extern const Template kRevise;
extern const Template kDecomposeRepair;
extern const Template kStep;
extern const Template kAlternative;
extern const Template kSynthesize;
extern const Template kVerdictStep;
extern const Template kVerdictFinal;
extern const Template kVerdictRepair;

/// Substitutes every {{key}}. Throws invalid_argument on a placeholder
/// without a value.
std::string render(const Template& t, const std::map<std::string, std::string>& values);

}  // namespace cmrf::prompts
