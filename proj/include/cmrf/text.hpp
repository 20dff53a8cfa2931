#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cmrf::text {

/// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokens(std::string_view s);

/// Token-set Jaccard index; two empty sets count as identical (1.0).
double jaccard(std::string_view a, std::string_view b);

/// Whitespace-delimited word count, used as the token estimate for budgets.
int word_count(std::string_view s);

/// Answer normalization for exact match: lowercase, punctuation removed,
/// articles (a/an/the) dropped, whitespace collapsed.
std::string normalize_answer(std::string_view s);

/// Token-set F1 between normalized prediction and gold.
double token_f1(std::string_view prediction, std::string_view gold);

std::vector<std::string> split_lines(std::string_view s);

}  // namespace cmrf::text
