#include "cmrf/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace cmrf::text {

std::vector<std::string> tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

std::set<std::string> token_set(const std::vector<std::string>& toks) {
  return {toks.begin(), toks.end()};
}

std::size_t intersection_size(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t n = 0;
  for (const auto& t : a) n += b.count(t);
  return n;
}

}  // namespace

double jaccard(std::string_view a, std::string_view b) {
  const auto sa = token_set(tokens(a));
  const auto sb = token_set(tokens(b));
  if (sa.empty() && sb.empty()) return 1.0;
  const auto inter = intersection_size(sa, sb);
  const auto uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

int word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  int n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  for (const auto& t : tokens(s)) {
    if (t == "a" || t == "an" || t == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto p = token_set(tokens(normalize_answer(prediction)));
  const auto g = token_set(tokens(normalize_answer(gold)));
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
  const auto common = intersection_size(p, g);
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto end = s.find('\n', start);
    if (end == std::string_view::npos) end = s.size();
    std::string line(s.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

}  // namespace cmrf::text
