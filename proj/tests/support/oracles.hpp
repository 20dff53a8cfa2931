#pragma once

// Reference computations for tests. Nothing in here calls into the library:
// each value is recomputed from its textbook definition.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::array<double, 8>;

struct Pair {
  Vec pos{};
  Vec neg{};
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double hinge(double s_pos, double s_neg, double m) {
  const double v = m - (s_pos - s_neg);
  return v > 0.0 ? v : 0.0;
}

inline double dot(const Vec& w, const Vec& x) {
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
  return z;
}

/// Parameters flattened as [w0..w7, b].
using Theta = std::array<double, 9>;

inline double mean_hinge(const Theta& t, const std::vector<Pair>& pairs, double m) {
  Vec w{};
  std::copy(t.begin(), t.begin() + 8, w.begin());
  double sum = 0.0;
  for (const auto& p : pairs) {
    sum += hinge(sigmoid(dot(w, p.pos) + t[8]), sigmoid(dot(w, p.neg) + t[8]), m);
  }
  return sum / static_cast<double>(pairs.size());
}

/// Central differences of mean_hinge, h per coordinate.
inline Theta numeric_gradient(const Theta& t, const std::vector<Pair>& pairs, double m, double h) {
  Theta g{};
  for (std::size_t i = 0; i < t.size(); ++i) {
    Theta up = t, down = t;
    up[i] += h;
    down[i] -= h;
    g[i] = (mean_hinge(up, pairs, m) - mean_hinge(down, pairs, m)) / (2.0 * h);
  }
  return g;
}

/// Derivative-free coordinate search on mean_hinge: try +-step on every
/// coordinate, keep improvements, halve the step when none helps.
struct SearchResult {
  Theta theta{};
  double loss = 0.0;
  int sweeps = 0;
};

inline SearchResult coordinate_search(const std::vector<Pair>& pairs, double m, double step,
                                      int max_sweeps, double target) {
  SearchResult r;
  r.loss = mean_hinge(r.theta, pairs, m);
  while (r.sweeps < max_sweeps && r.loss > target && step > 1e-9) {
    ++r.sweeps;
    bool improved = false;
    for (std::size_t i = 0; i < r.theta.size(); ++i) {
      for (double dir : {1.0, -1.0}) {
        Theta cand = r.theta;
        cand[i] += dir * step;
        const double l = mean_hinge(cand, pairs, m);
        if (l < r.loss) {
          r.theta = cand;
          r.loss = l;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return r;
}

/// Index of the first maximum.
inline int first_argmax(const std::vector<double>& xs) {
  return static_cast<int>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

inline double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double mean_int(const std::vector<int>& xs) {
  const long total = std::accumulate(xs.begin(), xs.end(), 0L);
  return static_cast<double>(total) / static_cast<double>(xs.size());
}

/// RFC 4648 base64 with padding.
inline std::string base64(const std::string& in) {
  static const char* abc = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const auto n = (std::uint32_t(std::uint8_t(in[i])) << 16) |
                   (std::uint32_t(std::uint8_t(in[i + 1])) << 8) | std::uint8_t(in[i + 2]);
    out += abc[(n >> 18) & 63];
    out += abc[(n >> 12) & 63];
    out += abc[(n >> 6) & 63];
    out += abc[n & 63];
  }
  if (const auto rest = in.size() - i; rest > 0) {
    std::uint32_t n = std::uint32_t(std::uint8_t(in[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(in[i + 1])) << 8;
    out += abc[(n >> 18) & 63];
    out += abc[(n >> 12) & 63];
    out += rest == 2 ? abc[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

/// Set-based token F1 with its own tokenizer (lowercase alphanumeric runs,
/// articles dropped).
inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") out.push_back(cur);
    cur.clear();
  };
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else {
      flush();
    }
  }
  flush();
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline double set_f1(const std::string& pred, const std::string& gold) {
  const auto p = words(pred), g = words(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<std::string> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double prec = double(common.size()) / double(p.size());
  const double rec = double(common.size()) / double(g.size());
  return 2 * prec * rec / (prec + rec);
}

}  // namespace oracle
