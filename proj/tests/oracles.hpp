#pragma once

// Deliberately naive reference implementations used to cross-check the
// library.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "asyncmeet/transcript.hpp"

namespace asyncmeet::oracle {

// Full (n+1) x (m+1) table.
inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
  return d[a.size()][b.size()];
}

inline double similarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const double mx = static_cast<double>(std::max(a.size(), b.size()));
  const double mn = static_cast<double>(std::min(a.size(), b.size()));
  return (mx - static_cast<double>(edit_distance(a, b))) / mn;
}

// Adjacency by definition, reachability by Warshall, then per component
// the speaker with the most tokens (lowest id on ties).
inline std::vector<AsrResult> dedup(const std::vector<AsrResult>& r, double tau) {
  const std::size_t n = r.size();
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    reach[i][i] = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool overlap = std::max(r[i].start_s, r[j].start_s) < std::min(r[i].end_s, r[j].end_s);
      const bool nonempty = !r[i].tokens.empty() && !r[j].tokens.empty();
      if (overlap && nonempty && r[i].speaker != r[j].speaker && similarity(r[i].tokens, r[j].tokens) > tau)
        reach[i][j] = true;
    }
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (reach[i][k] && reach[k][j]) reach[i][j] = true;

  std::vector<AsrResult> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, std::size_t> count;
    for (std::size_t j = 0; j < n; ++j)
      if (reach[i][j]) count[r[j].speaker] += r[j].tokens.size();
    std::size_t best = count.begin()->first;
    for (const auto& [spk, c] : count)
      if (c > count[best]) best = spk;
    if (r[i].speaker == best) out.push_back(r[i]);
  }
  std::sort(out.begin(), out.end(), [](const AsrResult& a, const AsrResult& b) {
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    if (a.end_s != b.end_s) return a.end_s < b.end_s;
    if (a.speaker != b.speaker) return a.speaker < b.speaker;
    return a.text < b.text;
  });
  return out;
}

// Small vocabulary and coarse times so that links are common.
inline std::vector<AsrResult> random_results(std::mt19937_64& rng, std::size_t count) {
  static const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  std::uniform_int_distribution<std::size_t> len(1, 5), word(0, vocab.size() - 1), spk(0, 2), slot(0, 6);
  std::vector<AsrResult> out;
  for (std::size_t u = 0; u < count; ++u) {
    AsrResult r;
    for (std::size_t i = len(rng); i > 0; --i) r.tokens.push_back(vocab[word(rng)]);
    for (std::size_t i = 0; i < r.tokens.size(); ++i) r.text += (i ? " " : "") + r.tokens[i];
    r.speaker = spk(rng);
    r.start_s = static_cast<double>(slot(rng));
    r.end_s = r.start_s + 1.0 + static_cast<double>(slot(rng) % 3);
    out.push_back(std::move(r));
  }
  return out;
}

// Exhaustive closing properties for one row.
inline bool closing_properties_hold(const std::vector<std::uint8_t>& row, const std::vector<std::uint8_t>& closed,
                                    std::size_t max_gap) {
  if (row.size() != closed.size()) return false;
  for (std::size_t i = 0; i < row.size(); ++i)
    if (row[i] && !closed[i]) return false;
  // Walk zero runs of the input.
  std::size_t i = 0;
  while (i < row.size()) {
    if (row[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < row.size() && !row[j]) ++j;
    const bool interior = i > 0 && j < row.size();
    const bool fill = interior && (j - i) <= max_gap;
    for (std::size_t t = i; t < j; ++t)
      if (closed[t] != (fill ? 1 : 0)) return false;
    i = j;
  }
  return true;
}

}  // namespace asyncmeet::oracle
