#include "asyncmeet/dedup.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

bool canonical_less(const AsrResult& a, const AsrResult& b) {
  if (a.start_s != b.start_s) return a.start_s < b.start_s;
  if (a.end_s != b.end_s) return a.end_s < b.end_s;
  if (a.speaker != b.speaker) return a.speaker < b.speaker;
  return a.text < b.text;
}

}  // namespace

double similarity(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) throw InvalidInput("similarity of an empty token sequence");
  const auto d = levenshtein<std::string>(a, b);
  const double longest = static_cast<double>(std::max(a.size(), b.size()));
  const double shortest = static_cast<double>(std::min(a.size(), b.size()));
  return (longest - static_cast<double>(d)) / shortest;
}

bool overlaps(const AsrResult& a, const AsrResult& b) {
  return std::max(a.start_s, b.start_s) < std::min(a.end_s, b.end_s);
}

DedupGraph build_adjacency(std::span<const AsrResult> results, double tau) {
  const std::size_t n = results.size();
  DedupGraph g;
  g.tau = tau;
  g.adjacency.assign(n, std::vector<std::uint8_t>(n, 0));
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = results[i];
      const auto& b = results[j];
      if (a.speaker == b.speaker || !overlaps(a, b)) continue;
      if (a.tokens.empty() || b.tokens.empty()) continue;
      if (similarity(a.tokens, b.tokens) > tau) {
        g.adjacency[i][j] = g.adjacency[j][i] = 1;
        sets.unite(i, j);
      }
    }
  }
  g.components.resize(n);
  std::map<std::size_t, std::size_t> number;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [it, inserted] = number.emplace(sets.find(i), number.size());
    g.components[i] = it->second;
  }
  g.component_count = number.size();
  return g;
}

std::vector<AsrResult> reduce(std::span<const AsrResult> results, double tau) {
  const auto g = build_adjacency(results, tau);
  // words[c][k]: total token count of speaker k inside component c
  std::vector<std::map<std::size_t, std::size_t>> words(g.component_count);
  for (std::size_t i = 0; i < results.size(); ++i) words[g.components[i]][results[i].speaker] += results[i].tokens.size();
  std::vector<std::size_t> keep(g.component_count);
  for (std::size_t c = 0; c < g.component_count; ++c) {
    std::size_t best = 0, best_words = 0;
    bool first = true;
    for (const auto& [speaker, count] : words[c]) {
      if (first || count > best_words) {
        best = speaker;
        best_words = count;
        first = false;
      }
    }
    keep[c] = best;
  }
  std::vector<AsrResult> out;
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].speaker == keep[g.components[i]]) out.push_back(results[i]);
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

TranscriptSet reduce(const TranscriptSet& set, double tau) {
  TranscriptSet out = set;
  out.results = reduce(std::span<const AsrResult>(set.results), tau);
  return out;
}

}  // namespace asyncmeet
