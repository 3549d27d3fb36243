#include "asyncmeet/evalscore.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

namespace {

using Stream = std::vector<std::string>;

std::map<std::size_t, Stream> speaker_streams(const TranscriptSet& set, TokenMode mode, bool pooled) {
  auto sorted = set.results;
  std::stable_sort(sorted.begin(), sorted.end(), [](const AsrResult& a, const AsrResult& b) {
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    return a.end_s < b.end_s;
  });
  std::map<std::size_t, Stream> out;
  for (const auto& r : sorted) {
    auto& s = out[pooled ? 0 : r.speaker];
    for (auto& tok : tokenize(r.text, mode)) s.push_back(std::move(tok));
  }
  return out;
}

constexpr std::size_t kMaxSpeakers = 16;

}  // namespace

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "attribution") return ScoreMode::attribution;
  if (name == "pooled") return ScoreMode::pooled;
  throw InvalidInput("unknown score mode '" + std::string(name) + "' (expected attribution or pooled)");
}

ScoredSession score(const TranscriptSet& hypothesis, const TranscriptSet& reference, ScoreMode mode,
                    TokenMode tokens) {
  const bool pooled = mode == ScoreMode::pooled;
  const auto ref_map = speaker_streams(reference, tokens, pooled);
  const auto hyp_map = speaker_streams(hypothesis, tokens, pooled);

  std::vector<std::size_t> ref_ids, hyp_ids;
  std::vector<const Stream*> refs, hyps;
  std::size_t n_ref = 0;
  for (const auto& [k, s] : ref_map) {
    ref_ids.push_back(k);
    refs.push_back(&s);
    n_ref += s.size();
  }
  if (n_ref == 0) throw InvalidInput("reference transcript is empty");
  for (const auto& [k, s] : hyp_map) {
    hyp_ids.push_back(k);
    hyps.push_back(&s);
  }
  if (std::max(refs.size(), hyps.size()) > kMaxSpeakers)
    throw InvalidInput("too many speakers for permutation scoring (limit " + std::to_string(kMaxSpeakers) + ")");

  // Square cost matrix padded with empty streams on the shorter side.
  const std::size_t n = std::max(refs.size(), hyps.size());
  static const Stream empty;
  std::vector<std::vector<EditCounts>> cost(n, std::vector<EditCounts>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i][j] = align(i < refs.size() ? *refs[i] : empty, j < hyps.size() ? *hyps[j] : empty);

  // dp over subsets of hypothesis streams assigned to the first popcount refs
  const std::size_t full = std::size_t{1} << n;
  constexpr std::size_t inf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dp(full, inf), choice(full, 0);
  dp[0] = 0;
  for (std::size_t mask = 0; mask < full; ++mask) {
    if (dp[mask] == inf) continue;
    const auto i = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (i >= n) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const auto next = mask | (std::size_t{1} << j);
      const auto c = dp[mask] + cost[i][j].total();
      if (c < dp[next]) {
        dp[next] = c;
        choice[next] = j;
      }
    }
  }

  ScoredSession out;
  out.reference_length = n_ref;
  std::size_t mask = full - 1;
  for (std::size_t i = n; i-- > 0;) {
    const auto j = choice[mask];
    const auto& e = cost[i][j];
    out.substitutions += e.substitutions;
    out.deletions += e.deletions;
    out.insertions += e.insertions;
    if (i < refs.size() && j < hyps.size()) out.speaker_map.emplace_back(ref_ids[i], hyp_ids[j]);
    mask &= ~(std::size_t{1} << j);
  }
  std::reverse(out.speaker_map.begin(), out.speaker_map.end());
  out.cer = static_cast<double>(out.errors()) / static_cast<double>(n_ref);
  return out;
}

}  // namespace asyncmeet
