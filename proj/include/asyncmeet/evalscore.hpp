#pragma once

#include <cstddef>
#include <string_view>
#include <utility>
#include <vector>

#include "asyncmeet/text.hpp"
#include "asyncmeet/transcript.hpp"

namespace asyncmeet {

enum class ScoreMode { attribution, pooled };

ScoreMode parse_score_mode(std::string_view name);

struct ScoredSession {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_length = 0;
  double cer = 0.0;
  // (reference speaker, hypothesis speaker); unmatched sides are omitted.
  std::vector<std::pair<std::size_t, std::size_t>> speaker_map;

  std::size_t errors() const { return substitutions + deletions + insertions; }
};

// Per-speaker text concatenated in time order, one token per character
// (whitespace dropped) unless `tokens` says otherwise.
ScoredSession score(const TranscriptSet& hypothesis, const TranscriptSet& reference,
                    ScoreMode mode = ScoreMode::attribution, TokenMode tokens = TokenMode::characters);

}  // namespace asyncmeet
