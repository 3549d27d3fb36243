#include "asyncmeet/text.hpp"

#include <cctype>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

TokenMode parse_token_mode(std::string_view name) {
  if (name == "words" || name == "word") return TokenMode::words;
  if (name == "characters" || name == "chars" || name == "char") return TokenMode::characters;
  throw InvalidInput("unknown token mode '" + std::string(name) + "' (expected words or characters)");
}

std::string_view to_string(TokenMode mode) { return mode == TokenMode::words ? "words" : "characters"; }

std::vector<std::string> tokenize(std::string_view text, TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::words) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) out.emplace_back(text.substr(i, j - i));
      i = j;
    }
    return out;
  }
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    if (!(len == 1 && std::isspace(lead))) out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string join(std::span<const std::string> tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

EditCounts align(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  // Rolling rows carrying the edit breakdown of the best path into each cell;
  // ties prefer match/substitution, then deletion, then insertion.
  struct Cell {
    std::size_t cost = 0;
    EditCounts counts;
  };
  const std::size_t m = hypothesis.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 1; j <= m; ++j) {
    prev[j] = prev[j - 1];
    ++prev[j].cost;
    ++prev[j].counts.insertions;
  }
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    cur[0] = prev[0];
    ++cur[0].cost;
    ++cur[0].counts.deletions;
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      Cell best = prev[j - 1];
      if (!same) {
        ++best.cost;
        ++best.counts.substitutions;
      }
      if (prev[j].cost + 1 < best.cost) {
        best = prev[j];
        ++best.cost;
        ++best.counts.deletions;
      }
      if (cur[j - 1].cost + 1 < best.cost) {
        best = cur[j - 1];
        ++best.cost;
        ++best.counts.insertions;
      }
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return prev[m].counts;
}

}  // namespace asyncmeet
