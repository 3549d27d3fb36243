#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace asyncmeet {

enum class TokenMode { words, characters };

TokenMode parse_token_mode(std::string_view name);
std::string_view to_string(TokenMode mode);

// Whitespace-separated words, or one token per UTF-8 code point with
// whitespace dropped.
std::vector<std::string> tokenize(std::string_view text, TokenMode mode);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

// Unit-cost insert/delete/substitute edit distance.
template <typename T>
std::size_t levenshtein(std::span<const T> a, std::span<const T> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  std::size_t total() const { return substitutions + deletions + insertions; }
  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    return *this;
  }
};

// Minimum-edit alignment of hypothesis against reference, broken down by
// edit type. total() equals the Levenshtein distance.
EditCounts align(std::span<const std::string> reference, std::span<const std::string> hypothesis);

}  // namespace asyncmeet
