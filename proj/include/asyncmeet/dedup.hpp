#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "asyncmeet/transcript.hpp"

namespace asyncmeet {

// (max(|a|,|b|) - d(a,b)) / min(|a|,|b|), d the token Levenshtein distance.
// Not clamped. Equals 1 whenever one sequence is contained in the other.
double similarity(std::span<const std::string> a, std::span<const std::string> b);

struct DedupGraph {
  std::vector<std::vector<std::uint8_t>> adjacency;  // U x U, symmetric, zero diagonal
  double tau = 0.5;
  std::vector<std::size_t> components;  // numbered by smallest member index
  std::size_t component_count = 0;

  std::size_t size() const { return adjacency.size(); }
};

DedupGraph build_adjacency(std::span<const AsrResult> results, double tau = 0.5);

// Per component keeps only the results of the speaker with the largest
// total token count (ties to the lowest speaker index). Output is sorted
// by (start, end, speaker, text).
std::vector<AsrResult> reduce(std::span<const AsrResult> results, double tau = 0.5);
TranscriptSet reduce(const TranscriptSet& set, double tau = 0.5);

// Result pairs whose time intervals overlap.
bool overlaps(const AsrResult& a, const AsrResult& b);

}  // namespace asyncmeet
