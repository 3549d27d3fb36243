#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asyncmeet/text.hpp"

namespace asyncmeet {

// One recognized utterance on the session (anchor) timeline.
struct AsrResult {
  std::string text;
  std::vector<std::string> tokens;
  std::size_t speaker = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::optional<double> confidence;

  bool operator==(const AsrResult&) const = default;
};

AsrResult make_result(std::string text, TokenMode mode, std::size_t speaker, double start_s, double end_s,
                      std::optional<double> confidence = std::nullopt);

struct TranscriptSet {
  static constexpr int kSchemaVersion = 1;

  std::string session_id;
  std::vector<AsrResult> results;
  std::string config_digest;
  TokenMode token_mode = TokenMode::words;

  // Stable sort by start time, then end time and speaker.
  void sort();
};

nlohmann::json to_json(const TranscriptSet& set);
// Speakers may be integers or string labels; labels are numbered by
// first appearance.
TranscriptSet transcript_from_json(const nlohmann::json& j, std::optional<TokenMode> mode = std::nullopt);

TranscriptSet read_transcript(const std::filesystem::path& path, std::optional<TokenMode> mode = std::nullopt);
void write_transcript(const std::filesystem::path& path, const TranscriptSet& set);

struct RttmSegment {
  std::size_t speaker = 0;
  double start_s = 0.0;
  double duration_s = 0.0;

  bool operator==(const RttmSegment&) const = default;
};

// Speaker k is written as "spk<k>".
std::string format_rttm(const std::string& session_id, const std::vector<RttmSegment>& segments);
void write_rttm(const std::filesystem::path& path, const std::string& session_id,
                const std::vector<RttmSegment>& segments);
std::vector<RttmSegment> parse_rttm(const std::string& content);
std::vector<RttmSegment> read_rttm(const std::filesystem::path& path);

}  // namespace asyncmeet
