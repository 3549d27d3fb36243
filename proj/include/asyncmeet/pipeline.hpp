#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "asyncmeet/audio.hpp"
#include "asyncmeet/error.hpp"
#include "asyncmeet/text.hpp"
#include "asyncmeet/transcript.hpp"

namespace asyncmeet {

struct DeviceInput {
  std::string id;
  std::filesystem::path wav;
};

// {"session_id": ..., "devices": [{"id": ..., "wav": ...}]}; relative WAV
// paths resolve against the manifest's directory.
struct InputManifest {
  std::string session_id;
  std::vector<DeviceInput> devices;

  static InputManifest load(const std::filesystem::path& path);
};

enum class AsrKind { none, mock, command, http };

struct AsrConfig {
  AsrKind kind = AsrKind::none;
  std::string command;
  std::string url;
  std::filesystem::path mock_manifest;
  double timeout_s = 120.0;
  std::size_t parallelism = 1;
  TokenMode tokens = TokenMode::words;
};

struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir = "out";
  std::size_t speakers = 2;
  double lambda = 1.0;
  double tau = 0.5;
  std::string anchor;  // device id, empty selects the first device
  StftConfig stft;
  double window_s = 1.5;
  double shift_s = 0.75;
  std::size_t min_utterance_frames = 10;
  std::filesystem::path embeddings;  // optional precomputed embedding file
  bool dereverberate = true;
  std::size_t wpe_taps = 10;
  std::size_t wpe_delay = 3;
  std::size_t wpe_iterations = 3;
  std::size_t gss_iterations = 10;
  double context_s = 15.0;
  double guide_margin_s = 1.0;
  double utterance_pad_s = 0.75;
  bool closing = true;
  bool enhance = true;
  bool dedup = true;
  std::string reference_device;  // used by --no-enhance, empty selects the anchor
  AsrConfig asr;

  void validate() const;
};

enum class Stage { sync, diarize, enhance, asr, dedup };

inline constexpr std::array<Stage, 5> kStages{Stage::sync, Stage::diarize, Stage::enhance, Stage::asr, Stage::dedup};

std::string_view to_string(Stage stage);
// Throws InvalidInput listing the valid names.
Stage parse_stage(std::string_view name);

class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string(to_string(stage)) + ": " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct StageTiming {
  Stage stage;
  double seconds = 0.0;
  bool cached = false;
};

struct RunReport {
  TranscriptSet transcript;
  std::map<Stage, std::filesystem::path> artifacts;
  std::vector<StageTiming> timings;
  std::size_t failed_utterances = 0;
};

// Content-derived key of every stage, chained from the inputs and the
// configuration that affects it.
std::map<Stage, std::string> stage_keys(const PipelineConfig& config);

std::filesystem::path stage_dir(const PipelineConfig& config, Stage stage, const std::string& key);

// Runs all stages, reusing any stage directory whose key already exists,
// and writes transcript.json and diarization.rttm into the output dir.
RunReport run(const PipelineConfig& config);

// Recomputes one stage from the cached artifacts of its upstream stage.
std::filesystem::path run_stage(const PipelineConfig& config, Stage stage);

}  // namespace asyncmeet
