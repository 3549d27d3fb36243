#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "asyncmeet/error.hpp"
#include "asyncmeet/transcript.hpp"

namespace asyncmeet {

class AsrFailure : public Error {
 public:
  using Error::Error;
};

struct UtteranceAudio {
  std::string id;
  std::vector<double> samples;
  int sample_rate = 16000;
  std::size_t speaker = 0;
  double start_s = 0.0;  // session timeline
  double end_s = 0.0;
};

// Implementations must be safe to call concurrently.
class AsrBackend {
 public:
  virtual ~AsrBackend() = default;
  // Recognized UTF-8 text; throws AsrFailure.
  virtual std::string recognize(const UtteranceAudio& audio) const = 0;
};

// Runs `command` through /bin/sh with every "{wav}" replaced by the path
// of a temporary WAV file; stdout is the transcript.
class SubprocessBackend : public AsrBackend {
 public:
  explicit SubprocessBackend(std::string command, std::chrono::milliseconds timeout = std::chrono::seconds(120));
  std::string recognize(const UtteranceAudio& audio) const override;

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

// POSTs the WAV bytes to `url` and expects a JSON object with a "text" field.
class HttpBackend : public AsrBackend {
 public:
  explicit HttpBackend(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(120));
  std::string recognize(const UtteranceAudio& audio) const override;

 private:
  std::string base_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

struct MockSpeaker {
  std::size_t id = 0;
  double band_low_hz = 0.0;
  double band_high_hz = 0.0;
};

struct MockUtterance {
  std::size_t speaker = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;
};

struct MockManifest {
  int sample_rate = 16000;
  std::vector<MockSpeaker> speakers;
  double quiet_low_hz = 6500.0;
  double quiet_high_hz = 7800.0;
  std::vector<MockUtterance> utterances;
  double min_sir_db = 0.0;  // tokens whose speaker band is below this vs. other speakers are lost
  double min_snr_db = 10.0;  // against the quiet band
  bool corruption = true;
  // Tokens this far below the clip's loudest speaker band go unheard; 0 disables.
  double dominance_floor_db = 20.0;

  static MockManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static MockManifest load(const std::filesystem::path& path);
};

// Emits the planted tokens whose time slice lies inside the utterance and
// whose speaker band is audible in the audio. With corruption enabled a
// token is garbled with probability 1 / (1 + SIR); the draw is a hash of
// the audio, so equal audio gives equal output.
class MockBackend : public AsrBackend {
 public:
  explicit MockBackend(MockManifest manifest);
  std::string recognize(const UtteranceAudio& audio) const override;
  const MockManifest& manifest() const { return manifest_; }

 private:
  MockManifest manifest_;
};

struct AsrOutcome {
  std::string id;
  std::optional<AsrResult> result;  // empty when failed or dropped
  bool failed = false;
  std::string error;
};

AsrOutcome transcribe(const AsrBackend& backend, const UtteranceAudio& audio, TokenMode mode = TokenMode::words);

// Order-preserving; at most `parallelism` requests in flight.
std::vector<AsrOutcome> transcribe_batch(const AsrBackend& backend, std::span<const UtteranceAudio> batch,
                                         TokenMode mode = TokenMode::words, std::size_t parallelism = 1);

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace asyncmeet
