#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asyncmeet/asr.hpp"
#include "asyncmeet/audio.hpp"
#include "asyncmeet/diarize.hpp"
#include "asyncmeet/transcript.hpp"

namespace asyncmeet {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

double distance(Point a, Point b);

struct SpeakerSpec {
  Point position;
  double band_low_hz = 300.0;
  double band_high_hz = 1000.0;
  double level_db = -30.0;  // source RMS at 1 m
};

struct DeviceSpec {
  std::string id;
  Point position;
  // The device starts recording offset_s before the anchor instant and
  // runs (1 + drift_ppm * 1e-6) times faster than nominal.
  double offset_s = 0.0;
  double drift_ppm = 0.0;
};

struct PlannedUtterance {
  std::size_t speaker = 0;
  double start_s = 0.0;
  double duration_s = 1.0;
  std::string text;
  std::string source_wav;  // optional real source instead of the surrogate
};

struct ReverbSpec {
  bool enabled = false;
  double t60_s = 0.4;
  double direct_to_reverb_db = 3.0;
};

struct SceneSpec {
  int sample_rate = 16000;
  double duration_s = 10.0;
  std::vector<SpeakerSpec> speakers;
  std::vector<DeviceSpec> devices;  // devices[0] is the anchor
  std::vector<PlannedUtterance> utterances;
  double noise_db = -60.0;  // white noise RMS per device; -inf disables
  std::uint64_t seed = 1;
  ReverbSpec reverb;
  double quiet_low_hz = 6500.0;
  double quiet_high_hz = 7800.0;

  // Throws InvalidInput on an inconsistent plan.
  void validate() const;
};

struct GroundTruthUtterance {
  std::size_t speaker = 0;
  double start_s = 0.0;  // anchor timeline
  double end_s = 0.0;
  std::string text;
};

struct GroundTruth {
  std::size_t speakers = 0;
  double duration_s = 0.0;  // anchor recording length
  std::vector<GroundTruthUtterance> utterances;

  // Per-STFT-frame activity; frame t of a spectrogram whose first sample
  // sits at anchor time origin_s.
  ActivityMatrix frame_activity(const StftConfig& stft, std::size_t frames, double origin_s = 0.0) const;
  TranscriptSet transcript(const std::string& session_id = "reference") const;
  std::vector<RttmSegment> rttm() const;
};

struct RenderedScene {
  std::vector<Recording> recordings;
  GroundTruth truth;
  // images[m][k]: speaker k's contribution to device m, noise-free.
  std::vector<std::vector<std::vector<double>>> images;
};

RenderedScene render(const SceneSpec& scene, bool keep_images = false);

// Duration with at least two active speakers over duration with at least one.
double overlap_ratio(std::span<const GroundTruthUtterance> utterances);
double overlap_ratio(const GroundTruth& truth);

// TOML or JSON by extension. A [meeting] table generates the plan with
// make_meeting_scene instead of listing it.
SceneSpec load_scene(const std::filesystem::path& path);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneSpec& scene);

struct MeetingOptions {
  std::size_t speakers = 4;
  std::size_t devices = 6;
  double duration_s = 60.0;
  double target_overlap = 0.2;
  std::uint64_t seed = 1;
  double table_radius_m = 1.0;   // speakers sit on this circle
  double device_radius_m = 0.3;  // devices scattered inside this disc
  double max_offset_s = 2.0;
  double drift_ppm = 0.0;        // drawn uniformly from [-drift, drift]
  double noise_db = -60.0;
  double min_utterance_s = 2.0;
  double max_utterance_s = 6.0;
  double words_per_second = 2.5;
  bool place_near_speakers = false;  // one device next to each speaker
  // Fraction of turn changes followed by silence instead of overlap.
  double pause_probability = 0.35;
  double min_pause_s = 2.0;
  double max_pause_s = 4.0;
};

// Speakers take turns with occasional pauses; the overlap between the
// remaining turns is scaled until the overlap ratio is within 0.005 of the
// target (or the closest achievable).
SceneSpec make_meeting_scene(const MeetingOptions& options);

// Spectral bands, utterance times and texts for the mock recognizer.
MockManifest mock_manifest(const SceneSpec& scene, const GroundTruth& truth);

// Writes device WAVs, manifest.json, truth.json, truth.rttm and mock_asr.json.
void write_scene(const std::filesystem::path& dir, const SceneSpec& scene, const RenderedScene& rendered);

}  // namespace asyncmeet
