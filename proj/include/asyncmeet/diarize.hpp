#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "asyncmeet/audio.hpp"
#include "asyncmeet/error.hpp"

namespace asyncmeet {

// Fixed-size windows shared by every microphone.
struct SegmentGrid {
  int sample_rate = 16000;
  std::size_t window = 0;  // samples
  std::size_t shift = 0;   // samples
  std::size_t slots = 0;   // T

  double window_s() const { return static_cast<double>(window) / sample_rate; }
  double shift_s() const { return static_cast<double>(shift) / sample_rate; }
  std::size_t begin(std::size_t t) const { return t * shift; }
  std::size_t end(std::size_t t) const { return t * shift + window; }
};

SegmentGrid segment(std::size_t session_samples, int sample_rate, double window_s = 1.5, double shift_s = 0.75);
SegmentGrid segment(std::span<const std::vector<double>> aligned, int sample_rate, double window_s = 1.5,
                    double shift_s = 0.75);

double mean_power(std::span<const double> x);

// Speech iff power (dB) exceeds the given percentile of the device's
// segment powers plus margin_db.
double vad_threshold_db(std::span<const double> segment_powers, double percentile = 10.0, double margin_db = 6.0);
bool vad(std::span<const double> segment, double threshold_db);

class DegenerateSegment : public Error {
 public:
  using Error::Error;
};

struct SegmentRef {
  std::size_t mic = 0;
  std::size_t slot = 0;
};

/// Produces the speaker-characteristics part of a segment feature.
class SegmentEmbedder {
 public:
  virtual ~SegmentEmbedder() = default;
  virtual std::size_t dimension() const = 0;
  // Throws DegenerateSegment when the segment carries no usable signal.
  virtual Eigen::VectorXd embed(const SegmentRef& ref, std::span<const double> samples) const = 0;
};

struct SpectralStatsOptions {
  int sample_rate = 16000;
  std::size_t mel_bands = 24;
  double frame_ms = 25.0;
  double shift_ms = 10.0;
  double f_min = 50.0;
  double f_max = 0.0;  // 0 selects Nyquist
  // Dynamic range kept below the loudest band of the segment.
  double top_db = 20.0;
};

// Long-term log-mel spectrum of the segment followed by the per-band
// standard deviation of the frame log-mel values (D = 2 * mel_bands).
class SpectralStatsEmbedder final : public SegmentEmbedder {
 public:
  explicit SpectralStatsEmbedder(SpectralStatsOptions options = {});
  std::size_t dimension() const override { return 2 * options_.mel_bands; }
  Eigen::VectorXd embed(const SegmentRef& ref, std::span<const double> samples) const override;

  const SpectralStatsOptions& options() const { return options_; }

 private:
  SpectralStatsOptions options_;
  std::size_t frame_len_ = 0;
  std::size_t frame_shift_ = 0;
  std::size_t fft_size_ = 0;
  Eigen::MatrixXd filterbank_;  // bands x fft bins
};

/// Embeddings computed elsewhere, stored as a binary (M, T, D) tensor.
///
/// Layout: "AMEB" magic, u32 version (1), u32 M, u32 T, u32 D, then M*T*D
/// little-endian float64 values in (m, t, d) order. Rows containing NaN are
/// treated as missing.
class FileEmbedder final : public SegmentEmbedder {
 public:
  explicit FileEmbedder(const std::string& path);
  FileEmbedder(std::size_t mics, std::size_t slots, std::size_t dim, std::vector<double> values);

  std::size_t dimension() const override { return dim_; }
  Eigen::VectorXd embed(const SegmentRef& ref, std::span<const double> samples) const override;

  std::size_t mics() const { return mics_; }
  std::size_t slots() const { return slots_; }

 private:
  std::size_t mics_ = 0, slots_ = 0, dim_ = 0;
  std::vector<double> values_;
};

void write_embeddings(const std::string& path, std::size_t mics, std::size_t slots, std::size_t dim,
                      std::span<const double> values);

// Subtracts the mean of all present embeddings and scales each to unit
// norm. Entries that vanish after centering become nullopt.
std::vector<std::optional<Eigen::VectorXd>> normalize_embeddings(
    std::span<const std::optional<Eigen::VectorXd>> embeddings);

// [c; lambda * p / |p|]
Eigen::VectorXd build_features(const Eigen::VectorXd& embedding, const Eigen::VectorXd& powers, double lambda);

// Average-linkage agglomerative clustering on cosine distance, cut at k
// clusters. Rows of `features` are samples. Labels are numbered by the
// smallest member index.
std::vector<int> cluster(const Eigen::MatrixXd& features, std::size_t k);

/// Binary activity, one row per speaker plus a trailing noise row.
class ActivityMatrix {
 public:
  ActivityMatrix() = default;
  ActivityMatrix(std::size_t speakers, std::size_t slots, double slot_duration_s);

  std::size_t speakers() const { return speakers_; }
  std::size_t rows() const { return speakers_ + 1; }
  std::size_t slots() const { return slots_; }
  std::size_t noise_row() const { return speakers_; }
  double slot_duration_s() const { return slot_duration_s_; }

  std::uint8_t operator()(std::size_t row, std::size_t t) const { return data_[row * slots_ + t]; }
  std::uint8_t& operator()(std::size_t row, std::size_t t) { return data_[row * slots_ + t]; }

  std::vector<std::uint8_t> row(std::size_t r) const;
  void set_row(std::size_t r, std::span<const std::uint8_t> values);
  // Columns [begin, end).
  ActivityMatrix crop(std::size_t begin, std::size_t end) const;
  std::size_t active_count(std::size_t row) const;

  bool operator==(const ActivityMatrix&) const = default;

 private:
  std::size_t speakers_ = 0;
  std::size_t slots_ = 0;
  double slot_duration_s_ = 0.0;
  std::vector<std::uint8_t> data_;
};

// labels[m][t] is the cluster of v_{m,t} or -1 when the segment was not
// clustered.
ActivityMatrix build_activity(const std::vector<std::vector<int>>& labels, const SegmentGrid& grid, std::size_t k);

// Fills interior runs of at most max_gap zeros between ones.
std::vector<std::uint8_t> close_gaps(std::span<const std::uint8_t> row, std::size_t max_gap = 2);
ActivityMatrix close_gaps(const ActivityMatrix& activity, std::size_t max_gap = 2);

// Frame f (centered at f * frame_shift) inherits the slot whose central
// shift-wide span contains it; edge frames clamp to the first/last slot.
ActivityMatrix upsample(const ActivityMatrix& activity, const SegmentGrid& grid, const StftConfig& stft,
                        std::size_t frames);

struct Utterance {
  std::size_t speaker = 0;
  std::size_t begin = 0;  // first frame
  std::size_t end = 0;    // last frame, inclusive

  std::size_t frames() const { return end - begin + 1; }
  bool operator==(const Utterance&) const = default;
};

std::vector<Utterance> extract_utterances(const ActivityMatrix& activity, std::size_t min_frames = 10);

struct DiarizeOptions {
  std::size_t speakers = 2;
  double window_s = 1.5;
  double shift_s = 0.75;
  double lambda = 1.0;
  double vad_percentile = 10.0;
  double vad_margin_db = 6.0;
  bool closing = true;
  std::size_t max_gap_slots = 2;
  std::size_t min_utterance_frames = 10;
  StftConfig stft;
};

struct DiarizationResult {
  SegmentGrid grid;
  std::vector<std::vector<double>> powers;        // [m][t]
  std::vector<std::vector<bool>> speech;          // [m][t]
  std::vector<std::vector<int>> labels;           // [m][t], -1 when unclustered
  ActivityMatrix slot_activity;                   // after optional closing
  ActivityMatrix frame_activity;                  // upsampled to STFT frames
  std::vector<Utterance> utterances;
  std::size_t dropped_segments = 0;
};

DiarizationResult diarize(std::span<const std::vector<double>> aligned, int sample_rate,
                          const DiarizeOptions& options, const SegmentEmbedder& embedder);

}  // namespace asyncmeet
