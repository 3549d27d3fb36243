#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace asyncmeet {

// One device's waveform on its own clock. Samples are in [-1, 1].
struct Recording {
  std::vector<double> samples;
  int sample_rate = 16000;
  std::string device_id;

  std::size_t length() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Throws InvalidInput if the recording is empty, has a non-positive rate
// or contains non-finite samples.
void validate(const Recording& rec);

// PCM 16-bit mono only.
Recording read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate);
std::vector<char> encode_wav(std::span<const double> samples, int sample_rate);

struct StftConfig {
  double frame_len_ms = 64.0;
  double frame_shift_ms = 16.0;
  int sample_rate = 16000;

  std::size_t frame_len() const;
  std::size_t frame_shift() const;
  std::size_t fft_size() const { return frame_len(); }
  std::size_t bins() const { return fft_size() / 2 + 1; }
  // Centered frames: floor(n / shift) + 1.
  std::size_t frames_for(std::size_t samples) const;
  double frame_time_s(std::size_t frame) const;
};

// Single-channel STFT, rows are frames, columns are frequency bins.
struct Spectrogram {
  Eigen::MatrixXcd values;
  StftConfig config;

  std::size_t frames() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t bins() const { return static_cast<std::size_t>(values.cols()); }
};

// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t length);

// Frames are centered at t * shift; the signal is reflect-padded by
// frame_len / 2 at both ends.
Spectrogram stft(std::span<const double> x, const StftConfig& config = {});
Spectrogram stft(const Recording& x, StftConfig config = {});

// Weighted overlap-add inverse. With length == 0 the output covers
// (frames - 1) * shift samples.
std::vector<double> istft(const Spectrogram& spec, std::size_t length = 0);

/// Multichannel spectrogram stored frequency-major: bin(f) is an M x T
/// matrix whose column t is the observation vector X_{t,f}.
class SpectrogramTensor {
 public:
  SpectrogramTensor() = default;
  SpectrogramTensor(std::size_t channels, std::size_t frames, std::size_t bins, StftConfig config);

  static SpectrogramTensor from_channels(std::span<const Spectrogram> channels);
  static SpectrogramTensor from_signals(std::span<const std::vector<double>> signals,
                                        const StftConfig& config);

  std::size_t channels() const { return channels_; }
  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_.size(); }
  const StftConfig& config() const { return config_; }

  Eigen::MatrixXcd& bin(std::size_t f) { return bins_[f]; }
  const Eigen::MatrixXcd& bin(std::size_t f) const { return bins_[f]; }

  Spectrogram channel(std::size_t m) const;
  // Frames [begin, end).
  SpectrogramTensor crop(std::size_t begin, std::size_t end) const;
  bool all_finite() const;

 private:
  std::size_t channels_ = 0;
  std::size_t frames_ = 0;
  std::vector<Eigen::MatrixXcd> bins_;
  StftConfig config_;
};

double rms(std::span<const double> x);
double power_db(double power);

}  // namespace asyncmeet
