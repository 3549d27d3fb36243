#include "asyncmeet/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "asyncmeet/error.hpp"
#include "asyncmeet/fft.hpp"

namespace asyncmeet {

namespace {

std::uint32_t read_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint16_t read_u16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <typename T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_tag(std::vector<char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

// Reflect padding without repeating the edge sample.
double reflect_at(std::span<const double> x, std::ptrdiff_t i) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  if (n == 1) return x[0];
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= n) i = period - i;
  return x[static_cast<std::size_t>(i)];
}

}  // namespace

void validate(const Recording& rec) {
  if (rec.samples.empty()) throw InvalidInput("recording '" + rec.device_id + "' is empty");
  if (rec.sample_rate <= 0) throw InvalidInput("recording '" + rec.device_id + "' has invalid sample rate");
  for (double s : rec.samples)
    if (!std::isfinite(s)) throw InvalidInput("recording '" + rec.device_id + "' has non-finite samples");
}

Recording read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path.string());

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const std::size_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw IoError("truncated fmt chunk: " + path.string());
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      // WAVE_FORMAT_EXTENSIBLE carries the real format in the sub-format GUID.
      if (format == 0xFFFE && avail >= 26) format = read_u16(chunk + 32);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt || data == nullptr) throw IoError("WAV file lacks fmt or data chunk: " + path.string());
  if (format != 1) throw IoError("WAV file is not PCM: " + path.string());
  if (bits != 16) throw IoError("WAV file is not 16-bit: " + path.string());
  if (channels != 1)
    throw IoError("WAV file has " + std::to_string(channels) + " channels, expected mono: " + path.string());
  if (rate == 0) throw IoError("WAV file has zero sample rate: " + path.string());

  Recording rec;
  rec.sample_rate = static_cast<int>(rate);
  rec.device_id = path.stem().string();
  rec.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < rec.samples.size(); ++i) {
    std::int16_t v;
    std::memcpy(&v, data + 2 * i, 2);
    rec.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return rec;
}

std::vector<char> encode_wav(std::span<const double> samples, int sample_rate) {
  std::vector<char> out;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put<std::uint32_t>(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);
  put<std::uint16_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  put_tag(out, "data");
  put<std::uint32_t>(out, data_bytes);
  for (double s : samples) {
    const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32768.0);
    put<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0)));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write WAV file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::size_t StftConfig::frame_len() const {
  return static_cast<std::size_t>(std::lround(frame_len_ms * 1e-3 * sample_rate));
}

std::size_t StftConfig::frame_shift() const {
  return static_cast<std::size_t>(std::lround(frame_shift_ms * 1e-3 * sample_rate));
}

std::size_t StftConfig::frames_for(std::size_t samples) const { return samples / frame_shift() + 1; }

double StftConfig::frame_time_s(std::size_t frame) const {
  return static_cast<double>(frame * frame_shift()) / sample_rate;
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

Spectrogram stft(std::span<const double> x, const StftConfig& config) {
  const std::size_t len = config.frame_len();
  const std::size_t shift = config.frame_shift();
  if (len == 0 || shift == 0 || shift > len) throw InvalidInput("stft: invalid frame geometry");
  if (x.size() < len) throw InvalidInput("stft: signal shorter than one frame");

  const auto window = hann_window(len);
  const std::size_t frames = config.frames_for(x.size());
  const auto pad = static_cast<std::ptrdiff_t>(len / 2);

  Spectrogram spec;
  spec.config = config;
  spec.values.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(config.bins()));

  RealFft fft(len);
  std::vector<double> frame(len);
  std::vector<std::complex<double>> bins(fft.bins());
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * shift) - pad;
    for (std::size_t n = 0; n < len; ++n) {
      const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(n);
      const double v = (i >= 0 && i < static_cast<std::ptrdiff_t>(x.size())) ? x[static_cast<std::size_t>(i)]
                                                                               : reflect_at(x, i);
      frame[n] = v * window[n];
    }
    fft.forward(frame, bins);
    for (std::size_t f = 0; f < bins.size(); ++f)
      spec.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) = bins[f];
  }
  return spec;
}

Spectrogram stft(const Recording& x, StftConfig config) {
  config.sample_rate = x.sample_rate;
  return stft(std::span<const double>(x.samples), config);
}

std::vector<double> istft(const Spectrogram& spec, std::size_t length) {
  const std::size_t len = spec.config.frame_len();
  const std::size_t shift = spec.config.frame_shift();
  if (spec.bins() != spec.config.bins()) throw InvalidInput("istft: bin count does not match frame geometry");
  const std::size_t frames = spec.frames();
  if (frames == 0) return std::vector<double>(length, 0.0);
  if (length == 0) length = (frames - 1) * shift;

  const auto window = hann_window(len);
  const std::size_t pad = len / 2;
  const std::size_t padded = (frames - 1) * shift + len;
  std::vector<double> acc(padded, 0.0), norm(padded, 0.0);

  RealFft fft(len);
  std::vector<std::complex<double>> bins(fft.bins());
  std::vector<double> frame(len);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < bins.size(); ++f)
      bins[f] = spec.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f));
    fft.inverse(bins, frame);
    const std::size_t start = t * shift;
    for (std::size_t n = 0; n < len; ++n) {
      acc[start + n] += window[n] * frame[n] / static_cast<double>(len);
      norm[start + n] += window[n] * window[n];
    }
  }

  std::vector<double> out(length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t p = i + pad;
    if (p < padded && norm[p] > 1e-10) out[i] = acc[p] / norm[p];
  }
  return out;
}

SpectrogramTensor::SpectrogramTensor(std::size_t channels, std::size_t frames, std::size_t bins, StftConfig config)
    : channels_(channels), frames_(frames), config_(config) {
  bins_.assign(bins, Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(frames)));
}

SpectrogramTensor SpectrogramTensor::from_channels(std::span<const Spectrogram> channels) {
  if (channels.empty()) throw InvalidInput("SpectrogramTensor: no channels");
  const auto& first = channels.front();
  SpectrogramTensor out(channels.size(), first.frames(), first.bins(), first.config);
  for (std::size_t m = 0; m < channels.size(); ++m) {
    if (channels[m].frames() != first.frames() || channels[m].bins() != first.bins())
      throw InvalidInput("SpectrogramTensor: channel geometry mismatch");
    for (std::size_t f = 0; f < first.bins(); ++f)
      out.bins_[f].row(static_cast<Eigen::Index>(m)) = channels[m].values.col(static_cast<Eigen::Index>(f)).transpose();
  }
  return out;
}

SpectrogramTensor SpectrogramTensor::from_signals(std::span<const std::vector<double>> signals,
                                                  const StftConfig& config) {
  std::vector<Spectrogram> specs;
  specs.reserve(signals.size());
  for (const auto& s : signals) specs.push_back(stft(std::span<const double>(s), config));
  return from_channels(specs);
}

Spectrogram SpectrogramTensor::channel(std::size_t m) const {
  Spectrogram out;
  out.config = config_;
  out.values.resize(static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(bins()));
  for (std::size_t f = 0; f < bins(); ++f)
    out.values.col(static_cast<Eigen::Index>(f)) = bins_[f].row(static_cast<Eigen::Index>(m)).transpose();
  return out;
}

SpectrogramTensor SpectrogramTensor::crop(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frames_) throw InvalidInput("SpectrogramTensor::crop: range out of bounds");
  SpectrogramTensor out;
  out.channels_ = channels_;
  out.frames_ = end - begin;
  out.config_ = config_;
  out.bins_.reserve(bins_.size());
  for (const auto& b : bins_)
    out.bins_.push_back(b.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)));
  return out;
}

bool SpectrogramTensor::all_finite() const {
  return std::all_of(bins_.begin(), bins_.end(), [](const Eigen::MatrixXcd& b) { return b.allFinite(); });
}

double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double power_db(double power) { return 10.0 * std::log10(std::max(power, 1e-30)); }

}  // namespace asyncmeet
