#include "asyncmeet/diarize.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "asyncmeet/fft.hpp"

namespace asyncmeet {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

constexpr char kEmbeddingMagic[4] = {'A', 'M', 'E', 'B'};

}  // namespace

SegmentGrid segment(std::size_t session_samples, int sample_rate, double window_s, double shift_s) {
  if (window_s <= 0.0 || shift_s <= 0.0) throw InvalidInput("segment: window and shift must be positive");
  SegmentGrid grid;
  grid.sample_rate = sample_rate;
  grid.window = static_cast<std::size_t>(std::lround(window_s * sample_rate));
  grid.shift = static_cast<std::size_t>(std::lround(shift_s * sample_rate));
  if (session_samples < grid.window)
    throw InvalidInput("segment: session of " + std::to_string(session_samples) + " samples is shorter than one " +
                       std::to_string(window_s) + " s window");
  grid.slots = (session_samples - grid.window) / grid.shift + 1;
  return grid;
}

SegmentGrid segment(std::span<const std::vector<double>> aligned, int sample_rate, double window_s, double shift_s) {
  if (aligned.empty()) throw InvalidInput("segment: no signals");
  const std::size_t n = aligned.front().size();
  for (const auto& s : aligned)
    if (s.size() != n) throw InvalidInput("segment: aligned signals differ in length");
  return segment(n, sample_rate, window_s, shift_s);
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

double vad_threshold_db(std::span<const double> segment_powers, double percentile, double margin_db) {
  if (segment_powers.empty()) throw InvalidInput("vad_threshold_db: no segment powers");
  std::vector<double> db;
  db.reserve(segment_powers.size());
  for (double p : segment_powers) db.push_back(power_db(p));
  std::sort(db.begin(), db.end());
  // Linear interpolation between closest ranks.
  const double pos = std::clamp(percentile, 0.0, 100.0) / 100.0 * static_cast<double>(db.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, db.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return db[lo] + frac * (db[hi] - db[lo]) + margin_db;
}

bool vad(std::span<const double> segment, double threshold_db) {
  if (segment.empty()) throw InvalidInput("vad: empty segment");
  const double p = mean_power(segment);
  if (p <= 0.0) return false;
  return power_db(p) > threshold_db;
}

SpectralStatsEmbedder::SpectralStatsEmbedder(SpectralStatsOptions options) : options_(options) {
  if (options_.mel_bands == 0) throw InvalidInput("SpectralStatsEmbedder: need at least one band");
  frame_len_ = static_cast<std::size_t>(std::lround(options_.frame_ms * 1e-3 * options_.sample_rate));
  frame_shift_ = static_cast<std::size_t>(std::lround(options_.shift_ms * 1e-3 * options_.sample_rate));
  fft_size_ = next_pow2(frame_len_);
  const double nyquist = options_.sample_rate / 2.0;
  const double f_max = options_.f_max > 0.0 ? std::min(options_.f_max, nyquist) : nyquist;

  const std::size_t bins = fft_size_ / 2 + 1;
  const std::size_t bands = options_.mel_bands;
  std::vector<double> edges(bands + 2);
  const double mel_lo = hz_to_mel(options_.f_min), mel_hi = hz_to_mel(f_max);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(bands + 1));

  filterbank_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bands), static_cast<Eigen::Index>(bins));
  for (std::size_t b = 0; b < bands; ++b) {
    for (std::size_t k = 0; k < bins; ++k) {
      const double hz = static_cast<double>(k) * options_.sample_rate / static_cast<double>(fft_size_);
      double w = 0.0;
      if (hz > edges[b] && hz <= edges[b + 1]) w = (hz - edges[b]) / (edges[b + 1] - edges[b]);
      else if (hz > edges[b + 1] && hz < edges[b + 2]) w = (edges[b + 2] - hz) / (edges[b + 2] - edges[b + 1]);
      filterbank_(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = w;
    }
  }
}

Eigen::VectorXd SpectralStatsEmbedder::embed(const SegmentRef&, std::span<const double> samples) const {
  if (samples.size() < frame_len_) throw DegenerateSegment("segment shorter than one analysis frame");
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  if (*mx - *mn < 1e-12) throw DegenerateSegment("constant segment");

  const auto window = hann_window(frame_len_);
  const std::size_t frames = (samples.size() - frame_len_) / frame_shift_ + 1;
  const auto bands = static_cast<Eigen::Index>(options_.mel_bands);
  Eigen::MatrixXd mel(bands, static_cast<Eigen::Index>(frames));

  RealFft fft(fft_size_);
  std::vector<double> frame(frame_len_);
  std::vector<std::complex<double>> spec(fft.bins());
  Eigen::VectorXd power(static_cast<Eigen::Index>(fft.bins()));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < frame_len_; ++n) frame[n] = samples[t * frame_shift_ + n] * window[n];
    fft.forward(frame, spec);
    for (std::size_t k = 0; k < spec.size(); ++k) power(static_cast<Eigen::Index>(k)) = std::norm(spec[k]);
    mel.col(static_cast<Eigen::Index>(t)) = filterbank_ * power;
  }

  // Long-term log spectrum, so the loudest talker in the segment dominates.
  Eigen::VectorXd longterm = mel.rowwise().mean();
  for (Eigen::Index b = 0; b < bands; ++b) longterm(b) = power_db(longterm(b));
  const double floor = longterm.maxCoeff() - options_.top_db;
  Eigen::MatrixXd logmel = mel.unaryExpr([](double v) { return power_db(v); }).cwiseMax(floor);

  Eigen::VectorXd out(2 * bands);
  out.head(bands) = longterm.cwiseMax(floor);
  const Eigen::VectorXd mean = logmel.rowwise().mean();
  out.tail(bands) = ((logmel.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
  return out;
}

FileEmbedder::FileEmbedder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path);
  char magic[4];
  std::uint32_t header[4];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kEmbeddingMagic, 4) != 0) throw IoError("not an embedding file: " + path);
  if (header[0] != 1) throw IoError("unsupported embedding file version in " + path);
  mics_ = header[1];
  slots_ = header[2];
  dim_ = header[3];
  values_.resize(mics_ * slots_ * dim_);
  in.read(reinterpret_cast<char*>(values_.data()), static_cast<std::streamsize>(values_.size() * sizeof(double)));
  if (!in) throw IoError("truncated embedding file: " + path);
}

FileEmbedder::FileEmbedder(std::size_t mics, std::size_t slots, std::size_t dim, std::vector<double> values)
    : mics_(mics), slots_(slots), dim_(dim), values_(std::move(values)) {
  if (values_.size() != mics_ * slots_ * dim_) throw InvalidInput("FileEmbedder: value count mismatch");
}

Eigen::VectorXd FileEmbedder::embed(const SegmentRef& ref, std::span<const double>) const {
  if (ref.mic >= mics_ || ref.slot >= slots_)
    throw InvalidInput("embedding file does not cover mic " + std::to_string(ref.mic) + ", slot " +
                       std::to_string(ref.slot));
  const double* p = values_.data() + (ref.mic * slots_ + ref.slot) * dim_;
  Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(p, static_cast<Eigen::Index>(dim_));
  if (!out.allFinite()) throw DegenerateSegment("embedding missing for segment");
  return out;
}

void write_embeddings(const std::string& path, std::size_t mics, std::size_t slots, std::size_t dim,
                      std::span<const double> values) {
  if (values.size() != mics * slots * dim) throw InvalidInput("write_embeddings: value count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file: " + path);
  const std::uint32_t header[4] = {1, static_cast<std::uint32_t>(mics), static_cast<std::uint32_t>(slots),
                                   static_cast<std::uint32_t>(dim)};
  out.write(kEmbeddingMagic, 4);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<std::optional<Eigen::VectorXd>> normalize_embeddings(
    std::span<const std::optional<Eigen::VectorXd>> embeddings) {
  std::vector<std::optional<Eigen::VectorXd>> out(embeddings.size());
  Eigen::VectorXd mean;
  std::size_t count = 0;
  for (const auto& e : embeddings) {
    if (!e) continue;
    if (count == 0) mean = Eigen::VectorXd::Zero(e->size());
    if (e->size() != mean.size()) throw InvalidInput("normalize_embeddings: inconsistent dimensions");
    mean += *e;
    ++count;
  }
  if (count == 0) throw InvalidInput("normalize_embeddings: no speech segments");
  mean /= static_cast<double>(count);

  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (!embeddings[i]) continue;
    Eigen::VectorXd c = *embeddings[i] - mean;
    const double norm = c.norm();
    // Relative guard: centering cancels to rounding noise for duplicates.
    if (norm <= 1e-12 * std::max(1.0, embeddings[i]->norm())) continue;
    out[i] = c / norm;
  }
  return out;
}

Eigen::VectorXd build_features(const Eigen::VectorXd& embedding, const Eigen::VectorXd& powers, double lambda) {
  if (lambda < 0.0) throw InvalidInput("build_features: lambda must be non-negative");
  const double norm = powers.norm();
  if (!(norm > 0.0)) throw InvalidInput("build_features: zero power vector on a speech slot");
  Eigen::VectorXd v(embedding.size() + powers.size());
  v.head(embedding.size()) = embedding;
  v.tail(powers.size()) = lambda * powers / norm;
  return v;
}

std::vector<int> cluster(const Eigen::MatrixXd& features, std::size_t k) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (k == 0) throw InvalidInput("cluster: k must be positive");
  if (n < k)
    throw InvalidInput("cluster: " + std::to_string(n) + " feature vectors cannot form " + std::to_string(k) +
                       " clusters");

  Eigen::MatrixXd unit = features;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) unit.row(i) /= norm;
  }
  const Eigen::MatrixXd gram = unit * unit.transpose();

  // Condensed upper-triangular distance storage.
  const auto index = [n](std::size_t i, std::size_t j) { return i * n - i * (i + 1) / 2 + (j - i - 1); };
  std::vector<double> dist(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[index(i, j)] = 1.0 - gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  const auto d = [&](std::size_t a, std::size_t b) -> double& {
    return a < b ? dist[index(a, b)] : dist[index(b, a)];
  };

  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1), owner(n);
  std::iota(owner.begin(), owner.end(), 0);
  constexpr auto none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> nn(n, none);
  std::vector<double> nnd(n, std::numeric_limits<double>::infinity());

  // Nearest active neighbour with a larger index, lowest index on ties.
  const auto refresh = [&](std::size_t i) {
    nn[i] = none;
    nnd[i] = std::numeric_limits<double>::infinity();
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!active[j]) continue;
      const double v = dist[index(i, j)];
      if (v < nnd[i]) {
        nnd[i] = v;
        nn[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  for (std::size_t clusters = n; clusters > k; --clusters) {
    std::size_t a = none;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i] && nn[i] != none && nnd[i] < best) {
        best = nnd[i];
        a = i;
      }
    }
    const std::size_t b = nn[a];

    for (std::size_t l = 0; l < n; ++l) {
      if (!active[l] || l == a || l == b) continue;
      d(a, l) = (static_cast<double>(size[a]) * d(a, l) + static_cast<double>(size[b]) * d(b, l)) /
                static_cast<double>(size[a] + size[b]);
    }
    active[b] = false;
    size[a] += size[b];
    for (std::size_t l = 0; l < n; ++l)
      if (owner[l] == b) owner[l] = a;

    for (std::size_t l = 0; l < a; ++l) {
      if (!active[l]) continue;
      if (nn[l] == a || nn[l] == b) {
        refresh(l);
      } else if (d(l, a) < nnd[l] || (d(l, a) == nnd[l] && a < nn[l])) {
        nnd[l] = d(l, a);
        nn[l] = a;
      }
    }
    for (std::size_t l = a + 1; l < b; ++l)
      if (active[l] && nn[l] == b) refresh(l);
    refresh(a);
  }

  // Representatives are the smallest member of each cluster.
  std::vector<int> rep_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (active[i]) rep_label[i] = next++;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = rep_label[owner[i]];
  return labels;
}

ActivityMatrix::ActivityMatrix(std::size_t speakers, std::size_t slots, double slot_duration_s)
    : speakers_(speakers), slots_(slots), slot_duration_s_(slot_duration_s), data_((speakers + 1) * slots, 0) {}

std::vector<std::uint8_t> ActivityMatrix::row(std::size_t r) const {
  return {data_.begin() + static_cast<std::ptrdiff_t>(r * slots_),
          data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * slots_)};
}

void ActivityMatrix::set_row(std::size_t r, std::span<const std::uint8_t> values) {
  if (values.size() != slots_) throw InvalidInput("ActivityMatrix::set_row: length mismatch");
  std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * slots_));
}

ActivityMatrix ActivityMatrix::crop(std::size_t begin, std::size_t end) const {
  if (begin > end || end > slots_) throw InvalidInput("ActivityMatrix::crop: range out of bounds");
  ActivityMatrix out(speakers_, end - begin, slot_duration_s_);
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t t = begin; t < end; ++t) out(r, t - begin) = (*this)(r, t);
  return out;
}

std::size_t ActivityMatrix::active_count(std::size_t r) const {
  std::size_t c = 0;
  for (std::size_t t = 0; t < slots_; ++t) c += (*this)(r, t);
  return c;
}

ActivityMatrix build_activity(const std::vector<std::vector<int>>& labels, const SegmentGrid& grid, std::size_t k) {
  ActivityMatrix y(k, grid.slots, grid.shift_s());
  for (const auto& mic : labels) {
    if (mic.size() != grid.slots) throw InvalidInput("build_activity: label row length mismatch");
    for (std::size_t t = 0; t < grid.slots; ++t) {
      const int label = mic[t];
      if (label < 0) continue;
      if (static_cast<std::size_t>(label) >= k) throw InvalidInput("build_activity: label out of range");
      y(static_cast<std::size_t>(label), t) = 1;
    }
  }
  // The noise cluster holds every feature.
  for (std::size_t t = 0; t < grid.slots; ++t) y(y.noise_row(), t) = 1;
  return y;
}

std::vector<std::uint8_t> close_gaps(std::span<const std::uint8_t> row, std::size_t max_gap) {
  std::vector<std::uint8_t> out(row.begin(), row.end());
  std::size_t last_one = 0;
  bool seen_one = false;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!row[i]) continue;
    if (seen_one) {
      const std::size_t gap = i - last_one - 1;
      if (gap > 0 && gap <= max_gap) std::fill(out.begin() + static_cast<std::ptrdiff_t>(last_one + 1),
                                               out.begin() + static_cast<std::ptrdiff_t>(i), 1);
    }
    seen_one = true;
    last_one = i;
  }
  return out;
}

ActivityMatrix close_gaps(const ActivityMatrix& activity, std::size_t max_gap) {
  ActivityMatrix out = activity;
  for (std::size_t k = 0; k < activity.speakers(); ++k) out.set_row(k, close_gaps(activity.row(k), max_gap));
  return out;
}

ActivityMatrix upsample(const ActivityMatrix& activity, const SegmentGrid& grid, const StftConfig& stft,
                        std::size_t frames) {
  if (activity.slots() != grid.slots) throw InvalidInput("upsample: activity does not match segment grid");
  ActivityMatrix out(activity.speakers(), frames, static_cast<double>(stft.frame_shift()) / stft.sample_rate);
  if (activity.slots() == 0) return out;
  // Slot t owns the central `shift` samples of its window.
  const double lead = (static_cast<double>(grid.window) - static_cast<double>(grid.shift)) / 2.0;
  const double ratio = static_cast<double>(grid.sample_rate) / stft.sample_rate;
  for (std::size_t f = 0; f < frames; ++f) {
    const double center = static_cast<double>(f * stft.frame_shift()) * ratio;
    const double pos = std::floor((center - lead) / static_cast<double>(grid.shift));
    const auto slot = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(grid.slots - 1)));
    for (std::size_t r = 0; r < activity.rows(); ++r) out(r, f) = activity(r, slot);
  }
  return out;
}

std::vector<Utterance> extract_utterances(const ActivityMatrix& activity, std::size_t min_frames) {
  std::vector<Utterance> out;
  for (std::size_t k = 0; k < activity.speakers(); ++k) {
    std::size_t t = 0;
    while (t < activity.slots()) {
      if (!activity(k, t)) {
        ++t;
        continue;
      }
      std::size_t e = t;
      while (e + 1 < activity.slots() && activity(k, e + 1)) ++e;
      if (e - t + 1 >= min_frames) out.push_back({k, t, e});
      t = e + 1;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Utterance& a, const Utterance& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.speaker < b.speaker;
  });
  return out;
}

DiarizationResult diarize(std::span<const std::vector<double>> aligned, int sample_rate,
                          const DiarizeOptions& options, const SegmentEmbedder& embedder) {
  DiarizationResult r;
  r.grid = segment(aligned, sample_rate, options.window_s, options.shift_s);
  const std::size_t mics = aligned.size();
  const std::size_t slots = r.grid.slots;

  r.powers.assign(mics, std::vector<double>(slots));
  const std::size_t lead = (r.grid.window - r.grid.shift) / 2;
  r.speech.assign(mics, std::vector<bool>(slots));
  for (std::size_t m = 0; m < mics; ++m) {
    for (std::size_t t = 0; t < slots; ++t)
      r.powers[m][t] = mean_power(std::span<const double>(aligned[m]).subspan(r.grid.begin(t), r.grid.window));
    // VAD looks at the slot's own central share so an onset at the window
    // edge does not mark the whole slot.
    std::vector<double> own(slots);
    for (std::size_t t = 0; t < slots; ++t)
      own[t] = mean_power(std::span<const double>(aligned[m]).subspan(r.grid.begin(t) + lead, r.grid.shift));
    const double threshold = vad_threshold_db(own, options.vad_percentile, options.vad_margin_db);
    for (std::size_t t = 0; t < slots; ++t) r.speech[m][t] = own[t] > 0.0 && power_db(own[t]) > threshold;
  }

  std::vector<std::optional<Eigen::VectorXd>> embeddings(mics * slots);
  for (std::size_t m = 0; m < mics; ++m) {
    for (std::size_t t = 0; t < slots; ++t) {
      if (!r.speech[m][t]) continue;
      try {
        embeddings[m * slots + t] =
            embedder.embed({m, t}, std::span<const double>(aligned[m]).subspan(r.grid.begin(t), r.grid.window));
      } catch (const DegenerateSegment& e) {
        spdlog::debug("diarize: mic {} slot {} demoted to nonspeech: {}", m, t, e.what());
        r.speech[m][t] = false;
      }
    }
  }
  const auto normalized = normalize_embeddings(embeddings);

  std::vector<std::pair<std::size_t, std::size_t>> index;
  std::vector<Eigen::VectorXd> rows;
  for (std::size_t m = 0; m < mics; ++m) {
    for (std::size_t t = 0; t < slots; ++t) {
      if (!r.speech[m][t]) continue;
      const auto& c = normalized[m * slots + t];
      if (!c) {
        ++r.dropped_segments;
        continue;
      }
      Eigen::VectorXd p(static_cast<Eigen::Index>(mics));
      for (std::size_t j = 0; j < mics; ++j) p(static_cast<Eigen::Index>(j)) = r.powers[j][t];
      rows.push_back(build_features(*c, p, options.lambda));
      index.emplace_back(m, t);
    }
  }
  if (r.dropped_segments > 0)
    spdlog::info("diarize: {} segments dropped after embedding normalization", r.dropped_segments);

  Eigen::MatrixXd features(static_cast<Eigen::Index>(rows.size()),
                           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) features.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const auto cluster_labels = cluster(features, options.speakers);

  r.labels.assign(mics, std::vector<int>(slots, -1));
  for (std::size_t i = 0; i < index.size(); ++i) r.labels[index[i].first][index[i].second] = cluster_labels[i];

  r.slot_activity = build_activity(r.labels, r.grid, options.speakers);
  if (options.closing) r.slot_activity = close_gaps(r.slot_activity, options.max_gap_slots);

  StftConfig stft = options.stft;
  stft.sample_rate = sample_rate;
  const std::size_t frames = stft.frames_for(aligned.front().size());
  r.frame_activity = upsample(r.slot_activity, r.grid, stft, frames);
  r.utterances = extract_utterances(r.frame_activity, options.min_utterance_frames);
  return r;
}

}  // namespace asyncmeet
