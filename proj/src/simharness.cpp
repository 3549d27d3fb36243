#include "asyncmeet/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <toml.hpp>
#include <spdlog/spdlog.h>

#include "asyncmeet/error.hpp"
#include "asyncmeet/fft.hpp"

namespace asyncmeet {

namespace {

constexpr double kSpeedOfSound = 343.0;
constexpr int kSincHalf = 16;
constexpr int kSincPhases = 512;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Hann-windowed sinc sampled at kSincPhases points per unit lag.
const std::vector<double>& sinc_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(kSincHalf * kSincPhases + 2, 0.0);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double x = static_cast<double>(j) / kSincPhases;
      if (x >= kSincHalf) continue;
      const double s = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * x / kSincHalf);
      t[j] = s * w;
    }
    return t;
  }();
  return table;
}

double kernel(double x) {
  const auto& t = sinc_table();
  const double pos = std::abs(x) * kSincPhases;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= t.size()) return 0.0;
  const double frac = pos - static_cast<double>(i);
  return t[i] + frac * (t[i + 1] - t[i]);
}

// Band-limited interpolation of src at fractional index p.
double interpolate(const std::vector<double>& src, double p) {
  const auto i0 = static_cast<long>(std::floor(p));
  double acc = 0.0;
  for (long k = i0 - kSincHalf + 1; k <= i0 + kSincHalf; ++k) {
    if (k < 0 || k >= static_cast<long>(src.size())) continue;
    acc += src[static_cast<std::size_t>(k)] * kernel(p - static_cast<double>(k));
  }
  return acc;
}

std::vector<double> band_noise(std::size_t n, double lo, double hi, int fs, std::mt19937_64& rng) {
  const auto size = next_pow2(n);
  RealFft fft(size);
  std::normal_distribution<double> gauss;
  std::vector<double> x(size);
  for (auto& v : x) v = gauss(rng);
  auto spec = fft.forward(x);
  for (std::size_t f = 0; f < spec.size(); ++f) {
    const double hz = static_cast<double>(f) * fs / static_cast<double>(size);
    if (hz < lo || hz > hi) spec[f] = 0.0;
  }
  auto y = fft.inverse(spec);
  y.resize(n);
  return y;
}

std::vector<double> surrogate(const SceneSpec& scene, std::size_t index) {
  const auto& u = scene.utterances[index];
  const auto& spk = scene.speakers[u.speaker];
  const int fs = scene.sample_rate;
  if (!u.source_wav.empty()) {
    const auto rec = read_wav(u.source_wav);
    if (rec.sample_rate != fs) throw InvalidInput("source WAV rate differs from scene rate: " + u.source_wav);
    auto x = rec.samples;
    x.resize(static_cast<std::size_t>(std::llround(u.duration_s * fs)), 0.0);
    const double r = rms(x);
    if (r > 0) for (auto& v : x) v *= std::pow(10.0, spk.level_db / 20.0) / r;
    return x;
  }
  std::mt19937_64 rng(mix(scene.seed, 1000 + index));
  const auto n = static_cast<std::size_t>(std::llround(u.duration_s * fs));
  auto x = band_noise(n, spk.band_low_hz, spk.band_high_hz, fs, rng);
  std::uniform_real_distribution<double> rate(3.0, 5.0), phase(0.0, std::numbers::pi);
  const double r = rate(rng), phi = phase(rng);
  const double ramp = 0.02 * fs;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double env = 0.3 + 0.7 * std::abs(std::sin(std::numbers::pi * r * t + phi));
    const double edge = std::min(static_cast<double>(i), static_cast<double>(n - 1 - i));
    if (edge < ramp) env *= 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
    x[i] *= env;
  }
  const double level = rms(x);
  if (level > 0) for (auto& v : x) v *= std::pow(10.0, spk.level_db / 20.0) / level;
  return x;
}

std::vector<double> impulse_response(const SceneSpec& scene, std::size_t device, std::size_t speaker) {
  const int fs = scene.sample_rate;
  const auto len = static_cast<std::size_t>(std::ceil(scene.reverb.t60_s * fs));
  const auto onset = static_cast<std::size_t>(0.005 * fs);
  std::vector<double> h(std::max(len, onset + 1), 0.0);
  h[0] = 1.0;
  std::mt19937_64 rng(mix(scene.seed, 500000 + device * 1000 + speaker));
  std::normal_distribution<double> gauss;
  double energy = 0.0;
  for (std::size_t i = onset; i < h.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    h[i] = gauss(rng) * std::exp(-6.908 * t / scene.reverb.t60_s);
    energy += h[i] * h[i];
  }
  if (energy > 0) {
    const double scale = std::sqrt(std::pow(10.0, -scene.reverb.direct_to_reverb_db / 10.0) / energy);
    for (std::size_t i = onset; i < h.size(); ++i) h[i] *= scale;
  }
  return h;
}

std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size() + b.size() - 1;
  RealFft fft(next_pow2(n));
  auto fa = fft.forward(a);
  const auto fb = fft.forward(b);
  for (std::size_t f = 0; f < fa.size(); ++f) fa[f] *= fb[f];
  auto y = fft.inverse(fa);
  const double norm = 1.0 / static_cast<double>(fft.size());
  y.resize(n);
  for (auto& v : y) v *= norm;
  return y;
}

}  // namespace

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

void SceneSpec::validate() const {
  if (sample_rate <= 0) throw InvalidInput("scene sample_rate must be positive");
  if (!(duration_s > 0)) throw InvalidInput("scene duration must be positive");
  if (speakers.empty()) throw InvalidInput("scene needs at least one speaker");
  if (devices.empty()) throw InvalidInput("scene needs at least one device");
  for (const auto& s : speakers)
    if (!(s.band_low_hz >= 0 && s.band_high_hz > s.band_low_hz && s.band_high_hz <= sample_rate / 2.0))
      throw InvalidInput("speaker band must satisfy 0 <= low < high <= fs/2");
  for (const auto& d : devices) {
    if (std::abs(d.drift_ppm) > 500) throw InvalidInput("device " + d.id + ": |drift| must not exceed 500 ppm");
    if (d.offset_s + duration_s <= 0) throw InvalidInput("device " + d.id + " records nothing");
  }
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    if (u.speaker >= speakers.size())
      throw InvalidInput("utterance " + std::to_string(i) + " references unknown speaker");
    if (!(u.duration_s > 0) || u.start_s < 0 || u.start_s + u.duration_s > duration_s + 1e-9)
      throw InvalidInput("utterance " + std::to_string(i) + " lies outside the session");
  }
  if (reverb.enabled && !(reverb.t60_s > 0)) throw InvalidInput("reverb t60 must be positive");
}

RenderedScene render(const SceneSpec& scene, bool keep_images) {
  scene.validate();
  const int fs = scene.sample_rate;
  const std::size_t M = scene.devices.size(), K = scene.speakers.size();

  std::vector<std::vector<double>> sources(scene.utterances.size());
  for (std::size_t i = 0; i < sources.size(); ++i) sources[i] = surrogate(scene, i);

  RenderedScene out;
  out.recordings.resize(M);
  if (keep_images) out.images.assign(M, std::vector<std::vector<double>>(K));
  for (std::size_t m = 0; m < M; ++m) {
    const auto& dev = scene.devices[m];
    const double clock = fs * (1.0 + dev.drift_ppm * 1e-6);
    const auto n_dev = static_cast<std::size_t>(std::ceil((scene.duration_s + dev.offset_s) * clock));
    std::vector<std::vector<double>> images(K, std::vector<double>(n_dev, 0.0));
    std::vector<std::vector<double>> irs(K);
    if (scene.reverb.enabled)
      for (std::size_t k = 0; k < K; ++k) irs[k] = impulse_response(scene, m, k);

    for (std::size_t i = 0; i < scene.utterances.size(); ++i) {
      const auto& u = scene.utterances[i];
      const double d = distance(dev.position, scene.speakers[u.speaker].position);
      const double gain = 1.0 / std::max(d, 0.1);
      const double delay = d / kSpeedOfSound;
      const auto src = scene.reverb.enabled ? convolve(sources[i], irs[u.speaker]) : sources[i];
      // device sample n is true time n / clock - offset
      const double t0 = u.start_s + delay;
      const double pad = static_cast<double>(kSincHalf) / fs;
      const auto first = static_cast<long>(std::ceil((t0 - pad + dev.offset_s) * clock));
      const auto last =
          static_cast<long>(std::floor((t0 + static_cast<double>(src.size()) / fs + pad + dev.offset_s) * clock));
      auto& img = images[u.speaker];
      for (long n = std::max(0L, first); n <= last && n < static_cast<long>(n_dev); ++n) {
        const double tau = static_cast<double>(n) / clock - dev.offset_s;
        img[static_cast<std::size_t>(n)] += gain * interpolate(src, (tau - t0) * fs);
      }
    }

    Recording rec;
    rec.device_id = dev.id;
    rec.sample_rate = fs;
    rec.samples.assign(n_dev, 0.0);
    for (const auto& img : images)
      for (std::size_t n = 0; n < n_dev; ++n) rec.samples[n] += img[n];
    if (std::isfinite(scene.noise_db)) {
      std::mt19937_64 rng(mix(scene.seed, 7 + m));
      std::normal_distribution<double> gauss(0.0, std::pow(10.0, scene.noise_db / 20.0));
      for (auto& v : rec.samples) v += gauss(rng);
    }
    out.recordings[m] = std::move(rec);
    if (keep_images) out.images[m] = std::move(images);
  }

  const auto& anchor = scene.devices.front();
  const double stretch = 1.0 + anchor.drift_ppm * 1e-6;
  out.truth.speakers = K;
  out.truth.duration_s = out.recordings.front().duration_s();
  for (const auto& u : scene.utterances)
    out.truth.utterances.push_back({u.speaker, (u.start_s + anchor.offset_s) * stretch,
                                    (u.start_s + u.duration_s + anchor.offset_s) * stretch, u.text});
  std::stable_sort(out.truth.utterances.begin(), out.truth.utterances.end(),
                   [](const GroundTruthUtterance& a, const GroundTruthUtterance& b) { return a.start_s < b.start_s; });
  return out;
}

ActivityMatrix GroundTruth::frame_activity(const StftConfig& stft, std::size_t frames, double origin_s) const {
  ActivityMatrix act(speakers, frames, stft.frame_shift_ms / 1000.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const double center = origin_s + stft.frame_time_s(t);
    for (const auto& u : utterances)
      if (center >= u.start_s && center < u.end_s) act(u.speaker, t) = 1;
    act(act.noise_row(), t) = 1;
  }
  return act;
}

TranscriptSet GroundTruth::transcript(const std::string& session_id) const {
  TranscriptSet set;
  set.session_id = session_id;
  for (const auto& u : utterances)
    set.results.push_back(make_result(u.text, TokenMode::words, u.speaker, u.start_s, u.end_s));
  set.sort();
  return set;
}

std::vector<RttmSegment> GroundTruth::rttm() const {
  std::vector<RttmSegment> out;
  for (const auto& u : utterances) out.push_back({u.speaker, u.start_s, u.end_s - u.start_s});
  return out;
}

double overlap_ratio(std::span<const GroundTruthUtterance> utterances) {
  std::vector<std::pair<double, int>> events;
  for (const auto& u : utterances) {
    if (!(u.end_s > u.start_s)) continue;
    events.emplace_back(u.start_s, +1);
    events.emplace_back(u.end_s, -1);
  }
  std::sort(events.begin(), events.end());
  double speech = 0.0, overlap = 0.0, prev = 0.0;
  int active = 0;
  for (const auto& [t, delta] : events) {
    if (active >= 1) speech += t - prev;
    if (active >= 2) overlap += t - prev;
    active += delta;
    prev = t;
  }
  return speech > 0 ? overlap / speech : 0.0;
}

double overlap_ratio(const GroundTruth& truth) { return overlap_ratio(truth.utterances); }

// ---------------------------------------------------------------------------

namespace {

Point point_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

MeetingOptions meeting_from_json(const nlohmann::json& j) {
  MeetingOptions o;
  o.speakers = j.value("speakers", o.speakers);
  o.devices = j.value("devices", o.devices);
  o.duration_s = j.value("duration_s", o.duration_s);
  o.target_overlap = j.value("overlap", o.target_overlap);
  o.seed = j.value("seed", o.seed);
  o.table_radius_m = j.value("table_radius_m", o.table_radius_m);
  o.device_radius_m = j.value("device_radius_m", o.device_radius_m);
  o.max_offset_s = j.value("max_offset_s", o.max_offset_s);
  o.drift_ppm = j.value("drift_ppm", o.drift_ppm);
  o.noise_db = j.value("noise_db", o.noise_db);
  o.min_utterance_s = j.value("min_utterance_s", o.min_utterance_s);
  o.max_utterance_s = j.value("max_utterance_s", o.max_utterance_s);
  o.words_per_second = j.value("words_per_second", o.words_per_second);
  o.place_near_speakers = j.value("place_near_speakers", o.place_near_speakers);
  o.pause_probability = j.value("pause_probability", o.pause_probability);
  o.min_pause_s = j.value("min_pause_s", o.min_pause_s);
  o.max_pause_s = j.value("max_pause_s", o.max_pause_s);
  return o;
}

}  // namespace

SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    SceneSpec s;
    if (j.contains("meeting")) s = make_meeting_scene(meeting_from_json(j["meeting"]));
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.noise_db = j.value("noise_db", s.noise_db);
    s.seed = j.value("seed", s.seed);
    if (j.contains("quiet_band_hz")) {
      s.quiet_low_hz = j["quiet_band_hz"].at(0).get<double>();
      s.quiet_high_hz = j["quiet_band_hz"].at(1).get<double>();
    }
    if (j.contains("reverb")) {
      const auto& r = j["reverb"];
      s.reverb.enabled = r.value("enabled", true);
      s.reverb.t60_s = r.value("t60_s", s.reverb.t60_s);
      s.reverb.direct_to_reverb_db = r.value("drr_db", s.reverb.direct_to_reverb_db);
    }
    if (j.contains("speakers")) {
      s.speakers.clear();
      for (const auto& sp : j["speakers"]) {
        SpeakerSpec k;
        k.position = point_from(sp.at("position"));
        k.band_low_hz = sp.at("band_hz").at(0).get<double>();
        k.band_high_hz = sp.at("band_hz").at(1).get<double>();
        k.level_db = sp.value("level_db", k.level_db);
        s.speakers.push_back(k);
      }
    }
    if (j.contains("devices")) {
      s.devices.clear();
      for (const auto& d : j["devices"]) {
        DeviceSpec dev;
        dev.id = d.value("id", "dev" + std::to_string(s.devices.size()));
        dev.position = point_from(d.at("position"));
        dev.offset_s = d.value("offset_s", 0.0);
        dev.drift_ppm = d.value("drift_ppm", 0.0);
        s.devices.push_back(dev);
      }
    }
    if (j.contains("utterances")) {
      s.utterances.clear();
      for (const auto& u : j["utterances"]) {
        PlannedUtterance p;
        p.speaker = u.at("speaker").get<std::size_t>();
        p.start_s = u.at("start_s").get<double>();
        p.duration_s = u.at("duration_s").get<double>();
        p.text = u.value("text", "");
        p.source_wav = u.value("source_wav", "");
        s.utterances.push_back(p);
      }
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed scene: ") + e.what());
  }
}

nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json speakers = nlohmann::json::array(), devices = nlohmann::json::array(),
                 utts = nlohmann::json::array();
  for (const auto& k : s.speakers)
    speakers.push_back({{"position", {k.position.x, k.position.y}},
                        {"band_hz", {k.band_low_hz, k.band_high_hz}},
                        {"level_db", k.level_db}});
  for (const auto& d : s.devices)
    devices.push_back({{"id", d.id},
                       {"position", {d.position.x, d.position.y}},
                       {"offset_s", d.offset_s},
                       {"drift_ppm", d.drift_ppm}});
  for (const auto& u : s.utterances) {
    nlohmann::json item{{"speaker", u.speaker}, {"start_s", u.start_s}, {"duration_s", u.duration_s}, {"text", u.text}};
    if (!u.source_wav.empty()) item["source_wav"] = u.source_wav;
    utts.push_back(std::move(item));
  }
  nlohmann::json j{{"sample_rate", s.sample_rate},
                   {"duration_s", s.duration_s},
                   {"seed", s.seed},
                   {"quiet_band_hz", {s.quiet_low_hz, s.quiet_high_hz}},
                   {"speakers", std::move(speakers)},
                   {"devices", std::move(devices)},
                   {"utterances", std::move(utts)}};
  j["noise_db"] = std::isfinite(s.noise_db) ? nlohmann::json(s.noise_db) : nlohmann::json(-1000.0);
  if (s.reverb.enabled)
    j["reverb"] = {{"enabled", true}, {"t60_s", s.reverb.t60_s}, {"drr_db", s.reverb.direct_to_reverb_db}};
  return j;
}

SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file: " + path.string());
  try {
    if (path.extension() == ".json") return scene_from_json(nlohmann::json::parse(in));
    const auto table = toml::parse(in, path.string());
    std::ostringstream os;
    os << toml::json_formatter{table};
    return scene_from_json(nlohmann::json::parse(os.str()));
  } catch (const toml::parse_error& e) {
    throw IoError("cannot parse scene " + path.string() + ": " + std::string(e.description()));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("cannot parse scene " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

std::string syllable_word(std::size_t n) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  constexpr std::size_t syllables = consonants.size() * vowels.size();
  std::string w;
  for (int i = 0; i < 3; ++i) {
    const auto s = n % syllables;
    n /= syllables;
    w += consonants[s / vowels.size()];
    w += vowels[s % vowels.size()];
  }
  return w;
}

struct TurnDraws {
  std::vector<std::size_t> speaker;
  std::vector<double> duration;
  std::vector<double> overlap;
  std::vector<double> pause;
};

std::vector<PlannedUtterance> plan_turns(const TurnDraws& d, const MeetingOptions& o, double scale) {
  std::vector<PlannedUtterance> out;
  // every device is recording by then
  double start = std::abs(o.max_offset_s) + 0.5;
  for (std::size_t i = 0; i < d.speaker.size(); ++i) {
    if (start + d.duration[i] > o.duration_s - 0.5) break;
    out.push_back({d.speaker[i], start, d.duration[i], {}, {}});
    const double shorter = std::min(d.duration[i], d.duration[(i + 1) % d.duration.size()]);
    const double next = d.pause[i] > 0.0 ? start + d.duration[i] + d.pause[i]
                                         : start + d.duration[i] - scale * d.overlap[i] * shorter;
    // keep the same speaker from overlapping with itself
    double floor_start = start + 0.05;
    for (auto it = out.rbegin(); it != out.rend(); ++it)
      if (i + 1 < d.speaker.size() && it->speaker == d.speaker[i + 1])
        floor_start = std::max(floor_start, it->start_s + it->duration_s + 0.1);
    start = std::max(next, floor_start);
  }
  return out;
}

double plan_overlap(const std::vector<PlannedUtterance>& plan) {
  std::vector<GroundTruthUtterance> gt;
  for (const auto& u : plan) gt.push_back({u.speaker, u.start_s, u.start_s + u.duration_s, {}});
  return overlap_ratio(gt);
}

}  // namespace

SceneSpec make_meeting_scene(const MeetingOptions& o) {
  if (o.speakers == 0 || o.devices == 0) throw InvalidInput("meeting needs speakers and devices");
  if (!(o.min_utterance_s > 0 && o.max_utterance_s >= o.min_utterance_s))
    throw InvalidInput("invalid utterance duration range");
  std::mt19937_64 rng(mix(o.seed, 0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneSpec s;
  s.duration_s = o.duration_s;
  s.seed = o.seed;
  s.noise_db = o.noise_db;
  const std::size_t K = o.speakers;
  const double lo = 250.0, hi = 6000.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double e0 = lo * std::pow(hi / lo, static_cast<double>(k) / K);
    const double e1 = lo * std::pow(hi / lo, static_cast<double>(k + 1) / K);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / K + 0.3 * (unit(rng) - 0.5);
    SpeakerSpec spk;
    spk.position = {o.table_radius_m * std::cos(angle), o.table_radius_m * std::sin(angle)};
    spk.band_low_hz = e0 * 1.06;
    spk.band_high_hz = e1 / 1.06;
    s.speakers.push_back(spk);
  }
  for (std::size_t m = 0; m < o.devices; ++m) {
    DeviceSpec dev;
    dev.id = "dev" + std::to_string(m);
    if (o.place_near_speakers && m < K) {
      const auto& p = s.speakers[m].position;
      const double shrink = std::max(0.0, 1.0 - 0.3 / o.table_radius_m);
      dev.position = {p.x * shrink, p.y * shrink};
    } else {
      const double r = o.device_radius_m * std::sqrt(unit(rng));
      const double a = 2.0 * std::numbers::pi * unit(rng);
      dev.position = {r * std::cos(a), r * std::sin(a)};
    }
    if (m > 0) {
      dev.offset_s = o.max_offset_s * (2.0 * unit(rng) - 1.0);
      dev.drift_ppm = o.drift_ppm * (2.0 * unit(rng) - 1.0);
    }
    s.devices.push_back(dev);
  }

  TurnDraws draws;
  const auto max_turns = static_cast<std::size_t>(4.0 * o.duration_s / o.min_utterance_s) + 4;
  std::size_t prev = K, prev2 = K;
  for (std::size_t i = 0; i < max_turns; ++i) {
    std::size_t k;
    do {
      k = static_cast<std::size_t>(unit(rng) * static_cast<double>(K)) % K;
    } while (K > 1 && (k == prev || (K > 2 && k == prev2)));
    prev2 = prev;
    prev = k;
    draws.speaker.push_back(k);
    draws.duration.push_back(o.min_utterance_s + (o.max_utterance_s - o.min_utterance_s) * unit(rng));
    draws.overlap.push_back(0.2 + 0.8 * unit(rng));
    const bool pause = unit(rng) < o.pause_probability;
    const double len = o.min_pause_s + (o.max_pause_s - o.min_pause_s) * unit(rng);
    draws.pause.push_back(pause ? len : 0.0);
  }

  // bisect the overlap scale, keep the closest plan seen
  double a = -0.5, b = 1.0;
  auto best = plan_turns(draws, o, 0.0);
  double best_err = std::abs(plan_overlap(best) - o.target_overlap);
  for (int it = 0; it < 50 && best_err > 0.005; ++it) {
    const double mid = 0.5 * (a + b);
    auto plan = plan_turns(draws, o, mid);
    const double r = plan_overlap(plan);
    if (std::abs(r - o.target_overlap) < best_err) {
      best_err = std::abs(r - o.target_overlap);
      best = plan;
    }
    (r < o.target_overlap ? a : b) = mid;
  }

  std::size_t word = static_cast<std::size_t>(mix(o.seed, 99) % 100000);
  for (auto& u : best) {
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(u.duration_s * o.words_per_second)));
    for (std::size_t w = 0; w < n; ++w) {
      if (w) u.text += ' ';
      u.text += syllable_word(word++);
    }
  }
  s.utterances = std::move(best);
  s.validate();
  return s;
}

MockManifest mock_manifest(const SceneSpec& scene, const GroundTruth& truth) {
  MockManifest m;
  m.sample_rate = scene.sample_rate;
  for (std::size_t k = 0; k < scene.speakers.size(); ++k)
    m.speakers.push_back({k, scene.speakers[k].band_low_hz, scene.speakers[k].band_high_hz});
  m.quiet_low_hz = scene.quiet_low_hz;
  m.quiet_high_hz = scene.quiet_high_hz;
  for (const auto& u : truth.utterances)
    if (!u.text.empty()) m.utterances.push_back({u.speaker, u.start_s, u.end_s, u.text});
  return m;
}

void write_scene(const std::filesystem::path& dir, const SceneSpec& scene, const RenderedScene& rendered) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "wav");
  nlohmann::json devices = nlohmann::json::array();
  for (const auto& rec : rendered.recordings) {
    const auto rel = fs::path("wav") / (rec.device_id + ".wav");
    double peak = 0.0;
    for (const double v : rec.samples) peak = std::max(peak, std::abs(v));
    if (peak >= 1.0) spdlog::warn("scene: {} peaks at {:.2f} and will clip; lower the speaker levels", rec.device_id, peak);
    write_wav(dir / rel, rec.samples, rec.sample_rate);
    devices.push_back({{"id", rec.device_id}, {"wav", rel.string()}});
  }
  const auto dump = [&](const fs::path& name, const nlohmann::json& j) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << j.dump(2) << '\n';
  };
  dump("manifest.json", {{"session_id", dir.filename().string()}, {"devices", std::move(devices)}});
  dump("scene.json", to_json(scene));
  write_transcript(dir / "truth.json", rendered.truth.transcript(dir.filename().string()));
  write_rttm(dir / "truth.rttm", dir.filename().string(), rendered.truth.rttm());
  dump("mock_asr.json", mock_manifest(scene, rendered.truth).to_json());
}

}  // namespace asyncmeet
