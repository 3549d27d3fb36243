#include "asyncmeet/asr.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <regex>
#include <thread>

// Eigen must precede httplib: <resolv.h> defines a _res macro.
#include "asyncmeet/audio.hpp"
#include "asyncmeet/fft.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace asyncmeet {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::filesystem::path temp_wav_path() {
  static std::atomic<std::uint64_t> counter{0};
  return std::filesystem::temp_directory_path() /
         ("asyncmeet-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".wav");
}

struct TempFile {
  std::filesystem::path path;
  ~TempFile() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
};

}  // namespace

// ---------------------------------------------------------------------------

SubprocessBackend::SubprocessBackend(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.find("{wav}") == std::string::npos)
    throw InvalidInput("ASR command template must contain {wav}: " + command_);
}

std::string SubprocessBackend::recognize(const UtteranceAudio& audio) const {
  TempFile wav{temp_wav_path()};
  write_wav(wav.path, audio.samples, audio.sample_rate);
  std::string cmd = command_;
  const auto quoted = shell_quote(wav.path.string());
  for (auto pos = cmd.find("{wav}"); pos != std::string::npos; pos = cmd.find("{wav}", pos + quoted.size()))
    cmd.replace(pos, 5, quoted);

  int fds[2];
  if (::pipe(fds) != 0) throw AsrFailure(std::string("pipe: ") + std::strerror(errno));
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    throw AsrFailure(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[0]);
    ::close(fds[1]);
    ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);

  std::string output;
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  bool timed_out = false;
  char buf[4096];
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      timed_out = true;
      break;
    }
    pollfd pfd{fds[0], POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    const auto n = ::read(fds[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  ::close(fds[0]);
  if (timed_out) ::kill(pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (timed_out) throw AsrFailure("ASR command timed out after " + std::to_string(timeout_.count()) + " ms");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw AsrFailure("ASR command failed with status " +
                     std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  return output;
}

// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw InvalidInput("malformed ASR URL: " + url);
  base_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : "/";
}

std::string HttpBackend::recognize(const UtteranceAudio& audio) const {
  const auto bytes = encode_wav(audio.samples, audio.sample_rate);
  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  const auto res =
      client.Post(path_, reinterpret_cast<const char*>(bytes.data()), bytes.size(), "audio/wav");
  if (!res) throw AsrFailure("ASR request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw AsrFailure("ASR endpoint returned HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw AsrFailure(std::string("ASR endpoint returned malformed JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

MockManifest MockManifest::from_json(const nlohmann::json& j) {
  try {
    MockManifest m;
    m.sample_rate = j.value("sample_rate", 16000);
    for (const auto& s : j.at("speakers")) {
      const auto band = s.at("band_hz");
      m.speakers.push_back({s.at("id").get<std::size_t>(), band.at(0).get<double>(), band.at(1).get<double>()});
    }
    if (j.contains("quiet_band_hz")) {
      m.quiet_low_hz = j["quiet_band_hz"].at(0).get<double>();
      m.quiet_high_hz = j["quiet_band_hz"].at(1).get<double>();
    }
    for (const auto& u : j.at("utterances"))
      m.utterances.push_back({u.at("speaker").get<std::size_t>(), u.at("start_s").get<double>(),
                              u.at("end_s").get<double>(), u.at("text").get<std::string>()});
    m.min_sir_db = j.value("min_sir_db", m.min_sir_db);
    m.min_snr_db = j.value("min_snr_db", m.min_snr_db);
    m.corruption = j.value("corruption", m.corruption);
    m.dominance_floor_db = j.value("dominance_floor_db", m.dominance_floor_db);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed mock ASR manifest: ") + e.what());
  }
}

nlohmann::json MockManifest::to_json() const {
  nlohmann::json speakers_j = nlohmann::json::array(), utts = nlohmann::json::array();
  for (const auto& s : speakers) speakers_j.push_back({{"id", s.id}, {"band_hz", {s.band_low_hz, s.band_high_hz}}});
  for (const auto& u : utterances)
    utts.push_back({{"speaker", u.speaker}, {"start_s", u.start_s}, {"end_s", u.end_s}, {"text", u.text}});
  return {{"sample_rate", sample_rate},
          {"speakers", std::move(speakers_j)},
          {"quiet_band_hz", {quiet_low_hz, quiet_high_hz}},
          {"utterances", std::move(utts)},
          {"min_sir_db", min_sir_db},
          {"min_snr_db", min_snr_db},
          {"corruption", corruption},
          {"dominance_floor_db", dominance_floor_db}};
}

MockManifest MockManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mock ASR manifest: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("cannot parse mock ASR manifest " + path.string() + ": " + e.what());
  }
}

MockBackend::MockBackend(MockManifest manifest) : manifest_(std::move(manifest)) {
  for (const auto& u : manifest_.utterances) {
    if (!(u.end_s > u.start_s)) throw InvalidInput("mock utterance with non-positive duration");
    const auto it = std::find_if(manifest_.speakers.begin(), manifest_.speakers.end(),
                                 [&](const MockSpeaker& s) { return s.id == u.speaker; });
    if (it == manifest_.speakers.end())
      throw InvalidInput("mock utterance references unknown speaker " + std::to_string(u.speaker));
  }
}

namespace {

constexpr std::size_t kMockFft = 512;
constexpr std::size_t kMockHop = 256;

// Averaged Hann periodogram of x.
std::vector<double> mean_periodogram(std::span<const double> x) {
  RealFft fft(kMockFft);
  const auto window = hann_window(kMockFft);
  std::vector<double> acc(fft.bins(), 0.0), frame(kMockFft);
  std::vector<std::complex<double>> spec(fft.bins());
  std::size_t frames = 0;
  for (std::size_t start = 0; frames == 0 || start + kMockFft <= x.size(); start += kMockHop) {
    for (std::size_t i = 0; i < kMockFft; ++i) frame[i] = start + i < x.size() ? x[start + i] * window[i] : 0.0;
    fft.forward(frame, spec);
    for (std::size_t f = 0; f < spec.size(); ++f) acc[f] += std::norm(spec[f]);
    ++frames;
  }
  for (auto& v : acc) v /= static_cast<double>(frames);
  return acc;
}

double band_density(const std::vector<double>& psd, int sample_rate, double lo, double hi) {
  const double hz_per_bin = static_cast<double>(sample_rate) / static_cast<double>(kMockFft);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < psd.size(); ++f) {
    const double hz = static_cast<double>(f) * hz_per_bin;
    if (hz >= lo && hz <= hi) {
      sum += psd[f];
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string garble(const std::string& token) {
  std::string out = token;
  for (auto& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>('a' + (c - 'a' + 13) % 26);
    else if (c >= 'A' && c <= 'Z') c = static_cast<char>('A' + (c - 'A' + 13) % 26);
    else if (c >= '0' && c <= '9') c = static_cast<char>('0' + (c - '0' + 5) % 10);
  }
  return out;
}

}  // namespace

std::string MockBackend::recognize(const UtteranceAudio& audio) const {
  if (audio.sample_rate != manifest_.sample_rate)
    throw AsrFailure("mock ASR expects " + std::to_string(manifest_.sample_rate) + " Hz audio");
  const double fs = audio.sample_rate;
  const double audio_end = audio.start_s + static_cast<double>(audio.samples.size()) / fs;

  struct Emitted {
    double center;
    std::string token;
  };
  std::vector<Emitted> emitted;
  double dominant = 0.0;
  if (manifest_.dominance_floor_db > 0.0 && !audio.samples.empty()) {
    const auto clip = mean_periodogram(audio.samples);
    for (const auto& s : manifest_.speakers)
      dominant = std::max(dominant, band_density(clip, audio.sample_rate, s.band_low_hz, s.band_high_hz));
    dominant *= std::pow(10.0, -manifest_.dominance_floor_db / 10.0);
  }
  for (const auto& u : manifest_.utterances) {
    if (u.end_s <= audio.start_s || u.start_s >= audio_end) continue;
    const auto tokens = tokenize(u.text, TokenMode::words);
    const double dur = (u.end_s - u.start_s) / static_cast<double>(tokens.size());
    const auto& target = *std::find_if(manifest_.speakers.begin(), manifest_.speakers.end(),
                                       [&](const MockSpeaker& s) { return s.id == u.speaker; });
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const double t0 = u.start_s + dur * static_cast<double>(i);
      const double center = t0 + 0.5 * dur;
      if (center < audio.start_s || center >= audio_end) continue;
      const auto a = static_cast<std::size_t>(std::max(0.0, std::floor((t0 - audio.start_s) * fs)));
      const auto b = std::min(audio.samples.size(),
                              static_cast<std::size_t>(std::max(0.0, std::ceil((t0 + dur - audio.start_s) * fs))));
      if (b <= a) continue;
      const std::span<const double> slice(audio.samples.data() + a, b - a);
      const auto psd = mean_periodogram(slice);
      const double own = band_density(psd, audio.sample_rate, target.band_low_hz, target.band_high_hz);
      const double quiet = band_density(psd, audio.sample_rate, manifest_.quiet_low_hz, manifest_.quiet_high_hz);
      double other = 0.0;
      for (const auto& s : manifest_.speakers)
        if (s.id != target.id) other = std::max(other, band_density(psd, audio.sample_rate, s.band_low_hz, s.band_high_hz));
      constexpr double tiny = 1e-30;
      const double snr_db = 10.0 * std::log10((own + tiny) / (quiet + tiny));
      const double sir_db = other > 0.0 ? 10.0 * std::log10((own + tiny) / other) : snr_db;
      if (snr_db < manifest_.min_snr_db || sir_db < manifest_.min_sir_db || own < dominant) continue;
      std::string tok = tokens[i];
      if (manifest_.corruption) {
        const double p = 1.0 / (1.0 + std::pow(10.0, std::min(sir_db, snr_db) / 10.0));
        const auto h = fnv1a(slice.data(), slice.size_bytes(), fnv1a(&i, sizeof i));
        const double u01 = static_cast<double>(h >> 11) * 0x1.0p-53;
        if (u01 < p) tok = garble(tok);
      }
      emitted.push_back({center, std::move(tok)});
    }
  }
  std::stable_sort(emitted.begin(), emitted.end(),
                   [](const Emitted& x, const Emitted& y) { return x.center < y.center; });
  std::string text;
  for (const auto& e : emitted) {
    if (!text.empty()) text += ' ';
    text += e.token;
  }
  return text;
}

// ---------------------------------------------------------------------------

AsrOutcome transcribe(const AsrBackend& backend, const UtteranceAudio& audio, TokenMode mode) {
  AsrOutcome out;
  out.id = audio.id;
  try {
    auto text = backend.recognize(audio);
    auto result = make_result(std::move(text), mode, audio.speaker, audio.start_s, audio.end_s);
    while (!result.text.empty() && std::isspace(static_cast<unsigned char>(result.text.back()))) result.text.pop_back();
    if (!result.tokens.empty()) out.result = std::move(result);
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    spdlog::warn("ASR failed for utterance {}: {}", audio.id, e.what());
  }
  return out;
}

std::vector<AsrOutcome> transcribe_batch(const AsrBackend& backend, std::span<const UtteranceAudio> batch,
                                         TokenMode mode, std::size_t parallelism) {
  std::vector<AsrOutcome> out(batch.size());
  const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(batch.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = transcribe(backend, batch[i], mode);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < batch.size(); i = next++) out[i] = transcribe(backend, batch[i], mode);
    });
  pool.clear();
  return out;
}

}  // namespace asyncmeet
