#include "asyncmeet/asr.hpp"
#include "asyncmeet/error.hpp"
#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

using namespace asyncmeet;

namespace {

// Sum of sinusoids spread over [lo, hi].
std::vector<double> band_tone(std::size_t n, double lo, double hi, double amp, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  for (int c = 0; c < 30; ++c) {
    const double f = lo + (hi - lo) * (c + 0.5) / 30.0;
    const double ph = 2.0 * std::numbers::pi * u(rng);
    for (std::size_t i = 0; i < n; ++i) x[i] += amp * std::sin(2.0 * std::numbers::pi * f * i / 16000.0 + ph);
  }
  return x;
}

MockManifest two_speaker_manifest() {
  MockManifest m;
  m.speakers = {{0, 400, 1200}, {1, 2500, 4000}};
  m.utterances = {{0, 0.0, 2.0, "alpha beta gamma delta"}, {1, 1.0, 3.0, "one two"}};
  return m;
}

UtteranceAudio clip(std::vector<double> x, double start, std::size_t speaker = 0, std::string id = "u") {
  UtteranceAudio a;
  a.id = std::move(id);
  a.start_s = start;
  a.end_s = start + static_cast<double>(x.size()) / 16000.0;
  a.samples = std::move(x);
  a.speaker = speaker;
  return a;
}

class ScriptedBackend : public AsrBackend {
 public:
  std::string recognize(const UtteranceAudio& audio) const override {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    if (audio.id == "bad") throw AsrFailure("scripted failure");
    if (audio.id == "quiet") return "   ";
    return "text of " + audio.id;
  }
  mutable std::atomic<int> calls{0};
};

}  // namespace

TEST_SUITE("asr") {
  TEST_CASE("mock emits audible planted tokens") {
    auto m = two_speaker_manifest();
    m.corruption = false;
    const MockBackend mock(m);
    // Only speaker 0 is present: its four tokens come out, speaker 1's do not.
    const auto x = band_tone(32000, 400, 1200, 0.05, 1);
    CHECK(mock.recognize(clip(x, 0.0)) == "alpha beta gamma delta");
    // Second half only: tokens whose slice centre lies in [1, 2).
    const std::vector<double> tail(x.begin() + 16000, x.end());
    CHECK(mock.recognize(clip(tail, 1.0)) == "gamma delta");
  }

  TEST_CASE("mock orders tokens of several speakers by time") {
    auto m = two_speaker_manifest();
    m.corruption = false;
    m.min_sir_db = -100.0;
    const MockBackend mock(m);
    auto x = band_tone(48000, 400, 1200, 0.05, 2);
    const auto y = band_tone(48000, 2500, 4000, 0.05, 3);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    // Centres: alpha .25 beta .75 one 1.5 gamma 1.25 delta 1.75 two 2.5
    CHECK(mock.recognize(clip(x, 0.0)) == "alpha beta gamma one delta two");
  }

  TEST_CASE("interference and silence drop tokens") {
    auto m = two_speaker_manifest();
    m.corruption = false;
    const MockBackend mock(m);
    auto x = band_tone(32000, 400, 1200, 0.01, 4);
    const auto loud = band_tone(32000, 2500, 4000, 0.1, 5);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += loud[i];
    m.min_sir_db = 0.0;
    // Speaker 0's band is 20 dB below speaker 1's: below min SIR.
    const auto text = mock.recognize(clip(x, 0.0));
    CHECK(text.find("alpha") == std::string::npos);
    CHECK(text.find("one") != std::string::npos);
    CHECK(mock.recognize(clip(std::vector<double>(32000, 0.0), 0.0)).empty());
    const auto out = transcribe(mock, clip(std::vector<double>(32000, 0.0), 0.0));
    CHECK_FALSE(out.failed);
    CHECK_FALSE(out.result.has_value());
  }

  TEST_CASE("corruption is deterministic and grows with interference") {
    MockManifest m;
    m.speakers = {{0, 400, 1200}, {1, 2500, 4000}};
    std::string text;
    for (int i = 0; i < 200; ++i) text += (i ? " w" : "w") + std::to_string(i);
    m.utterances = {{0, 0.0, 20.0, text}};
    m.min_sir_db = -100.0;
    const MockBackend mock(m);
    const auto count_clean = [&](double interferer) {
      auto x = band_tone(320000, 400, 1200, 0.05, 6);
      const auto y = band_tone(320000, 2500, 4000, 0.05 * interferer, 7);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
      const auto a = mock.recognize(clip(x, 0.0));
      CHECK(mock.recognize(clip(x, 0.0)) == a);
      const auto got = tokenize(a, TokenMode::words), want = tokenize(text, TokenMode::words);
      REQUIRE(got.size() == want.size());
      int same = 0;
      for (std::size_t i = 0; i < got.size(); ++i) same += got[i] == want[i];
      return same;
    };
    const int clean = count_clean(0.1);  // ~20 dB SIR
    const int noisy = count_clean(1.0);  // ~0 dB SIR
    CHECK(clean >= 190);
    CHECK(noisy < 150);
  }

  TEST_CASE("manifest json round trip") {
    const auto m = two_speaker_manifest();
    const auto back = MockManifest::from_json(m.to_json());
    CHECK(back.speakers.size() == 2);
    CHECK(back.speakers[1].band_high_hz == 4000.0);
    CHECK(back.utterances[1].text == "one two");
    CHECK(back.min_snr_db == m.min_snr_db);
    CHECK(back.corruption);
  }

  TEST_CASE("subprocess backend") {
    const auto audio = clip(test::gaussian(1600, 1), 0.0);
    CHECK(SubprocessBackend("test -s {wav} && echo recognized words").recognize(audio) == "recognized words\n");
    CHECK_THROWS_AS(SubprocessBackend(": {wav}; exit 3").recognize(audio), AsrFailure);
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(SubprocessBackend(": {wav}; sleep 20", std::chrono::milliseconds(300)).recognize(audio), AsrFailure);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10));
    const auto out = transcribe(SubprocessBackend(": {wav}; echo '  padded  '"), audio);
    REQUIRE(out.result.has_value());
    CHECK(out.result->text == "  padded");
    CHECK(out.result->tokens == std::vector<std::string>{"padded"});
  }

  TEST_CASE("http backend") {
    httplib::Server server;
    std::atomic<std::size_t> bytes{0};
    server.Post("/asr", [&](const httplib::Request& req, httplib::Response& res) {
      bytes = req.body.size();
      res.set_content(R"({"text": "from the server"})", "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const auto audio = clip(test::gaussian(1600, 2), 0.0);
    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    CHECK(HttpBackend(base + "/asr").recognize(audio) == "from the server");
    CHECK(bytes == 44 + 2 * 1600);
    CHECK_THROWS_AS(HttpBackend(base + "/broken").recognize(audio), AsrFailure);
    server.stop();
    thread.join();
    CHECK_THROWS_AS(HttpBackend(base + "/asr", std::chrono::milliseconds(500)).recognize(audio), AsrFailure);
  }

  TEST_CASE("batch keeps order and isolates failures") {
    ScriptedBackend backend;
    std::vector<UtteranceAudio> batch;
    for (int i = 0; i < 12; ++i) batch.push_back(clip({0.0}, i, 0, "u" + std::to_string(i)));
    batch[3].id = "bad";
    batch[7].id = "quiet";
    for (std::size_t par : {1u, 4u}) {
      backend.calls = 0;
      const auto out = transcribe_batch(backend, batch, TokenMode::words, par);
      REQUIRE(out.size() == batch.size());
      CHECK(backend.calls == 12);
      for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].id == batch[i].id);
        if (i == 3) {
          CHECK(out[i].failed);
          CHECK(out[i].error.find("scripted") != std::string::npos);
        } else if (i == 7) {
          CHECK_FALSE(out[i].failed);
          CHECK_FALSE(out[i].result.has_value());
        } else {
          REQUIRE(out[i].result.has_value());
          CHECK(out[i].result->text == "text of " + batch[i].id);
          CHECK(out[i].result->start_s == static_cast<double>(i));
        }
      }
    }
  }
}
