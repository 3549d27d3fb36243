#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "asyncmeet/diarize.hpp"
#include "asyncmeet/error.hpp"
#include "support.hpp"

using namespace asyncmeet;

namespace {

// Textbook average linkage: recompute every cluster-pair mean distance from
// scratch at each merge.
std::vector<int> naive_average_linkage(const Eigen::MatrixXd& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  const auto cosd = [&](std::size_t a, std::size_t b) {
    const auto ra = x.row(static_cast<Eigen::Index>(a)), rb = x.row(static_cast<Eigen::Index>(b));
    return 1.0 - ra.dot(rb) / (ra.norm() * rb.norm());
  };
  while (clusters.size() > k) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double s = 0.0;
        for (auto i : clusters[a])
          for (auto j : clusters[b]) s += cosd(i, j);
        s /= static_cast<double>(clusters[a].size() * clusters[b].size());
        if (s < best) {
          best = s;
          ba = a;
          bb = b;
        }
      }
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
  }
  std::vector<int> owner(n);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (auto i : clusters[c]) owner[i] = static_cast<int>(c);
  // Renumber by smallest member.
  std::map<int, int> renumber;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = renumber.try_emplace(owner[i], static_cast<int>(renumber.size()));
    labels[i] = it->second;
  }
  return labels;
}

// Closing by a width-(2r+1) element on the zero-extended line.
std::vector<std::uint8_t> morphological_closing(const std::vector<std::uint8_t>& row, int r) {
  const int n = static_cast<int>(row.size());
  const auto at = [&](int i) { return i >= 0 && i < n ? row[static_cast<std::size_t>(i)] : std::uint8_t{0}; };
  std::map<int, std::uint8_t> dil;
  for (int i = -r; i < n + r; ++i) {
    std::uint8_t v = 0;
    for (int j = i - r; j <= i + r; ++j) v |= at(j);
    dil[i] = v;
  }
  std::vector<std::uint8_t> out(row.size());
  for (int i = 0; i < n; ++i) {
    std::uint8_t v = 1;
    for (int j = i - r; j <= i + r; ++j) v &= dil.count(j) ? dil[j] : std::uint8_t{0};
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

std::vector<double> band_noise(std::size_t n, double lo, double hi, std::uint64_t seed) {
  // Sum of random-phase sinusoids inside [lo, hi].
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  for (int c = 0; c < 40; ++c) {
    const double f = lo + (hi - lo) * u(rng);
    const double ph = 2.0 * M_PI * u(rng);
    for (std::size_t i = 0; i < n; ++i) x[i] += 0.02 * std::sin(2.0 * M_PI * f * i / 16000.0 + ph);
  }
  return x;
}

}  // namespace

TEST_SUITE("diarize") {
  TEST_CASE("segment grid") {
    const auto g = segment(16000 * 10, 16000);
    CHECK(g.window == 24000);
    CHECK(g.shift == 12000);
    CHECK(g.slots == 12);  // (160000 - 24000) / 12000 + 1
    CHECK(g.end(11) <= 160000);
    CHECK_THROWS_AS(segment(1000, 16000), InvalidInput);
    std::vector<std::vector<double>> ragged{std::vector<double>(30000), std::vector<double>(29000)};
    CHECK_THROWS_AS(segment(ragged, 16000), InvalidInput);
  }

  TEST_CASE("vad threshold interpolates the percentile") {
    std::vector<double> p;
    for (int i = 0; i <= 10; ++i) p.push_back(std::pow(10.0, i / 10.0));  // 0..10 dB
    CHECK(vad_threshold_db(p, 10.0, 6.0) == doctest::Approx(7.0));
    CHECK(vad_threshold_db(p, 15.0, 0.0) == doctest::Approx(1.5));
    std::vector<double> loud(100, 0.1), quiet(100, 0.001);
    CHECK(vad(loud, power_db(0.001) + 6.0));
    CHECK_FALSE(vad(quiet, power_db(0.001) + 6.0));
    CHECK_FALSE(vad(std::vector<double>(10, 0.0), -200.0));
  }

  TEST_CASE("normalized embeddings are centred unit vectors") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    std::vector<std::optional<Eigen::VectorXd>> e(12);
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (i % 4 == 3) continue;
      Eigen::VectorXd v(6);
      for (auto& c : v) c = g(rng) + 3.0;
      e[i] = v;
    }
    const auto out = normalize_embeddings(e);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(6);
    for (std::size_t i = 0; i < e.size(); ++i) {
      CHECK(out[i].has_value() == e[i].has_value());
      if (!e[i]) continue;
      CHECK(out[i]->norm() == doctest::Approx(1.0));
      mean += *e[i];
    }
    mean /= 9.0;
    // Direction of each output matches its centred input.
    for (std::size_t i = 0; i < e.size(); ++i)
      if (e[i]) CHECK(out[i]->dot((*e[i] - mean).normalized()) == doctest::Approx(1.0));

    std::vector<std::optional<Eigen::VectorXd>> same(3, Eigen::VectorXd::Ones(4));
    for (const auto& v : normalize_embeddings(same)) CHECK_FALSE(v.has_value());
    std::vector<std::optional<Eigen::VectorXd>> empty(3);
    CHECK_THROWS_AS(normalize_embeddings(empty), InvalidInput);
  }

  TEST_CASE("feature vector layout") {
    Eigen::VectorXd c(2), p(3);
    c << 0.6, 0.8;
    p << 3.0, 0.0, 4.0;
    const auto v = build_features(c, p, 2.0);
    REQUIRE(v.size() == 5);
    CHECK(v(0) == 0.6);
    CHECK(v(2) == doctest::Approx(1.2));
    CHECK(v(4) == doctest::Approx(1.6));
    CHECK(build_features(c, p, 0.0).tail(3).norm() == 0.0);
    CHECK_THROWS_AS(build_features(c, Eigen::VectorXd::Zero(3), 1.0), InvalidInput);
    CHECK_THROWS_AS(build_features(c, p, -1.0), InvalidInput);
  }

  TEST_CASE("clustering matches naive average linkage") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 30; ++trial) {
      const Eigen::Index n = 5 + trial % 20;
      const Eigen::Index d = 2 + trial % 5;
      Eigen::MatrixXd x(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = g(rng) + (i % 3 == 0 ? 2.0 : 0.0) * (j == 0);
      const std::size_t k = 1 + static_cast<std::size_t>(trial % 4);
      CHECK(cluster(x, k) == naive_average_linkage(x, k));
    }
  }

  TEST_CASE("clustering separates obvious groups") {
    Eigen::MatrixXd x(6, 2);
    x << 1, 0.01, 1, -0.02, 0.99, 0, 0, 1, 0.01, 1, -0.02, 0.98;
    const auto labels = cluster(x, 2);
    CHECK(labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(cluster(x, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(cluster(x, 7), InvalidInput);
    CHECK_THROWS_AS(cluster(x, 0), InvalidInput);
  }

  TEST_CASE("activity from labels") {
    SegmentGrid grid{16000, 24000, 12000, 4};
    const std::vector<std::vector<int>> labels{{0, -1, 1, -1}, {0, 0, -1, -1}};
    const auto y = build_activity(labels, grid, 2);
    CHECK(y.rows() == 3);
    CHECK(y.row(0) == std::vector<std::uint8_t>{1, 1, 0, 0});
    CHECK(y.row(1) == std::vector<std::uint8_t>{0, 0, 1, 0});
    CHECK(y.row(2) == std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(y.slot_duration_s() == doctest::Approx(0.75));
    CHECK_THROWS_AS(build_activity({{0, 2, 0, 0}}, grid, 2), InvalidInput);
  }

  TEST_CASE("closing equals morphological closing") {
    for (int r : {1, 2}) {
      for (unsigned bits = 0; bits < (1u << 11); ++bits) {
        std::vector<std::uint8_t> row(11);
        for (int i = 0; i < 11; ++i) row[static_cast<std::size_t>(i)] = (bits >> i) & 1u;
        CHECK(close_gaps(row, static_cast<std::size_t>(2 * r)) == morphological_closing(row, r));
      }
    }
  }

  TEST_CASE("closing leaves the noise row alone") {
    ActivityMatrix y(1, 5, 0.75);
    y.set_row(0, std::vector<std::uint8_t>{1, 0, 0, 1, 0});
    y.set_row(1, std::vector<std::uint8_t>{0, 1, 0, 1, 0});
    const auto c = close_gaps(y);
    CHECK(c.row(0) == std::vector<std::uint8_t>{1, 1, 1, 1, 0});
    CHECK(c.row(1) == y.row(1));
  }

  TEST_CASE("upsample maps frames to slot centres") {
    SegmentGrid grid{16000, 24000, 12000, 3};
    ActivityMatrix y(1, 3, 0.75);
    y.set_row(0, std::vector<std::uint8_t>{1, 0, 1});
    StftConfig stft;
    const auto f = upsample(y, grid, stft, 200);
    CHECK(f.slots() == 200);
    CHECK(f(0, 0) == 1);   // clamps to slot 0
    CHECK(f(0, 70) == 1);  // centre 17920 -> slot 0
    CHECK(f(0, 71) == 0);  // centre 18176 -> slot 1
    CHECK(f(0, 117) == 0);  // centre 29952 -> slot 1
    CHECK(f(0, 118) == 1);  // centre 30208 -> slot 2
    CHECK(f(0, 199) == 1);
    CHECK(f(1, 150) == 0);
  }

  TEST_CASE("utterances are maximal runs") {
    ActivityMatrix y(2, 30, 0.016);
    for (std::size_t t = 2; t < 15; ++t) y(0, t) = 1;
    for (std::size_t t = 20; t < 24; ++t) y(0, t) = 1;
    for (std::size_t t = 0; t < 30; ++t) y(1, t) = 1;
    const auto u = extract_utterances(y, 10);
    REQUIRE(u.size() == 2);
    CHECK(u[0] == Utterance{1, 0, 29});
    CHECK(u[1] == Utterance{0, 2, 14});
    CHECK(u[1].frames() == 13);
    CHECK(extract_utterances(y, 1).size() == 3);
  }

  TEST_CASE("embedding file round trip") {
    test::TempDir dir("emb");
    std::vector<double> values(2 * 3 * 4);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i);
    values[4 * 4 + 2] = std::nan("");  // mic 1, slot 1
    const auto path = (dir / "e.bin").string();
    write_embeddings(path, 2, 3, 4, values);
    FileEmbedder emb(path);
    CHECK(emb.mics() == 2);
    CHECK(emb.slots() == 3);
    CHECK(emb.dimension() == 4);
    const auto v = emb.embed({1, 2}, {});
    CHECK(v(0) == 20.0);
    CHECK(v(3) == 23.0);
    CHECK_THROWS_AS(emb.embed({1, 1}, {}), DegenerateSegment);
    CHECK_THROWS_AS(emb.embed({2, 0}, {}), InvalidInput);
    CHECK_THROWS_AS(FileEmbedder((dir / "none.bin").string()), IoError);
  }

  TEST_CASE("spectral embedding separates bands") {
    SpectralStatsEmbedder emb;
    CHECK(emb.dimension() == 48);
    const auto lo1 = emb.embed({}, band_noise(24000, 300, 700, 1));
    const auto lo2 = emb.embed({}, band_noise(24000, 300, 700, 2));
    const auto hi = emb.embed({}, band_noise(24000, 2500, 4000, 3));
    CHECK(lo1.allFinite());
    CHECK((lo1 - lo2).norm() < (lo1 - hi).norm());
    CHECK(emb.embed({}, band_noise(24000, 300, 700, 1)) == lo1);
    CHECK_THROWS_AS(emb.embed({}, std::vector<double>(24000, 0.25)), DegenerateSegment);
    CHECK_THROWS_AS(emb.embed({}, std::vector<double>(100, 0.0)), DegenerateSegment);
  }

  TEST_CASE("diarize finds two alternating talkers") {
    // Two mics, each close to one talker; talkers alternate every 3 s with
    // 2 s of silence in between.
    const std::size_t n = 16000 * 30;
    std::vector<std::vector<double>> mics(2, test::gaussian(n, 9, 1e-4));
    const auto a = band_noise(n, 300, 800, 4), b = band_noise(n, 2000, 3500, 5);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / 16000.0;
      const int turn = static_cast<int>(t / 5.0);
      if (std::fmod(t, 5.0) >= 3.0) continue;
      const auto& src = turn % 2 == 0 ? a : b;
      const double near = turn % 2 == 0 ? 1.0 : 0.2;
      mics[0][i] += near * src[i];
      mics[1][i] += (1.2 - near) * src[i];
    }
    DiarizeOptions opts;
    opts.speakers = 2;
    const auto r = diarize(mics, 16000, opts, SpectralStatsEmbedder{});
    CHECK(r.slot_activity.speakers() == 2);
    REQUIRE(r.utterances.size() >= 4);
    // Each turn's middle frame is owned by exactly one speaker, alternating.
    std::vector<int> owner;
    for (int turn = 0; turn < 6; ++turn) {
      const auto f = static_cast<std::size_t>((turn * 5.0 + 1.5) * 16000.0 / 256.0);
      const bool s0 = r.frame_activity(0, f), s1 = r.frame_activity(1, f);
      CHECK(s0 != s1);
      owner.push_back(s0 ? 0 : 1);
    }
    for (std::size_t i = 2; i < owner.size(); ++i) CHECK(owner[i] == owner[i - 2]);
    CHECK(owner[0] != owner[1]);
  }
}
