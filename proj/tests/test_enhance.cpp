#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "asyncmeet/enhance.hpp"
#include "asyncmeet/error.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace asyncmeet;
using cd = std::complex<double>;

using namespace asyncmeet::test;

TEST_SUITE("enhance") {
  TEST_CASE("observation normalization") {
    auto s = synthetic_utterance(1);
    s.spec.bin(3).col(5).setZero();
    const auto n = normalize_observations(s.spec);
    for (std::size_t f = 0; f < n.bins(); ++f)
      for (Eigen::Index t = 0; t < n.bin(f).cols(); ++t) {
        const double norm = n.bin(f).col(t).norm();
        if (f == 3 && t == 5) CHECK(norm == 0.0);
        else CHECK(norm == doctest::Approx(1.0));
      }
  }

  TEST_CASE("initial state covers active classes") {
    ActivityMatrix guide(3, 10, 0.016);
    guide(0, 2) = 1;
    guide(3, 0) = 1;
    const auto st = initial_state(5, 2, guide);
    CHECK(st.bins() == 5);
    CHECK(st.classes() == 4);
    CHECK(st.alpha[0](0) == doctest::Approx(0.5));
    CHECK(st.alpha[0](1) == 0.0);
    CHECK(st.alpha[0](3) == doctest::Approx(0.5));
    CHECK(st.shape[4][2] == Eigen::MatrixXcd::Identity(2, 2));
  }

  TEST_CASE("posteriors sum to one and respect the guide") {
    const auto s = synthetic_utterance(2, 3, 3);
    const auto x = normalize_observations(s.spec);
    auto state = initial_state(x.bins(), x.channels(), s.guide);
    for (int it = 0; it < 3; ++it) {
      const auto post = em_e_step(x, state, s.guide);
      for (std::size_t f = 0; f < post.bins(); ++f)
        for (std::size_t t = 0; t < post.frames(); ++t) {
          double sum = 0.0;
          for (std::size_t k = 0; k < post.classes(); ++k) {
            if (!s.guide(k, t)) CHECK(post(t, f, k) == 0.0);
            CHECK(post(t, f, k) >= 0.0);
            sum += post(t, f, k);
          }
          CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
      state = em_m_step(x, post, state);
    }
  }

  TEST_CASE("shape matrices stay Hermitian PSD with trace M") {
    for (std::uint64_t seed = 3; seed < 6; ++seed) {
      const auto s = synthetic_utterance(seed);
      const auto x = normalize_observations(s.spec);
      auto state = initial_state(x.bins(), x.channels(), s.guide);
      for (int it = 0; it < 5; ++it) {
        state = em_m_step(x, em_e_step(x, state, s.guide), state);
        for (std::size_t f = 0; f < state.bins(); ++f) {
          CHECK(state.alpha[f].sum() == doctest::Approx(1.0));
          for (const auto& b : state.shape[f]) CHECK(hermitian_psd_with_trace(b, 4.0));
        }
      }
    }
  }

  TEST_CASE("guided log-likelihood does not decrease") {
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
      const auto s = synthetic_utterance(seed, 4, 2, 150);
      const auto r = run_gss(s.spec, s.guide, {20, 100}, {8, 15.0});
      REQUIRE(r.log_likelihood.size() == 9);
      for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
        CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-6 * std::abs(r.log_likelihood[i - 1]));
      CHECK(r.posteriors.frames() == 80);
    }
  }

  TEST_CASE("context window clamps to the session") {
    CHECK(context_window({10, 20}, 100, 5) == FrameRange{5, 25});
    CHECK(context_window({2, 20}, 100, 5) == FrameRange{0, 25});
    CHECK(context_window({90, 100}, 100, 5) == FrameRange{85, 100});
    CHECK_THROWS_AS(context_window({5, 5}, 100, 5), InvalidInput);
    CHECK_THROWS_AS(context_window({5, 101}, 100, 5), InvalidInput);
  }

  TEST_CASE("mvdr hand-computed 2x2") {
    Eigen::MatrixXcd s(2, 2), n(2, 2);
    s << 1, 1, 1, 1;
    n << 1, 0, 0, 4;
    const auto w = mvdr_weights(s, n, 0);
    CHECK(std::abs(w(0) - cd(0.8, 0)) < 1e-9);
    CHECK(std::abs(w(1) - cd(0.2, 0)) < 1e-9);
    const auto w1 = mvdr_weights(s, n, 1);
    CHECK(std::abs(w1(0) - cd(0.8, 0)) < 1e-9);  // rank one: same column up to h_ref
    // Distortionless toward h = (1, 1).
    CHECK(std::abs(w.dot(Eigen::Vector2cd(1, 1)) - 1.0) < 1e-9);
    CHECK_THROWS_AS(mvdr_weights(s, n, 2), InvalidInput);
  }

  TEST_CASE("mvdr is invariant to covariance scaling") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_psd(rng, 4, 1 + trial % 3);
      const auto n = random_psd(rng, 4, 6);
      const auto w = mvdr_weights(s, n, trial % 4);
      const auto ws = mvdr_weights(3.7 * s, 0.02 * n, trial % 4);
      CHECK((w - ws).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, w.cwiseAbs().maxCoeff()));
    }
  }

  TEST_CASE("ban gain under isotropic noise") {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXcd w(5);
      for (auto& c : w) c = cd(g(rng), g(rng));
      const double sigma2 = 0.1 + trial;
      const double gain = ban_gain(w, sigma2 * Eigen::MatrixXcd::Identity(5, 5));
      CHECK(gain > 0.0);
      CHECK(std::abs(gain - 1.0 / (std::sqrt(5.0) * w.norm())) <= 1e-8 * gain);
    }
    CHECK(ban_gain(Eigen::VectorXcd::Zero(3), Eigen::MatrixXcd::Identity(3, 3)) == 1.0);
  }

  TEST_CASE("covariances split by the posterior") {
    const auto s = synthetic_utterance(30, 3, 2, 40, 4);
    PosteriorTensor p;
    p.gamma.assign(4, Eigen::MatrixXd::Constant(3, 40, 0.25));
    const auto cov = estimate_covariances(s.spec, p, 0);
    for (std::size_t f = 0; f < 4; ++f) {
      const Eigen::MatrixXcd full = s.spec.bin(f) * s.spec.bin(f).adjoint() / 40.0;
      CHECK((cov.speech[f] + cov.noise[f] - full).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((3.0 * cov.speech[f] - cov.noise[f]).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(estimate_covariances(s.spec, p, 3), InvalidInput);
  }

  TEST_CASE("reference selection prefers the best channel") {
    CovariancePair cov;
    Eigen::MatrixXcd s = Eigen::MatrixXcd::Identity(3, 3), n = Eigen::MatrixXcd::Identity(3, 3);
    s(2, 2) = 5.0;
    cov.speech = {s, s};
    cov.noise = {n, n};
    CHECK(select_reference(cov) == 2);
  }

  TEST_CASE("wpe removes a late echo") {
    // Per bin: x_t = s_t + 0.4 s_{t-4} on two channels with different gains,
    // source power log-normal over time.
    std::mt19937_64 rng(40);
    std::normal_distribution<double> g;
    const std::size_t frames = 400, bins = 6;
    SpectrogramTensor x(2, frames, bins, StftConfig{}), clean(2, frames, bins, StftConfig{});
    for (std::size_t f = 0; f < bins; ++f) {
      std::vector<cd> src(frames);
      for (auto& v : src) v = cd(g(rng), g(rng)) * std::exp(1.5 * g(rng));
      for (std::size_t t = 0; t < frames; ++t) {
        const cd echo = t >= 4 ? 0.4 * src[t - 4] : 0.0;
        for (Eigen::Index m = 0; m < 2; ++m) {
          const double gain = m == 0 ? 1.0 : 0.5;
          clean.bin(f)(m, static_cast<Eigen::Index>(t)) = gain * src[t];
          x.bin(f)(m, static_cast<Eigen::Index>(t)) = gain * (src[t] + echo);
        }
      }
    }
    const auto r = wpe(x, {10, 3, 5});
    double err = 0.0, before = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
      err += (r.output.bin(f) - clean.bin(f)).squaredNorm();
      before += (x.bin(f) - clean.bin(f)).squaredNorm();
    }
    CHECK(err < 0.25 * before);
    // The returned filter reproduces the output.
    const auto again = r.filter.apply(x);
    for (std::size_t f = 0; f < bins; ++f) CHECK((again.bin(f) - r.output.bin(f)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(wpe(x, {0, 3, 3}).output.bin(2) == x.bin(2));
    CHECK_THROWS_AS(wpe(x.crop(0, 10), {10, 3, 3}), InvalidInput);
  }

  TEST_CASE("one wpe iteration is the weighted least-squares predictor") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> g;
    const std::size_t frames = 120, taps = 4, delay = 2;
    SpectrogramTensor x(1, frames, 1, StftConfig{});
    for (std::size_t t = 0; t < frames; ++t) x.bin(0)(0, static_cast<Eigen::Index>(t)) = cd(g(rng), g(rng));
    const auto r = wpe(x, {taps, delay, 1});

    // Brute force: normal equations built frame by frame.
    Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(taps, taps);
    Eigen::VectorXcd p = Eigen::VectorXcd::Zero(taps);
    for (std::size_t t = 0; t < frames; ++t) {
      const cd xt = x.bin(0)(0, static_cast<Eigen::Index>(t));
      Eigen::VectorXcd past = Eigen::VectorXcd::Zero(taps);
      for (std::size_t k = 0; k < taps; ++k)
        if (t >= delay + k) past(static_cast<Eigen::Index>(k)) = x.bin(0)(0, static_cast<Eigen::Index>(t - delay - k));
      const double lambda = std::norm(xt);
      R += past * past.adjoint() / lambda;
      p += past * std::conj(xt) / lambda;
    }
    const Eigen::VectorXcd w = R.ldlt().solve(p);
    for (std::size_t t = 0; t < frames; ++t) {
      cd pred = 0.0;
      for (std::size_t k = 0; k < taps; ++k)
        if (t >= delay + k) pred += std::conj(w(static_cast<Eigen::Index>(k))) * x.bin(0)(0, static_cast<Eigen::Index>(t - delay - k));
      const cd expect = x.bin(0)(0, static_cast<Eigen::Index>(t)) - pred;
      CHECK(std::abs(r.output.bin(0)(0, static_cast<Eigen::Index>(t)) - expect) < 1e-6 * (1.0 + std::abs(expect)));
    }
  }

  TEST_CASE("enhanced utterance replays itself") {
    const std::size_t n = 16000 * 3;
    const auto a = test::gaussian(n, 50), b = test::gaussian(n, 51);
    std::vector<std::vector<double>> mics(3, std::vector<double>(n, 0.0));
    const int delays[3][2] = {{0, 7}, {3, 0}, {5, 2}};
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t i = 10; i < n; ++i) {
        const bool b_on = i > n / 2;
        mics[m][i] = a[i - delays[m][0]] + (b_on ? 0.8 * b[i - delays[m][1]] : 0.0);
      }
    const auto spec = SpectrogramTensor::from_signals(mics, StftConfig{});
    ActivityMatrix guide(2, spec.frames(), 0.016);
    for (std::size_t t = 0; t < spec.frames(); ++t) {
      guide(0, t) = 1;
      guide(1, t) = t > spec.frames() / 2 ? 1 : 0;
      guide(2, t) = 1;
    }
    EnhanceOptions opts;
    opts.gss = {4, 1.0};
    opts.wpe = {5, 3, 1};
    const Utterance utt{0, 20, 150};
    const auto e = enhance_utterance(spec, utt, guide, opts);
    CHECK(e.samples.size() == utt.frames() * 256);
    CHECK(e.wpe.has_value());
    const auto again = replay(e, spec);
    REQUIRE(again.size() == e.samples.size());
    double diff = 0.0;
    for (std::size_t i = 0; i < again.size(); ++i) diff = std::max(diff, std::abs(again[i] - e.samples[i]));
    CHECK(diff < 1e-9);
    CHECK_THROWS_AS(enhance_utterance(spec, {2, 0, 10}, guide, opts), InvalidInput);
    CHECK_THROWS_AS(enhance_utterance(spec, {0, 10, spec.frames()}, guide, opts), InvalidInput);
  }
}
