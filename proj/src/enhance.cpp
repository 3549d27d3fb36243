#include "asyncmeet/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <spdlog/spdlog.h>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

namespace {

using Eigen::Index;

constexpr double kLoading = 1e-10;
constexpr double kAlphaFloor = 1e-10;
constexpr double kMassFloor = 1e-12;

Index idx(std::size_t v) { return static_cast<Index>(v); }

// Cholesky of A + loading * tr(A) / n * I, escalating the loading once.
// Returns nullopt when A has zero trace.
std::optional<Eigen::LLT<Eigen::MatrixXcd>> loaded_cholesky(const Eigen::MatrixXcd& a, const char* what) {
  const auto n = static_cast<double>(a.rows());
  const double trace = a.trace().real();
  if (!(trace > 0.0) || !std::isfinite(trace)) return std::nullopt;
  for (double factor : {1.0, 10.0}) {
    Eigen::MatrixXcd loaded = a;
    loaded.diagonal().array() += kLoading * factor * trace / n;
    Eigen::LLT<Eigen::MatrixXcd> llt(loaded);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(what) + ": matrix singular beyond diagonal loading budget");
}

double log_det(const Eigen::LLT<Eigen::MatrixXcd>& llt) {
  double acc = 0.0;
  const auto& l = llt.matrixLLT();
  for (Index i = 0; i < l.rows(); ++i) acc += std::log(l(i, i).real());
  return 2.0 * acc;
}

// q_t = x_t^H A^{-1} x_t for every column of x.
Eigen::VectorXd quadratic_forms(const Eigen::LLT<Eigen::MatrixXcd>& llt, const Eigen::MatrixXcd& x) {
  const Eigen::MatrixXcd inv = llt.solve(Eigen::MatrixXcd::Identity(x.rows(), x.rows()));
  return (x.conjugate().cwiseProduct(inv * x)).colwise().sum().real().transpose();
}

// Stacked delayed observations: block tau holds X[:, t - delay - tau].
Eigen::MatrixXcd stack_delayed(const Eigen::MatrixXcd& x, std::size_t taps, std::size_t delay) {
  const Index m = x.rows(), t = x.cols();
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(m * idx(taps), t);
  for (std::size_t tau = 0; tau < taps; ++tau) {
    const Index lag = idx(delay + tau);
    if (lag >= t) continue;
    out.block(idx(tau) * m, lag, m, t - lag) = x.leftCols(t - lag);
  }
  return out;
}

double log_acg_constant(std::size_t m) {
  // (M-1)! / (2 pi^M)
  return std::lgamma(static_cast<double>(m)) - std::log(2.0) - static_cast<double>(m) * std::log(std::numbers::pi);
}

}  // namespace

// ---------------------------------------------------------------------------
// WPE

SpectrogramTensor WpeFilter::apply(const SpectrogramTensor& spec) const {
  if (taps == 0) return spec;
  if (coefficients.size() != spec.bins()) throw InvalidInput("WpeFilter::apply: bin count mismatch");
  SpectrogramTensor out = spec;
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const auto& g = coefficients[f];
    if (g.rows() != idx(spec.channels() * taps)) throw InvalidInput("WpeFilter::apply: channel count mismatch");
    out.bin(f) -= g.adjoint() * stack_delayed(spec.bin(f), taps, delay);
  }
  return out;
}

WpeResult wpe(const SpectrogramTensor& spec, const WpeOptions& options) {
  WpeResult result;
  result.filter.taps = options.taps;
  result.filter.delay = options.delay;
  if (options.taps == 0) {
    result.output = spec;
    return result;
  }
  if (spec.frames() <= options.taps + options.delay)
    throw InvalidInput("wpe: " + std::to_string(spec.frames()) + " frames do not exceed taps + delay");

  const Index m = idx(spec.channels());
  const Index dim = m * idx(options.taps);
  result.output = spec;
  result.filter.coefficients.assign(spec.bins(), Eigen::MatrixXcd::Zero(dim, m));

  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const Eigen::MatrixXcd& x = spec.bin(f);
    const Eigen::MatrixXcd xt = stack_delayed(x, options.taps, options.delay);
    Eigen::MatrixXcd& z = result.output.bin(f);
    Eigen::MatrixXcd& g = result.filter.coefficients[f];

    for (std::size_t it = 0; it < options.iterations; ++it) {
      Eigen::ArrayXd lambda = z.cwiseAbs2().colwise().mean().transpose().array();
      const double floor = std::max(lambda.maxCoeff() * 1e-10, std::numeric_limits<double>::min());
      if (!(lambda.maxCoeff() > 0.0)) break;
      const Eigen::VectorXd inv_sqrt = lambda.max(floor).rsqrt().matrix();

      const Eigen::MatrixXcd xtw = xt * inv_sqrt.asDiagonal();
      Eigen::MatrixXcd lower = Eigen::MatrixXcd::Zero(dim, dim);
      lower.selfadjointView<Eigen::Lower>().rankUpdate(xtw);
      const Eigen::MatrixXcd r = lower.selfadjointView<Eigen::Lower>();
      const Eigen::MatrixXcd p = xtw * (x * inv_sqrt.asDiagonal()).adjoint();

      const auto llt = loaded_cholesky(r, "wpe");
      if (!llt) break;
      g = llt->solve(p);
      z = x - g.adjoint() * xt;
    }
  }
  return result;
}

SpectrogramTensor wpe_dereverberate(const SpectrogramTensor& spec, std::size_t taps, std::size_t delay,
                                    std::size_t iterations) {
  return wpe(spec, {taps, delay, iterations}).output;
}

// ---------------------------------------------------------------------------
// cACGMM

PosteriorTensor PosteriorTensor::crop(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frames()) throw InvalidInput("PosteriorTensor::crop: range out of bounds");
  PosteriorTensor out;
  out.gamma.reserve(gamma.size());
  for (const auto& g : gamma) out.gamma.push_back(g.middleCols(idx(begin), idx(end - begin)));
  return out;
}

SpectrogramTensor normalize_observations(const SpectrogramTensor& spec) {
  SpectrogramTensor out = spec;
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    auto& b = out.bin(f);
    for (Index t = 0; t < b.cols(); ++t) {
      const double n = b.col(t).norm();
      if (n > 0.0) b.col(t) /= n;
    }
  }
  return out;
}

CacgmmState initial_state(std::size_t bins, std::size_t channels, const ActivityMatrix& guide) {
  const std::size_t classes = guide.rows();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(idx(classes));
  std::size_t active = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    if (guide.active_count(k) > 0) {
      alpha(idx(k)) = 1.0;
      ++active;
    }
  }
  if (active == 0) {
    alpha(idx(guide.noise_row())) = 1.0;
    active = 1;
  }
  alpha /= static_cast<double>(active);

  CacgmmState state;
  state.alpha.assign(bins, alpha);
  state.shape.assign(bins, std::vector<Eigen::MatrixXcd>(classes, Eigen::MatrixXcd::Identity(idx(channels), idx(channels))));
  return state;
}

PosteriorTensor em_e_step(const SpectrogramTensor& normalized, const CacgmmState& state, const ActivityMatrix& guide,
                          double* log_likelihood) {
  const std::size_t classes = state.classes();
  const std::size_t frames = normalized.frames();
  const auto m = static_cast<double>(normalized.channels());
  if (state.bins() != normalized.bins()) throw InvalidInput("em_e_step: bin count mismatch");
  if (guide.rows() != classes || guide.slots() != frames)
    throw InvalidInput("em_e_step: guide must have one row per class and one column per frame");

  const double log_const = log_acg_constant(normalized.channels());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double total = 0.0;

  PosteriorTensor post;
  post.gamma.assign(normalized.bins(), Eigen::MatrixXd::Zero(idx(classes), idx(frames)));
  Eigen::MatrixXd logp(idx(classes), idx(frames));

  for (std::size_t f = 0; f < normalized.bins(); ++f) {
    const Eigen::MatrixXcd& x = normalized.bin(f);
    const Eigen::VectorXd norms = x.colwise().norm().transpose();
    logp.setConstant(neg_inf);

    for (std::size_t k = 0; k < classes; ++k) {
      const double alpha = state.alpha[f](idx(k));
      if (!(alpha > 0.0)) continue;
      const auto llt = loaded_cholesky(state.shape[f][k], "em_e_step");
      if (!llt) throw NumericalError("em_e_step: shape matrix with zero trace");
      const double ld = log_det(*llt);
      const Eigen::VectorXd q = quadratic_forms(*llt, x);
      for (std::size_t t = 0; t < frames; ++t) {
        if (!guide(k, t)) continue;
        const double qt = std::max(q(idx(t)), std::numeric_limits<double>::min());
        logp(idx(k), idx(t)) = std::log(alpha) - ld - m * std::log(qt);
      }
    }

    auto& g = post.gamma[f];
    for (std::size_t t = 0; t < frames; ++t) {
      const Index ti = idx(t);
      std::size_t active = 0;
      for (std::size_t k = 0; k < classes; ++k) active += guide(k, t);
      if (active == 0) {
        g(idx(guide.noise_row()), ti) = 1.0;
        continue;
      }
      if (norms(ti) == 0.0) {
        for (std::size_t k = 0; k < classes; ++k)
          if (guide(k, t)) g(idx(k), ti) = 1.0 / static_cast<double>(active);
        continue;
      }
      const double mx = logp.col(ti).maxCoeff();
      if (mx == neg_inf) {
        for (std::size_t k = 0; k < classes; ++k)
          if (guide(k, t)) g(idx(k), ti) = 1.0 / static_cast<double>(active);
        continue;
      }
      double sum = 0.0;
      for (std::size_t k = 0; k < classes; ++k) {
        const double v = logp(idx(k), ti) == neg_inf ? 0.0 : std::exp(logp(idx(k), ti) - mx);
        g(idx(k), ti) = v;
        sum += v;
      }
      g.col(ti) /= sum;
      total += mx + std::log(sum) + log_const;
    }
  }
  if (log_likelihood) *log_likelihood = total;
  return post;
}

CacgmmState em_m_step(const SpectrogramTensor& normalized, const PosteriorTensor& gamma, const CacgmmState& previous) {
  const std::size_t classes = previous.classes();
  const std::size_t frames = normalized.frames();
  const auto m = static_cast<double>(normalized.channels());
  if (gamma.bins() != normalized.bins() || gamma.frames() != frames || gamma.classes() != classes)
    throw InvalidInput("em_m_step: posterior geometry mismatch");

  CacgmmState next = previous;
  for (std::size_t f = 0; f < normalized.bins(); ++f) {
    const Eigen::MatrixXcd& x = normalized.bin(f);
    const Eigen::MatrixXd& g = gamma.gamma[f];
    Eigen::VectorXd& alpha = next.alpha[f];

    for (std::size_t k = 0; k < classes; ++k) {
      const double mass = g.row(idx(k)).sum();
      if (!(mass > kMassFloor)) {
        alpha(idx(k)) = kAlphaFloor;
        continue;
      }
      alpha(idx(k)) = mass / static_cast<double>(frames);

      const auto llt = loaded_cholesky(previous.shape[f][k], "em_m_step");
      if (!llt) continue;
      const Eigen::VectorXd q = quadratic_forms(*llt, x);
      Eigen::VectorXd w(idx(frames));
      for (std::size_t t = 0; t < frames; ++t) {
        const double qt = q(idx(t));
        w(idx(t)) = qt > 0.0 ? std::sqrt(g(idx(k), idx(t)) / qt) : 0.0;
      }
      Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(x.rows(), x.rows());
      b.selfadjointView<Eigen::Lower>().rankUpdate(x * w.asDiagonal(), m / mass);
      b = b.selfadjointView<Eigen::Lower>();
      const double trace = b.trace().real();
      if (!(trace > 0.0) || !b.allFinite()) continue;
      next.shape[f][k] = b * (m / trace);
    }
    alpha /= alpha.sum();
  }
  return next;
}

FrameRange context_window(FrameRange utterance, std::size_t total_frames, std::size_t context_frames) {
  if (utterance.begin >= utterance.end || utterance.end > total_frames)
    throw InvalidInput("context_window: utterance outside the session");
  FrameRange w;
  w.begin = utterance.begin > context_frames ? utterance.begin - context_frames : 0;
  w.end = std::min(total_frames, utterance.end + context_frames);
  return w;
}

ActivityMatrix widen_speakers(const ActivityMatrix& guide, std::size_t frames) {
  ActivityMatrix out = guide;
  if (frames == 0) return out;
  const std::size_t n = guide.slots();
  for (std::size_t k = 0; k < guide.speakers(); ++k) {
    // Distance to the nearest active frame, swept from both ends.
    std::size_t since = frames + 1;
    for (std::size_t t = 0; t < n; ++t) {
      since = guide(k, t) ? 0 : std::min(since + 1, frames + 1);
      if (since <= frames) out(k, t) = 1;
    }
    since = frames + 1;
    for (std::size_t t = n; t-- > 0;) {
      since = guide(k, t) ? 0 : std::min(since + 1, frames + 1);
      if (since <= frames) out(k, t) = 1;
    }
  }
  return out;
}

GssResult run_gss(const SpectrogramTensor& spec, const ActivityMatrix& guide, FrameRange utterance,
                  const GssOptions& options) {
  if (guide.slots() != spec.frames()) throw InvalidInput("run_gss: guide and spectrogram frame counts differ");
  const double shift_s = static_cast<double>(spec.config().frame_shift()) / spec.config().sample_rate;
  const auto context = static_cast<std::size_t>(std::lround(options.context_s / shift_s));

  GssResult result;
  result.window = context_window(utterance, spec.frames(), context);
  const auto window_spec = normalize_observations(spec.crop(result.window.begin, result.window.end));
  const auto margin = static_cast<std::size_t>(std::lround(std::max(0.0, options.guide_margin_s) / shift_s));
  const auto window_guide = widen_speakers(guide, margin).crop(result.window.begin, result.window.end);

  CacgmmState state = initial_state(spec.bins(), spec.channels(), window_guide);
  PosteriorTensor post;
  for (std::size_t it = 0;; ++it) {
    double ll = 0.0;
    post = em_e_step(window_spec, state, window_guide, &ll);
    result.log_likelihood.push_back(ll);
    if (it == options.iterations) break;
    state = em_m_step(window_spec, post, state);
  }
  result.state = std::move(state);
  result.posteriors =
      post.crop(utterance.begin - result.window.begin, utterance.end - result.window.begin);
  return result;
}

// ---------------------------------------------------------------------------
// Beamforming

CovariancePair estimate_covariances(const SpectrogramTensor& spec, const PosteriorTensor& gamma, std::size_t target) {
  if (gamma.bins() != spec.bins() || gamma.frames() != spec.frames())
    throw InvalidInput("estimate_covariances: posterior geometry mismatch");
  if (target >= gamma.classes()) throw InvalidInput("estimate_covariances: target class out of range");
  if (spec.frames() == 0) throw InvalidInput("estimate_covariances: empty utterance");

  CovariancePair cov;
  cov.target = target;
  cov.speech.reserve(spec.bins());
  cov.noise.reserve(spec.bins());
  const auto frames = static_cast<double>(spec.frames());
  bool any_mass = false;
  for (std::size_t f = 0; f < spec.bins(); ++f) {
    const Eigen::MatrixXcd& x = spec.bin(f);
    const Eigen::VectorXd g = gamma.gamma[f].row(idx(target)).transpose();
    any_mass = any_mass || g.sum() > 0.0;
    const Eigen::VectorXd h = (1.0 - g.array()).matrix();
    Eigen::MatrixXcd rs = (x * g.asDiagonal()) * x.adjoint() / frames;
    Eigen::MatrixXcd rn = (x * h.asDiagonal()) * x.adjoint() / frames;
    cov.speech.push_back(0.5 * (rs + rs.adjoint()));
    cov.noise.push_back(0.5 * (rn + rn.adjoint()));
  }
  if (!any_mass) throw InvalidInput("estimate_covariances: target inactive");
  return cov;
}

Eigen::VectorXcd mvdr_weights(const Eigen::MatrixXcd& speech, const Eigen::MatrixXcd& noise, std::size_t reference) {
  const Index m = speech.rows();
  if (reference >= static_cast<std::size_t>(m)) throw InvalidInput("mvdr: reference channel out of range");
  const auto llt = loaded_cholesky(noise, "mvdr");
  if (!llt) return Eigen::VectorXcd::Zero(m);
  const Eigen::MatrixXcd num = llt->solve(speech);
  const std::complex<double> trace = num.trace();
  if (!(std::abs(trace) > 1e-300) || !num.allFinite()) return Eigen::VectorXcd::Zero(m);
  Eigen::VectorXcd w = num.col(idx(reference)) / trace;
  if (!w.allFinite()) return Eigen::VectorXcd::Zero(m);
  return w;
}

Beamformer mvdr(const CovariancePair& cov, std::size_t reference) {
  Beamformer bf;
  bf.reference = reference;
  bf.weights.reserve(cov.speech.size());
  for (std::size_t f = 0; f < cov.speech.size(); ++f)
    bf.weights.push_back(mvdr_weights(cov.speech[f], cov.noise[f], reference));
  bf.ban_gain.assign(cov.speech.size(), 1.0);
  return bf;
}

double ban_gain(const Eigen::VectorXcd& w, const Eigen::MatrixXcd& noise) {
  const Eigen::VectorXcd nw = noise * w;
  const double denom = w.dot(nw).real();
  const double num = std::sqrt(std::max(nw.squaredNorm(), 0.0) / static_cast<double>(w.size()));
  if (!(denom > 0.0) || !std::isfinite(denom) || !(num > 0.0) || !std::isfinite(num)) return 1.0;
  return num / denom;
}

Beamformer ban_postfilter(Beamformer bf, const CovariancePair& cov) {
  if (bf.weights.size() != cov.noise.size()) throw InvalidInput("ban_postfilter: bin count mismatch");
  bf.ban_gain.resize(bf.weights.size());
  std::size_t fallbacks = 0;
  for (std::size_t f = 0; f < bf.weights.size(); ++f) {
    const double g = ban_gain(bf.weights[f], cov.noise[f]);
    if (g == 1.0) ++fallbacks;
    bf.ban_gain[f] = g;
    bf.weights[f] *= g;
  }
  if (fallbacks > 0) spdlog::debug("ban_postfilter: unit-gain fallback on {} bins", fallbacks);
  return bf;
}

std::size_t select_reference(const CovariancePair& cov) {
  if (cov.speech.empty()) throw InvalidInput("select_reference: empty covariance set");
  const Index m = cov.speech.front().rows();
  std::size_t best = 0;
  double best_score = -1.0;
  for (Index c = 0; c < m; ++c) {
    double score = 0.0;
    for (std::size_t f = 0; f < cov.speech.size(); ++f) {
      const double n = cov.noise[f](c, c).real();
      if (n > 0.0) score += cov.speech[f](c, c).real() / n;
    }
    if (score > best_score) {
      best_score = score;
      best = static_cast<std::size_t>(c);
    }
  }
  return best;
}

Spectrogram apply_beamformer(const Beamformer& bf, const SpectrogramTensor& spec) {
  if (bf.weights.size() != spec.bins()) throw InvalidInput("apply_beamformer: bin count mismatch");
  Spectrogram out;
  out.config = spec.config();
  out.values.resize(idx(spec.frames()), idx(spec.bins()));
  for (std::size_t f = 0; f < spec.bins(); ++f) out.values.col(idx(f)) = spec.bin(f).adjoint() * bf.weights[f];
  return out;
}

// ---------------------------------------------------------------------------
// Enhancement

const WpeResult& WpeCache::get(const SpectrogramTensor& session, FrameRange window, const WpeOptions& options) {
  for (const auto& [range, result] : entries_)
    if (range == window) return result;
  if (entries_.size() >= capacity_ && !entries_.empty()) entries_.pop_front();
  entries_.emplace_back(window, wpe(session.crop(window.begin, window.end), options));
  return entries_.back().second;
}

namespace {

std::vector<double> synthesize(const Beamformer& bf, const SpectrogramTensor& window_spec, FrameRange local_utt) {
  const auto z = apply_beamformer(bf, window_spec);
  const std::size_t shift = window_spec.config().frame_shift();
  const auto samples = istft(z, window_spec.frames() * shift);
  return {samples.begin() + static_cast<std::ptrdiff_t>(local_utt.begin * shift),
          samples.begin() + static_cast<std::ptrdiff_t>(local_utt.end * shift)};
}

}  // namespace

EnhancedUtterance enhance_utterance(const SpectrogramTensor& session, const Utterance& utterance,
                                    const ActivityMatrix& guide, const EnhanceOptions& options, WpeCache* cache) {
  if (guide.slots() != session.frames()) throw InvalidInput("enhance_utterance: guide does not match session frames");
  if (utterance.speaker >= guide.speakers()) throw InvalidInput("enhance_utterance: speaker out of range");
  if (utterance.end >= session.frames() || utterance.begin > utterance.end)
    throw InvalidInput("enhance_utterance: utterance outside the session");

  const double shift_s = static_cast<double>(session.config().frame_shift()) / session.config().sample_rate;
  const auto context = static_cast<std::size_t>(std::lround(options.gss.context_s / shift_s));
  const FrameRange utt{utterance.begin, utterance.end + 1};

  EnhancedUtterance out;
  out.utterance = utterance;
  out.window = context_window(utt, session.frames(), context);

  SpectrogramTensor window_spec;
  if (options.dereverberate && options.wpe.taps > 0 &&
      out.window.size() > options.wpe.taps + options.wpe.delay) {
    WpeCache local(1);
    const WpeResult& w = (cache ? *cache : local).get(session, out.window, options.wpe);
    window_spec = w.output;
    out.wpe = w.filter;
  } else {
    window_spec = session.crop(out.window.begin, out.window.end);
  }

  const FrameRange local_utt{utt.begin - out.window.begin, utt.end - out.window.begin};
  const auto window_guide = guide.crop(out.window.begin, out.window.end);
  auto gss = run_gss(window_spec, window_guide, local_utt, options.gss);
  out.log_likelihood = gss.log_likelihood;

  const auto cov = estimate_covariances(window_spec.crop(local_utt.begin, local_utt.end), gss.posteriors,
                                        utterance.speaker);
  const std::size_t reference = options.reference.value_or(select_reference(cov));
  if (reference >= session.channels()) throw InvalidInput("enhance_utterance: reference channel out of range");
  out.beamformer = ban_postfilter(mvdr(cov, reference), cov);
  out.posteriors = std::move(gss.posteriors);
  out.samples = synthesize(out.beamformer, window_spec, local_utt);
  return out;
}

std::vector<double> replay(const EnhancedUtterance& enhanced, const SpectrogramTensor& session) {
  auto window_spec = session.crop(enhanced.window.begin, enhanced.window.end);
  if (enhanced.wpe) window_spec = enhanced.wpe->apply(window_spec);
  const FrameRange local_utt{enhanced.utterance.begin - enhanced.window.begin,
                             enhanced.utterance.end + 1 - enhanced.window.begin};
  return synthesize(enhanced.beamformer, window_spec, local_utt);
}

}  // namespace asyncmeet
