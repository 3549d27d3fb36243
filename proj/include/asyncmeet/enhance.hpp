#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "asyncmeet/audio.hpp"
#include "asyncmeet/diarize.hpp"

namespace asyncmeet {

// Half-open frame interval [begin, end).
struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

// ---------------------------------------------------------------------------
// Dereverberation

struct WpeOptions {
  std::size_t taps = 10;
  std::size_t delay = 3;
  std::size_t iterations = 3;
};

// Per-bin multichannel prediction filters, (M * taps) x M each.
struct WpeFilter {
  std::size_t taps = 0;
  std::size_t delay = 0;
  std::vector<Eigen::MatrixXcd> coefficients;

  // Z = X - G^H Xtilde, Xtilde the stacked delayed observations.
  SpectrogramTensor apply(const SpectrogramTensor& spec) const;
};

struct WpeResult {
  SpectrogramTensor output;
  WpeFilter filter;
};

WpeResult wpe(const SpectrogramTensor& spec, const WpeOptions& options = {});
SpectrogramTensor wpe_dereverberate(const SpectrogramTensor& spec, std::size_t taps = 10, std::size_t delay = 3,
                                    std::size_t iterations = 3);

// ---------------------------------------------------------------------------
// Guided complex angular central Gaussian mixture

// Mixture weights and shape matrices for K speakers plus a noise class.
struct CacgmmState {
  std::vector<Eigen::VectorXd> alpha;              // [f](k)
  std::vector<std::vector<Eigen::MatrixXcd>> shape;  // [f][k], M x M

  std::size_t bins() const { return alpha.size(); }
  std::size_t classes() const { return alpha.empty() ? 0 : static_cast<std::size_t>(alpha.front().size()); }
};

struct PosteriorTensor {
  std::vector<Eigen::MatrixXd> gamma;  // [f](k, t)

  std::size_t bins() const { return gamma.size(); }
  std::size_t classes() const { return gamma.empty() ? 0 : static_cast<std::size_t>(gamma.front().rows()); }
  std::size_t frames() const { return gamma.empty() ? 0 : static_cast<std::size_t>(gamma.front().cols()); }
  double operator()(std::size_t t, std::size_t f, std::size_t k) const {
    return gamma[f](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t));
  }
  PosteriorTensor crop(std::size_t begin, std::size_t end) const;
};

// X / |X| per (t, f); zero observations stay zero.
SpectrogramTensor normalize_observations(const SpectrogramTensor& spec);

// Identity shapes; uniform weights over classes active anywhere in the guide.
CacgmmState initial_state(std::size_t bins, std::size_t channels, const ActivityMatrix& guide);

// Returns posteriors; optionally the masked-mixture log-likelihood.
PosteriorTensor em_e_step(const SpectrogramTensor& normalized, const CacgmmState& state, const ActivityMatrix& guide,
                          double* log_likelihood = nullptr);
CacgmmState em_m_step(const SpectrogramTensor& normalized, const PosteriorTensor& gamma,
                      const CacgmmState& previous);

struct GssOptions {
  std::size_t iterations = 10;
  double context_s = 15.0;
  // Speaker rows of the guide are widened by this much on each side before
  // masking; the noise row is left alone.
  double guide_margin_s = 1.0;
};

struct GssResult {
  PosteriorTensor posteriors;  // cropped to the utterance
  CacgmmState state;
  FrameRange window;           // context-extended range within the input
  std::vector<double> log_likelihood;  // one entry per E-step
};

FrameRange context_window(FrameRange utterance, std::size_t total_frames, std::size_t context_frames);

// Each speaker row dilated by `frames` on both sides.
ActivityMatrix widen_speakers(const ActivityMatrix& guide, std::size_t frames);

// `guide` has one column per frame of `spec`.
GssResult run_gss(const SpectrogramTensor& spec, const ActivityMatrix& guide, FrameRange utterance,
                  const GssOptions& options = {});

// ---------------------------------------------------------------------------
// Beamforming

struct CovariancePair {
  std::vector<Eigen::MatrixXcd> speech;
  std::vector<Eigen::MatrixXcd> noise;
  std::size_t target = 0;
};

CovariancePair estimate_covariances(const SpectrogramTensor& spec, const PosteriorTensor& gamma,
                                    std::size_t target);

struct Beamformer {
  std::vector<Eigen::VectorXcd> weights;
  std::size_t reference = 0;
  std::vector<double> ban_gain;
};

Eigen::VectorXcd mvdr_weights(const Eigen::MatrixXcd& speech, const Eigen::MatrixXcd& noise, std::size_t reference);
Beamformer mvdr(const CovariancePair& cov, std::size_t reference);

// sqrt(w^H N N w / M) / (w^H N w); 1 when undefined.
double ban_gain(const Eigen::VectorXcd& w, const Eigen::MatrixXcd& noise);
Beamformer ban_postfilter(Beamformer bf, const CovariancePair& cov);

// Channel maximizing sum_f R_speech(m, m) / R_noise(m, m).
std::size_t select_reference(const CovariancePair& cov);

// z_{t,f} = w_f^H X_{t,f}
Spectrogram apply_beamformer(const Beamformer& bf, const SpectrogramTensor& spec);

// ---------------------------------------------------------------------------
// Utterance-wise enhancement

struct EnhanceOptions {
  bool dereverberate = true;
  WpeOptions wpe;
  GssOptions gss;
  std::optional<std::size_t> reference;
};

struct EnhancedUtterance {
  Utterance utterance;
  std::vector<double> samples;  // (frames) * shift samples starting at utterance.begin * shift
  FrameRange window;
  std::optional<WpeFilter> wpe;
  Beamformer beamformer;
  std::vector<double> log_likelihood;
  PosteriorTensor posteriors;
};

/// Keeps the dereverberated spectrogram of the most recent context windows.
class WpeCache {
 public:
  explicit WpeCache(std::size_t capacity = 2) : capacity_(capacity) {}
  const WpeResult& get(const SpectrogramTensor& session, FrameRange window, const WpeOptions& options);

 private:
  std::size_t capacity_;
  std::deque<std::pair<FrameRange, WpeResult>> entries_;
};

EnhancedUtterance enhance_utterance(const SpectrogramTensor& session, const Utterance& utterance,
                                    const ActivityMatrix& guide, const EnhanceOptions& options = {},
                                    WpeCache* cache = nullptr);

// Runs the filters estimated for `enhanced` over another signal with the
// same geometry (e.g. a single source image) and returns the samples of
// the utterance interval.
std::vector<double> replay(const EnhancedUtterance& enhanced, const SpectrogramTensor& session);

}  // namespace asyncmeet
