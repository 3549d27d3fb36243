#include "asyncmeet/sync.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <spdlog/spdlog.h>

#include "asyncmeet/error.hpp"
#include "asyncmeet/fft.hpp"

namespace asyncmeet {

namespace {

std::vector<double> demeaned(std::span<const double> x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v -= mean;
  return out;
}

bool all_zero(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; });
}

}  // namespace

ShiftEstimate estimate_shift_detailed(const Recording& anchor, const Recording& other, const ShiftOptions& options) {
  validate(anchor);
  validate(other);
  if (anchor.sample_rate != other.sample_rate)
    throw InvalidInput("estimate_shift: nominal sample rates differ ('" + anchor.device_id + "' vs '" +
                       other.device_id + "')");
  if (all_zero(anchor.samples) || all_zero(other.samples))
    throw InvalidInput("estimate_shift: all-zero input has no correlation peak ('" + anchor.device_id + "', '" +
                       other.device_id + "')");

  const auto na = static_cast<std::int64_t>(anchor.length());
  const auto nb = static_cast<std::int64_t>(other.length());
  std::int64_t max_shift = options.max_shift > 0 ? options.max_shift : std::int64_t{60} * anchor.sample_rate;
  if (options.max_shift > 0 && max_shift >= std::min(na, nb))
    throw InvalidInput("estimate_shift: max_shift must be shorter than both recordings");
  max_shift = std::min(max_shift, std::max(na, nb) - 1);

  const auto a = demeaned(anchor.samples);
  const auto b = demeaned(other.samples);
  const std::size_t n = next_pow2(static_cast<std::size_t>(na + nb));
  RealFft fft(n);
  auto fa = fft.forward(a);
  auto fb = fft.forward(b);

  const double hz_per_bin = static_cast<double>(anchor.sample_rate) / static_cast<double>(n);
  for (std::size_t k = 0; k < fa.size(); ++k) {
    const double hz = static_cast<double>(k) * hz_per_bin;
    const bool pass = !options.band_pass || (hz >= options.band_low_hz && hz <= options.band_high_hz);
    fa[k] = pass ? std::conj(fa[k]) * fb[k] : 0.0;
  }
  // corr[lag mod n] = sum_v a[v] b[v + lag]
  const auto corr = fft.inverse(fa);
  const auto at = [&](std::int64_t lag) {
    const auto idx = static_cast<std::size_t>(lag >= 0 ? lag : static_cast<std::int64_t>(n) + lag);
    return corr[idx];
  };

  const std::int64_t lo = std::max(-max_shift, -(na - 1));
  const std::int64_t hi = std::min(max_shift, nb - 1);
  ShiftEstimate est;
  est.peak = -std::numeric_limits<double>::infinity();
  for (std::int64_t lag = lo; lag <= hi; ++lag) {
    const double c = at(lag);
    if (c > est.peak) {
      est.peak = c;
      est.shift = lag;
    }
  }
  if (!(est.peak > 0.0))
    throw NumericalError("estimate_shift: no positive correlation peak between '" + anchor.device_id + "' and '" +
                         other.device_id + "'");

  est.second_peak = -std::numeric_limits<double>::infinity();
  for (std::int64_t lag = lo; lag <= hi; ++lag) {
    if (std::abs(lag - est.shift) <= options.ambiguity_guard) continue;
    est.second_peak = std::max(est.second_peak, at(lag));
  }
  est.ambiguous = est.second_peak > options.ambiguity_ratio * est.peak;
  return est;
}

std::int64_t estimate_shift(const Recording& anchor, const Recording& other, std::int64_t max_shift) {
  ShiftOptions options;
  options.max_shift = max_shift;
  return estimate_shift_detailed(anchor, other, options).shift;
}

SyncResult apply_shifts(std::span<const Recording> recordings, std::size_t anchor_index,
                        std::span<const std::int64_t> shifts) {
  if (recordings.empty()) throw InvalidInput("synchronize: no recordings");
  if (anchor_index >= recordings.size()) throw InvalidInput("synchronize: anchor index out of range");
  if (shifts.size() != recordings.size()) throw InvalidInput("synchronize: one shift per recording required");

  SyncResult result;
  result.anchor = anchor_index;
  result.sample_rate = recordings[anchor_index].sample_rate;
  result.shifts.assign(shifts.begin(), shifts.end());
  result.ambiguous.assign(recordings.size(), false);

  std::size_t begin_dev = 0, end_dev = 0;
  result.begin = std::numeric_limits<std::int64_t>::min();
  result.end = std::numeric_limits<std::int64_t>::max();
  for (std::size_t m = 0; m < recordings.size(); ++m) {
    const std::int64_t b = -shifts[m];
    const std::int64_t e = static_cast<std::int64_t>(recordings[m].length()) - 1 - shifts[m];
    if (b > result.begin) {
      result.begin = b;
      begin_dev = m;
    }
    if (e < result.end) {
      result.end = e;
      end_dev = m;
    }
  }
  if (result.begin > result.end)
    throw InvalidInput("synchronize: empty common interval between devices '" + recordings[begin_dev].device_id +
                       "' and '" + recordings[end_dev].device_id + "'");

  result.aligned.reserve(recordings.size());
  for (std::size_t m = 0; m < recordings.size(); ++m) {
    const auto first = static_cast<std::size_t>(result.begin + shifts[m]);
    const auto& s = recordings[m].samples;
    result.aligned.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(first),
                                s.begin() + static_cast<std::ptrdiff_t>(first + result.length()));
  }
  return result;
}

SyncResult synchronize(std::span<const Recording> recordings, std::size_t anchor_index, const ShiftOptions& options) {
  if (recordings.empty()) throw InvalidInput("synchronize: no recordings");
  if (anchor_index >= recordings.size()) throw InvalidInput("synchronize: anchor index out of range");
  for (const auto& r : recordings) validate(r);

  std::vector<std::int64_t> shifts(recordings.size(), 0);
  std::vector<bool> ambiguous(recordings.size(), false);
  const auto& anchor = recordings[anchor_index];
  for (std::size_t m = 0; m < recordings.size(); ++m) {
    if (m == anchor_index) continue;
    ShiftOptions opts = options;
    if (opts.max_shift <= 0) opts.max_shift = std::int64_t{60} * anchor.sample_rate;
    opts.max_shift = std::min<std::int64_t>(
        opts.max_shift, static_cast<std::int64_t>(std::min(anchor.length(), recordings[m].length())) - 1);
    const auto est = estimate_shift_detailed(anchor, recordings[m], opts);
    shifts[m] = est.shift;
    ambiguous[m] = est.ambiguous;
    if (est.ambiguous)
      spdlog::warn("sync: ambiguous correlation peak for device '{}' (second peak {:.3f} of best)",
                   recordings[m].device_id, est.second_peak / est.peak);
  }
  auto result = apply_shifts(recordings, anchor_index, shifts);
  result.ambiguous = std::move(ambiguous);
  return result;
}

}  // namespace asyncmeet
