#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "asyncmeet/audio.hpp"

namespace asyncmeet {

struct ShiftOptions {
  // Search bound in samples; 0 selects 60 s at the recording's rate.
  std::int64_t max_shift = 0;
  bool band_pass = true;
  double band_low_hz = 300.0;
  double band_high_hz = 3400.0;
  // Second peak must lie outside this many samples of the best lag.
  std::int64_t ambiguity_guard = 50;
  double ambiguity_ratio = 0.95;
};

struct ShiftEstimate {
  std::int64_t shift = 0;
  double peak = 0.0;
  double second_peak = 0.0;
  bool ambiguous = false;
};

// Lag maximizing sum_v anchor[v] * other[v + lag], samples outside either
// recording counting as zero.
ShiftEstimate estimate_shift_detailed(const Recording& anchor, const Recording& other,
                                      const ShiftOptions& options = {});
std::int64_t estimate_shift(const Recording& anchor, const Recording& other, std::int64_t max_shift = 0);

// Indices are 0-based in the anchor timeline; `end` is inclusive.
struct SyncResult {
  std::size_t anchor = 0;
  std::vector<std::int64_t> shifts;
  std::int64_t begin = 0;
  std::int64_t end = 0;
  std::vector<std::vector<double>> aligned;
  std::vector<bool> ambiguous;
  int sample_rate = 16000;

  std::size_t length() const { return static_cast<std::size_t>(end - begin + 1); }
};

SyncResult synchronize(std::span<const Recording> recordings, std::size_t anchor_index = 0,
                       const ShiftOptions& options = {});

// Cuts the common interval out of each recording given already known shifts.
SyncResult apply_shifts(std::span<const Recording> recordings, std::size_t anchor_index,
                        std::span<const std::int64_t> shifts);

}  // namespace asyncmeet
