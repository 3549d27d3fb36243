#include "asyncmeet/fft.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <utility>

#include <fftw3.h>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

namespace {

// fftw_plan_* is not thread-safe.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

RealFft::RealFft(std::size_t size) : size_(size) {
  if (size == 0) throw InvalidInput("RealFft: size must be positive");
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(size_);
  auto* spec = fftw_alloc_complex(bins());
  spectrum_ = spec;
  forward_plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(size_), real_, spec, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(static_cast<int>(size_), spec, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() { release(); }

RealFft::RealFft(RealFft&& other) noexcept
    : size_(std::exchange(other.size_, 0)),
      real_(std::exchange(other.real_, nullptr)),
      spectrum_(std::exchange(other.spectrum_, nullptr)),
      forward_plan_(std::exchange(other.forward_plan_, nullptr)),
      inverse_plan_(std::exchange(other.inverse_plan_, nullptr)) {}

RealFft& RealFft::operator=(RealFft&& other) noexcept {
  if (this != &other) {
    release();
    size_ = std::exchange(other.size_, 0);
    real_ = std::exchange(other.real_, nullptr);
    spectrum_ = std::exchange(other.spectrum_, nullptr);
    forward_plan_ = std::exchange(other.forward_plan_, nullptr);
    inverse_plan_ = std::exchange(other.inverse_plan_, nullptr);
  }
  return *this;
}

void RealFft::release() {
  if (!real_) return;
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(real_);
  fftw_free(spectrum_);
  real_ = nullptr;
  spectrum_ = nullptr;
}

void RealFft::forward(std::span<const double> input, std::span<std::complex<double>> output) {
  if (input.size() > size_ || output.size() < bins())
    throw InvalidInput("RealFft::forward: buffer size mismatch");
  std::copy(input.begin(), input.end(), real_);
  std::fill(real_ + input.size(), real_ + size_, 0.0);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  std::memcpy(output.data(), spectrum_, bins() * sizeof(fftw_complex));
}

std::vector<std::complex<double>> RealFft::forward(std::span<const double> input) {
  std::vector<std::complex<double>> out(bins());
  forward(input, out);
  return out;
}

void RealFft::inverse(std::span<const std::complex<double>> input, std::span<double> output) {
  if (input.size() != bins() || output.size() < size_)
    throw InvalidInput("RealFft::inverse: buffer size mismatch");
  std::memcpy(spectrum_, input.data(), bins() * sizeof(fftw_complex));
  // c2r transforms destroy their input; spectrum_ is scratch.
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  std::copy(real_, real_ + size_, output.begin());
}

std::vector<double> RealFft::inverse(std::span<const std::complex<double>> input) {
  std::vector<double> out(size_);
  inverse(input, out);
  return out;
}

}  // namespace asyncmeet
