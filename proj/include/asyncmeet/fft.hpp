#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace asyncmeet {

/// Real-to-complex FFT of a fixed length backed by an FFTW plan.
///
/// Plans are created under a process-wide lock; execution on distinct
/// instances is safe from multiple threads. A single instance is not
/// reentrant because it owns its scratch buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t size);
  ~RealFft();

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  RealFft(RealFft&& other) noexcept;
  RealFft& operator=(RealFft&& other) noexcept;

  std::size_t size() const { return size_; }
  std::size_t bins() const { return size_ / 2 + 1; }

  // Input shorter than size() is zero-padded.
  void forward(std::span<const double> input, std::span<std::complex<double>> output);
  std::vector<std::complex<double>> forward(std::span<const double> input);

  // Unnormalized inverse: inverse(forward(x)) == size() * x.
  void inverse(std::span<const std::complex<double>> input, std::span<double> output);
  std::vector<double> inverse(std::span<const std::complex<double>> input);

 private:
  void release();

  std::size_t size_ = 0;
  double* real_ = nullptr;
  void* spectrum_ = nullptr;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

std::size_t next_pow2(std::size_t n);

}  // namespace asyncmeet
