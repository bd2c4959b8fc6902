#pragma once

// Thin RAII wrapper over FFTW's real-to-complex and complex-to-real transforms.
// Plans are created once per length and shared; execution uses the new-array
// interface, which FFTW guarantees to be thread-safe.

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace innerspeech::fft {

namespace detail {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
  ~PlanPair() {
    if (forward) fftw_destroy_plan(forward);
    if (inverse) fftw_destroy_plan(inverse);
  }
};

inline const PlanPair& plans_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<PlanPair>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_unique<PlanPair>();
    std::vector<double> in(n);
    std::vector<fftw_complex> out(n / 2 + 1);
    const int len = static_cast<int>(n);
    slot->forward = fftw_plan_dft_r2c_1d(len, in.data(), out.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
    slot->inverse = fftw_plan_dft_c2r_1d(len, out.data(), in.data(),
                                         FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  }
  return *slot;
}

}  // namespace detail

/// Unnormalized forward DFT of a real signal; returns n/2+1 bins.
inline std::vector<std::complex<double>> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  if (n == 0) return out;
  std::vector<double> in(x.begin(), x.end());
  fftw_execute_dft_r2c(detail::plans_for(n).forward, in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse of rfft for a length-n real signal, normalized so irfft(rfft(x)) == x.
inline std::vector<double> irfft(std::span<const std::complex<double>> bins, std::size_t n) {
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  std::vector<std::complex<double>> work(bins.begin(), bins.end());
  work.resize(n / 2 + 1);
  fftw_execute_dft_c2r(detail::plans_for(n).inverse, reinterpret_cast<fftw_complex*>(work.data()),
                       out.data());
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

}  // namespace innerspeech::fft
