#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>

namespace transaudio::detail {

// In-place iterative radix-2 DFT, X_k = sum_n x_n exp(-2 pi i k n / N).
template <std::size_t N>
class RadixTwoFft {
  static_assert(std::has_single_bit(N), "FFT size must be a power of two");

 public:
  using Buffer = std::array<std::complex<double>, N>;

  static void forward(Buffer& a) {
    const auto& t = tables();
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t j = t.reversed[i];
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= N; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t stride = N / len;
      for (std::size_t base = 0; base < N; base += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const std::complex<double> u = a[base + j];
          const std::complex<double> v = a[base + j + half] * t.twiddle[j * stride];
          a[base + j] = u + v;
          a[base + j + half] = u - v;
        }
      }
    }
  }

 private:
  struct Tables {
    std::array<std::complex<double>, N / 2> twiddle;
    std::array<std::size_t, N> reversed;
  };

  static const Tables& tables() {
    static const Tables t = [] {
      Tables out{};
      for (std::size_t k = 0; k < N / 2; ++k) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / N;
        out.twiddle[k] = {std::cos(angle), std::sin(angle)};
      }
      const int bits = std::countr_zero(N);
      for (std::size_t i = 0; i < N; ++i) {
        std::size_t r = 0;
        for (int b = 0; b < bits; ++b) {
          if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
        }
        out.reversed[i] = r;
      }
      return out;
    }();
    return t;
  }
};

}  // namespace transaudio::detail
