#pragma once

// Test-only oracles and helpers. Nothing here calls into the FFT or CMM
// code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "nfft/nfft.hpp"

namespace nfft::testing {

template <typename T>
std::vector<T> random_vector(std::size_t n, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> dist(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <typename T>
void fill(std::span<T> data, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> dist(T(-1), T(1));
  for (auto& x : data) x = dist(rng);
}

/// out[y][x] = sum_{i,j} a[(y+i) mod n][(x+j) mod n] * k[i][j], O(n^4).
inline std::vector<double> circular_correlation(std::span<const double> a,
                                                std::span<const double> k, std::size_t n) {
  std::vector<double> out(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s += a[((y + i) % n) * n + (x + j) % n] * k[i * n + j];
      out[y * n + x] = s;
    }
  return out;
}

/// max |a - b| / max |b|.
template <typename A, typename B>
double normwise_error(std::span<const A> a, std::span<const B> b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(double(a[i]) - double(b[i])));
    den = std::max(den, std::abs(double(b[i])));
  }
  return den == 0 ? num : num / den;
}

inline double rel(std::complex<double> a, std::complex<double> b, double floor = 1e-300) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

}  // namespace nfft::testing
