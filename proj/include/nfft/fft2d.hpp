#pragma once

// Real-input 2D FFT on square power-of-two tiles. Only rows 0..n/2 of the
// spectrum are kept; the rest follow from Hermitian symmetry.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "nfft/error.hpp"

namespace nfft {

/// Rows 0..n/2 of the 2D spectrum of a real n×n tile, row-major, so point
/// (row, col) lives at row * n + col.
template <std::floating_point T>
struct HalfSpectrum {
  std::size_t tile = 0;
  std::vector<std::complex<T>> values;

  HalfSpectrum() = default;
  explicit HalfSpectrum(std::size_t n) : tile(n), values((n / 2 + 1) * n) {}

  std::size_t size() const noexcept { return values.size(); }
  std::complex<T>& at(std::size_t row, std::size_t col) noexcept { return values[row * tile + col]; }
  const std::complex<T>& at(std::size_t row, std::size_t col) const noexcept {
    return values[row * tile + col];
  }
};

/// Iterative radix-2 complex FFT of one length. Twiddles are generated in
/// double and rounded to T once.
template <std::floating_point T>
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0 || !std::has_single_bit(n)) {
      throw Error(ErrorKind::plan, "FFT length must be a power of two");
    }
    twiddles_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * double(k) / double(n);
      twiddles_[k] = {static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle))};
    }
    bitrev_.resize(n);
    const int bits = std::countr_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t size() const noexcept { return n_; }

  /// In-place unnormalized transform; inverse uses conjugate twiddles.
  void transform(std::span<std::complex<T>> data, bool inverse) const noexcept {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(data[i], data[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          std::complex<T> w = twiddles_[k * step];
          if (inverse) w = std::conj(w);
          const std::complex<T> a = data[start + k];
          const std::complex<T> b = mul(data[start + k + half], w);
          data[start + k] = a + b;
          data[start + k + half] = a - b;
        }
      }
    }
  }

 private:
  // std::complex operator* carries NaN/Inf recovery that blocks vectorization.
  static std::complex<T> mul(std::complex<T> a, std::complex<T> b) noexcept {
    return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
  }

  std::size_t n_;
  std::vector<std::complex<T>> twiddles_;
  std::vector<std::size_t> bitrev_;
};

/// Row-column 2D transform plan for n×n real tiles. Immutable after
/// construction; scratch lives in the caller-provided workspace.
template <std::floating_point T>
class Fft2dPlan {
 public:
  struct Workspace {
    std::vector<std::complex<T>> grid;
    std::vector<std::complex<T>> line;
  };

  explicit Fft2dPlan(std::size_t n) : n_(n), line_(n) {
    if (n < 2 || n % 2 != 0) throw Error(ErrorKind::plan, "tile size must be even");
  }

  std::size_t tile() const noexcept { return n_; }
  std::size_t half_points() const noexcept { return (n_ / 2 + 1) * n_; }

  Workspace make_workspace() const {
    return Workspace{std::vector<std::complex<T>>(n_ * n_), std::vector<std::complex<T>>(n_)};
  }

  void forward(std::span<const T> tile, HalfSpectrum<T>& out, Workspace& ws) const {
    const std::size_t n = n_;
    if (tile.size() != n * n) throw Error(ErrorKind::plan, "tile buffer size mismatch");
    if (out.tile != n) out = HalfSpectrum<T>(n);
    auto& grid = ws.grid;
    for (std::size_t h = 0; h < n; ++h) {
      std::span<std::complex<T>> row(grid.data() + h * n, n);
      for (std::size_t w = 0; w < n; ++w) row[w] = {tile[h * n + w], T(0)};
      line_.transform(row, false);
    }
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t h = 0; h < n; ++h) ws.line[h] = grid[h * n + v];
      line_.transform(ws.line, false);
      for (std::size_t u = 0; u <= n / 2; ++u) out.values[u * n + v] = ws.line[u];
    }
  }

  HalfSpectrum<T> forward(std::span<const T> tile) const {
    auto ws = make_workspace();
    HalfSpectrum<T> out(n_);
    forward(tile, out, ws);
    return out;
  }

  /// Throws a data error if rows 0 and n/2 are not conjugate-symmetric
  /// within sqrt(eps) of the spectrum's peak magnitude.
  void check_symmetry(const HalfSpectrum<T>& spec) const {
    const std::size_t n = n_;
    T peak = 0;
    for (const auto& v : spec.values) peak = std::max(peak, std::abs(v));
    const T tol = std::sqrt(std::numeric_limits<T>::epsilon()) * std::max(peak, T(1e-30));
    for (std::size_t u : {std::size_t{0}, n / 2}) {
      for (std::size_t v = 0; v < n; ++v) {
        const auto a = spec.at(u, v);
        const auto b = std::conj(spec.at(u, (n - v) % n));
        if (!(std::abs(a - b) <= tol)) {
          throw Error(ErrorKind::data, "half-spectrum violates Hermitian symmetry at (" +
                                           std::to_string(u) + ", " + std::to_string(v) + ")");
        }
      }
    }
  }

  /// Full inverse returning the complex result scaled by 1/n^2; the real
  /// part is the tile, the imaginary part is rounding residue.
  void inverse_complex(const HalfSpectrum<T>& spec, Workspace& ws) const {
    const std::size_t n = n_;
    if (spec.tile != n || spec.size() != half_points()) {
      throw Error(ErrorKind::plan, "spectrum size does not match plan");
    }
    auto& grid = ws.grid;
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t u = 0; u <= n / 2; ++u) ws.line[u] = spec.at(u, v);
      for (std::size_t u = n / 2 + 1; u < n; ++u) ws.line[u] = std::conj(spec.at(n - u, (n - v) % n));
      line_.transform(ws.line, true);
      for (std::size_t h = 0; h < n; ++h) grid[h * n + v] = ws.line[h];
    }
    const T scale = T(1) / static_cast<T>(n * n);
    for (std::size_t h = 0; h < n; ++h) {
      std::span<std::complex<T>> row(grid.data() + h * n, n);
      line_.transform(row, true);
      for (auto& x : row) x *= scale;
    }
  }

  void inverse(const HalfSpectrum<T>& spec, std::span<T> tile, Workspace& ws) const {
    check_symmetry(spec);
    inverse_complex(spec, ws);
    for (std::size_t i = 0; i < n_ * n_; ++i) tile[i] = ws.grid[i].real();
  }

  std::vector<T> inverse(const HalfSpectrum<T>& spec) const {
    auto ws = make_workspace();
    std::vector<T> tile(n_ * n_);
    inverse(spec, tile, ws);
    return tile;
  }

 private:
  std::size_t n_;
  FftPlan<T> line_;
};

/// O(n^4) direct DFT: S[u,v] = sum tile[h,w] exp(-2 pi i (uh + vw) / n).
template <std::floating_point T>
std::vector<std::complex<double>> dft2d_reference(std::span<const T> tile, std::size_t n) {
  std::vector<std::complex<double>> roots(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = -2.0 * std::numbers::pi * double(k) / double(n);
    roots[k] = {std::cos(angle), std::sin(angle)};
  }
  std::vector<std::complex<double>> out(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      std::complex<double> sum = 0;
      for (std::size_t h = 0; h < n; ++h) {
        for (std::size_t w = 0; w < n; ++w) {
          sum += double(tile[h * n + w]) * roots[(u * h + v * w) % n];
        }
      }
      out[u * n + v] = sum;
    }
  }
  return out;
}

template <std::floating_point T>
HalfSpectrum<T> fft2d_real_forward(std::span<const T> tile, std::size_t n) {
  return Fft2dPlan<T>(n).forward(tile);
}

template <std::floating_point T>
std::vector<T> ifft2d_real_inverse(const HalfSpectrum<T>& spec) {
  return Fft2dPlan<T>(spec.tile).inverse(spec);
}

/// Full n×n Hermitian extension of a half-spectrum.
template <std::floating_point T>
std::vector<std::complex<T>> reconstruct_full(const HalfSpectrum<T>& spec) {
  const std::size_t n = spec.tile;
  std::vector<std::complex<T>> full(n * n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      full[u * n + v] = u <= n / 2 ? spec.at(u, v) : std::conj(spec.at(n - u, (n - v) % n));
    }
  }
  return full;
}

}  // namespace nfft
