#pragma once

// Problem configuration, tiling plan, tuple partitioning and the direct
// convolution used as the reference for every FFT-based variant.

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfft/error.hpp"

namespace nfft {

enum class ElementKind { fp32, fp64 };

constexpr std::string_view to_string(ElementKind kind) noexcept {
  return kind == ElementKind::fp32 ? "fp32" : "fp64";
}

/// A unit-stride convolution layer. Input is BCHW, kernel is C'CHW.
struct ConvConfig {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t kernel_height = 1;
  std::size_t kernel_width = 1;
  std::size_t pad = 0;
  ElementKind element = ElementKind::fp32;

  // Callers must validate() first; these assume the sizes are consistent.
  std::size_t out_height() const noexcept { return in_height + 2 * pad - kernel_height + 1; }
  std::size_t out_width() const noexcept { return in_width + 2 * pad - kernel_width + 1; }

  void validate() const {
    if (batch == 0 || in_channels == 0 || out_channels == 0 || in_height == 0 || in_width == 0 ||
        kernel_height == 0 || kernel_width == 0) {
      throw Error(ErrorKind::configuration, "all convolution dimensions must be >= 1");
    }
    if (in_height + 2 * pad < kernel_height || in_width + 2 * pad < kernel_width) {
      throw Error(ErrorKind::configuration, "kernel larger than padded input");
    }
  }

  bool operator==(const ConvConfig&) const = default;
};

template <typename T>
class Tensor4D {
 public:
  using value_type = T;
  using Dims = std::array<std::size_t, 4>;

  Tensor4D() = default;
  explicit Tensor4D(Dims dims, T fill = T{})
      : dims_(dims), data_(dims[0] * dims[1] * dims[2] * dims[3], fill) {}

  const Dims& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t i) const noexcept { return dims_[i]; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return ((a * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
  }
  T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
    return data_[index(a, b, c, d)];
  }
  const T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return data_[index(a, b, c, d)];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  /// Contiguous H×W plane for (a, b).
  std::span<T> plane(std::size_t a, std::size_t b) noexcept {
    return std::span<T>(data_).subspan(index(a, b, 0, 0), dims_[2] * dims_[3]);
  }
  std::span<const T> plane(std::size_t a, std::size_t b) const noexcept {
    return std::span<const T>(data_).subspan(index(a, b, 0, 0), dims_[2] * dims_[3]);
  }

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
Tensor4D<T> make_input(const ConvConfig& cfg) {
  return Tensor4D<T>({cfg.batch, cfg.in_channels, cfg.in_height, cfg.in_width});
}
template <typename T>
Tensor4D<T> make_kernel(const ConvConfig& cfg) {
  return Tensor4D<T>({cfg.out_channels, cfg.in_channels, cfg.kernel_height, cfg.kernel_width});
}
template <typename T>
Tensor4D<T> make_output(const ConvConfig& cfg) {
  return Tensor4D<T>({cfg.batch, cfg.out_channels, cfg.out_height(), cfg.out_width()});
}

/// Half-open range of tuple indices owned by one NUMA node.
struct TupleRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t t) const noexcept { return t >= begin && t < end; }
  bool operator==(const TupleRange&) const = default;
};

/// Splits [0, tuple_count) into `nodes` contiguous ranges; the first
/// tuple_count % nodes ranges get one extra tuple.
inline std::vector<TupleRange> partition_tuples(std::size_t tuple_count, std::size_t nodes) {
  if (nodes == 0) throw Error(ErrorKind::configuration, "node count must be >= 1");
  std::vector<TupleRange> ranges(nodes);
  const std::size_t base = tuple_count / nodes;
  const std::size_t extra = tuple_count % nodes;
  std::size_t cursor = 0;
  for (std::size_t n = 0; n < nodes; ++n) {
    const std::size_t len = base + (n < extra ? 1 : 0);
    ranges[n] = {cursor, cursor + len};
    cursor += len;
  }
  return ranges;
}

struct TileIndex {
  std::size_t row = 0;    // alpha
  std::size_t col = 0;    // beta
  std::size_t batch = 0;  // b
};

/// Frequency point (row, col) of the stored half-spectrum; row <= tile/2.
struct FreqPoint {
  std::size_t row = 0;
  std::size_t col = 0;

  std::size_t linear(std::size_t tile) const noexcept { return row * tile + col; }
  std::size_t tuple(std::size_t tile, std::size_t lanes) const noexcept {
    return linear(tile) / lanes;
  }
  std::size_t lane(std::size_t tile, std::size_t lanes) const noexcept {
    return linear(tile) % lanes;
  }
};

/// Tiling and frequency geometry derived from a ConvConfig.
struct TransformPlan {
  ConvConfig config;
  std::size_t tile = 0;        // delta
  std::size_t out_tile = 0;    // valid output extent per tile
  std::size_t tiles_y = 0;     // X
  std::size_t tiles_x = 0;     // Delta
  std::size_t tiles_per_map = 0;
  std::size_t m = 0;           // batch * tiles_per_map
  std::size_t lanes = 0;       // L
  std::size_t freq_points = 0;
  std::size_t tuple_count = 0;
  std::size_t nodes = 0;
  std::vector<TupleRange> node_ranges;

  std::size_t tile_column(std::size_t b, std::size_t ty, std::size_t tx) const noexcept {
    return b * tiles_per_map + ty * tiles_x + tx;
  }
  TileIndex tile_of(std::size_t column) const noexcept {
    const std::size_t b = column / tiles_per_map;
    const std::size_t mu = column % tiles_per_map;
    return {mu / tiles_x, mu % tiles_x, b};
  }
  std::size_t owner_of_tuple(std::size_t t) const noexcept {
    for (std::size_t n = 0; n < node_ranges.size(); ++n) {
      if (node_ranges[n].contains(t)) return n;
    }
    return node_ranges.size();
  }
};

inline TransformPlan make_plan(const ConvConfig& cfg, std::size_t tile, std::size_t lanes,
                               std::size_t nodes) {
  cfg.validate();
  if (lanes == 0) throw Error(ErrorKind::plan, "lane width must be >= 1");
  if (nodes == 0) throw Error(ErrorKind::configuration, "node count must be >= 1");
  if (tile <= std::max(cfg.kernel_height, cfg.kernel_width)) {
    throw Error(ErrorKind::plan, "tile size " + std::to_string(tile) +
                                     " must exceed the kernel extent");
  }
  if (tile % 2 != 0 || !std::has_single_bit(tile)) {
    throw Error(ErrorKind::plan, "tile size must be an even power of two");
  }
  if (tile % (2 * lanes) != 0) {
    throw Error(ErrorKind::plan, "tile size must be a multiple of 2 * lanes");
  }

  TransformPlan plan;
  plan.config = cfg;
  plan.tile = tile;
  // Square tiles; the valid extent is limited by the larger kernel side.
  plan.out_tile = tile - std::max(cfg.kernel_height, cfg.kernel_width) + 1;
  plan.tiles_y = (cfg.out_height() + plan.out_tile - 1) / plan.out_tile;
  plan.tiles_x = (cfg.out_width() + plan.out_tile - 1) / plan.out_tile;
  plan.tiles_per_map = plan.tiles_y * plan.tiles_x;
  plan.m = cfg.batch * plan.tiles_per_map;
  plan.lanes = lanes;
  plan.freq_points = (tile / 2 + 1) * tile;
  plan.tuple_count = plan.freq_points / lanes;
  plan.nodes = nodes;
  plan.node_ranges = partition_tuples(plan.tuple_count, nodes);
  return plan;
}

/// Reference cross-correlation with symmetric zero padding. Accumulates in
/// double regardless of T.
template <typename T>
Tensor4D<T> direct_conv(const Tensor4D<T>& input, const Tensor4D<T>& kernel,
                        const ConvConfig& cfg) {
  cfg.validate();
  if (input.dims() != typename Tensor4D<T>::Dims{cfg.batch, cfg.in_channels, cfg.in_height,
                                                 cfg.in_width}) {
    throw Error(ErrorKind::configuration, "input tensor dims do not match config");
  }
  if (kernel.dims() != typename Tensor4D<T>::Dims{cfg.out_channels, cfg.in_channels,
                                                  cfg.kernel_height, cfg.kernel_width}) {
    throw Error(ErrorKind::configuration, "kernel tensor dims do not match config");
  }

  const std::size_t ho = cfg.out_height();
  const std::size_t wo = cfg.out_width();
  const auto hi = static_cast<std::ptrdiff_t>(cfg.in_height);
  const auto wi = static_cast<std::ptrdiff_t>(cfg.in_width);
  const auto pad = static_cast<std::ptrdiff_t>(cfg.pad);

  Tensor4D<T> out = make_output<T>(cfg);
  std::vector<double> acc(ho * wo);
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    for (std::size_t co = 0; co < cfg.out_channels; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t c = 0; c < cfg.in_channels; ++c) {
        const auto in = input.plane(b, c);
        for (std::size_t i = 0; i < cfg.kernel_height; ++i) {
          for (std::size_t j = 0; j < cfg.kernel_width; ++j) {
            const double k = kernel(co, c, i, j);
            if (k == 0.0) continue;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pad;
            // Output columns w with 0 <= w + dx < wi.
            const std::ptrdiff_t w_lo = std::max<std::ptrdiff_t>(0, -dx);
            const std::ptrdiff_t w_hi =
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(wo), wi - dx);
            if (w_lo >= w_hi) continue;
            for (std::size_t h = 0; h < ho; ++h) {
              const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h + i) - pad;
              if (y < 0 || y >= hi) continue;
              const T* row = in.data() + y * wi;
              double* dst = acc.data() + h * wo;
              for (std::ptrdiff_t w = w_lo; w < w_hi; ++w) dst[w] += k * double(row[w + dx]);
            }
          }
        }
      }
      auto dst = out.plane(b, co);
      for (std::size_t p = 0; p < acc.size(); ++p) dst[p] = static_cast<T>(acc[p]);
    }
  }
  return out;
}

}  // namespace nfft
