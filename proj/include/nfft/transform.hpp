#pragma once

// Input/kernel transforms that scatter each tile's half-spectrum into
// tuple-major storage, and the inverse transform that gathers a tile's
// tuples back, inverts it and writes the clipped valid region.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nfft/conv_core.hpp"
#include "nfft/error.hpp"
#include "nfft/fft2d.hpp"
#include "nfft/numa_model.hpp"

namespace nfft {

enum class PlacementKind {
  node_pinned,  // tuple range n lives on node n
  interleaved,  // one region, pages round-robin over all nodes
};

enum class OperandKind { G, D, Z };

/// Tuple-major complex tensor: element (t, row, col) is a group of 2L reals,
/// L real parts then L imaginary parts. D is [t][c][m], G is [t][c][c'],
/// Z is [t][c'][m].
template <typename T>
class PackedTensor {
 public:
  struct Block {
    Region region;
    PageBuffer<T> data;
    TupleRange tuples;
  };

  PackedTensor() = default;

  PackedTensor(OperandKind kind, PlacementKind placement, std::size_t tuple_count,
               std::size_t rows, std::size_t cols, std::size_t lanes,
               const std::vector<TupleRange>& node_ranges, const NumaTopology& topo)
      : kind_(kind), placement_(placement), tuple_count_(tuple_count), rows_(rows), cols_(cols),
        lanes_(lanes), block_of_tuple_(tuple_count) {
    const std::size_t tuple_elems = rows * cols * 2 * lanes;
    auto add_block = [&](TupleRange range, PlacementPolicy policy) {
      const std::size_t count = range.size() * tuple_elems;
      Region region = allocate_region(count * sizeof(T), policy, topo);
      PageBuffer<T> buffer(count, region, topo.mode);
      for (std::size_t t = range.begin; t < range.end; ++t) {
        block_of_tuple_[t] = static_cast<std::uint32_t>(blocks_.size());
      }
      blocks_.push_back(Block{std::move(region), std::move(buffer), range});
    };
    if (placement == PlacementKind::node_pinned) {
      if (node_ranges.size() != topo.nodes) {
        throw Error(ErrorKind::configuration, "node ranges do not match topology");
      }
      for (std::size_t n = 0; n < node_ranges.size(); ++n) {
        add_block(node_ranges[n], PlacementPolicy::on_node(n));
      }
    } else {
      add_block({0, tuple_count}, PlacementPolicy::interleaved());
    }
  }

  OperandKind kind() const noexcept { return kind_; }
  PlacementKind placement() const noexcept { return placement_; }
  std::size_t tuple_count() const noexcept { return tuple_count_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t lanes() const noexcept { return lanes_; }
  std::size_t group_elems() const noexcept { return 2 * lanes_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

  const Block& block_of(std::size_t t) const noexcept { return blocks_[block_of_tuple_[t]]; }

  /// Element offset of (t, row, col) within its block.
  std::size_t offset(std::size_t t, std::size_t row, std::size_t col) const noexcept {
    const Block& b = block_of(t);
    return (((t - b.tuples.begin) * rows_ + row) * cols_ + col) * 2 * lanes_;
  }

  T* group(std::size_t t, std::size_t row, std::size_t col) noexcept {
    return const_cast<T*>(std::as_const(*this).group(t, row, col));
  }
  const T* group(std::size_t t, std::size_t row, std::size_t col) const noexcept {
    return block_of(t).data.data() + offset(t, row, col);
  }

  std::complex<T> value(std::size_t t, std::size_t lane, std::size_t row,
                        std::size_t col) const noexcept {
    const T* g = group(t, row, col);
    return {g[lane], g[lanes_ + lane]};
  }

  /// Charges a read or write of `groups` consecutive groups starting at
  /// (t, row, col).
  void record(const WorkerContext& ctx, std::size_t t, std::size_t row, std::size_t col,
              std::size_t groups, Stage stage) const {
    if (ctx.ledger == nullptr) return;
    ctx.record(block_of(t).region, offset(t, row, col) * sizeof(T),
               groups * 2 * lanes_ * sizeof(T), stage);
  }

  std::size_t bytes() const noexcept { return tuple_count_ * rows_ * cols_ * 2 * lanes_ * sizeof(T); }

 private:
  OperandKind kind_ = OperandKind::D;
  PlacementKind placement_ = PlacementKind::interleaved;
  std::size_t tuple_count_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t lanes_ = 0;
  std::vector<std::uint32_t> block_of_tuple_;
  std::vector<Block> blocks_;
};

template <typename T>
using PackedOperand = PackedTensor<T>;
template <typename T>
using ProductTensor = PackedTensor<T>;

namespace detail {

inline void check_pool(const TransformPlan& plan, const WorkerPool& pool) {
  if (pool.nodes() != plan.nodes) {
    throw Error(ErrorKind::configuration, "plan node count does not match worker pool");
  }
}

/// Writes tuple t of a half-spectrum into one 2L group.
template <typename T>
void scatter_tuple(const HalfSpectrum<T>& spec, std::size_t t, std::size_t lanes, T* dst,
                   bool conjugate) noexcept {
  const std::complex<T>* src = spec.values.data() + t * lanes;
  for (std::size_t l = 0; l < lanes; ++l) {
    dst[l] = src[l].real();
    dst[lanes + l] = conjugate ? -src[l].imag() : src[l].imag();
  }
}

}  // namespace detail

/// Stage 1: tile extraction, forward FFT and tuple scatter of the input.
template <typename T>
PackedOperand<T> transform_input(const Tensor4D<T>& input, const TransformPlan& plan,
                                 PlacementKind placement, const WorkerPool& pool,
                                 AccessLedger* ledger = nullptr) {
  const ConvConfig& cfg = plan.config;
  if (input.dims() != typename Tensor4D<T>::Dims{cfg.batch, cfg.in_channels, cfg.in_height,
                                                 cfg.in_width}) {
    throw Error(ErrorKind::configuration, "input tensor dims do not match plan");
  }
  detail::check_pool(plan, pool);

  const NumaTopology& topo = pool.topology();
  const Region input_region =
      allocate_region(input.size() * sizeof(T), PlacementPolicy::interleaved(), topo);
  PackedOperand<T> d(OperandKind::D, placement, plan.tuple_count, cfg.in_channels, plan.m,
                     plan.lanes, plan.node_ranges, topo);

  const std::size_t n = plan.tile;
  const Fft2dPlan<T> fft(n);
  const auto pad = static_cast<std::ptrdiff_t>(cfg.pad);
  const auto hi = static_cast<std::ptrdiff_t>(cfg.in_height);
  const auto wi = static_cast<std::ptrdiff_t>(cfg.in_width);

  // One work item per (b, c, tile row).
  const std::size_t items = cfg.batch * cfg.in_channels * plan.tiles_y;
  pool.run_shared(
      items,
      [&](WorkerContext& ctx, std::size_t item) {
        const std::size_t ty = item % plan.tiles_y;
        const std::size_t c = (item / plan.tiles_y) % cfg.in_channels;
        const std::size_t b = item / (plan.tiles_y * cfg.in_channels);
        auto ws = fft.make_workspace();
        std::vector<T> patch(n * n);
        HalfSpectrum<T> spec(n);
        const T* plane = input.plane(b, c).data();

        for (std::size_t tx = 0; tx < plan.tiles_x; ++tx) {
          const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(ty * plan.out_tile) - pad;
          const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(tx * plan.out_tile) - pad;
          std::fill(patch.begin(), patch.end(), T(0));
          const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -ox);
          const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n), wi - ox);
          if (x_lo < x_hi) {
            for (std::size_t h = 0; h < n; ++h) {
              const std::ptrdiff_t y = oy + static_cast<std::ptrdiff_t>(h);
              if (y < 0 || y >= hi) continue;
              const std::size_t src = static_cast<std::size_t>(y * wi + ox + x_lo);
              std::copy_n(plane + src, x_hi - x_lo, patch.data() + h * n + x_lo);
              ctx.record(input_region, (input.index(b, c, 0, 0) + src) * sizeof(T),
                         static_cast<std::size_t>(x_hi - x_lo) * sizeof(T), Stage::input_fetch);
            }
          }
          fft.forward(patch, spec, ws);

          const std::size_t m = plan.tile_column(b, ty, tx);
          for (std::size_t t = 0; t < plan.tuple_count; ++t) {
            detail::scatter_tuple(spec, t, plan.lanes, d.group(t, c, m), false);
            d.record(ctx, t, c, m, 1, Stage::input_store);
          }
        }
      },
      ledger);
  return d;
}

/// Stage 2: zero-pad each kernel to the tile (top-left), transform,
/// conjugate and scatter into G[t][c][c'].
template <typename T>
PackedOperand<T> transform_kernel(const Tensor4D<T>& kernel, const TransformPlan& plan,
                                  PlacementKind placement, const WorkerPool& pool,
                                  AccessLedger* ledger = nullptr) {
  const ConvConfig& cfg = plan.config;
  if (kernel.dims() != typename Tensor4D<T>::Dims{cfg.out_channels, cfg.in_channels,
                                                  cfg.kernel_height, cfg.kernel_width}) {
    throw Error(ErrorKind::configuration, "kernel tensor dims do not match plan");
  }
  detail::check_pool(plan, pool);

  const NumaTopology& topo = pool.topology();
  const Region kernel_region =
      allocate_region(kernel.size() * sizeof(T), PlacementPolicy::interleaved(), topo);
  PackedOperand<T> g(OperandKind::G, placement, plan.tuple_count, cfg.in_channels,
                     cfg.out_channels, plan.lanes, plan.node_ranges, topo);

  const std::size_t n = plan.tile;
  const Fft2dPlan<T> fft(n);
  const std::size_t kh = cfg.kernel_height;
  const std::size_t kw = cfg.kernel_width;

  pool.run_shared(
      cfg.out_channels * cfg.in_channels,
      [&](WorkerContext& ctx, std::size_t item) {
        const std::size_t co = item / cfg.in_channels;
        const std::size_t c = item % cfg.in_channels;
        auto ws = fft.make_workspace();
        std::vector<T> padded(n * n, T(0));
        const T* src = kernel.plane(co, c).data();
        for (std::size_t i = 0; i < kh; ++i) std::copy_n(src + i * kw, kw, padded.data() + i * n);
        ctx.record(kernel_region, kernel.index(co, c, 0, 0) * sizeof(T), kh * kw * sizeof(T),
                   Stage::kernel_fetch);

        HalfSpectrum<T> spec(n);
        fft.forward(padded, spec, ws);
        for (std::size_t t = 0; t < plan.tuple_count; ++t) {
          detail::scatter_tuple(spec, t, plan.lanes, g.group(t, c, co), true);
          g.record(ctx, t, c, co, 1, Stage::kernel_store);
        }
      },
      ledger);
  return g;
}

/// Stage 4: gather every tuple of a tile from Z, invert, and write the
/// valid region clipped to the output extent.
template <typename T>
Tensor4D<T> inverse_transform_output(const ProductTensor<T>& z, const TransformPlan& plan,
                                     const ConvConfig& cfg, const WorkerPool& pool,
                                     AccessLedger* ledger = nullptr) {
  if (!(cfg == plan.config)) throw Error(ErrorKind::configuration, "config does not match plan");
  if (z.tuple_count() != plan.tuple_count || z.rows() != cfg.out_channels || z.cols() != plan.m ||
      z.lanes() != plan.lanes) {
    throw Error(ErrorKind::configuration, "product tensor shape does not match plan");
  }
  detail::check_pool(plan, pool);

  const NumaTopology& topo = pool.topology();
  Tensor4D<T> out = make_output<T>(cfg);
  const Region output_region =
      allocate_region(out.size() * sizeof(T), PlacementPolicy::interleaved(), topo);

  const std::size_t n = plan.tile;
  const std::size_t lanes = plan.lanes;
  const std::size_t ho = cfg.out_height();
  const std::size_t wo = cfg.out_width();
  const Fft2dPlan<T> fft(n);

  const std::size_t items = cfg.batch * cfg.out_channels * plan.tiles_y;
  pool.run_shared(
      items,
      [&](WorkerContext& ctx, std::size_t item) {
        const std::size_t ty = item % plan.tiles_y;
        const std::size_t co = (item / plan.tiles_y) % cfg.out_channels;
        const std::size_t b = item / (plan.tiles_y * cfg.out_channels);
        auto ws = fft.make_workspace();
        HalfSpectrum<T> spec(n);
        std::vector<T> tile(n * n);
        T* plane = out.plane(b, co).data();

        for (std::size_t tx = 0; tx < plan.tiles_x; ++tx) {
          const std::size_t m = plan.tile_column(b, ty, tx);
          for (std::size_t t = 0; t < plan.tuple_count; ++t) {
            const T* grp = z.group(t, co, m);
            std::complex<T>* dst = spec.values.data() + t * lanes;
            for (std::size_t l = 0; l < lanes; ++l) dst[l] = {grp[l], grp[lanes + l]};
            z.record(ctx, t, co, m, 1, Stage::output_fetch);
          }
          fft.inverse(spec, tile, ws);

          const std::size_t y0 = ty * plan.out_tile;
          const std::size_t x0 = tx * plan.out_tile;
          const std::size_t rows = std::min(plan.out_tile, ho - y0);
          const std::size_t cols = std::min(plan.out_tile, wo - x0);
          for (std::size_t y = 0; y < rows; ++y) {
            std::copy_n(tile.data() + y * n, cols, plane + (y0 + y) * wo + x0);
            ctx.record(output_region, out.index(b, co, y0 + y, x0) * sizeof(T), cols * sizeof(T),
                       Stage::output_store);
          }
        }
      },
      ledger);
  return out;
}

}  // namespace nfft
