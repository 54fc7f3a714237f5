#pragma once

// Batched complex matrix multiplication Z[t] = G[t]^T-by-tuple * D[t]:
//   Z[t][c'][m] = sum_c G[t][c][c'] * D[t][c][m], independently per lane.
// Two schedules: the node-affine three-level one (nFFT) and the flat
// two-level baseline (wFFT).

#include <algorithm>
#include <atomic>
#include <bit>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "nfft/conv_core.hpp"
#include "nfft/error.hpp"
#include "nfft/numa_model.hpp"
#include "nfft/transform.hpp"

namespace nfft {

struct BlockingParams {
  std::size_t register_batch = 4;  // B_r: rows of D (batch entries) per micro-tile
  std::size_t register_out = 2;    // C'_r: output channels per micro-tile
  std::size_t l1_in = 64;          // C_l1: input channels per reduction block
  std::size_t l2_out = 64;         // C'_l2: output channels per core-level block

  /// Clamps to the problem and keeps register_out dividing l2_out.
  BlockingParams clamped(std::size_t in_channels, std::size_t out_channels) const {
    BlockingParams bp = *this;
    bp.register_batch = std::max<std::size_t>(bp.register_batch, 1);
    bp.register_out = std::clamp<std::size_t>(bp.register_out, 1, out_channels);
    bp.l1_in = std::clamp<std::size_t>(bp.l1_in, 1, in_channels);
    bp.l2_out = std::clamp<std::size_t>(bp.l2_out, bp.register_out, out_channels);
    bp.l2_out -= bp.l2_out % bp.register_out;
    return bp;
  }

  bool operator==(const BlockingParams&) const = default;
};

/// Register and cache block sizes from cache capacities. The reduction
/// block is the largest power of two (>= 8) whose G and D panels fill at
/// most half of L1; the output block then fills at most half of L2.
inline BlockingParams default_blocking(std::size_t in_channels, std::size_t out_channels,
                                       std::size_t cache_l1, std::size_t cache_l2,
                                       std::size_t lanes, std::size_t element_size) {
  BlockingParams bp;
  bp.register_batch = 4;
  bp.register_out = std::min<std::size_t>(2, std::max<std::size_t>(out_channels, 1));
  const std::size_t group = 2 * lanes * element_size;

  std::size_t l1 = 8;
  while ((bp.register_batch + bp.register_out) * (l1 * 2) * group <= cache_l1 / 2) l1 *= 2;
  bp.l1_in = std::clamp<std::size_t>(l1, std::min<std::size_t>(8, in_channels), in_channels);

  std::size_t l2 = (cache_l2 / 2) / (bp.l1_in * group);
  l2 -= l2 % bp.register_out;
  bp.l2_out = std::clamp<std::size_t>(l2, bp.register_out, std::max(out_channels, bp.register_out));
  bp.l2_out = std::min(bp.l2_out, std::max<std::size_t>(out_channels, 1));
  bp.l2_out -= bp.l2_out % bp.register_out;
  return bp;
}

enum class Schedule { three_level, two_level };

/// Strided view of the operand rows one micro-kernel call consumes: row r
/// at reduction index c starts at base + c * c_stride + r * row_stride and
/// holds one 2L group.
template <typename T>
struct MicroPanel {
  const T* base = nullptr;
  std::size_t rows = 0;
  std::size_t row_stride = 0;
  std::size_t c_stride = 0;
};

/// Accumulator for rows × cols complex-lane groups, laid out [r][s][2L].
template <typename T>
struct MicroTile {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t lanes = 0;

  T* group(std::size_t r, std::size_t s) const noexcept { return data + (r * cols + s) * 2 * lanes; }
  void zero() const noexcept { std::fill_n(data, rows * cols * 2 * lanes, T(0)); }
};

namespace detail {

template <typename T, std::size_t L>
void micro_kernel_fixed(const MicroPanel<T>& g, const MicroPanel<T>& d, const MicroTile<T>& acc,
                        std::size_t c_extent) noexcept {
  for (std::size_t c = 0; c < c_extent; ++c) {
    const T* gc = g.base + c * g.c_stride;
    const T* dc = d.base + c * d.c_stride;
    for (std::size_t r = 0; r < d.rows; ++r) {
      const T* dr = dc + r * d.row_stride;
      for (std::size_t s = 0; s < g.rows; ++s) {
        const T* gs = gc + s * g.row_stride;
        T* z = acc.group(r, s);
        for (std::size_t l = 0; l < L; ++l) {
          z[l] += gs[l] * dr[l] - gs[L + l] * dr[L + l];
          z[L + l] += gs[l] * dr[L + l] + gs[L + l] * dr[l];
        }
      }
    }
  }
}

template <typename T>
void micro_kernel_generic(const MicroPanel<T>& g, const MicroPanel<T>& d, const MicroTile<T>& acc,
                          std::size_t c_extent) noexcept {
  const std::size_t L = acc.lanes;
  for (std::size_t c = 0; c < c_extent; ++c) {
    const T* gc = g.base + c * g.c_stride;
    const T* dc = d.base + c * d.c_stride;
    for (std::size_t r = 0; r < d.rows; ++r) {
      const T* dr = dc + r * d.row_stride;
      for (std::size_t s = 0; s < g.rows; ++s) {
        const T* gs = gc + s * g.row_stride;
        T* z = acc.group(r, s);
        for (std::size_t l = 0; l < L; ++l) {
          z[l] += gs[l] * dr[l] - gs[L + l] * dr[L + l];
          z[L + l] += gs[l] * dr[L + l] + gs[L + l] * dr[l];
        }
      }
    }
  }
}

}  // namespace detail

/// acc[r][s] += sum_{c < c_extent} g[s, c] * d[r, c], L independent lanes.
/// Accumulation order is c ascending for every cell.
template <typename T>
void cmm_micro_kernel(const MicroPanel<T>& g, const MicroPanel<T>& d, const MicroTile<T>& acc,
                      std::size_t c_extent) noexcept {
  switch (acc.lanes) {
    case 1: detail::micro_kernel_fixed<T, 1>(g, d, acc, c_extent); break;
    case 2: detail::micro_kernel_fixed<T, 2>(g, d, acc, c_extent); break;
    case 4: detail::micro_kernel_fixed<T, 4>(g, d, acc, c_extent); break;
    case 8: detail::micro_kernel_fixed<T, 8>(g, d, acc, c_extent); break;
    case 16: detail::micro_kernel_fixed<T, 16>(g, d, acc, c_extent); break;
    default: detail::micro_kernel_generic(g, d, acc, c_extent); break;
  }
}

/// Unblocked oracle for one frequency point: g is out×in row-major, d is
/// in×cols row-major, result is out×cols. Accumulates in double.
template <typename T>
std::vector<std::complex<double>> cmm_reference(std::span<const std::complex<T>> g,
                                                std::span<const std::complex<T>> d,
                                                std::size_t out, std::size_t in, std::size_t cols) {
  if (g.size() != out * in || d.size() != in * cols) {
    throw Error(ErrorKind::configuration, "cmm_reference shape mismatch");
  }
  std::vector<std::complex<double>> z(out * cols);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t c = 0; c < in; ++c) {
      const std::complex<double> gv(g[o * in + c]);
      for (std::size_t m = 0; m < cols; ++m) z[o * cols + m] += gv * std::complex<double>(d[c * cols + m]);
    }
  }
  return z;
}

/// Optional instrumentation: which tuples each node's group ran, and how
/// many times each (t, c', m) cell was stored.
struct CmmTrace {
  std::vector<std::set<std::size_t>> tuples_by_node;
  std::vector<std::uint32_t> cell_writes;
  std::mutex mutex;
};

namespace detail {

/// Geometry of the (cs', bs, mu) iteration space.
struct CmmGeometry {
  std::size_t in = 0, out = 0, batch = 0, tiles = 0, m = 0, lanes = 0;
  BlockingParams bp;
  std::size_t out_blocks = 0, batch_blocks = 0, items = 0;

  struct Item {
    std::size_t out_begin, out_len;      // cs', C'_l2 clipped
    std::size_t batch_begin, batch_len;  // bs, B_r clipped
    std::size_t tile;                    // mu
    std::size_t acc_elems;
  };

  Item item(std::size_t k) const noexcept {
    const std::size_t mu = k % tiles;
    const std::size_t bsi = (k / tiles) % batch_blocks;
    const std::size_t csi = k / (tiles * batch_blocks);
    Item it{};
    it.out_begin = csi * bp.l2_out;
    it.out_len = std::min(bp.l2_out, out - it.out_begin);
    it.batch_begin = bsi * bp.register_batch;
    it.batch_len = std::min(bp.register_batch, batch - it.batch_begin);
    it.tile = mu;
    it.acc_elems = it.batch_len * it.out_len * 2 * lanes;
    return it;
  }
};

inline CmmGeometry make_geometry(const TransformPlan& plan, const BlockingParams& bp) {
  CmmGeometry geo;
  geo.in = plan.config.in_channels;
  geo.out = plan.config.out_channels;
  geo.batch = plan.config.batch;
  geo.tiles = plan.tiles_per_map;
  geo.m = plan.m;
  geo.lanes = plan.lanes;
  geo.bp = bp.clamped(geo.in, geo.out);
  geo.out_blocks = (geo.out + geo.bp.l2_out - 1) / geo.bp.l2_out;
  geo.batch_blocks = (geo.batch + geo.bp.register_batch - 1) / geo.bp.register_batch;
  geo.items = geo.out_blocks * geo.batch_blocks * geo.tiles;
  return geo;
}

/// Runs the output-channel loop of one item for reduction block [c0, c0 + clen),
/// accumulating into acc (laid out as consecutive micro-tiles).
template <typename T>
void run_item_block(const WorkerContext& ctx, const PackedOperand<T>& g, const PackedOperand<T>& d,
                    const CmmGeometry& geo, const CmmGeometry::Item& it, std::size_t t,
                    std::size_t c0, std::size_t clen, T* acc) {
  const std::size_t group = 2 * geo.lanes;
  const std::size_t m0 = it.batch_begin * geo.tiles + it.tile;
  MicroPanel<T> dp{d.group(t, c0, m0), it.batch_len, geo.tiles * group, geo.m * group};

  for (std::size_t s0 = 0; s0 < it.out_len; s0 += geo.bp.register_out) {
    const std::size_t slen = std::min(geo.bp.register_out, it.out_len - s0);
    const std::size_t co = it.out_begin + s0;
    MicroPanel<T> gp{g.group(t, c0, co), slen, group, geo.out * group};
    MicroTile<T> tile{acc + it.batch_len * s0 * group, it.batch_len, slen, geo.lanes};
    cmm_micro_kernel(gp, dp, tile, clen);
    if (ctx.ledger != nullptr) {
      for (std::size_t c = c0; c < c0 + clen; ++c) g.record(ctx, t, c, co, slen, Stage::cmm_fetch);
    }
  }
  // The D panel is sized to stay in L1 across the output-channel loop, so
  // it is fetched from memory once per block.
  if (ctx.ledger != nullptr) {
    for (std::size_t c = c0; c < c0 + clen; ++c) {
      for (std::size_t r = 0; r < it.batch_len; ++r) {
        d.record(ctx, t, c, m0 + r * geo.tiles, 1, Stage::cmm_fetch);
      }
    }
  }
}

template <typename T>
void store_item(const WorkerContext& ctx, ProductTensor<T>& z, const CmmGeometry& geo,
                const CmmGeometry::Item& it, std::size_t t, const T* acc, CmmTrace* trace) {
  const std::size_t group = 2 * geo.lanes;
  for (std::size_t s0 = 0; s0 < it.out_len; s0 += geo.bp.register_out) {
    const std::size_t slen = std::min(geo.bp.register_out, it.out_len - s0);
    const T* tile = acc + it.batch_len * s0 * group;
    for (std::size_t r = 0; r < it.batch_len; ++r) {
      const std::size_t m = (it.batch_begin + r) * geo.tiles + it.tile;
      for (std::size_t s = 0; s < slen; ++s) {
        const std::size_t co = it.out_begin + s0 + s;
        std::copy_n(tile + (r * slen + s) * group, group, z.group(t, co, m));
        z.record(ctx, t, co, m, 1, Stage::cmm_store);
        if (trace != nullptr && !trace->cell_writes.empty()) {
          std::atomic_ref<std::uint32_t>(trace->cell_writes[(t * geo.out + co) * geo.m + m])
              .fetch_add(1, std::memory_order_relaxed);
        }
      }
    }
  }
}

}  // namespace detail

/// Stage 3. three_level requires node-pinned G and D: node n's group runs
/// exactly the tuples in plan.node_ranges[n], its U workers split the
/// (cs', bs, mu) items round-robin, and the c-blocks run sequentially with
/// partial sums kept per cell until the last block. two_level requires
/// interleaved operands and feeds (t, cs', bs, mu) items to all workers
/// through one queue.
template <typename T>
ProductTensor<T> cmm_execute(const PackedOperand<T>& g, const PackedOperand<T>& d,
                             const TransformPlan& plan, const BlockingParams& blocking,
                             Schedule schedule, const WorkerPool& pool,
                             AccessLedger* ledger = nullptr, CmmTrace* trace = nullptr) {
  const ConvConfig& cfg = plan.config;
  if (g.kind() != OperandKind::G || d.kind() != OperandKind::D) {
    throw Error(ErrorKind::configuration, "cmm_execute expects G and D operands");
  }
  if (g.tuple_count() != plan.tuple_count || d.tuple_count() != plan.tuple_count ||
      g.rows() != cfg.in_channels || g.cols() != cfg.out_channels || d.rows() != cfg.in_channels ||
      d.cols() != plan.m || g.lanes() != plan.lanes || d.lanes() != plan.lanes) {
    throw Error(ErrorKind::configuration, "operand shapes do not match plan");
  }
  const PlacementKind want =
      schedule == Schedule::three_level ? PlacementKind::node_pinned : PlacementKind::interleaved;
  if (g.placement() != want || d.placement() != want) {
    throw Error(ErrorKind::configuration,
                schedule == Schedule::three_level
                    ? "three-level schedule needs node-pinned G and D"
                    : "two-level schedule needs interleaved G and D");
  }
  detail::check_pool(plan, pool);

  const NumaTopology& topo = pool.topology();
  const detail::CmmGeometry geo = detail::make_geometry(plan, blocking);
  ProductTensor<T> z(OperandKind::Z, PlacementKind::interleaved, plan.tuple_count,
                     cfg.out_channels, plan.m, plan.lanes, plan.node_ranges, topo);

  if (trace != nullptr) {
    trace->tuples_by_node.assign(topo.nodes, {});
    trace->cell_writes.assign(plan.tuple_count * cfg.out_channels * plan.m, 0);
  }
  auto note_tuple = [trace](std::size_t node, std::size_t t) {
    if (trace == nullptr) return;
    std::lock_guard lock(trace->mutex);
    trace->tuples_by_node[node].insert(t);
  };

  const std::size_t c_blocks = (geo.in + geo.bp.l1_in - 1) / geo.bp.l1_in;

  if (schedule == Schedule::three_level) {
    const std::size_t U = topo.cores_per_node;
    std::vector<TaskSet> per_node(topo.nodes);
    for (std::size_t n = 0; n < topo.nodes; ++n) {
      const TupleRange range = plan.node_ranges[n];
      for (std::size_t u = 0; u < U; ++u) {
        per_node[n].push_back([&, range, u](WorkerContext& ctx) {
          std::vector<detail::CmmGeometry::Item> mine;
          std::vector<std::size_t> acc_offset;
          std::size_t acc_total = 0;
          for (std::size_t k = u; k < geo.items; k += U) {
            mine.push_back(geo.item(k));
            acc_offset.push_back(acc_total);
            acc_total += mine.back().acc_elems;
          }
          if (mine.empty()) return;
          std::vector<T> acc(acc_total);
          for (std::size_t t = range.begin; t < range.end; ++t) {
            note_tuple(ctx.node, t);
            std::fill(acc.begin(), acc.end(), T(0));
            for (std::size_t cb = 0; cb < c_blocks; ++cb) {
              const std::size_t c0 = cb * geo.bp.l1_in;
              const std::size_t clen = std::min(geo.bp.l1_in, geo.in - c0);
              for (std::size_t i = 0; i < mine.size(); ++i) {
                detail::run_item_block(ctx, g, d, geo, mine[i], t, c0, clen,
                                       acc.data() + acc_offset[i]);
              }
            }
            for (std::size_t i = 0; i < mine.size(); ++i) {
              detail::store_item(ctx, z, geo, mine[i], t, acc.data() + acc_offset[i], trace);
            }
          }
        });
      }
    }
    pool.run_groups(per_node, ledger);
  } else {
    pool.run_shared(
        plan.tuple_count * geo.items,
        [&](WorkerContext& ctx, std::size_t index) {
          const std::size_t t = index / geo.items;
          const auto it = geo.item(index % geo.items);
          note_tuple(ctx.node, t);
          std::vector<T> acc(it.acc_elems, T(0));
          for (std::size_t cb = 0; cb < c_blocks; ++cb) {
            const std::size_t c0 = cb * geo.bp.l1_in;
            const std::size_t clen = std::min(geo.bp.l1_in, geo.in - c0);
            detail::run_item_block(ctx, g, d, geo, it, t, c0, clen, acc.data());
          }
          detail::store_item(ctx, z, geo, it, t, acc.data(), trace);
        },
        ledger);
  }
  return z;
}

/// Unblocked parallel CMM with one (t, c') row per work item; the baseline
/// for the stage-timing smoke comparison. Not instrumented.
template <typename T>
ProductTensor<T> cmm_naive_parallel(const PackedOperand<T>& g, const PackedOperand<T>& d,
                                    const TransformPlan& plan, const WorkerPool& pool) {
  const ConvConfig& cfg = plan.config;
  const std::size_t L = plan.lanes;
  ProductTensor<T> z(OperandKind::Z, PlacementKind::interleaved, plan.tuple_count,
                     cfg.out_channels, plan.m, L, plan.node_ranges, pool.topology());
  pool.run_shared(plan.tuple_count * cfg.out_channels, [&](WorkerContext&, std::size_t index) {
    const std::size_t t = index / cfg.out_channels;
    const std::size_t co = index % cfg.out_channels;
    for (std::size_t m = 0; m < plan.m; ++m) {
      T* out = z.group(t, co, m);
      for (std::size_t c = 0; c < cfg.in_channels; ++c) {
        const T* gv = g.group(t, c, co);
        const T* dv = d.group(t, c, m);
        for (std::size_t l = 0; l < L; ++l) {
          out[l] += gv[l] * dv[l] - gv[L + l] * dv[L + l];
          out[L + l] += gv[l] * dv[L + l] + gv[L + l] * dv[l];
        }
      }
    }
  });
  return z;
}

}  // namespace nfft
