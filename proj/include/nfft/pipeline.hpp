#pragma once

// End-to-end variants: direct reference, interleaved two-level baseline
// (wfft) and node-pinned three-level schedule (nfft).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "nfft/cgemm.hpp"
#include "nfft/conv_core.hpp"
#include "nfft/numa_model.hpp"
#include "nfft/transform.hpp"

namespace nfft {

enum class Variant { direct, wfft, nfft };

constexpr std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::direct: return "direct";
    case Variant::wfft: return "wfft";
    case Variant::nfft: return "nfft";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "direct") return Variant::direct;
  if (s == "wfft") return Variant::wfft;
  if (s == "nfft") return Variant::nfft;
  throw Error(ErrorKind::configuration, "unknown variant '" + std::string(s) + "'");
}

struct PipelineOptions {
  std::size_t tile = 16;
  std::size_t lanes = 4;
  std::size_t cache_l1 = 32 * 1024;
  std::size_t cache_l2 = 2 * 1024 * 1024;
  std::optional<BlockingParams> blocking;
};

struct StageTimes {
  double input = 0;
  double kernel = 0;
  double cmm = 0;
  double output = 0;
  double total = 0;
};

template <typename T>
struct PipelineRun {
  Tensor4D<T> output;
  StageTimes times;
  AccessLedger ledger;
};

namespace detail {

template <typename F>
auto timed(double& seconds, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  auto result = f();
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace detail

template <typename T>
PipelineRun<T> run_variant(const Tensor4D<T>& input, const Tensor4D<T>& kernel,
                           const ConvConfig& cfg, Variant variant, const PipelineOptions& opt,
                           const WorkerPool& pool) {
  PipelineRun<T> run;
  run.ledger = AccessLedger(pool.nodes());
  if (variant == Variant::direct) {
    run.output = detail::timed(run.times.total, [&] { return direct_conv(input, kernel, cfg); });
    return run;
  }

  const TransformPlan plan = make_plan(cfg, opt.tile, opt.lanes, pool.nodes());
  const bool aware = variant == Variant::nfft;
  const PlacementKind placement = aware ? PlacementKind::node_pinned : PlacementKind::interleaved;
  const Schedule schedule = aware ? Schedule::three_level : Schedule::two_level;
  const BlockingParams bp = opt.blocking.value_or(default_blocking(
      cfg.in_channels, cfg.out_channels, opt.cache_l1, opt.cache_l2, opt.lanes, sizeof(T)));

  auto d = detail::timed(run.times.input, [&] {
    return transform_input(input, plan, placement, pool, &run.ledger);
  });
  auto g = detail::timed(run.times.kernel, [&] {
    return transform_kernel(kernel, plan, placement, pool, &run.ledger);
  });
  auto z = detail::timed(run.times.cmm, [&] {
    return cmm_execute(g, d, plan, bp, schedule, pool, &run.ledger);
  });
  run.output = detail::timed(run.times.output, [&] {
    return inverse_transform_output(z, plan, cfg, pool, &run.ledger);
  });
  run.times.total = run.times.input + run.times.kernel + run.times.cmm + run.times.output;
  return run;
}

/// Convenience: NUMA-aware FFT convolution with default options.
template <typename T>
Tensor4D<T> fft_conv(const Tensor4D<T>& input, const Tensor4D<T>& kernel, const ConvConfig& cfg,
                     const WorkerPool& pool, const PipelineOptions& opt = {}) {
  return run_variant(input, kernel, cfg, Variant::nfft, opt, pool).output;
}

/// Elementwise |a - b| / max(|b|, floor), maximized; b is the reference.
template <typename T>
double max_relative_error(std::span<const T> actual, std::span<const T> reference,
                          double floor = 1e-6) {
  if (actual.size() != reference.size()) {
    throw Error(ErrorKind::configuration, "compared tensors differ in size");
  }
  double worst = 0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double b = reference[i];
    const double err = std::abs(double(actual[i]) - b) / std::max(std::abs(b), floor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace nfft
