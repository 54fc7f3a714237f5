// Runs one small layer through the NUMA-aware pipeline and compares it with
// the direct convolution.

#include <cstdio>
#include <random>

#include "nfft/nfft.hpp"

int main() {
  nfft::ConvConfig cfg;
  cfg.batch = 2;
  cfg.in_channels = 8;
  cfg.out_channels = 16;
  cfg.in_height = cfg.in_width = 30;
  cfg.kernel_height = cfg.kernel_width = 3;
  cfg.pad = 1;

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  auto input = nfft::make_input<float>(cfg);
  auto kernel = nfft::make_kernel<float>(cfg);
  for (float& v : input.data()) v = dist(rng);
  for (float& v : kernel.data()) v = dist(rng);

  nfft::WorkerPool pool({.nodes = 4, .cores_per_node = 2});
  const auto run = nfft::run_variant(input, kernel, cfg, nfft::Variant::nfft, {}, pool);
  const auto reference = nfft::direct_conv(input, kernel, cfg);

  std::printf("max relative error vs direct: %.3g\n",
              nfft::max_relative_error<float>(run.output.data(), reference.data()));
  for (const auto& row : nfft::locality_report(run.ledger)) {
    std::printf("%-13s local %10llu  remote %10llu  (%.3f)\n",
                std::string(nfft::to_string(row.stage)).c_str(),
                static_cast<unsigned long long>(row.local),
                static_cast<unsigned long long>(row.remote), row.remote_fraction);
  }
}
