#include <catch_amalgamated.hpp>

#include "nfft/nfft.hpp"
#include "test_support.hpp"

using namespace nfft;
using cd = std::complex<double>;

namespace {

ConvConfig layer(std::size_t b, std::size_t c, std::size_t co, std::size_t h, std::size_t k,
                 std::size_t pad) {
  ConvConfig cfg;
  cfg.batch = b;
  cfg.in_channels = c;
  cfg.out_channels = co;
  cfg.in_height = cfg.in_width = h;
  cfg.kernel_height = cfg.kernel_width = k;
  cfg.pad = pad;
  return cfg;
}

WorkerPool pool_of(std::size_t nodes, std::size_t cores = 1) {
  NumaTopology t;
  t.nodes = nodes;
  t.cores_per_node = cores;
  return WorkerPool(t);
}

}  // namespace

TEST_CASE("transform_input of a zero tensor is all zero", "[transform]") {
  const auto cfg = layer(2, 3, 1, 20, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 2);
  for (auto placement : {PlacementKind::node_pinned, PlacementKind::interleaved}) {
    const auto d = transform_input(make_input<double>(cfg), plan, placement, pool_of(2));
    CHECK(d.rows() == 3);
    CHECK(d.cols() == plan.m);
    for (const auto& blk : d.blocks())
      for (double v : blk.data.span()) REQUIRE(v == 0.0);
  }
}

TEST_CASE("transform_input of a single exact tile equals its spectrum", "[transform]") {
  const auto cfg = layer(1, 1, 1, 16, 3, 0);
  const auto plan = make_plan(cfg, 16, 4, 1);
  REQUIRE(plan.m == 1);
  auto in = make_input<double>(cfg);
  testing::fill(in.data(), 21);
  const auto d = transform_input(in, plan, PlacementKind::node_pinned, pool_of(1));
  const auto ref = dft2d_reference<double>(in.data(), 16);
  for (std::size_t t = 0; t < plan.tuple_count; ++t)
    for (std::size_t l = 0; l < 4; ++l) {
      const auto v = d.value(t, l, 0, 0);
      REQUIRE(std::abs(cd(v) - ref[t * 4 + l]) < 1e-10);
    }
}

TEST_CASE("transform_input extracts overlapping padded tiles", "[transform]") {
  const auto cfg = layer(2, 2, 1, 30, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 3);
  auto in = make_input<double>(cfg);
  testing::fill(in.data(), 8);
  const auto d = transform_input(in, plan, PlacementKind::interleaved, pool_of(3, 2));

  // Rebuild each patch by hand and compare the stored spectrum.
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t ty = 0; ty < plan.tiles_y; ++ty)
        for (std::size_t tx = 0; tx < plan.tiles_x; ++tx) {
          std::vector<double> patch(256, 0.0);
          for (std::size_t h = 0; h < 16; ++h)
            for (std::size_t w = 0; w < 16; ++w) {
              const long y = long(ty * plan.out_tile + h) - 1, x = long(tx * plan.out_tile + w) - 1;
              if (y >= 0 && y < 30 && x >= 0 && x < 30) patch[h * 16 + w] = in(b, c, y, x);
            }
          const auto ref = dft2d_reference<double>(patch, 16);
          const std::size_t m = plan.tile_column(b, ty, tx);
          for (std::size_t t = 0; t < plan.tuple_count; ++t)
            for (std::size_t l = 0; l < 4; ++l)
              REQUIRE(std::abs(cd(d.value(t, l, c, m)) - ref[t * 4 + l]) < 1e-10);
        }
}

TEST_CASE("node-pinned input on eight nodes: block n holds tuple range n", "[transform]") {
  const auto cfg = layer(1, 3, 64, 224, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 8);
  auto in = make_input<float>(cfg);
  testing::fill(in.data(), 1);
  const auto d = transform_input(in, plan, PlacementKind::node_pinned, pool_of(8));
  REQUIRE(d.blocks().size() == 8);
  CHECK(d.blocks()[0].tuples == TupleRange{0, 5});
  CHECK(d.blocks()[7].tuples == TupleRange{32, 36});
  for (std::size_t n = 0; n < 8; ++n) {
    CHECK(d.blocks()[n].region.policy() == PlacementPolicy::on_node(n));
    CHECK(d.blocks()[n].data.size() == d.blocks()[n].tuples.size() * 3 * plan.m * 8);
  }
}

TEST_CASE("transform_kernel of a zero kernel is all zero", "[transform]") {
  const auto cfg = layer(1, 3, 5, 10, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 2);
  const auto g = transform_kernel(make_kernel<double>(cfg), plan, PlacementKind::node_pinned, pool_of(2));
  for (const auto& blk : g.blocks())
    for (double v : blk.data.span()) REQUIRE(v == 0.0);
}

TEST_CASE("transform_kernel of a unit 1x1 kernel is 1 everywhere", "[transform]") {
  const auto cfg = layer(1, 2, 2, 10, 1, 0);
  const auto plan = make_plan(cfg, 16, 4, 1);
  Tensor4D<double> k({2, 2, 1, 1}, 1.0);
  const auto g = transform_kernel(k, plan, PlacementKind::interleaved, pool_of(1));
  for (std::size_t t = 0; t < plan.tuple_count; ++t)
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t co = 0; co < 2; ++co) REQUIRE(g.value(t, l, c, co) == std::complex<double>(1, 0));
}

TEST_CASE("transform_kernel stores the conjugated spectrum of the padded kernel", "[transform]") {
  const auto cfg = layer(1, 2, 3, 10, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 2);
  auto k = make_kernel<double>(cfg);
  testing::fill(k.data(), 99);
  const auto g = transform_kernel(k, plan, PlacementKind::node_pinned, pool_of(2));
  for (std::size_t co = 0; co < 3; ++co)
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> padded(256, 0.0);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) padded[i * 16 + j] = k(co, c, i, j);
      const auto ref = dft2d_reference<double>(padded, 16);
      for (std::size_t t = 0; t < plan.tuple_count; ++t)
        for (std::size_t l = 0; l < 4; ++l)
          REQUIRE(std::abs(cd(g.value(t, l, c, co)) - std::conj(ref[t * 4 + l])) < 1e-12);
    }
}

namespace {

/// Z filled with the half-spectrum of `tile` for every (c', m).
ProductTensor<double> product_from_tile(const TransformPlan& plan, const std::vector<double>& tile,
                                        const WorkerPool& pool) {
  ProductTensor<double> z(OperandKind::Z, PlacementKind::interleaved, plan.tuple_count,
                          plan.config.out_channels, plan.m, plan.lanes, plan.node_ranges,
                          pool.topology());
  const auto spec = fft2d_real_forward<double>(tile, plan.tile);
  for (std::size_t t = 0; t < plan.tuple_count; ++t)
    for (std::size_t co = 0; co < plan.config.out_channels; ++co)
      for (std::size_t m = 0; m < plan.m; ++m) {
        double* g = z.group(t, co, m);
        for (std::size_t l = 0; l < plan.lanes; ++l) {
          g[l] = spec.values[t * plan.lanes + l].real();
          g[plan.lanes + l] = spec.values[t * plan.lanes + l].imag();
        }
      }
  return z;
}

}  // namespace

TEST_CASE("inverse transform of a zero product is zero", "[transform]") {
  const auto cfg = layer(2, 1, 3, 20, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 2);
  auto pool = pool_of(2);
  const auto out = inverse_transform_output(product_from_tile(plan, std::vector<double>(256, 0.0), pool),
                                            plan, cfg, pool);
  REQUIRE(out.dims() == Tensor4D<double>::Dims{2, 3, 20, 20});
  for (double v : out.data()) REQUIRE(v == 0.0);
}

TEST_CASE("inverse transform writes each tile's valid region", "[transform]") {
  const auto cfg = layer(1, 1, 2, 30, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 1);
  auto pool = pool_of(1);
  const auto tile = testing::random_vector<double>(256, 5);
  const auto out = inverse_transform_output(product_from_tile(plan, tile, pool), plan, cfg, pool);
  for (std::size_t co = 0; co < 2; ++co)
    for (std::size_t y = 0; y < 30; ++y)
      for (std::size_t x = 0; x < 30; ++x) {
        const double want = tile[(y % plan.out_tile) * 16 + (x % plan.out_tile)];
        REQUIRE(std::abs(out(0, co, y, x) - want) < 1e-12);
      }
}

TEST_CASE("7x7 maps are clipped out of a single tile", "[transform]") {
  const auto cfg = layer(2, 4, 2, 7, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 8);
  REQUIRE(plan.m == 2);
  auto pool = pool_of(8);
  const auto tile = testing::random_vector<double>(256, 17);
  const auto out = inverse_transform_output(product_from_tile(plan, tile, pool), plan, cfg, pool);
  REQUIRE(out.dims() == Tensor4D<double>::Dims{2, 2, 7, 7});
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 7; ++x) REQUIRE(std::abs(out(1, 1, y, x) - tile[y * 16 + x]) < 1e-12);
}

TEST_CASE("inverse transform rejects mismatched products", "[transform][error]") {
  const auto cfg = layer(1, 1, 2, 20, 3, 1);
  const auto plan = make_plan(cfg, 16, 4, 1);
  auto pool = pool_of(1);
  auto other = cfg;
  other.out_channels = 3;
  const auto z = product_from_tile(plan, std::vector<double>(256, 0.0), pool);
  CHECK_THROWS_AS(inverse_transform_output(z, plan, other, pool), Error);
  CHECK_THROWS_AS(inverse_transform_output(z, plan, cfg, pool_of(2)), Error);
}

TEST_CASE("end to end: both FFT variants match direct convolution", "[transform][property]") {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t k = std::array<std::size_t, 4>{1, 3, 5, 7}[pick(0, 3)];
    auto cfg = layer(pick(1, 3), pick(1, 9), pick(1, 9), pick(k, 40), k, pick(0, k / 2));
    cfg.element = ElementKind::fp64;
    const std::size_t nodes = pick(1, 8);
    auto pool = pool_of(nodes, pick(1, 2));

    auto in = make_input<double>(cfg);
    auto ker = make_kernel<double>(cfg);
    testing::fill(in.data(), 100 + trial);
    testing::fill(ker.data(), 200 + trial);
    const auto ref = direct_conv(in, ker, cfg);
    for (Variant v : {Variant::nfft, Variant::wfft}) {
      const auto run = run_variant(in, ker, cfg, v, {}, pool);
      INFO("trial " << trial << " variant " << to_string(v) << " elementwise "
                    << max_relative_error<double>(run.output.data(), ref.data()));
      REQUIRE(testing::normwise_error<double, double>(run.output.data(), ref.data()) <= 1e-10);
    }

    Tensor4D<float> inf(in.dims()), kerf(ker.dims());
    std::copy(in.data().begin(), in.data().end(), inf.data().begin());
    std::copy(ker.data().begin(), ker.data().end(), kerf.data().begin());
    const auto run32 = run_variant(inf, kerf, cfg, Variant::nfft, {}, pool);
    REQUIRE(testing::normwise_error<float, double>(run32.output.data(), ref.data()) < 1e-5);
  }
}

TEST_CASE("stage footprints add up to the packed sizes", "[transform][ledger]") {
  const auto cfg = layer(2, 5, 6, 16, 3, 0);
  auto pool = pool_of(4);
  auto in = make_input<float>(cfg);
  auto ker = make_kernel<float>(cfg);
  testing::fill(in.data(), 1);
  testing::fill(ker.data(), 2);
  const auto plan = make_plan(cfg, 16, 4, 4);
  REQUIRE(plan.m == 2);

  const auto run = run_variant(in, ker, cfg, Variant::nfft, {}, pool);
  const auto& led = run.ledger;
  const std::uint64_t d_bytes = plan.tuple_count * 5 * plan.m * 8 * sizeof(float);
  const std::uint64_t g_bytes = plan.tuple_count * 5 * 6 * 8 * sizeof(float);
  const std::uint64_t z_bytes = plan.tuple_count * 6 * plan.m * 8 * sizeof(float);
  CHECK(led.total_bytes(Stage::input_fetch) == in.size() * sizeof(float));
  CHECK(led.total_bytes(Stage::input_store) == d_bytes);
  CHECK(led.total_bytes(Stage::kernel_fetch) == ker.size() * sizeof(float));
  CHECK(led.total_bytes(Stage::kernel_store) == g_bytes);
  CHECK(led.total_bytes(Stage::cmm_store) == z_bytes);
  CHECK(led.total_bytes(Stage::output_fetch) == z_bytes);
  CHECK(led.total_bytes(Stage::output_store) == run.output.size() * sizeof(float));
  // Every G entry and every D entry is read at least once per product use.
  CHECK(led.total_bytes(Stage::cmm_fetch) >= d_bytes + g_bytes);
  CHECK(led.remote_bytes(Stage::cmm_fetch) == 0);
}

TEST_CASE("packed tensors are laid out tuple, row, column in address order", "[transform]") {
  NumaTopology topo;
  topo.nodes = 3;
  const auto ranges = partition_tuples(10, 3);
  PackedTensor<float> p(OperandKind::D, PlacementKind::node_pinned, 10, 3, 5, 4, ranges, topo);
  for (const auto& blk : p.blocks()) {
    std::size_t expect = 0;
    for (std::size_t t = blk.tuples.begin; t < blk.tuples.end; ++t)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 5; ++c) {
          REQUIRE(p.offset(t, r, c) == expect);
          REQUIRE(p.group(t, r, c) == blk.data.data() + expect);
          expect += 8;
        }
    REQUIRE(expect == blk.data.size());
  }
  CHECK(p.bytes() == 10 * 3 * 5 * 8 * sizeof(float));
  PackedTensor<float> flat(OperandKind::D, PlacementKind::interleaved, 10, 3, 5, 4, ranges, topo);
  REQUIRE(flat.blocks().size() == 1);
  CHECK(flat.offset(7, 2, 4) == ((7 * 3 + 2) * 5 + 4) * 8);
}
