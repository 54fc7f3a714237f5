#include <catch_amalgamated.hpp>

#include <sstream>

#include "nfft/bench.hpp"
#include "test_support.hpp"

using namespace nfft;
using namespace nfft::bench;

namespace {

RunOptions options(std::string preset, Variant v) {
  RunOptions o;
  o.preset = std::move(preset);
  o.variant = v;
  o.topology.nodes = 8;
  o.topology.cores_per_node = 2;
  o.repeats = 1;
  return o;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

TEST_CASE("layer preset table", "[bench][presets]") {
  struct Row {
    const char* name;
    std::size_t c, co, h, k;
  };
  const Row golden[] = {
      {"Vconv1.1", 3, 64, 224, 3},    {"Vconv1.2", 64, 64, 224, 3},   {"Vconv2.1", 64, 128, 112, 3},
      {"Vconv2.2", 128, 128, 112, 3}, {"Vconv3.1", 128, 256, 56, 3},  {"Vconv3.2", 256, 256, 56, 3},
      {"Vconv4.1", 256, 512, 28, 3},  {"Vconv4.2", 512, 512, 28, 3},  {"Vconv5", 512, 512, 14, 3},
      {"Aconv2", 48, 128, 27, 5},     {"Aconv3", 256, 384, 13, 3},    {"Aconv4", 192, 192, 13, 3},
      {"Aconv5", 192, 128, 13, 3},    {"Rconv2.2", 64, 64, 56, 3},    {"Rconv3.2", 128, 128, 28, 3},
      {"Rconv4.2", 256, 256, 14, 3},  {"Rconv5.2", 512, 512, 7, 3},
  };
  REQUIRE(kPresets.size() == 17);
  for (std::size_t i = 0; i < 17; ++i) {
    const auto& p = find_preset(golden[i].name);
    CHECK(p.in_channels == golden[i].c);
    CHECK(p.out_channels == golden[i].co);
    CHECK(p.in_size == golden[i].h);
    CHECK(p.kernel_size == golden[i].k);
    const auto cfg = preset_config(p, 32, 0, ElementKind::fp32);
    CHECK(cfg.out_height() == cfg.in_height);
  }
  CHECK(kTableBatches == std::array<std::size_t, 3>{32, 64, 128});
  CHECK(preset_config(find_preset("Vconv4.2"), 2, 64, ElementKind::fp32).in_channels == 64);
  try {
    find_preset("Vconv9");
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::configuration);
  }
}

TEST_CASE("nfft keeps the CMM stage local on a small layer", "[bench][locality]") {
  const auto rep = run(options("Rconv5.2", Variant::nfft));
  const auto* cmm = rep.stage("cmm_fetch");
  REQUIRE(cmm != nullptr);
  CHECK(cmm->local_bytes > 0);
  CHECK(cmm->remote_bytes == 0);
  CHECK(rep.locality.size() == kStageCount);
}

TEST_CASE("wfft CMM fetches are about 7/8 remote on eight nodes", "[bench][locality]") {
  const auto rep = run(options("Aconv2", Variant::wfft));
  const auto* cmm = rep.stage("cmm_fetch");
  REQUIRE(cmm != nullptr);
  CHECK(std::abs(cmm->remote_fraction - 0.875) <= 0.02);
}

TEST_CASE("custom layer runs and verifies", "[bench]") {
  RunOptions o;
  ConvConfig cfg;
  cfg.batch = 1;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.in_height = cfg.in_width = 9;
  o.custom = cfg;
  o.element = ElementKind::fp64;
  o.topology.nodes = 2;
  o.topology.cores_per_node = 1;
  o.variant = Variant::direct;
  const auto res = verify(o, 1e-10);
  CHECK(res.passed);
  CHECK(res.max_rel_error == 0.0);
  CHECK(res.report.preset == "custom");
  CHECK(res.report.element == "fp64");

  o.variant = Variant::nfft;
  CHECK(verify(o, 1e-10).passed);
}

TEST_CASE("csv output has the fixed header and one row per report", "[bench][format]") {
  auto rep = run(options("Rconv5.2", Variant::nfft));
  const std::string text = format_reports({rep}, Format::csv);
  std::stringstream ss(text);
  std::string header, row, extra;
  std::getline(ss, header);
  std::getline(ss, row);
  CHECK_FALSE(std::getline(ss, extra));
  const auto cols = split_line(header);
  CHECK(cols == csv_columns());
  CHECK(cols.front() == "preset");
  CHECK(cols.back() == "speedup");
  const auto cells = split_line(row);
  REQUIRE(cells.size() == cols.size());
  CHECK(cells[0] == "Rconv5.2");
  CHECK(cells[1] == "nfft");
  CHECK(cells.back().empty());
}

TEST_CASE("speedup is the wfft/nfft total time ratio", "[bench][format]") {
  RunReport w, n, lone;
  w.preset = n.preset = lone.preset = "Aconv4";
  w.variant = "wfft";
  n.variant = "nfft";
  lone.variant = "nfft";
  lone.nodes = 4;
  w.median.total = 3.0;
  n.median.total = 1.5;
  lone.median.total = 1.0;
  std::vector<RunReport> reps = {w, n, lone};
  attach_speedups(reps);
  REQUIRE(reps[0].speedup);
  CHECK(*reps[0].speedup == 2.0);
  CHECK(*reps[1].speedup == 2.0);
  CHECK_FALSE(reps[2].speedup);
}

TEST_CASE("json reports round-trip", "[bench][format]") {
  auto opt = options("Rconv5.2", Variant::wfft);
  opt.verify = true;
  const auto a = run(opt);
  const auto b = run(options("Rconv5.2", Variant::nfft));
  const std::string text = format_reports({a, b}, Format::json);
  const auto back = parse_reports(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].preset == "Rconv5.2");
  CHECK(back[0].variant == "wfft");
  CHECK(back[0].config == a.config);
  CHECK(back[0].max_rel_error.has_value());
  CHECK(back[0].speedup.has_value());
  CHECK(back[1].locality.size() == kStageCount);
  CHECK(back[1].locality[4].remote_bytes == b.locality[4].remote_bytes);
  CHECK(format_reports(back, Format::json) == text);
}

TEST_CASE("parse_reports rejects foreign or newer documents", "[bench][format][error]") {
  auto kind_of = [](std::string_view text) {
    try {
      parse_reports(text);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::task;
  };
  CHECK(kind_of(R"({"schema":"nfft-bench-report","schema_version":2,"reports":[]})") == ErrorKind::format);
  CHECK(kind_of(R"({"schema":"other","schema_version":1,"reports":[]})") == ErrorKind::format);
  CHECK(kind_of("not json") == ErrorKind::format);
  CHECK(kind_of(R"({"schema":"nfft-bench-report","schema_version":1,"reports":[{"preset":"x"}]})") ==
        ErrorKind::format);
  CHECK(parse_reports(R"({"schema":"nfft-bench-report","schema_version":1,"reports":[]})").empty());
  CHECK_THROWS_AS(parse_format("xml"), Error);
  CHECK_THROWS_AS(format_reports({}, Format::csv), Error);
}

TEST_CASE("same seed gives the same data and traffic", "[bench]") {
  Tensor4D<float> i1({1, 2, 5, 5}), i2({1, 2, 5, 5}), k1({2, 2, 3, 3}), k2({2, 2, 3, 3});
  fill_random(i1, k1, 7);
  fill_random(i2, k2, 7);
  CHECK(std::equal(i1.data().begin(), i1.data().end(), i2.data().begin()));
  CHECK(std::equal(k1.data().begin(), k1.data().end(), k2.data().begin()));
  fill_random(i2, k2, 8);
  CHECK_FALSE(std::equal(i1.data().begin(), i1.data().end(), i2.data().begin()));

  auto opt = options("Aconv5", Variant::wfft);
  opt.verify = true;
  const auto a = run(opt), b = run(opt);
  CHECK(*a.max_rel_error == *b.max_rel_error);
  // Shared-queue stages hand items to whichever worker is free, so only the
  // byte totals are fixed there.
  for (std::size_t s = 0; s < kStageCount; ++s) {
    CHECK(a.locality[s].local_bytes + a.locality[s].remote_bytes ==
          b.locality[s].local_bytes + b.locality[s].remote_bytes);
  }
  const auto na = run(options("Aconv5", Variant::nfft)), nb = run(options("Aconv5", Variant::nfft));
  CHECK(na.stage("cmm_fetch")->local_bytes == nb.stage("cmm_fetch")->local_bytes);
  CHECK(na.stage("cmm_fetch")->remote_bytes == 0);
}

TEST_CASE("oversized runs are refused before allocating", "[bench][error]") {
  auto opt = options("Vconv1.2", Variant::nfft);
  opt.batch = 128;
  opt.cap_channels = 0;
  try {
    run(opt);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::capacity);
  }
  CHECK(working_set_bytes(preset_config(find_preset("Vconv1.2"), 128, 0, ElementKind::fp32),
                          Variant::nfft, {}, false) > opt.max_bytes);
}

TEST_CASE("unknown presets and variants are configuration errors", "[bench][error]") {
  try {
    run(options("nope", Variant::nfft));
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::configuration);
  }
  CHECK_THROWS_AS(parse_variant("fast"), Error);
  CHECK(parse_variant("wfft") == Variant::wfft);
}
