#pragma once

// Benchmark harness: layer presets, seeded runs with median timing and
// locality, verification against the direct convolution, and report
// serialization (json / csv / table).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nfft/nfft.hpp"

namespace nfft::bench {

struct LayerPreset {
  std::string_view name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t in_size;      // H_i = W_i
  std::size_t kernel_size;  // H_k = W_k
};

/// Unit-stride layers from AlexNet (A), VGG (V) and ResNet (R). Each runs
/// at batch 32/64/128 in the full configuration.
inline constexpr std::array<LayerPreset, 17> kPresets = {{
    {"Vconv1.1", 3, 64, 224, 3},
    {"Vconv1.2", 64, 64, 224, 3},
    {"Vconv2.1", 64, 128, 112, 3},
    {"Vconv2.2", 128, 128, 112, 3},
    {"Vconv3.1", 128, 256, 56, 3},
    {"Vconv3.2", 256, 256, 56, 3},
    {"Vconv4.1", 256, 512, 28, 3},
    {"Vconv4.2", 512, 512, 28, 3},
    {"Vconv5", 512, 512, 14, 3},
    {"Aconv2", 48, 128, 27, 5},
    {"Aconv3", 256, 384, 13, 3},
    {"Aconv4", 192, 192, 13, 3},
    {"Aconv5", 192, 128, 13, 3},
    {"Rconv2.2", 64, 64, 56, 3},
    {"Rconv3.2", 128, 128, 28, 3},
    {"Rconv4.2", 256, 256, 14, 3},
    {"Rconv5.2", 512, 512, 7, 3},
}};

inline constexpr std::array<std::size_t, 3> kTableBatches = {32, 64, 128};

inline const LayerPreset& find_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::configuration, "unknown preset '" + std::string(name) + "'");
}

/// Same-size padding (floor(k/2)); channel counts clamped to `cap_channels`
/// when it is nonzero.
inline ConvConfig preset_config(const LayerPreset& p, std::size_t batch, std::size_t cap_channels,
                                ElementKind element = ElementKind::fp32) {
  ConvConfig cfg;
  cfg.batch = batch;
  cfg.in_channels = cap_channels ? std::min(p.in_channels, cap_channels) : p.in_channels;
  cfg.out_channels = cap_channels ? std::min(p.out_channels, cap_channels) : p.out_channels;
  cfg.in_height = cfg.in_width = p.in_size;
  cfg.kernel_height = cfg.kernel_width = p.kernel_size;
  cfg.pad = p.kernel_size / 2;
  cfg.element = element;
  return cfg;
}

struct RunOptions {
  std::string preset;                 // empty when `custom` is set
  std::optional<ConvConfig> custom;
  Variant variant = Variant::nfft;
  std::size_t batch = 2;
  std::size_t cap_channels = 64;      // 0 disables the cap
  ElementKind element = ElementKind::fp32;
  NumaTopology topology{};
  PipelineOptions pipeline{};
  std::size_t repeats = 10;
  std::uint64_t seed = 42;
  bool verify = false;
  std::size_t max_bytes = std::size_t{2} << 30;
};

struct StageReport {
  std::string stage;
  std::uint64_t local_bytes = 0;
  std::uint64_t remote_bytes = 0;
  double remote_fraction = 0;
};

struct RunReport {
  std::string preset;
  std::string variant;
  std::string element;
  ConvConfig config;
  std::size_t nodes = 0;
  std::size_t cores_per_node = 0;
  std::size_t page_size = 0;
  std::size_t tile = 0;
  std::size_t lanes = 0;
  std::uint64_t seed = 0;
  std::size_t repeats = 0;
  StageTimes median;
  std::vector<StageReport> locality;
  std::optional<double> max_rel_error;
  std::optional<double> speedup;

  const StageReport* stage(std::string_view name) const {
    for (const auto& s : locality) {
      if (s.stage == name) return &s;
    }
    return nullptr;
  }
};

inline ConvConfig resolve_config(const RunOptions& opt) {
  ConvConfig cfg = opt.custom ? *opt.custom
                              : preset_config(find_preset(opt.preset), opt.batch, opt.cap_channels,
                                              opt.element);
  if (opt.custom) cfg.element = opt.element;
  cfg.validate();
  return cfg;
}

/// Bytes held at once by a run: I, K, O, D, G, Z plus the reference output
/// when verifying.
inline std::size_t working_set_bytes(const ConvConfig& cfg, Variant variant,
                                     const PipelineOptions& p, bool verify) {
  const std::size_t es = cfg.element == ElementKind::fp32 ? 4 : 8;
  const std::size_t io = cfg.batch * cfg.in_channels * cfg.in_height * cfg.in_width +
                         cfg.out_channels * cfg.in_channels * cfg.kernel_height * cfg.kernel_width +
                         cfg.batch * cfg.out_channels * cfg.out_height() * cfg.out_width() *
                             (verify ? 2 : 1);
  std::size_t total = io * es;
  if (variant != Variant::direct) {
    const TransformPlan plan = make_plan(cfg, p.tile, p.lanes, 1);
    const std::size_t group = 2 * plan.lanes * es;
    total += plan.tuple_count * group *
             (cfg.in_channels * plan.m + cfg.in_channels * cfg.out_channels +
              cfg.out_channels * plan.m);
  }
  return total;
}

/// Uniform [-1, 1] input then kernel from one seeded engine.
template <typename T>
void fill_random(Tensor4D<T>& input, Tensor4D<T>& kernel, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> dist(T(-1), T(1));
  for (T& v : input.data()) v = dist(rng);
  for (T& v : kernel.data()) v = dist(rng);
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

template <typename T>
RunReport run_typed(const RunOptions& opt, const ConvConfig& cfg) {
  Tensor4D<T> input = make_input<T>(cfg);
  Tensor4D<T> kernel = make_kernel<T>(cfg);
  fill_random(input, kernel, opt.seed);
  const WorkerPool pool(opt.topology);

  std::vector<double> in_t, k_t, cmm_t, out_t, tot_t;
  std::optional<PipelineRun<T>> last;
  const std::size_t repeats = std::max<std::size_t>(opt.repeats, 1);
  for (std::size_t r = 0; r < repeats; ++r) {
    last.emplace(run_variant(input, kernel, cfg, opt.variant, opt.pipeline, pool));
    in_t.push_back(last->times.input);
    k_t.push_back(last->times.kernel);
    cmm_t.push_back(last->times.cmm);
    out_t.push_back(last->times.output);
    tot_t.push_back(last->times.total);
  }

  RunReport rep;
  rep.preset = opt.custom ? "custom" : opt.preset;
  rep.variant = std::string(to_string(opt.variant));
  rep.element = std::string(to_string(cfg.element));
  rep.config = cfg;
  rep.nodes = opt.topology.nodes;
  rep.cores_per_node = opt.topology.cores_per_node;
  rep.page_size = opt.topology.page_size;
  rep.tile = opt.pipeline.tile;
  rep.lanes = opt.pipeline.lanes;
  rep.seed = opt.seed;
  rep.repeats = repeats;
  rep.median = {median(in_t), median(k_t), median(cmm_t), median(out_t), median(tot_t)};
  for (const auto& row : locality_report(last->ledger)) {
    rep.locality.push_back(
        {std::string(to_string(row.stage)), row.local, row.remote, row.remote_fraction});
  }
  if (opt.verify) {
    const Tensor4D<T> reference = direct_conv(input, kernel, cfg);
    rep.max_rel_error = max_relative_error<T>(last->output.data(), reference.data());
  }
  return rep;
}

}  // namespace detail

/// Runs one preset or custom layer; rejects runs whose working set exceeds
/// opt.max_bytes.
inline RunReport run(const RunOptions& opt) {
  const ConvConfig cfg = resolve_config(opt);
  opt.topology.validate();
  const std::size_t need = working_set_bytes(cfg, opt.variant, opt.pipeline, opt.verify);
  if (need > opt.max_bytes) {
    std::ostringstream msg;
    msg << "working set " << (need >> 20) << " MiB exceeds cap of " << (opt.max_bytes >> 20)
        << " MiB; reduce --batch or set --cap-channels (or raise --max-memory-mb)";
    throw Error(ErrorKind::capacity, msg.str());
  }
  return cfg.element == ElementKind::fp32 ? detail::run_typed<float>(opt, cfg)
                                          : detail::run_typed<double>(opt, cfg);
}

struct VerifyResult {
  bool passed = false;
  double max_rel_error = 0;
  double tolerance = 0;
  RunReport report;
};

inline double default_tolerance(ElementKind e) { return e == ElementKind::fp32 ? 1e-3 : 1e-10; }

inline VerifyResult verify(RunOptions opt, double tolerance) {
  opt.verify = true;
  opt.repeats = 1;
  VerifyResult res;
  res.report = run(opt);
  res.max_rel_error = *res.report.max_rel_error;
  res.tolerance = tolerance;
  res.passed = res.max_rel_error <= tolerance;
  return res;
}

// ---- serialization -------------------------------------------------------

inline constexpr std::string_view kSchemaName = "nfft-bench-report";
inline constexpr int kSchemaVersion = 1;

enum class Format { json, csv, table };

inline Format parse_format(std::string_view s) {
  if (s == "json") return Format::json;
  if (s == "csv") return Format::csv;
  if (s == "table") return Format::table;
  throw Error(ErrorKind::format, "unknown format '" + std::string(s) + "'");
}

/// Fills `speedup` (wfft total / nfft total) on both members of every
/// wfft/nfft pair that share layer and topology.
inline void attach_speedups(std::vector<RunReport>& reports) {
  auto key = [](const RunReport& r) {
    std::ostringstream k;
    const auto& c = r.config;
    k << r.preset << '|' << r.element << '|' << c.batch << '|' << c.in_channels << '|'
      << c.out_channels << '|' << c.in_height << '|' << c.in_width << '|' << c.kernel_height << '|'
      << c.kernel_width << '|' << c.pad << '|' << r.nodes << '|' << r.cores_per_node << '|'
      << r.tile << '|' << r.lanes;
    return k.str();
  };
  std::map<std::string, std::pair<RunReport*, RunReport*>> pairs;
  for (auto& r : reports) {
    r.speedup.reset();
    auto& slot = pairs[key(r)];
    if (r.variant == "wfft") slot.first = &r;
    if (r.variant == "nfft") slot.second = &r;
  }
  for (auto& [k, p] : pairs) {
    if (p.first == nullptr || p.second == nullptr || p.second->median.total <= 0) continue;
    const double s = p.first->median.total / p.second->median.total;
    p.first->speedup = s;
    p.second->speedup = s;
  }
}

inline nlohmann::ordered_json to_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["preset"] = r.preset;
  j["variant"] = r.variant;
  j["element"] = r.element;
  j["batch"] = r.config.batch;
  j["in_channels"] = r.config.in_channels;
  j["out_channels"] = r.config.out_channels;
  j["in_height"] = r.config.in_height;
  j["in_width"] = r.config.in_width;
  j["kernel_height"] = r.config.kernel_height;
  j["kernel_width"] = r.config.kernel_width;
  j["pad"] = r.config.pad;
  j["nodes"] = r.nodes;
  j["cores_per_node"] = r.cores_per_node;
  j["page_size"] = r.page_size;
  j["tile"] = r.tile;
  j["lanes"] = r.lanes;
  j["seed"] = r.seed;
  j["repeats"] = r.repeats;
  j["time_s"] = {{"input", r.median.input},   {"kernel", r.median.kernel},
                 {"cmm", r.median.cmm},       {"output", r.median.output},
                 {"total", r.median.total}};
  auto loc = nlohmann::ordered_json::array();
  for (const auto& s : r.locality) {
    loc.push_back({{"stage", s.stage},
                   {"local_bytes", s.local_bytes},
                   {"remote_bytes", s.remote_bytes},
                   {"remote_fraction", s.remote_fraction}});
  }
  j["locality"] = loc;
  j["max_rel_error"] = r.max_rel_error ? nlohmann::ordered_json(*r.max_rel_error) : nullptr;
  j["speedup"] = r.speedup ? nlohmann::ordered_json(*r.speedup) : nullptr;
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.preset = j.at("preset").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.element = j.at("element").get<std::string>();
    r.config.batch = j.at("batch").get<std::size_t>();
    r.config.in_channels = j.at("in_channels").get<std::size_t>();
    r.config.out_channels = j.at("out_channels").get<std::size_t>();
    r.config.in_height = j.at("in_height").get<std::size_t>();
    r.config.in_width = j.at("in_width").get<std::size_t>();
    r.config.kernel_height = j.at("kernel_height").get<std::size_t>();
    r.config.kernel_width = j.at("kernel_width").get<std::size_t>();
    r.config.pad = j.at("pad").get<std::size_t>();
    r.config.element = r.element == "fp64" ? ElementKind::fp64 : ElementKind::fp32;
    r.nodes = j.at("nodes").get<std::size_t>();
    r.cores_per_node = j.at("cores_per_node").get<std::size_t>();
    r.page_size = j.at("page_size").get<std::size_t>();
    r.tile = j.at("tile").get<std::size_t>();
    r.lanes = j.at("lanes").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.repeats = j.at("repeats").get<std::size_t>();
    const auto& t = j.at("time_s");
    r.median = {t.at("input").get<double>(), t.at("kernel").get<double>(),
                t.at("cmm").get<double>(), t.at("output").get<double>(),
                t.at("total").get<double>()};
    for (const auto& s : j.at("locality")) {
      r.locality.push_back({s.at("stage").get<std::string>(), s.at("local_bytes").get<std::uint64_t>(),
                            s.at("remote_bytes").get<std::uint64_t>(),
                            s.at("remote_fraction").get<double>()});
    }
    if (!j.at("max_rel_error").is_null()) r.max_rel_error = j.at("max_rel_error").get<double>();
    if (!j.at("speedup").is_null()) r.speedup = j.at("speedup").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed report: ") + e.what());
  }
}

/// Parses one document produced by format_reports(..., json).
inline std::vector<RunReport> parse_reports(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("invalid json: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != kSchemaName) {
    throw Error(ErrorKind::format, "not an nfft-bench-report document");
  }
  if (doc.value("schema_version", -1) != kSchemaVersion) {
    throw Error(ErrorKind::format, "unsupported schema_version " +
                                       doc.value("schema_version", nlohmann::json(-1)).dump());
  }
  std::vector<RunReport> out;
  for (const auto& r : doc.at("reports")) out.push_back(report_from_json(r));
  return out;
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"preset",        "variant",     "element",      "batch",
                                  "in_channels",   "out_channels", "in_height",   "in_width",
                                  "kernel_height", "kernel_width", "pad",         "nodes",
                                  "cores_per_node", "page_size",  "tile",         "lanes",
                                  "seed",          "repeats",     "time_input_s", "time_kernel_s",
                                  "time_cmm_s",    "time_output_s", "time_total_s"};
    for (Stage s : kAllStages) {
      const std::string n(to_string(s));
      c.push_back(n + "_local_bytes");
      c.push_back(n + "_remote_bytes");
      c.push_back(n + "_remote_fraction");
    }
    c.push_back("max_rel_error");
    c.push_back("speedup");
    return c;
  }();
  return cols;
}

namespace detail {

inline std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

inline std::vector<std::string> csv_row(const RunReport& r) {
  const auto& c = r.config;
  std::vector<std::string> row = {r.preset,
                                  r.variant,
                                  r.element,
                                  std::to_string(c.batch),
                                  std::to_string(c.in_channels),
                                  std::to_string(c.out_channels),
                                  std::to_string(c.in_height),
                                  std::to_string(c.in_width),
                                  std::to_string(c.kernel_height),
                                  std::to_string(c.kernel_width),
                                  std::to_string(c.pad),
                                  std::to_string(r.nodes),
                                  std::to_string(r.cores_per_node),
                                  std::to_string(r.page_size),
                                  std::to_string(r.tile),
                                  std::to_string(r.lanes),
                                  std::to_string(r.seed),
                                  std::to_string(r.repeats),
                                  num(r.median.input),
                                  num(r.median.kernel),
                                  num(r.median.cmm),
                                  num(r.median.output),
                                  num(r.median.total)};
  for (Stage s : kAllStages) {
    const StageReport* sr = r.stage(to_string(s));
    row.push_back(sr ? std::to_string(sr->local_bytes) : "");
    row.push_back(sr ? std::to_string(sr->remote_bytes) : "");
    row.push_back(sr ? num(sr->remote_fraction) : "");
  }
  row.push_back(r.max_rel_error ? num(*r.max_rel_error) : "");
  row.push_back(r.speedup ? num(*r.speedup) : "");
  return row;
}

}  // namespace detail

/// Serializes reports after attaching speedups. Field order is fixed.
inline std::string format_reports(std::vector<RunReport> reports, Format format) {
  if (reports.empty()) throw Error(ErrorKind::format, "no reports to format");
  attach_speedups(reports);

  std::ostringstream out;
  if (format == Format::json) {
    nlohmann::ordered_json doc;
    doc["schema"] = kSchemaName;
    doc["schema_version"] = kSchemaVersion;
    doc["reports"] = nlohmann::ordered_json::array();
    for (const auto& r : reports) doc["reports"].push_back(to_json(r));
    out << doc.dump(2) << '\n';
  } else if (format == Format::csv) {
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : reports) {
      const auto row = detail::csv_row(r);
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
    }
  } else {
    out << std::left << std::setw(10) << "preset" << std::setw(8) << "variant" << std::setw(6)
        << "elem" << std::right << std::setw(6) << "batch" << std::setw(11) << "input_s"
        << std::setw(11) << "kernel_s" << std::setw(11) << "cmm_s" << std::setw(11) << "output_s"
        << std::setw(11) << "total_s" << std::setw(16) << "cmm_remote_B" << std::setw(10)
        << "cmm_rf" << std::setw(12) << "max_rel_err" << std::setw(9) << "speedup" << '\n';
    for (const auto& r : reports) {
      const StageReport* cmm = r.stage("cmm_fetch");
      out << std::left << std::setw(10) << r.preset << std::setw(8) << r.variant << std::setw(6)
          << r.element << std::right << std::setw(6) << r.config.batch << std::fixed
          << std::setprecision(5) << std::setw(11) << r.median.input << std::setw(11)
          << r.median.kernel << std::setw(11) << r.median.cmm << std::setw(11) << r.median.output
          << std::setw(11) << r.median.total << std::setw(16)
          << (cmm ? cmm->remote_bytes : 0) << std::setprecision(4) << std::setw(10)
          << (cmm ? cmm->remote_fraction : 0.0);
      out << std::defaultfloat << std::setprecision(3) << std::setw(12)
          << (r.max_rel_error ? detail::num(*r.max_rel_error).substr(0, 10) : "-") << std::setw(9)
          << (r.speedup ? detail::num(*r.speedup).substr(0, 6) : "-") << '\n';
    }
  }
  return out.str();
}

}  // namespace nfft::bench
