#pragma once

// Logical NUMA model. Regions carry a deterministic page->node map, worker
// groups carry a node id, and every instrumented access is charged to
// (stage, executing node, owning node). Physical mode additionally pins
// threads and binds pages through the OS; nothing else depends on it.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#include <sys/syscall.h>
#include <unistd.h>
#endif

#include "nfft/error.hpp"

namespace nfft {

enum class NumaMode { logical, physical };

struct NumaTopology {
  std::size_t nodes = 8;
  std::size_t cores_per_node = 8;
  std::size_t page_size = 4096;
  NumaMode mode = NumaMode::logical;

  void validate() const {
    if (nodes == 0 || cores_per_node == 0) {
      throw Error(ErrorKind::configuration, "topology needs at least one node and one core");
    }
    if (page_size == 0) throw Error(ErrorKind::configuration, "page size must be positive");
  }
  std::size_t workers() const noexcept { return nodes * cores_per_node; }
};

/// NFFT_NUMA_MODE=physical selects physical mode; anything else is logical.
inline NumaMode numa_mode_from_env() {
  const char* v = std::getenv("NFFT_NUMA_MODE");
  return (v != nullptr && std::string_view(v) == "physical") ? NumaMode::physical
                                                             : NumaMode::logical;
}

struct PlacementPolicy {
  enum class Kind { interleaved, on_node };
  Kind kind = Kind::interleaved;
  std::size_t node = 0;

  static PlacementPolicy interleaved() { return {Kind::interleaved, 0}; }
  static PlacementPolicy on_node(std::size_t n) { return {Kind::on_node, n}; }
  bool operator==(const PlacementPolicy&) const = default;
};

class Region {
 public:
  Region() = default;
  Region(std::uint64_t id, std::size_t size, PlacementPolicy policy, std::size_t nodes,
         std::size_t page_size)
      : id_(id), size_(size), policy_(policy), nodes_(nodes), page_size_(page_size) {}

  std::uint64_t id() const noexcept { return id_; }
  std::size_t size() const noexcept { return size_; }
  const PlacementPolicy& policy() const noexcept { return policy_; }
  std::size_t page_size() const noexcept { return page_size_; }
  std::size_t nodes() const noexcept { return nodes_; }
  std::size_t page_count() const noexcept { return (size_ + page_size_ - 1) / page_size_; }

  std::size_t owner_of_page(std::size_t page) const noexcept {
    return policy_.kind == PlacementPolicy::Kind::on_node ? policy_.node : page % nodes_;
  }

  std::vector<std::size_t> page_owners() const {
    std::vector<std::size_t> owners(page_count());
    for (std::size_t p = 0; p < owners.size(); ++p) owners[p] = owner_of_page(p);
    return owners;
  }

 private:
  std::uint64_t id_ = 0;
  std::size_t size_ = 0;
  PlacementPolicy policy_;
  std::size_t nodes_ = 1;
  std::size_t page_size_ = 4096;
};

inline Region allocate_region(std::size_t size, PlacementPolicy policy, const NumaTopology& topo) {
  topo.validate();
  if (policy.kind == PlacementPolicy::Kind::on_node && policy.node >= topo.nodes) {
    throw Error(ErrorKind::configuration, "placement node out of range");
  }
  static std::atomic<std::uint64_t> next_id{1};
  return Region(next_id.fetch_add(1, std::memory_order_relaxed), size, policy, topo.nodes,
                topo.page_size);
}

// Accesses 1st..6th of the transform/CMM/inverse data flow, split into
// fetch and store halves per stage.
enum class Stage : std::size_t {
  input_fetch,
  input_store,
  kernel_fetch,
  kernel_store,
  cmm_fetch,
  cmm_store,
  output_fetch,
  output_store,
};
inline constexpr std::size_t kStageCount = 8;

inline constexpr std::array<Stage, kStageCount> kAllStages = {
    Stage::input_fetch, Stage::input_store, Stage::kernel_fetch, Stage::kernel_store,
    Stage::cmm_fetch,   Stage::cmm_store,   Stage::output_fetch, Stage::output_store};

constexpr std::string_view to_string(Stage s) noexcept {
  constexpr std::array<std::string_view, kStageCount> names = {
      "input_fetch", "input_store", "kernel_fetch", "kernel_store",
      "cmm_fetch",   "cmm_store",   "output_fetch", "output_store"};
  return names[static_cast<std::size_t>(s)];
}

/// Byte counters indexed by (stage, executing node, owning node).
class AccessLedger {
 public:
  AccessLedger() = default;
  explicit AccessLedger(std::size_t nodes) : nodes_(nodes), bytes_(kStageCount * nodes * nodes, 0) {}

  std::size_t nodes() const noexcept { return nodes_; }

  void record(std::size_t worker_node, const Region& region, std::size_t offset, std::size_t len,
              Stage stage) {
    if (offset > region.size() || len > region.size() - offset) {
      throw Error(ErrorKind::ledger, "access [" + std::to_string(offset) + ", +" +
                                         std::to_string(len) + ") outside region of " +
                                         std::to_string(region.size()) + " bytes");
    }
    if (len == 0) return;
    std::uint64_t* row = &bytes_[(static_cast<std::size_t>(stage) * nodes_ + worker_node) * nodes_];
    if (region.policy().kind == PlacementPolicy::Kind::on_node) {
      row[region.policy().node] += len;
      return;
    }
    const std::size_t ps = region.page_size();
    std::size_t pos = offset;
    const std::size_t end = offset + len;
    while (pos < end) {
      const std::size_t page = pos / ps;
      const std::size_t chunk = std::min(end, (page + 1) * ps) - pos;
      row[region.owner_of_page(page)] += chunk;
      pos += chunk;
    }
  }

  std::uint64_t bytes(Stage stage, std::size_t exec, std::size_t owner) const noexcept {
    return bytes_[(static_cast<std::size_t>(stage) * nodes_ + exec) * nodes_ + owner];
  }
  std::uint64_t local_bytes(Stage stage) const noexcept {
    std::uint64_t sum = 0;
    for (std::size_t n = 0; n < nodes_; ++n) sum += bytes(stage, n, n);
    return sum;
  }
  std::uint64_t total_bytes(Stage stage) const noexcept {
    std::uint64_t sum = 0;
    for (std::size_t e = 0; e < nodes_; ++e)
      for (std::size_t o = 0; o < nodes_; ++o) sum += bytes(stage, e, o);
    return sum;
  }
  std::uint64_t remote_bytes(Stage stage) const noexcept {
    return total_bytes(stage) - local_bytes(stage);
  }

  void merge(const AccessLedger& other) {
    if (other.nodes_ != nodes_) throw Error(ErrorKind::ledger, "ledger node count mismatch");
    for (std::size_t i = 0; i < bytes_.size(); ++i) bytes_[i] += other.bytes_[i];
  }

 private:
  std::size_t nodes_ = 0;
  std::vector<std::uint64_t> bytes_;
};

inline void record_access(AccessLedger& ledger, std::size_t worker_node, const Region& region,
                          std::size_t offset, std::size_t len, Stage stage) {
  ledger.record(worker_node, region, offset, len, stage);
}

struct StageLocality {
  Stage stage = Stage::input_fetch;
  std::uint64_t local = 0;
  std::uint64_t remote = 0;
  double remote_fraction = 0.0;
};

inline std::vector<StageLocality> locality_report(const AccessLedger& ledger,
                                                  std::span<const Stage> stages = kAllStages) {
  std::vector<StageLocality> out;
  out.reserve(stages.size());
  for (Stage s : stages) {
    StageLocality row{s, ledger.local_bytes(s), ledger.remote_bytes(s), 0.0};
    const std::uint64_t total = row.local + row.remote;
    row.remote_fraction = total == 0 ? 0.0 : double(row.remote) / double(total);
    out.push_back(row);
  }
  return out;
}

/// Page-aligned, zero-initialized storage for a region's contents.
template <typename T>
class PageBuffer {
 public:
  PageBuffer() = default;
  PageBuffer(std::size_t count, const Region& region, NumaMode mode) : count_(count) {
    if (count == 0) return;
    const std::size_t align = std::max<std::size_t>(region.page_size(), alignof(T));
    const std::size_t bytes = ((count * sizeof(T) + align - 1) / align) * align;
    void* raw = std::aligned_alloc(align, bytes);
    if (raw == nullptr) throw std::bad_alloc();
    if (mode == NumaMode::physical) bind_pages(raw, bytes, region);
    std::memset(raw, 0, bytes);
    data_.reset(static_cast<T*>(raw));
  }

  T* data() noexcept { return data_.get(); }
  const T* data() const noexcept { return data_.get(); }
  std::size_t size() const noexcept { return count_; }
  std::span<T> span() noexcept { return {data_.get(), count_}; }
  std::span<const T> span() const noexcept { return {data_.get(), count_}; }

 private:
  struct FreeDeleter {
    void operator()(T* p) const noexcept { std::free(p); }
  };

  static void bind_pages(void* addr, std::size_t bytes, const Region& region);

  std::unique_ptr<T, FreeDeleter> data_;
  std::size_t count_ = 0;
};

namespace detail {

inline std::size_t host_numa_nodes() {
  std::size_t n = 0;
  while (std::ifstream("/sys/devices/system/node/node" + std::to_string(n) + "/cpulist")) ++n;
  return std::max<std::size_t>(n, 1);
}

inline std::vector<int> parse_cpulist(const std::string& text) {
  std::vector<int> cpus;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty() || part == "\n") continue;
    const auto dash = part.find('-');
    const int lo = std::stoi(part.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(part.substr(dash + 1));
    for (int c = lo; c <= hi; ++c) cpus.push_back(c);
  }
  return cpus;
}

/// Pins the calling thread to the host CPUs of logical node `node`
/// (folded onto the host's node count). Best effort.
inline void pin_to_node(std::size_t node) {
#if defined(__linux__)
  const std::size_t host_node = node % host_numa_nodes();
  std::ifstream in("/sys/devices/system/node/node" + std::to_string(host_node) + "/cpulist");
  std::string text;
  std::getline(in, text);
  auto cpus = parse_cpulist(text);
  if (cpus.empty()) return;
  cpu_set_t set;
  CPU_ZERO(&set);
  for (int c : cpus) CPU_SET(c, &set);
  pthread_setaffinity_np(pthread_self(), sizeof(set), &set);
#else
  (void)node;
#endif
}

}  // namespace detail

template <typename T>
void PageBuffer<T>::bind_pages(void* addr, std::size_t bytes, const Region& region) {
#if defined(__linux__) && defined(SYS_mbind)
  constexpr int kMpolBind = 2;
  constexpr int kMpolInterleave = 3;
  const std::size_t host_nodes = detail::host_numa_nodes();
  unsigned long mask = 0;
  int mode = kMpolInterleave;
  if (region.policy().kind == PlacementPolicy::Kind::on_node) {
    mask = 1ul << (region.policy().node % host_nodes);
    mode = kMpolBind;
  } else {
    for (std::size_t n = 0; n < host_nodes && n < 64; ++n) mask |= 1ul << n;
  }
  // Failure (no NUMA support, containers) leaves default placement.
  (void)syscall(SYS_mbind, addr, bytes, mode, &mask, 64ul, 0u);
#else
  (void)addr;
  (void)bytes;
  (void)region;
#endif
}

/// Identity and ledger shard of one worker thread.
struct WorkerContext {
  std::size_t node = 0;
  std::size_t local_index = 0;   // index within its node group
  std::size_t global_index = 0;  // node * cores_per_node + local_index
  AccessLedger* ledger = nullptr;

  void record(const Region& region, std::size_t offset, std::size_t len, Stage stage) const {
    if (ledger != nullptr) ledger->record(node, region, offset, len, stage);
  }
};

using Task = std::function<void(WorkerContext&)>;
using TaskSet = std::vector<Task>;

/// N groups of U workers. Threads live for one run; each run ends with a
/// join that doubles as the stage barrier, after which worker-local
/// ledgers are merged.
class WorkerPool {
 public:
  explicit WorkerPool(NumaTopology topo) : topo_(topo) { topo_.validate(); }

  const NumaTopology& topology() const noexcept { return topo_; }
  std::size_t nodes() const noexcept { return topo_.nodes; }
  std::size_t cores_per_node() const noexcept { return topo_.cores_per_node; }
  std::size_t workers() const noexcept { return topo_.workers(); }

  /// Group g runs task set g; worker u of the group takes tasks u, u+U, ...
  void run_groups(const std::vector<TaskSet>& per_node, AccessLedger* ledger = nullptr) const {
    if (per_node.size() != topo_.nodes) {
      throw Error(ErrorKind::configuration, "run_groups needs exactly one task set per node");
    }
    launch(ledger, [&](WorkerContext& ctx, const std::atomic<bool>& abort) {
      const TaskSet& set = per_node[ctx.node];
      for (std::size_t i = ctx.local_index; i < set.size() && !abort.load(std::memory_order_relaxed);
           i += topo_.cores_per_node) {
        set[i](ctx);
      }
    });
  }

  /// All N*U workers pull items [0, count) from one shared queue with no
  /// node affinity.
  void run_shared(std::size_t count, const std::function<void(WorkerContext&, std::size_t)>& body,
                  AccessLedger* ledger = nullptr) const {
    std::atomic<std::size_t> next{0};
    launch(ledger, [&](WorkerContext& ctx, const std::atomic<bool>& abort) {
      for (;;) {
        if (abort.load(std::memory_order_relaxed)) return;
        const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= count) return;
        body(ctx, i);
      }
    });
  }

 private:
  template <typename Body>
  void launch(AccessLedger* ledger, Body&& body) const {
    const std::size_t total = topo_.workers();
    std::vector<AccessLedger> shards(ledger != nullptr ? total : 0, AccessLedger(topo_.nodes));
    std::atomic<bool> abort{false};
    std::mutex error_mutex;
    std::string first_error;

    {
      std::vector<std::jthread> threads;
      threads.reserve(total);
      for (std::size_t w = 0; w < total; ++w) {
        threads.emplace_back([&, w] {
          WorkerContext ctx;
          ctx.node = w / topo_.cores_per_node;
          ctx.local_index = w % topo_.cores_per_node;
          ctx.global_index = w;
          ctx.ledger = ledger != nullptr ? &shards[w] : nullptr;
          if (topo_.mode == NumaMode::physical) detail::pin_to_node(ctx.node);
          try {
            body(ctx, abort);
          } catch (const std::exception& e) {
            std::lock_guard lock(error_mutex);
            if (first_error.empty()) {
              first_error = "worker " + std::to_string(ctx.node) + "." +
                            std::to_string(ctx.local_index) + ": " + e.what();
            }
            abort.store(true);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (first_error.empty()) first_error = "worker threw a non-standard exception";
            abort.store(true);
          }
        });
      }
    }

    if (abort.load()) throw Error(ErrorKind::task, first_error);
    if (ledger != nullptr) {
      for (const auto& shard : shards) ledger->merge(shard);
    }
  }

  NumaTopology topo_;
};

inline void run_groups(const WorkerPool& pool, const std::vector<TaskSet>& per_node,
                       AccessLedger* ledger = nullptr) {
  pool.run_groups(per_node, ledger);
}

}  // namespace nfft
