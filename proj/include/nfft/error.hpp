#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nfft {

enum class ErrorKind {
  configuration,  // tensor/config/plan mismatch, bad flags
  plan,           // tile size incompatible with kernel or lane width
  data,           // corrupted spectrum (Hermitian symmetry violated)
  ledger,         // out-of-range instrumented access
  task,           // a worker task threw
  format,         // report serialization problems
  capacity,       // desk-scale working-set cap exceeded
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::plan: return "plan error";
    case ErrorKind::data: return "data error";
    case ErrorKind::ledger: return "ledger error";
    case ErrorKind::task: return "task error";
    case ErrorKind::format: return "format error";
    case ErrorKind::capacity: return "capacity error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace nfft
