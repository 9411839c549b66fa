#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmk {

enum class ErrorKind {
  config,
  decode,
  range,
  missing_label,
  undefined,
  generation,
  conflict,
  not_found,
  io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::decode: return "decode";
    case ErrorKind::range: return "range";
    case ErrorKind::missing_label: return "missing_label";
    case ErrorKind::undefined: return "undefined";
    case ErrorKind::generation: return "generation";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Domain error carrying a machine-readable kind. Every library module
/// reports failures through this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace pmk
