#pragma once

#include <stdexcept>
#include <string>

namespace sssl {

enum class errc {
  invalid_shape,
  invalid_argument,
  domain,
  no_tape,
  degenerate_input,
  non_finite,
  format,
  corrupt_checkpoint,
  config_mismatch,
  invalid_dataset,
  io,
};

inline const char* errc_name(errc code) {
  switch (code) {
    case errc::invalid_shape: return "invalid-shape";
    case errc::invalid_argument: return "invalid-argument";
    case errc::domain: return "domain";
    case errc::no_tape: return "no-tape";
    case errc::degenerate_input: return "degenerate-input";
    case errc::non_finite: return "non-finite";
    case errc::format: return "format";
    case errc::corrupt_checkpoint: return "corrupt-checkpoint";
    case errc::config_mismatch: return "config-mismatch";
    case errc::invalid_dataset: return "invalid-dataset";
    case errc::io: return "io";
  }
  return "unknown";
}

// All library failures are reported through this type; code() identifies the
// failure class so callers (and the CLI exit-code mapping) can branch on it.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

}  // namespace sssl
