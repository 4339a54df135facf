#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace synthvol {

/// Broad failure classes. The CLI maps the first four to exit code 2
/// (bad input) and the rest to exit code 3 (runtime failure).
enum class Errc {
  invalid_argument,
  io,
  format,
  unsupported,
  numerical,
  runtime,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::io: return "io";
    case Errc::format: return "format";
    case Errc::unsupported: return "unsupported";
    case Errc::numerical: return "numerical";
    case Errc::runtime: return "runtime";
  }
  return "unknown";
}

/// Library exception. `stage` names the pipeline step that failed so that
/// errors raised deep inside the generator stay attributable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string stage, const std::string& message)
      : std::runtime_error(stage.empty() ? message : stage + ": " + message),
        code_(code),
        stage_(std::move(stage)) {}

  Errc code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

  bool is_input_error() const noexcept {
    return code_ == Errc::invalid_argument || code_ == Errc::io || code_ == Errc::format ||
           code_ == Errc::unsupported;
  }

 private:
  Errc code_;
  std::string stage_;
};

[[noreturn]] inline void fail(Errc code, std::string stage, const std::string& message) {
  throw Error(code, std::move(stage), message);
}

inline void require(bool cond, std::string stage, const std::string& message) {
  if (!cond) fail(Errc::invalid_argument, std::move(stage), message);
}

}  // namespace synthvol
