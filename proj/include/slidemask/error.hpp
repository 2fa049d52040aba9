#pragma once

#include <stdexcept>
#include <string>

namespace slidemask {

/// Error classes surfaced by the pipeline. The CLI maps each to an exit code.
enum class ErrorKind {
  parse,          // malformed annotation document
  taxonomy,       // class name outside the five-label set
  degenerate,     // polygon with fewer than three vertices
  contract,       // precondition violated by the caller
  split,          // split counts do not match the dataset
  schema,         // persisted document fails validation
  not_found,      // file or directory missing
  decode,         // image bytes could not be decoded
  fetch,          // provider failure (retryable)
  config,         // invalid configuration
  checkpoint,     // checkpoint incompatible with the model
  divergence,     // non-finite loss during training
  usage,          // command-line misuse
  run_exists,     // run id already used
  io,             // write failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class FetchError : public Error {
 public:
  FetchError(const std::string& message, bool retryable)
      : Error(ErrorKind::fetch, message), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& message)
      : Error(ErrorKind::divergence, message), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorKind::contract, message);
}

}  // namespace slidemask
