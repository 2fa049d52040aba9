#include "slidemask/error.hpp"

namespace slidemask {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::taxonomy: return "taxonomy";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::contract: return "contract";
    case ErrorKind::split: return "split";
    case ErrorKind::schema: return "schema";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::decode: return "decode";
    case ErrorKind::fetch: return "fetch";
    case ErrorKind::config: return "config";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::usage: return "usage";
    case ErrorKind::run_exists: return "run_exists";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace slidemask
