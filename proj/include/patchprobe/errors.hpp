#pragma once

#include <stdexcept>
#include <string>

namespace patchprobe {

// Bad inputs supplied by the caller/operator: bad config, missing paths,
// violated operation preconditions. Maps to CLI exit code 1.
struct UserError : std::runtime_error {
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal state: diverged optimization, violated invariants,
// unwritable artifacts. Maps to CLI exit code 2.
struct InternalError : std::runtime_error {
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace patchprobe
