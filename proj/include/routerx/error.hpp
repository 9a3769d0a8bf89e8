#pragma once

#include <stdexcept>
#include <string>

namespace routerx {

/// Runtime failure while reading, computing, or writing. The message starts
/// with a short stable token (e.g. "corrupt dump") that callers may match on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that violates a documented contract: bad config, bad schema, bad
/// argument ranges. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace routerx
