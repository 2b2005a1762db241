#pragma once

#include <stdexcept>
#include <string>

namespace mobman {

// Exit codes shared by the CLI and the service entry point.
enum class ExitCode : int {
  kOk = 0,
  kValidation = 2,
  kRuntime = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kRuntime)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad inputs: non-finite values, malformed scenario, limits violated.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(what, ExitCode::kValidation) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, ExitCode::kIo) {}
};

/// Scan has too few valid beams to constrain a pose.
class DegenerateScanError : public Error {
 public:
  explicit DegenerateScanError(const std::string& what) : Error(what) {}
};

/// Scan points do not find enough map support inside the gating radius.
class LostError : public Error {
 public:
  explicit LostError(const std::string& what) : Error(what) {}
};

/// No line with enough inliers in the depth points.
class NoPanelError : public Error {
 public:
  explicit NoPanelError(const std::string& what) : Error(what) {}
};

}  // namespace mobman
