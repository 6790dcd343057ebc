#pragma once

#include <stdexcept>
#include <string>

namespace uvq {

/// Base of every error raised by the library. The CLI maps ConfigError and
/// PreconditionError to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define UVQ_DEFINE_ERROR(Name)              \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

UVQ_DEFINE_ERROR(DomainError);          // point outside the support
UVQ_DEFINE_ERROR(ParameterError);       // invalid or mismatched parameter vector
UVQ_DEFINE_ERROR(PreconditionError);    // caller violated an operation's precondition
UVQ_DEFINE_ERROR(ShapeError);           // block/codebook dimension mismatch
UVQ_DEFINE_ERROR(IndexError);           // codevector or cell index out of range
UVQ_DEFINE_ERROR(SizeError);            // codebook cap exceeded
UVQ_DEFINE_ERROR(EfficiencyError);      // rejection sampler acceptance too low
UVQ_DEFINE_ERROR(UnsupportedFamilyError);
UVQ_DEFINE_ERROR(LinearDependenceError);
UVQ_DEFINE_ERROR(FramingError);         // truncated or malformed bitstream
UVQ_DEFINE_ERROR(CompatibilityError);   // version or content hash mismatch
UVQ_DEFINE_ERROR(InternalError);
UVQ_DEFINE_ERROR(IoError);

#undef UVQ_DEFINE_ERROR

/// Quadrature failed to reach its target; carries the achieved estimate.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double achieved_error)
      : Error(what), achieved_error_(achieved_error) {}
  double achieved_error() const noexcept { return achieved_error_; }

 private:
  double achieved_error_;
};

/// Invalid configuration or specification document. `path` is the offending
/// field (e.g. "schedule.identification") and `line` the 1-based source line,
/// or 0 when the field is missing entirely.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, int line, const std::string& message)
      : Error(format(path, line, message)), path_(std::move(path)), line_(line) {}

  const std::string& path() const noexcept { return path_; }
  int line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& path, int line, const std::string& message) {
    std::string out = path.empty() ? std::string("<document>") : path;
    if (line > 0) out += " (line " + std::to_string(line) + ")";
    return out + ": " + message;
  }

  std::string path_;
  int line_;
};

}  // namespace uvq
