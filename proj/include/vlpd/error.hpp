#pragma once

#include <stdexcept>
#include <string>

namespace vlpd {

enum class ErrorKind {
  kIo,
  kFormat,
  kShape,
  kConfig,
  kPolicy,
  kTemplate,
  kAnnotation,
  kUndefinedMetric,
  kDivergence,
  kInvalidArgument,
};

// All errors raised by the library carry a kind so the C API can map them to
// status codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

// Raised by the tensor container reader; `field()` names the offending part
// of the file (magic, rank, dims, dtype, payload).
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& what)
      : Error(ErrorKind::kFormat, field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class PolicyError : public Error {
 public:
  explicit PolicyError(const std::string& what) : Error(ErrorKind::kPolicy, what) {}
};

class TemplateError : public Error {
 public:
  explicit TemplateError(const std::string& what) : Error(ErrorKind::kTemplate, what) {}
};

class AnnotationError : public Error {
 public:
  explicit AnnotationError(const std::string& what) : Error(ErrorKind::kAnnotation, what) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& subset)
      : Error(ErrorKind::kUndefinedMetric,
              "subset '" + subset + "' has no evaluated ground truth; MR-2 is undefined"),
        subset_(subset) {}
  const std::string& subset() const noexcept { return subset_; }

 private:
  std::string subset_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::kDivergence, what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::kInvalidArgument, what) {}
};

}  // namespace vlpd
