#pragma once

#include <stdexcept>
#include <string>

namespace cma {

// Broad failure classes; the CLI maps these onto exit statuses 1, 2 and 3.
enum class ErrorKind { validation, data, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::validation, "configuration error: " + what) {}
};

struct LookupError : Error {
  explicit LookupError(const std::string& what) : Error(ErrorKind::data, "lookup error: " + what) {}
};

struct EncodingError : Error {
  explicit EncodingError(const std::string& what) : Error(ErrorKind::data, "encoding error: " + what) {}
};

struct EmbeddingError : Error {
  explicit EmbeddingError(const std::string& what) : Error(ErrorKind::data, "embedding error: " + what) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error(ErrorKind::data, "training error: " + what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, "data error: " + what) {}
};

struct FeatureError : Error {
  explicit FeatureError(const std::string& what) : Error(ErrorKind::data, "feature error: " + what) {}
};

struct MetricError : Error {
  explicit MetricError(const std::string& what) : Error(ErrorKind::data, "undefined metric: " + what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::data, "io error: " + what) {}
};

}  // namespace cma
