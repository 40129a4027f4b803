#pragma once

#include <stdexcept>
#include <string>

namespace hsad {

// Base for every error the toolkit raises. `category()` groups errors by how a
// caller should react: configuration problems (fix the flags) versus data
// problems (fix the inputs).
class Error : public std::runtime_error {
 public:
  enum class Category { config, data };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(Category::config, "config error: " + what) {}
};

struct SelectionError : Error {
  explicit SelectionError(const std::string& what)
      : Error(Category::config, "selection error: " + what) {}
};

// Precondition on a mathematical operation (empty DFT input, no non-DC bin).
struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error(Category::config, "domain error: " + what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(Category::data, "format error: " + what) {}
};

struct UnsupportedFormatError : Error {
  explicit UnsupportedFormatError(const std::string& what)
      : Error(Category::data, "unsupported format: " + what) {}
};

struct CorruptionError : Error {
  explicit CorruptionError(const std::string& what)
      : Error(Category::data, "corrupt file: " + what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(Category::data, "data error: " + what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(Category::data, "shape error: " + what) {}
};

struct MetricError : Error {
  explicit MetricError(const std::string& what) : Error(Category::data, "metric error: " + what) {}
};

}  // namespace hsad
