#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clinfair {

// Base for every error raised by the library. `kind()` is a stable token
// (e.g. "MissingColumn") that the CLI prints and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class MissingColumn : public Error {
 public:
  explicit MissingColumn(std::string column)
      : Error("MissingColumn", "column '" + column + "' not found"), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class TypeMismatch : public Error {
 public:
  TypeMismatch(std::size_t row, std::string column, const std::string& value)
      : Error("TypeMismatch",
              "row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + value + "'"),
        row_(row),
        column_(std::move(column)) {}
  // 1-based data row (header excluded).
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

}  // namespace clinfair
