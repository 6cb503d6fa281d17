#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace smarttree {

/// Base of every error raised by the library. Callers that only care about
/// "something went wrong" catch this; tests match the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SMARTTREE_DEFINE_ERROR(Name)       \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// telemetry_ingest
class MissingColumn : public Error {
 public:
  explicit MissingColumn(std::string column)
      : Error("missing mandatory column '" + column + "'"), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

class DuplicateColumn : public Error {
 public:
  explicit DuplicateColumn(std::string column)
      : Error("duplicate column '" + column + "'"), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// A single malformed data row. Not thrown by the streaming reader (rows are
/// collected); thrown by the single-row entry points.
class RowError : public Error {
 public:
  RowError(std::size_t line, std::string cause)
      : Error("line " + std::to_string(line) + ": " + cause), line_(line), cause_(std::move(cause)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::size_t line_;
  std::string cause_;
};

SMARTTREE_DEFINE_ERROR(BadRowThresholdExceeded);
SMARTTREE_DEFINE_ERROR(IoError);

// dataset
SMARTTREE_DEFINE_ERROR(InvalidWindow);
SMARTTREE_DEFINE_ERROR(InvalidHorizon);
SMARTTREE_DEFINE_ERROR(NegativeDuration);
SMARTTREE_DEFINE_ERROR(DuplicateRecord);
SMARTTREE_DEFINE_ERROR(DegenerateSplit);
SMARTTREE_DEFINE_ERROR(FormatError);

// survival_stats
SMARTTREE_DEFINE_ERROR(EmptyInput);
SMARTTREE_DEFINE_ERROR(EmptyGroup);

// tree_learn
SMARTTREE_DEFINE_ERROR(EmptyDataset);
SMARTTREE_DEFINE_ERROR(DimensionMismatch);
SMARTTREE_DEFINE_ERROR(InvalidConfig);

// evaluation
SMARTTREE_DEFINE_ERROR(HorizonExceedsWindow);
SMARTTREE_DEFINE_ERROR(DegenerateLabels);

// synth_fleet
SMARTTREE_DEFINE_ERROR(InvalidSpec);

// cli
SMARTTREE_DEFINE_ERROR(UnknownFormat);

#undef SMARTTREE_DEFINE_ERROR

}  // namespace smarttree
