#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcond {

// Base of every error raised by the library. Callers that only need a
// diagnostic can catch this; the subclasses exist so that tests and the CLI
// can tell failure kinds apart.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UnknownCondition : public Error {
public:
  explicit UnknownCondition(const std::string& label)
      : Error("unknown temporal condition: '" + label + "'"), label_(label) {}
  const std::string& label() const noexcept { return label_; }

private:
  std::string label_;
};

class DimensionMismatch : public Error {
public:
  DimensionMismatch(const std::string& what, std::size_t expected, std::size_t got)
      : Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(got)) {}
};

class CalendarGap : public Error {
public:
  explicit CalendarGap(const std::string& date)
      : Error("calendar has no entry for " + date), date_(date) {}
  const std::string& date() const noexcept { return date_; }

private:
  std::string date_;
};

class IoError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& msg)
      : Error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class EmptyMatrix : public Error {
public:
  explicit EmptyMatrix(const std::string& link)
      : Error("link '" + link + "' has no observed cells") {}
};

class DivergenceError : public Error {
public:
  explicit DivergenceError(std::size_t epoch)
      : Error("training diverged (non-finite loss) at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

private:
  std::size_t epoch_;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

class InsufficientData : public Error {
public:
  explicit InsufficientData(const std::string& link)
      : Error("insufficient training data for link '" + link + "'"), link_(link) {}
  const std::string& link() const noexcept { return link_; }

private:
  std::string link_;
};

class PoolTooSmall : public Error {
public:
  PoolTooSmall(const std::string& group, std::size_t have, std::size_t need)
      : Error("pool for group '" + group + "' has " + std::to_string(have) +
              " links, need " + std::to_string(need)),
        group_(group) {}
  const std::string& group() const noexcept { return group_; }

private:
  std::string group_;
};

class InvalidInput : public Error {
public:
  using Error::Error;
};

// A pipeline stage was asked to run before the stage producing its inputs.
class MissingArtifact : public Error {
public:
  MissingArtifact(const std::string& path, const std::string& producer)
      : Error("missing artifact '" + path + "'; run `" + producer + "` first"),
        producer_(producer) {}
  const std::string& producer() const noexcept { return producer_; }

private:
  std::string producer_;
};

} // namespace tcond
