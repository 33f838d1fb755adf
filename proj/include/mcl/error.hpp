#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mcl {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A reduction over a set was asked for with zero members.
class EmptySetError : public Error {
 public:
  using Error::Error;
};

/// An input sits where the math is undefined (zero norm, non-finite value).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A loss became non-finite during optimisation.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& where, std::size_t step)
      : Error(where + ": non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Not enough classes or items to satisfy a sampling request.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input; carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Stored checksum does not match the payload.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration document or flag.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcl
