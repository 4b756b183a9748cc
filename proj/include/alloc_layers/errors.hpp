#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace alloc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidBounds : public Error {
 public:
  using Error::Error;
};

class InfeasibleRounding : public Error {
 public:
  using Error::Error;
};

class FiniteDifferenceFailure : public Error {
 public:
  using Error::Error;
};

/// A documented precondition ("Require") of a layer was not met.
class PreconditionViolated : public Error {
 public:
  PreconditionViolated(std::string require, const std::string& detail)
      : Error("precondition violated [" + require + "]: " + detail), require_(std::move(require)) {}
  const std::string& require() const noexcept { return require_; }

 private:
  std::string require_;
};

/// An invariant that the algorithm guarantees was broken. Always a bug.
class InternalAssertion : public Error {
 public:
  using Error::Error;
};

/// Constrained softmax is not applicable: some epsilon coefficient is negative.
class CsConditionViolated : public Error {
 public:
  CsConditionViolated(std::size_t index, double epsilon, std::string node_id = {})
      : Error(make_message(index, epsilon, node_id)),
        index_(index),
        epsilon_(epsilon),
        node_id_(std::move(node_id)) {}

  std::size_t index() const noexcept { return index_; }
  double epsilon() const noexcept { return epsilon_; }
  const std::string& node_id() const noexcept { return node_id_; }

 private:
  static std::string make_message(std::size_t index, double epsilon, const std::string& node) {
    std::string msg = "constrained softmax not applicable: epsilon[" + std::to_string(index) +
                      "] = " + std::to_string(epsilon) + " < 0";
    if (!node.empty()) msg += " at region '" + node + "'";
    return msg;
  }

  std::size_t index_;
  double epsilon_;
  std::string node_id_;
};

class TreeError : public Error {
 public:
  TreeError(std::string node_id, const std::string& what)
      : Error("region '" + node_id + "': " + what), node_id_(std::move(node_id)) {}
  const std::string& node_id() const noexcept { return node_id_; }

 private:
  std::string node_id_;
};

class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class StaleTape : public Error {
 public:
  using Error::Error;
};

}  // namespace alloc
