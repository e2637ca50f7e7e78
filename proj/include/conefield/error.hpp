#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "conefield/types.hpp"

namespace conefield {

enum class ErrorKind {
  Syntax,
  UnknownIdentifier,
  DimensionMismatch,
  Domain,
  UnknownBuiltin,
  Divergence,
  MaxSteps,
  NoConvergence,
  IllConditioned,
  NotOscillating,
  Refusal,
  AngleUndefined,
  NotInjective,
  NoIntersection,
  NullSpace,
  Unresolved,
  InvalidArgument,
  Io,
};

const char* to_string(ErrorKind kind);

/// Base error for everything the library reports. Carries a kind so callers
/// (and the CLI exit-status mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParseError : public Error {
 public:
  ParseError(ErrorKind kind, std::size_t position, const std::string& what)
      : Error(kind, what + " at offset " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class DomainError : public Error {
 public:
  DomainError(int component, const std::string& what)
      : Error(ErrorKind::Domain,
              what + " in component f" + std::to_string(component + 1)),
        component_(component) {}
  int component() const noexcept { return component_; }

 private:
  int component_;
};

/// Raised when a trajectory leaves the divergence radius; keeps the last
/// state so callers can report where it went.
class DivergenceError : public Error {
 public:
  DivergenceError(double t, Vec last_state, const std::string& what)
      : Error(ErrorKind::Divergence, what), t_(t), last_(std::move(last_state)) {}
  double time() const noexcept { return t_; }
  const Vec& last_state() const noexcept { return last_; }

 private:
  double t_;
  Vec last_;
};

}  // namespace conefield
