#pragma once

#include <stdexcept>
#include <string>

namespace cfm {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where a finite value was required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its documented domain (t outside [0,1], mu > 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

}  // namespace cfm
