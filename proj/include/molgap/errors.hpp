//
// Copyright 2026 The molgap Authors
// SPDX-License-Identifier: Apache-2.0
//

#ifndef MOLGAP_ERRORS_HPP
#define MOLGAP_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace molgap {

/// Base class for every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- tensor / autodiff ---

struct ShapeMismatch : Error {
  using Error::Error;
};
struct IndexOutOfRange : Error {
  using Error::Error;
};
struct InvalidBounds : Error {
  using Error::Error;
};
struct NonPositiveSigma : Error {
  using Error::Error;
};
struct NotScalar : Error {
  using Error::Error;
};
struct DeadTape : Error {
  using Error::Error;
};
struct BatchTooSmall : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};

// --- molecule parsing / featurization ---

enum class SmilesErrorKind {
  EmptyInput,
  UnknownToken,
  UnclosedRing,
  UnclosedBranch,
  DuplicateBond,
  SelfBond,
};

struct SmilesError : Error {
  SmilesError(SmilesErrorKind k, std::size_t pos, const std::string& what)
      : Error(what), kind(k), position(pos) {}
  SmilesErrorKind kind;
  std::size_t position;  // byte offset into the input; also carries the ring digit for UnclosedRing
};

struct OutOfVocabulary : Error {
  OutOfVocabulary(const std::string& f, const std::string& what) : Error(what), field(f) {}
  std::string field;
};

// --- batching / models ---

struct EmptyBatch : Error {
  using Error::Error;
};
struct EmptyGraph : Error {
  using Error::Error;
};

// --- datasets / training ---

struct FileNotFound : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct BadHeader : Error {
  using Error::Error;
};
struct ParseError : Error {
  ParseError(std::size_t r, const std::string& what) : Error(what), row(r) {}
  std::size_t row;  // 1-based data row number
};
struct BadFractions : Error {
  using Error::Error;
};
struct OverlappingSplits : Error {
  using Error::Error;
};
struct MissingTargets : Error {
  using Error::Error;
};
struct VersionMismatch : Error {
  using Error::Error;
};
struct CorruptTensor : Error {
  CorruptTensor(const std::string& n, const std::string& what) : Error(what), name(n) {}
  std::string name;
};

// --- ensembling ---

struct EmptyMatrix : Error {
  using Error::Error;
};
struct TooFewLearners : Error {
  using Error::Error;
};
struct ZeroVariance : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct IndexMismatch : Error {
  using Error::Error;
};

}  // namespace molgap

#endif  // MOLGAP_ERRORS_HPP
