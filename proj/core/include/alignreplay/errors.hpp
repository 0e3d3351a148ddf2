#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace alignreplay {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input validation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidDistribution : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class AlphabetMismatch : public InvalidArgument {
 public:
  AlphabetMismatch(std::size_t lhs, std::size_t rhs)
      : InvalidArgument("alphabet mismatch: " + std::to_string(lhs) + " vs " + std::to_string(rhs)) {}
};

class AbsoluteContinuityViolation : public Error {
 public:
  explicit AbsoluteContinuityViolation(std::size_t index)
      : Error("absolute continuity violated at outcome " + std::to_string(index) +
              ": p > 0 where q = 0"),
        index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class RatioOutOfRange : public InvalidArgument {
 public:
  explicit RatioOutOfRange(double r)
      : InvalidArgument("mixing ratio out of range [0, 1): " + std::to_string(r)) {}
};

class EmptyKeyword : public InvalidArgument {
 public:
  EmptyKeyword() : InvalidArgument("domain keyword must be non-empty") {}
};

class EmptyQuery : public InvalidArgument {
 public:
  EmptyQuery() : InvalidArgument("query must be non-empty") {}
};

class UnknownTemplateFamily : public InvalidArgument {
 public:
  explicit UnknownTemplateFamily(const std::string& family)
      : InvalidArgument("unknown chat template family: " + family) {}
};

class InvalidTemplate : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Remote inference.
class TransportError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

/// Non-retryable rejection (HTTP 4xx). Carries the status and raw body.
class ServerRejection : public Error {
 public:
  ServerRejection(int status, std::string body)
      : Error("server rejected request with status " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class MissingLogprobs : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class UnparsableVerdict : public Error {
 public:
  explicit UnparsableVerdict(const std::string& verdict)
      : Error("guardrail verdict matched neither label: " + verdict), verdict_(verdict) {}
  const std::string& verdict() const noexcept { return verdict_; }

 private:
  std::string verdict_;
};

// Post-processing.
class MissingPerplexity : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class MissingEmbedding : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Mixing.
class InsufficientPool : public Error {
 public:
  InsufficientPool(std::string stratum, std::size_t shortfall)
      : Error("insufficient " + stratum + " pool: short by " + std::to_string(shortfall)),
        stratum_(std::move(stratum)),
        shortfall_(shortfall) {}
  const std::string& stratum() const noexcept { return stratum_; }
  std::size_t shortfall() const noexcept { return shortfall_; }

 private:
  std::string stratum_;
  std::size_t shortfall_;
};

// Similarity.
class EmptyInput : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Evaluation.
class EvaluationFailed : public Error {
 public:
  using Error::Error;
};

// Storage.
class IoError : public Error {
 public:
  using Error::Error;
};

class SchemaMismatch : public Error {
 public:
  SchemaMismatch(std::string expected, std::string found)
      : Error("schema mismatch: expected " + expected + ", found " + found),
        expected_(std::move(expected)),
        found_(std::move(found)) {}
  const std::string& expected() const noexcept { return expected_; }
  const std::string& found() const noexcept { return found_; }

 private:
  std::string expected_;
  std::string found_;
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::size_t line, const std::string& what)
      : Error("malformed record at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace alignreplay
