#pragma once

#include <stdexcept>
#include <string>

namespace lmprior {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A caller passed an argument that violates an operation's preconditions.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A configuration file or provider setup is invalid or incomplete.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A structured input (CSV, JSON) could not be parsed; carries location info.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row = -1, long column = -1)
      : Error(what), row_(row), column_(column) {}
  long row() const noexcept { return row_; }
  long column() const noexcept { return column_; }

 private:
  long row_;
  long column_;
};

/// A template contained a placeholder outside the declared set.
class TemplateError : public Error {
 public:
  using Error::Error;
};

/// A non-categorical column had zero variance during normalization.
class DegenerateColumnError : public Error {
 public:
  DegenerateColumnError(const std::string& what, std::string column)
      : Error(what), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// All transport retries were exhausted talking to a provider.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A replay provider was asked for a request that is not in the cache.
class CacheMissError : public Error {
 public:
  CacheMissError(const std::string& what, std::string key)
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A model reply could not be parsed as JSON after all retries; carries the
/// raw text of the final reply.
class ElicitationParseError : public Error {
 public:
  ElicitationParseError(const std::string& what, std::string raw_text)
      : Error(what), raw_text_(std::move(raw_text)) {}
  const std::string& raw_text() const noexcept { return raw_text_; }

 private:
  std::string raw_text_;
};

/// LLM paraphrase expansion failed to preserve placeholders within the retry
/// budget.
class ExpansionError : public Error {
 public:
  using Error::Error;
};

/// An elicited prior component stayed invalid after all re-asks; carries the
/// last rejection reason.
class ComponentRejectedError : public Error {
 public:
  ComponentRejectedError(const std::string& what, std::string reason)
      : Error(what), reason_(std::move(reason)) {}
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string reason_;
};

/// An in-context probe reply stayed unusable after all re-asks.
class ProbeError : public Error {
 public:
  using Error::Error;
};

/// The MLE design matrix is rank deficient.
class SingularDesignError : public Error {
 public:
  using Error::Error;
};

/// A log-density or gradient evaluation produced a non-finite value.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long coordinate = -1)
      : Error(what), coordinate_(coordinate) {}
  long coordinate() const noexcept { return coordinate_; }

 private:
  long coordinate_;
};

/// The sampler exceeded the tolerated post-warmup divergence rate; the
/// message carries the per-chain diagnostics.
class SamplerHealthError : public Error {
 public:
  using Error::Error;
};

}  // namespace lmprior
