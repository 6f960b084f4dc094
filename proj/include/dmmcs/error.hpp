#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace dmmcs {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record in an input file could not be parsed or violates its schema.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(fmt::format("{}:{}: {}", source, line, what)), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Every token of a tag is missing from the embedding table.
class UncoverableTagError : public Error {
 public:
  explicit UncoverableTagError(std::string tag)
      : Error(fmt::format("uncoverable tag '{}': no token has an embedding", tag)),
        tag_(std::move(tag)) {}

  const std::string& tag() const { return tag_; }

 private:
  std::string tag_;
};

/// A sequence model returned a distribution that breaks the model contract.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace dmmcs
