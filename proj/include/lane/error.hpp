#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lane {

/// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by inputs or configuration the user controls (CLI exit code 1).
class UserError : public Error {
 public:
  using Error::Error;
};

class ParseError : public UserError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : UserError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class IntegrityError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

/// A prerequisite artifact is missing; names the command that produces it.
class MissingArtifact : public UserError {
 public:
  MissingArtifact(const std::string& what, std::string command)
      : UserError(what + " (run `lane " + command + "` first)"), command_(std::move(command)) {}
  const std::string& command() const { return command_; }

 private:
  std::string command_;
};

/// LLM output that does not follow the pinned response template.
class MalformedResponse : public Error {
 public:
  using Error::Error;
};

class EncoderError : public Error {
 public:
  using Error::Error;
};

/// Transport-level LLM failure (network, timeout, HTTP status).
class LlmError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace lane
