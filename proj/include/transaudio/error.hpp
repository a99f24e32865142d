#pragma once

#include <stdexcept>
#include <string>

namespace transaudio {

// Root of every error thrown by the library. Callers that do not care about
// the category can catch this one.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InfeasibleAlignmentError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class UndefinedSignalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Transcription endpoint failures.
class AuthError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

class MalformedResponseError : public Error {
 public:
  using Error::Error;
};

}  // namespace transaudio
