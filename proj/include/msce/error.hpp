// msce/error.hpp

// Copyright 2026  The msce-scr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MSCE_ERROR_HPP_
#define MSCE_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msce {

// Every error raised by the library derives from Error, so callers (the CLI
// in particular) can catch one type and print what() as the diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string &what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateError : public Error {
 public:
  using Error::Error;
};

class OovError : public Error {
 public:
  explicit OovError(const std::string &word)
      : Error("out-of-vocabulary word '" + word + "'"), word_(word) {}
  const std::string &word() const { return word_; }

 private:
  std::string word_;
};

// CTC label sequence cannot be aligned to the available frames.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Binary file format errors. Load paths distinguish these three so that a
// corrupted header, a newer writer and a short file are reported differently.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace msce

#endif  // MSCE_ERROR_HPP_
