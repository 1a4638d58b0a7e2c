#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace shapeformer {

/// Violated precondition or invariant of a library call.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input text (time-series file, pool file, manifest).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input whose content is inconsistent (unknown labels, bad dims).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable file.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Artifacts that do not belong together (digest or version mismatch).
class ArtifactMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Class vocabulary of a model differs from the dataset it is applied to.
class VocabularyMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SF_REQUIRE(cond, msg)                                                        \
  do {                                                                               \
    if (!(cond)) throw ::shapeformer::ContractViolation(std::string(msg));           \
  } while (0)

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink; returns the previous one.
/// The default sink writes to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace shapeformer
