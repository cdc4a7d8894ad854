#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace opelab {

/// A caller passed an argument outside an operation's domain.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data violates an assumption of the sampling model (e.g. a logged
/// action with zero logging probability).
class DataIntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An estimator could not produce a value on the given data.
class EstimationError : public std::runtime_error {
public:
    explicit EstimationError(const std::string& what,
                             std::optional<std::size_t> sample = std::nullopt)
        : std::runtime_error(what), sample_(sample) {}

    /// Index of the offending logged sample, when one is responsible.
    std::optional<std::size_t> sample_index() const noexcept { return sample_; }

private:
    std::optional<std::size_t> sample_;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace opelab
