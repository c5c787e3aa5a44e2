// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace memwalker {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied data was violated.
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// A completion request would not fit the model's context window.
/// This is a caller bug, never retried.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Transport or HTTP failure talking to a completion endpoint,
/// raised after bounded retries.
class EndpointError : public Error {
public:
    using Error::Error;
};

/// The model's raw output could not be decoded into a legal action.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A dataset record failed validation. Carries the 1-based line number.
class MalformedRecord : public Error {
public:
    MalformedRecord(int line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    int line() const { return line_; }

private:
    int line_;
};

/// File could not be read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// The scripted backend's contract was broken (exhausted script,
/// matcher mismatch, concurrent use). Always a test failure.
class ScriptError : public Error {
public:
    using Error::Error;
};

} // namespace memwalker
