#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chemtown {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad chunking parameters, missing roster entries, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Caller provided input that violates an operation's preconditions.
class InputError : public Error {
public:
    using Error::Error;
};

/// Vector dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A zero-norm vector was used where a direction is required.
class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

/// A file could not be parsed. Carries the 1-based line number when known.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_ = 0;
};

/// An id refers to something that does not exist.
class ReferenceError : public Error {
public:
    using Error::Error;
};

/// A re-add would change an existing record.
class ConflictError : public Error {
public:
    using Error::Error;
};

/// Two runs being compared do not cover the same agents.
class CoverageError : public Error {
public:
    using Error::Error;
};

/// A generation backend returned empty output.
class GenerationError : public Error {
public:
    using Error::Error;
};

/// A judge reply could not be parsed into a score card.
class JudgeFormatError : public Error {
public:
    using Error::Error;
};

/// Failure talking to a remote model service.
class BackendError : public Error {
public:
    enum class Kind { transport, timeout, status, malformed_reply };

    BackendError(Kind kind, std::size_t attempts, const std::string& context, int status_code = 0)
        : Error(describe(kind, attempts, context, status_code)),
          kind_(kind),
          attempts_(attempts),
          status_code_(status_code),
          context_(context) {}

    Kind kind() const { return kind_; }
    std::size_t attempts() const { return attempts_; }
    int status_code() const { return status_code_; }
    const std::string& context() const { return context_; }

private:
    static std::string describe(Kind kind, std::size_t attempts, const std::string& context,
                                int status_code) {
        std::string name;
        switch (kind) {
        case Kind::transport: name = "transport"; break;
        case Kind::timeout: name = "timeout"; break;
        case Kind::status: name = "status " + std::to_string(status_code); break;
        case Kind::malformed_reply: name = "malformed reply"; break;
        }
        return "backend error (" + name + ") after " + std::to_string(attempts) +
               " attempt(s): " + context;
    }

    Kind kind_;
    std::size_t attempts_;
    int status_code_;
    std::string context_;
};

} // namespace chemtown
