#pragma once

#include <stdexcept>
#include <string>

namespace trustcons {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
    ok = 0,
    config = 1,
    numerical = 2,
    io = 3,
};

/// Base of every error raised by the library. Carries the exit code the CLI maps it to.
class Error : public std::runtime_error {
public:
    Error(const std::string& what, ExitCode code) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Invalid configuration value or invalid argument to an operation.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, ExitCode::config) {}
};

/// Argument outside the mathematical domain of an operation (e.g. E = 0).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what, ExitCode::config) {}
};

/// Non-convergence, invariant violation detected at runtime, or similar.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(what, ExitCode::numerical) {}
};

/// A round was driven with incomplete or inconsistent inputs.
class ProtocolViolation : public Error {
public:
    explicit ProtocolViolation(const std::string& what) : Error(what, ExitCode::numerical) {}
};

/// Random graph generation could not satisfy its connectivity requirement.
class GenerationFailure : public Error {
public:
    explicit GenerationFailure(const std::string& what) : Error(what, ExitCode::numerical) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what, ExitCode::io) {}
};

} // namespace trustcons
