#pragma once

#include <stdexcept>
#include <string>

namespace urbansense {

enum class ErrorKind {
    Internal,
    Validation,     // bad input data: manifest rows, config values, arguments
    Schema,         // missing columns / keys
    EmptyInput,
    Domain,         // numeric kernel called outside its domain
    UnknownPair,    // selector matched nothing, overlapping selectors
    MissingProvider,
    ProviderAuth,
    Provider,       // network / timeout after retries
    ProviderProtocol,
    JudgeParse,
    Io,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Judge reply that could not be mapped to yes/no, even after a clarifying re-prompt.
class JudgeParseError : public Error {
public:
    JudgeParseError(const std::string& what, std::string raw)
        : Error(ErrorKind::JudgeParse, what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// Process exit code for an error kind. 0 is success, 1 is reserved for internal failures.
///   2 invalid input (manifest, config, arguments)   5 provider authentication failure
///   3 unknown / overlapping pair labels             6 provider failure (network, protocol, judge parse)
///   4 provider not configured                       7 file system I/O
int exit_code(ErrorKind kind) noexcept;

const char* to_string(ErrorKind kind) noexcept;

}  // namespace urbansense
