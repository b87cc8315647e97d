#include "urbansense/error.hpp"

namespace urbansense {

int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Validation:
        case ErrorKind::Schema:
        case ErrorKind::EmptyInput:
        case ErrorKind::Domain: return 2;
        case ErrorKind::UnknownPair: return 3;
        case ErrorKind::MissingProvider: return 4;
        case ErrorKind::ProviderAuth: return 5;
        case ErrorKind::Provider:
        case ErrorKind::ProviderProtocol:
        case ErrorKind::JudgeParse: return 6;
        case ErrorKind::Io: return 7;
        case ErrorKind::Internal: break;
    }
    return 1;
}

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Internal: return "internal";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::EmptyInput: return "empty-input";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::UnknownPair: return "unknown-pair";
        case ErrorKind::MissingProvider: return "missing-provider";
        case ErrorKind::ProviderAuth: return "provider-auth";
        case ErrorKind::Provider: return "provider";
        case ErrorKind::ProviderProtocol: return "provider-protocol";
        case ErrorKind::JudgeParse: return "judge-parse";
        case ErrorKind::Io: return "io";
    }
    return "unknown";
}

}  // namespace urbansense
