#pragma once

#include <stdexcept>
#include <string>

namespace ctree {

enum class ErrorCode {
    invalid_argument,
    domain,
    duplicate_token,
    unknown_token,
    unknown_init_word,
    key_collision,
    base_mismatch,
    frozen_token,
    arity_mismatch,
    token_not_trainable,
    decode,
    generation,
    non_finite_loss,
    singleton_self_consistency,
    empty_set,
    empty_candidates,
    pool_too_small,
    not_splittable,
    unknown_node,
    corrupt_log,
    io,
    checksum,
    schema_version,
    backend_unavailable,
};

const char* to_string(ErrorCode code);

/// Base for every error the library raises; carries a stable code so the CLI
/// and the service can map failures onto exit codes and HTTP statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Generation failures are worth retrying (backend hiccups), the others are not.
class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& message)
        : Error(ErrorCode::generation, message) {}
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

}  // namespace ctree
