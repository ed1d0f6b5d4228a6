#pragma once

#include <stdexcept>
#include <string>

namespace stegoplane {

// Stable error codes; the CLI prints these names on its one-line error output.
enum class Errc {
    invalid_argument,
    index_out_of_range,
    config_unknown_key,
    config_invalid,
    io_error,
    bad_magic,
    dimension_mismatch,
    non_finite,
    exhausted,
    empty_bucket,
    length_mismatch,
    degenerate_labels,
    vocab_too_large,
    zero_target_prob,
};

inline const char * errc_name(Errc c) {
    switch (c) {
        case Errc::invalid_argument:   return "INVALID_ARGUMENT";
        case Errc::index_out_of_range: return "INDEX_OUT_OF_RANGE";
        case Errc::config_unknown_key: return "CONFIG_UNKNOWN_KEY";
        case Errc::config_invalid:     return "CONFIG_INVALID";
        case Errc::io_error:           return "IO_ERROR";
        case Errc::bad_magic:          return "BAD_MAGIC";
        case Errc::dimension_mismatch: return "DIMENSION_MISMATCH";
        case Errc::non_finite:         return "NON_FINITE";
        case Errc::exhausted:          return "EXHAUSTED";
        case Errc::empty_bucket:       return "EMPTY_BUCKET";
        case Errc::length_mismatch:    return "LENGTH_MISMATCH";
        case Errc::degenerate_labels:  return "DEGENERATE_LABELS";
        case Errc::vocab_too_large:    return "VOCAB_TOO_LARGE";
        case Errc::zero_target_prob:   return "ZERO_TARGET_PROB";
    }
    return "UNKNOWN";
}

class StegoError : public std::runtime_error {
public:
    StegoError(Errc code, const std::string & message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }
    const char * code_name() const noexcept { return errc_name(code_); }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string & message) {
    throw StegoError(code, message);
}

inline void require(bool ok, Errc code, const std::string & message) {
    if (!ok) {
        fail(code, message);
    }
}

} // namespace stegoplane
