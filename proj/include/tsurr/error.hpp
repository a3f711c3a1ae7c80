// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>

namespace tsurr {

/// Error categories surfaced to callers and, through the CLI, as the
/// `error` field of the stderr JSON.
enum class ErrorKind {
    schema,
    type,
    encoding,
    degenerate_range,
    bounds,
    capacity,
    undefined_loss,
    contract,
    divergence,
    split,
    stratum_exhausted,
    degenerate_factor,
    undefined_metric,
    io,
    config,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::schema: return "schema";
        case ErrorKind::type: return "type";
        case ErrorKind::encoding: return "encoding";
        case ErrorKind::degenerate_range: return "degenerate_range";
        case ErrorKind::bounds: return "bounds";
        case ErrorKind::capacity: return "capacity";
        case ErrorKind::undefined_loss: return "undefined_loss";
        case ErrorKind::contract: return "contract";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::split: return "split";
        case ErrorKind::stratum_exhausted: return "stratum_exhausted";
        case ErrorKind::degenerate_factor: return "degenerate_factor";
        case ErrorKind::undefined_metric: return "undefined_metric";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Raised when a training run produces a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(std::size_t epoch, std::size_t restart)
        : Error(ErrorKind::divergence,
                "non-finite loss at epoch " + std::to_string(epoch) +
                    " of restart " + std::to_string(restart)),
          epoch_(epoch), restart_(restart) {}

    [[nodiscard]] std::size_t epoch() const noexcept { return epoch_; }
    [[nodiscard]] std::size_t restart() const noexcept { return restart_; }

private:
    std::size_t epoch_;
    std::size_t restart_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace detail
}  // namespace tsurr
