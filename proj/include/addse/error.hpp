// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace addse {

// Every failure surfaced by the library derives from Error. The kind lets
// callers (notably the CLI) map failures onto exit codes without parsing
// messages.
enum class ErrorKind {
    config,         // shape / dimension / hyperparameter mismatch
    invalid_input,  // argument violates a documented precondition
    format,         // malformed file on disk
    range,          // scalar outside its admissible interval
    singularity,    // division by zero in a rate construction
    capacity,       // enumeration too large for an exact oracle
    model_output,   // a model returned an invalid probability row
    training,       // divergence (NaN loss)
    numeric,        // non-finite activation inside a network
    degenerate_data,
    usage,          // CLI misuse, missing artifacts
    io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

}  // namespace addse
