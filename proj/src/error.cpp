// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/error.hpp"

namespace addse {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "configuration error";
        case ErrorKind::invalid_input: return "invalid input";
        case ErrorKind::format: return "format error";
        case ErrorKind::range: return "range error";
        case ErrorKind::singularity: return "singularity error";
        case ErrorKind::capacity: return "capacity error";
        case ErrorKind::model_output: return "model output error";
        case ErrorKind::training: return "training error";
        case ErrorKind::numeric: return "numeric error";
        case ErrorKind::degenerate_data: return "degenerate data";
        case ErrorKind::usage: return "usage error";
        case ErrorKind::io: return "i/o error";
    }
    return "error";
}

}  // namespace addse
