// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/cli.hpp"

int main(int argc, char** argv) { return addse::cli::main(argc, argv); }
