// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

#include "gslim/cli.hpp"

int main(int argc, char** argv) { return gslim::cli_main(argc, argv); }
