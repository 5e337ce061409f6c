// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The asyncscale Authors

#include "asyncscale/commands.hpp"

int main(int argc, char** argv) { return asyncscale::commands::main_entry(argc, argv); }
