// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace nss {

/// Runs one command line. Returns 0 on success, 2 on bad usage, 1 on runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace nss
