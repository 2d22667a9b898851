// SPDX-License-Identifier: Apache-2.0
#include "nss/cli.hpp"

int main(int argc, char** argv) { return nss::dispatch(argc, argv); }
