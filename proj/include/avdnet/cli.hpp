#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "avdnet/network.hpp"

namespace avdnet {

/// Line-oriented "key = value" network configuration: input_size, classes,
/// widths (seven comma-separated channel counts). Unknown keys are rejected.
NetworkSpec parse_network_config(const std::string& path);

/// Entry point behind the avdnet binary. Returns 0 on success, 1 on runtime
/// failure, 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace avdnet
