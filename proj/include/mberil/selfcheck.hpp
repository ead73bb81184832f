#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mberil {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Property suites behind the `check` CLI subcommand: oracle fixed points,
/// closed-form discriminators, gradient fidelity, sampler statistics.
std::vector<CheckResult> run_selfcheck();

/// Prints one pass/fail line per check; returns the number of failures.
int report_selfcheck(std::ostream& os);

}  // namespace mberil
