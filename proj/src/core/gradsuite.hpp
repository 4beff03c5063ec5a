#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace vsod {

struct GradSuiteEntry {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool ok = false;
};

struct GradSuiteResult {
    bool ok = false;
    std::vector<GradSuiteEntry> entries;
    double worst = 0.0;
};

// Finite-difference verification of every differentiable operation (three
// seeds each, tolerance 1e-3) and of the full stage-2 objective end to end
// (>= 50 sampled parameters, tolerance 5e-3). Central differences, step 1e-3.
GradSuiteResult run_gradient_suite(std::uint64_t seed, std::ostream* log);

} // namespace vsod
