#pragma once

#include <string>
#include <vector>

namespace chiplet {

struct InvariantResult {
    std::string id;  // stable identifier, e.g. "transport.metric_axioms"
    bool pass = false;
    std::string detail;
};

struct ValidationOptions {
    // Negative control: reverses the explicit scheme's fluxes in the Lyapunov
    // checks, which must then fail.
    bool flip_flux_sign = false;
};

// Runs the invariant suite at desk scale (a few seconds). Every invariant is
// reported, including those that throw.
std::vector<InvariantResult> run_validation_suite(const ValidationOptions& options = {});

// {"pass": bool, "invariants": [{"id", "pass", "detail"}, ...]}
std::string validation_report_json(const std::vector<InvariantResult>& results);

}  // namespace chiplet
