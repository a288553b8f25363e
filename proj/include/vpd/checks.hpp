#ifndef VPD_CHECKS_HPP
#define VPD_CHECKS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vpd/policy.hpp"

namespace vpd {

struct CheckResult {
  std::string name;
  double max_residual = 0.0;
  double tolerance = 0.0;
  long cases = 0;
  long violations = 0;

  bool pass() const { return violations == 0 && max_residual <= tolerance; }
};

// Central finite differences of `loss` against an analytic gradient record.
// Perturbs exactly the entries the record names (stop-gradient paths stay
// untouched by construction). Returns max |g - fd| / max(1, |g|, |fd|).
double fd_max_rel_err(Policy& policy, const GradientRecord& grad, const std::function<double()>& loss,
                      double h = 1e-5);

// The full verification sweep: the variational-derivation identities on a
// V=4, T=3 space, optimal-policy optimality on three random environments,
// the sigmoid decoupling bound, and finite-difference checks of every loss
// gradient.
std::vector<CheckResult> run_oracle_checks(std::uint64_t seed);

// One machine-readable record per identity.
std::string check_report_lines(const std::vector<CheckResult>& results);

}  // namespace vpd

#endif
