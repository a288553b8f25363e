#ifndef VPD_ORACLE_HPP
#define VPD_ORACLE_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vpd/env.hpp"
#include "vpd/policy.hpp"

namespace vpd {

// Explicit distribution over all length-`length` responses drawn from the
// first `base` tokens, indexed in big-endian mixed radix. Exact KL, ELBO and
// objective values reduce to sums over this table.
struct DistTable {
  int base = 0;
  int length = 0;
  std::vector<double> p;

  std::size_t size() const { return p.size(); }
  static std::size_t space_size(int base, int length);
  static DistTable uniform(int base, int length);

  std::vector<int> response_of(std::size_t idx) const;
  std::size_t index_of(std::span<const int> y) const;

  double sum() const;
  void normalize();
};

constexpr std::size_t kDefaultEnumCap = 1000000;

// r(x, y) for every response in table order.
std::vector<double> reward_table(const EnvSpec& env, const std::vector<int>& x);

// Probability of each response equals exp(sequence_logprob). Refuses (never
// truncates) when base^length exceeds `cap`.
DistTable enumerate_dist(const Policy& policy, const Context& ctx, int base, int length,
                         std::size_t cap = kDefaultEnumCap);

// log Z = log sum_y ref(y) exp(r(y)/beta), computed as a log-sum-exp.
double log_partition(const DistTable& ref, const std::vector<double>& rewards, double beta);

// pi*(y) = ref(y) exp(r(y)/beta) / Z.
DistTable optimal_policy(const DistTable& ref, const std::vector<double>& rewards, double beta);

// KL(p || q) in nats; requires q > 0 wherever p > 0.
double exact_kl(const DistTable& p, const DistTable& q);

// J(pi) = E_pi[r] - beta * KL(pi || ref).
double exact_objective(const DistTable& policy, const DistTable& ref, const std::vector<double>& rewards,
                       double beta);

// F(q) = (1/beta) E_q[r] - KL(q || ref); lower-bounds log Z with gap
// KL(q || pi*).
double elbo(const DistTable& q, const DistTable& ref, const std::vector<double>& rewards, double beta);

double expected_reward(const DistTable& p, const std::vector<double>& rewards);

// E_p[log a - log b].
double expected_log_ratio(const DistTable& p, const DistTable& a, const DistTable& b);

// Random distribution as softmax of iid standard normal logits.
DistTable random_softmax_dist(int base, int length, Rng& rng);

// OracleReport: the exact quantities for one prompt.
struct OracleReport {
  std::vector<int> prompt;
  double beta = 0.0;
  double log_z = 0.0;
  DistTable optimal;
  std::vector<double> rewards;
};

OracleReport oracle_report(const EnvSpec& env, const std::vector<int>& x, const DistTable& ref, double beta);

}  // namespace vpd

#endif
