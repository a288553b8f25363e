#include "vpd/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace vpd {

std::size_t DistTable::space_size(int base, int length) {
  std::size_t n = 1;
  for (int i = 0; i < length; ++i) {
    if (n > kDefaultEnumCap * 64) return n;  // avoid overflow; caller checks cap
    n *= static_cast<std::size_t>(base);
  }
  return n;
}

DistTable DistTable::uniform(int base, int length) {
  DistTable d;
  d.base = base;
  d.length = length;
  std::size_t n = space_size(base, length);
  d.p.assign(n, 1.0 / static_cast<double>(n));
  return d;
}

std::vector<int> DistTable::response_of(std::size_t idx) const {
  std::vector<int> y(length);
  for (int i = length - 1; i >= 0; --i) {
    y[i] = static_cast<int>(idx % base);
    idx /= base;
  }
  return y;
}

std::size_t DistTable::index_of(std::span<const int> y) const {
  std::size_t idx = 0;
  for (int t : y) idx = idx * base + static_cast<std::size_t>(t);
  return idx;
}

double DistTable::sum() const {
  double s = 0.0;
  for (double x : p) s += x;
  return s;
}

void DistTable::normalize() {
  double s = sum();
  for (double& x : p) x /= s;
}

std::vector<double> reward_table(const EnvSpec& env, const std::vector<int>& x) {
  DistTable shape;
  shape.base = env.vocab.ordinary;
  shape.length = env.response_len;
  std::size_t n = DistTable::space_size(shape.base, shape.length);
  std::vector<double> r(n, 0.0);
  auto want = target(env, x);
  DistTable tmp = shape;
  tmp.p.resize(n);
  r[tmp.index_of(want)] = 1.0;
  return r;
}

DistTable enumerate_dist(const Policy& policy, const Context& ctx, int base, int length, std::size_t cap) {
  std::size_t n = DistTable::space_size(base, length);
  if (n > cap) throw std::runtime_error("enumeration space " + std::to_string(n) +
                                        " exceeds the configured cap " + std::to_string(cap));
  DistTable d;
  d.base = base;
  d.length = length;
  d.p.resize(n);
  // Walk the prefix tree once; per-leaf sequence_logprob would redo work.
  std::vector<int> y;
  std::function<void(std::size_t, double, Context&)> rec = [&](std::size_t idx, double lp, Context& c) {
    if (static_cast<int>(y.size()) == length) {
      d.p[idx] = std::exp(lp);
      return;
    }
    auto probs = next_token_dist(policy, c);
    for (int t = 0; t < base; ++t) {
      if (probs[t] <= 0.0) throw std::runtime_error("enumeration token outside the generable set");
      y.push_back(t);
      c.prefix.push_back(t);
      rec(idx * base + t, lp + std::log(probs[t]), c);
      c.prefix.pop_back();
      y.pop_back();
    }
  };
  Context c = ctx;
  rec(0, 0.0, c);
  return d;
}

double log_partition(const DistTable& ref, const std::vector<double>& rewards, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  if (rewards.size() != ref.size()) throw std::invalid_argument("reward table size mismatch");
  double mx = -1e300;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref.p[i] <= 0.0) continue;
    mx = std::max(mx, std::log(ref.p[i]) + rewards[i] / beta);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref.p[i] <= 0.0) continue;
    s += std::exp(std::log(ref.p[i]) + rewards[i] / beta - mx);
  }
  return mx + std::log(s);
}

DistTable optimal_policy(const DistTable& ref, const std::vector<double>& rewards, double beta) {
  double log_z = log_partition(ref, rewards, beta);
  DistTable out = ref;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (ref.p[i] <= 0.0) {
      out.p[i] = 0.0;
      continue;
    }
    out.p[i] = std::exp(std::log(ref.p[i]) + rewards[i] / beta - log_z);
  }
  return out;
}

double exact_kl(const DistTable& p, const DistTable& q) {
  if (p.size() != q.size()) throw std::invalid_argument("distribution support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.p[i] <= 0.0) continue;
    if (q.p[i] <= 0.0) throw std::invalid_argument("KL undefined: q has zero mass on p's support");
    s += p.p[i] * (std::log(p.p[i]) - std::log(q.p[i]));
  }
  return s;
}

double expected_reward(const DistTable& p, const std::vector<double>& rewards) {
  if (rewards.size() != p.size()) throw std::invalid_argument("reward table size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p.p[i] * rewards[i];
  return s;
}

double exact_objective(const DistTable& policy, const DistTable& ref, const std::vector<double>& rewards,
                       double beta) {
  return expected_reward(policy, rewards) - beta * exact_kl(policy, ref);
}

double elbo(const DistTable& q, const DistTable& ref, const std::vector<double>& rewards, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  return expected_reward(q, rewards) / beta - exact_kl(q, ref);
}

double expected_log_ratio(const DistTable& p, const DistTable& a, const DistTable& b) {
  if (p.size() != a.size() || p.size() != b.size()) throw std::invalid_argument("support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.p[i] <= 0.0) continue;
    if (a.p[i] <= 0.0 || b.p[i] <= 0.0) throw std::invalid_argument("log ratio undefined on zero mass");
    s += p.p[i] * (std::log(a.p[i]) - std::log(b.p[i]));
  }
  return s;
}

DistTable random_softmax_dist(int base, int length, Rng& rng) {
  DistTable d;
  d.base = base;
  d.length = length;
  std::size_t n = DistTable::space_size(base, length);
  std::vector<double> logits(n);
  double mx = -1e300;
  for (auto& l : logits) {
    l = rng.normal();
    mx = std::max(mx, l);
  }
  d.p.resize(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d.p[i] = std::exp(logits[i] - mx);
    s += d.p[i];
  }
  for (auto& x : d.p) x /= s;
  return d;
}

OracleReport oracle_report(const EnvSpec& env, const std::vector<int>& x, const DistTable& ref, double beta) {
  OracleReport rep;
  rep.prompt = x;
  rep.beta = beta;
  rep.rewards = reward_table(env, x);
  rep.log_z = log_partition(ref, rep.rewards, beta);
  rep.optimal = optimal_policy(ref, rep.rewards, beta);
  return rep;
}

}  // namespace vpd
