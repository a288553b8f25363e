#include "vpd/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vpd {

namespace {

// Logits of a context under either parameter kind. Tabular misses read as
// all zeros (uniform over the generable set).
void context_logits(const Policy& policy, const Context& ctx, std::vector<double>& out) {
  const int n = policy.vocab.total();
  out.assign(n, 0.0);
  if (policy.params.kind == ParamKind::Tabular) {
    auto key = ctx.serialize(policy.vocab);
    auto it = policy.params.table.find(key);
    if (it != policy.params.table.end()) {
      if (static_cast<int>(it->second.size()) != n)
        throw std::invalid_argument("tabular logit vector width does not match vocabulary");
      out = it->second;
    }
  } else {
    FeatureSpec fs{policy.vocab.total(), policy.max_len};
    if (policy.params.logit_dim != n || policy.params.feat_dim != fs.dim())
      throw std::invalid_argument("linear weights do not match vocabulary/feature dimensions");
    int act[3];
    fs.active(ctx.serialize(policy.vocab), static_cast<int>(ctx.prefix.size()), act);
    const double* w = policy.params.weights.data();
    const int d = policy.params.feat_dim;
    for (int v = 0; v < n; ++v) out[v] = w[v * d + act[0]] + w[v * d + act[1]] + w[v * d + act[2]];
  }
}

void masked_softmax(const std::vector<double>& logits, const std::vector<int>& gen, std::vector<double>& probs) {
  probs.assign(logits.size(), 0.0);
  double mx = -1e300;
  for (int v : gen) mx = std::max(mx, logits[v]);
  double sum = 0.0;
  for (int v : gen) {
    double e = std::exp(logits[v] - mx);
    probs[v] = e;
    sum += e;
  }
  for (int v : gen) probs[v] /= sum;
}

}  // namespace

void FeatureSpec::active(const std::vector<int>& serialized, int prefix_len, int out[3]) const {
  // Standard-vocabulary contexts always hold prompt + SEP, so two trailing
  // tokens exist; degenerate one-token contexts repeat the last token.
  const std::size_t n = serialized.size();
  int last = serialized[n - 1];
  int prev = n >= 2 ? serialized[n - 2] : last;
  out[0] = last;
  out[1] = vocab_total + prev;
  out[2] = 2 * vocab_total + std::min(prefix_len, max_len);
}

bool PolicyParams::same_shape(const PolicyParams& o) const {
  if (kind != o.kind) return false;
  if (kind == ParamKind::LinearSoftmax)
    return logit_dim == o.logit_dim && feat_dim == o.feat_dim && weights.size() == o.weights.size();
  return true;  // tabular stores may hold different key sets; shapes agree per key width
}

double PolicyParams::max_abs_diff(const PolicyParams& o) const {
  double m = 0.0;
  if (kind == ParamKind::Tabular) {
    auto scan = [&](const PolicyParams& a, const PolicyParams& b) {
      for (const auto& [k, va] : a.table) {
        auto it = b.table.find(k);
        for (std::size_t i = 0; i < va.size(); ++i) {
          double bv = it == b.table.end() ? 0.0 : it->second[i];
          m = std::max(m, std::fabs(va[i] - bv));
        }
      }
    };
    scan(*this, o);
    scan(o, *this);
  } else {
    for (std::size_t i = 0; i < weights.size(); ++i) m = std::max(m, std::fabs(weights[i] - o.weights[i]));
  }
  return m;
}

void GradientRecord::add_scaled(const GradientRecord& o, double a) {
  if (kind != o.kind) throw std::invalid_argument("gradient kind mismatch");
  if (kind == ParamKind::Tabular) {
    for (const auto& [k, v] : o.table) {
      auto& dst = table[k];
      if (dst.empty()) dst.assign(v.size(), 0.0);
      for (std::size_t i = 0; i < v.size(); ++i) dst[i] += a * v[i];
    }
  } else {
    if (weights.empty()) weights.assign(o.weights.size(), 0.0);
    for (std::size_t i = 0; i < o.weights.size(); ++i) weights[i] += a * o.weights[i];
  }
}

void GradientRecord::scale(double a) {
  for (auto& [k, v] : table)
    for (auto& x : v) x *= a;
  for (auto& x : weights) x *= a;
}

double GradientRecord::max_abs() const {
  double m = 0.0;
  for (const auto& [k, v] : table)
    for (double x : v) m = std::max(m, std::fabs(x));
  for (double x : weights) m = std::max(m, std::fabs(x));
  return m;
}

bool GradientRecord::is_zero() const { return max_abs() == 0.0; }

Policy Policy::tabular(Vocabulary v, GenMask m, int max_len) {
  Policy p;
  p.vocab = std::move(v);
  p.mask = m;
  p.max_len = max_len;
  p.params.kind = ParamKind::Tabular;
  return p;
}

Policy Policy::linear(Vocabulary v, GenMask m, int max_len) {
  Policy p;
  p.vocab = std::move(v);
  p.mask = m;
  p.max_len = max_len;
  p.params.kind = ParamKind::LinearSoftmax;
  FeatureSpec fs{p.vocab.total(), max_len};
  p.params.logit_dim = p.vocab.total();
  p.params.feat_dim = fs.dim();
  p.params.weights.assign(static_cast<std::size_t>(p.params.logit_dim) * p.params.feat_dim, 0.0);
  return p;
}

std::vector<int> Policy::generable() const {
  std::vector<int> g;
  switch (mask) {
    case GenMask::Full:
      for (int v = 0; v < vocab.total(); ++v) g.push_back(v);
      break;
    case GenMask::Ordinary:
      for (int v = 0; v < vocab.ordinary; ++v) g.push_back(v);
      break;
    case GenMask::OrdinaryPlusEos:
      for (int v = 0; v < vocab.ordinary; ++v) g.push_back(v);
      g.push_back(vocab.id(TokenRole::Eos));
      break;
  }
  return g;
}

std::vector<double> next_token_dist(const Policy& policy, const Context& ctx) {
  std::vector<double> logits, probs;
  context_logits(policy, ctx, logits);
  masked_softmax(logits, policy.generable(), probs);
  return probs;
}

std::vector<double> step_logprobs(const Policy& policy, const Context& ctx, const std::vector<int>& y) {
  std::vector<double> out;
  out.reserve(y.size());
  Context c = ctx;
  for (int t : y) {
    auto probs = next_token_dist(policy, c);
    if (t < 0 || t >= static_cast<int>(probs.size()) || probs[t] <= 0.0)
      throw std::invalid_argument("response token outside the generable set");
    out.push_back(std::log(probs[t]));
    c.prefix.push_back(t);
  }
  return out;
}

double sequence_logprob(const Policy& policy, const Context& ctx, const std::vector<int>& y) {
  double s = 0.0;
  for (double lp : step_logprobs(policy, ctx, y)) s += lp;
  return s;
}

Trajectory sample_trajectory(const Policy& policy, const Context& ctx, Rng& rng, int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  Trajectory traj;
  traj.prompt = ctx.prompt;
  Context c = ctx;
  const bool eos_on = policy.mask == GenMask::OrdinaryPlusEos ||
                      (policy.mask == GenMask::Full && policy.vocab.has(TokenRole::Eos));
  const int eos = eos_on ? policy.vocab.id(TokenRole::Eos) : -1;
  for (int step = 0; step < max_len; ++step) {
    auto probs = next_token_dist(policy, c);
    double u = rng.uniform01();
    int chosen = -1;
    double acc = 0.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      if (probs[v] <= 0.0) continue;
      acc += probs[v];
      if (u < acc) {
        chosen = static_cast<int>(v);
        break;
      }
    }
    if (chosen < 0) {  // u landed in the rounding tail; take the last live token
      for (int v = static_cast<int>(probs.size()) - 1; v >= 0; --v)
        if (probs[v] > 0.0) {
          chosen = v;
          break;
        }
    }
    traj.response.push_back(chosen);
    traj.token_logprobs.push_back(std::log(probs[chosen]));
    c.prefix.push_back(chosen);
    if (eos_on && chosen == eos) break;
  }
  traj.total_logprob = 0.0;
  for (double lp : traj.token_logprobs) traj.total_logprob += lp;
  return traj;
}

std::vector<int> greedy_decode(const Policy& policy, const Context& ctx, int len) {
  std::vector<int> out;
  Context c = ctx;
  for (int step = 0; step < len; ++step) {
    auto probs = next_token_dist(policy, c);
    int best = 0;
    for (std::size_t v = 1; v < probs.size(); ++v)
      if (probs[v] > probs[best]) best = static_cast<int>(v);
    out.push_back(best);
    c.prefix.push_back(best);
  }
  return out;
}

GradientRecord logits_grad_to_params(const Policy& policy, const Context& ctx, const std::vector<int>& y,
                                     const std::vector<std::vector<double>>& glogits) {
  if (glogits.size() != y.size()) throw std::invalid_argument("glogits/response length mismatch");
  GradientRecord g;
  g.kind = policy.params.kind;
  const int n = policy.vocab.total();
  Context c = ctx;
  if (g.kind == ParamKind::LinearSoftmax) {
    FeatureSpec fs{policy.vocab.total(), policy.max_len};
    g.weights.assign(static_cast<std::size_t>(n) * fs.dim(), 0.0);
    for (std::size_t t = 0; t < y.size(); ++t) {
      int act[3];
      fs.active(c.serialize(policy.vocab), static_cast<int>(c.prefix.size()), act);
      for (int v = 0; v < n; ++v) {
        double gv = glogits[t][v];
        if (gv != 0.0)
          for (int a = 0; a < 3; ++a) g.weights[static_cast<std::size_t>(v) * fs.dim() + act[a]] += gv;
      }
      c.prefix.push_back(y[t]);
    }
  } else {
    for (std::size_t t = 0; t < y.size(); ++t) {
      auto key = c.serialize(policy.vocab);
      auto& dst = g.table[key];
      if (dst.empty()) dst.assign(n, 0.0);
      for (int v = 0; v < n; ++v) dst[v] += glogits[t][v];
      c.prefix.push_back(y[t]);
    }
  }
  return g;
}

GradientRecord logprob_grad(const Policy& policy, const Context& ctx, const std::vector<int>& y) {
  // d log softmax(y_t) / d logit_v = 1{v = y_t} - p_v on the generable set.
  std::vector<std::vector<double>> glogits(y.size());
  Context c = ctx;
  for (std::size_t t = 0; t < y.size(); ++t) {
    auto probs = next_token_dist(policy, c);
    std::vector<double> gl(probs.size(), 0.0);
    for (std::size_t v = 0; v < probs.size(); ++v)
      if (probs[v] > 0.0) gl[v] = -probs[v];
    gl[y[t]] += 1.0;
    glogits[t] = std::move(gl);
    c.prefix.push_back(y[t]);
  }
  return logits_grad_to_params(policy, ctx, y, glogits);
}

void ema_update(PolicyParams& target, const PolicyParams& source, double rate) {
  if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("ema rate must lie in [0,1]");
  if (!target.same_shape(source)) throw std::invalid_argument("ema shape mismatch");
  if (rate == 0.0) return;
  if (target.kind == ParamKind::Tabular) {
    // Keys absent from one side read as zero logits on that side.
    for (auto& [k, v] : target.table) {
      auto it = source.table.find(k);
      for (std::size_t i = 0; i < v.size(); ++i) {
        double sv = it == source.table.end() ? 0.0 : it->second[i];
        v[i] = (1.0 - rate) * v[i] + rate * sv;
      }
    }
    for (const auto& [k, sv] : source.table) {
      if (target.table.count(k)) continue;
      auto& v = target.table[k];
      v.assign(sv.size(), 0.0);
      for (std::size_t i = 0; i < sv.size(); ++i) v[i] = rate * sv[i];
    }
  } else {
    for (std::size_t i = 0; i < target.weights.size(); ++i)
      target.weights[i] = (1.0 - rate) * target.weights[i] + rate * source.weights[i];
  }
}

void apply_gradient(PolicyParams& params, const GradientRecord& grad, double scale) {
  if (params.kind != grad.kind) throw std::invalid_argument("gradient kind mismatch");
  if (params.kind == ParamKind::Tabular) {
    for (const auto& [k, gv] : grad.table) {
      auto& dst = params.table[k];
      if (dst.empty()) dst.assign(gv.size(), 0.0);
      for (std::size_t i = 0; i < gv.size(); ++i) dst[i] += scale * gv[i];
    }
  } else {
    for (std::size_t i = 0; i < grad.weights.size(); ++i) params.weights[i] += scale * grad.weights[i];
  }
}

// ---------------------------------------------------------------------------
// Snapshot format: "VPDPOL1\n" magic, then little-endian fixed-width fields.
// Doubles are written as raw IEEE-754 bits so round-trips are bit-exact.

namespace {

constexpr char kMagic[8] = {'V', 'P', 'D', 'P', 'O', 'L', '1', '\n'};

void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                        static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("policy snapshot truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("policy snapshot truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

}  // namespace

void save_policy(const Policy& policy, std::ostream& os) {
  os.write(kMagic, 8);
  put_u32(os, 1);  // version
  put_u32(os, static_cast<std::uint32_t>(policy.vocab.ordinary));
  put_u32(os, static_cast<std::uint32_t>(policy.vocab.roles.size()));
  for (auto r : policy.vocab.roles) put_u32(os, static_cast<std::uint32_t>(r));
  put_u32(os, policy.mask == GenMask::Full ? 0u : policy.mask == GenMask::Ordinary ? 1u : 2u);
  put_u32(os, static_cast<std::uint32_t>(policy.max_len));
  put_u32(os, policy.params.kind == ParamKind::Tabular ? 0u : 1u);
  if (policy.params.kind == ParamKind::Tabular) {
    put_u32(os, static_cast<std::uint32_t>(policy.params.table.size()));
    for (const auto& [k, v] : policy.params.table) {
      put_u32(os, static_cast<std::uint32_t>(k.size()));
      for (int t : k) put_u32(os, static_cast<std::uint32_t>(t));
      put_u32(os, static_cast<std::uint32_t>(v.size()));
      for (double x : v) put_f64(os, x);
    }
  } else {
    put_u32(os, static_cast<std::uint32_t>(policy.params.logit_dim));
    put_u32(os, static_cast<std::uint32_t>(policy.params.feat_dim));
    for (double x : policy.params.weights) put_f64(os, x);
  }
}

Policy load_policy(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad policy snapshot magic");
  std::uint32_t version = get_u32(is);
  if (version != 1) throw std::runtime_error("unsupported policy snapshot version");
  Policy p;
  p.vocab.ordinary = static_cast<int>(get_u32(is));
  std::uint32_t nroles = get_u32(is);
  for (std::uint32_t i = 0; i < nroles; ++i) p.vocab.roles.push_back(static_cast<TokenRole>(get_u32(is)));
  std::uint32_t m = get_u32(is);
  p.mask = m == 0 ? GenMask::Full : m == 1 ? GenMask::Ordinary : GenMask::OrdinaryPlusEos;
  p.max_len = static_cast<int>(get_u32(is));
  std::uint32_t kind = get_u32(is);
  if (kind == 0) {
    p.params.kind = ParamKind::Tabular;
    std::uint32_t entries = get_u32(is);
    for (std::uint32_t e = 0; e < entries; ++e) {
      std::uint32_t klen = get_u32(is);
      std::vector<int> key(klen);
      for (auto& t : key) t = static_cast<int>(get_u32(is));
      std::uint32_t vlen = get_u32(is);
      std::vector<double> v(vlen);
      for (auto& x : v) x = get_f64(is);
      p.params.table.emplace(std::move(key), std::move(v));
    }
  } else {
    p.params.kind = ParamKind::LinearSoftmax;
    p.params.logit_dim = static_cast<int>(get_u32(is));
    p.params.feat_dim = static_cast<int>(get_u32(is));
    p.params.weights.resize(static_cast<std::size_t>(p.params.logit_dim) * p.params.feat_dim);
    for (auto& x : p.params.weights) x = get_f64(is);
  }
  return p;
}

void save_policy_file(const Policy& policy, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  save_policy(policy, os);
}

Policy load_policy_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return load_policy(is);
}

}  // namespace vpd
