#include "vpd/mstep.hpp"

#include <cmath>
#include <stdexcept>

namespace vpd {

Divergence divergence_from_string(const std::string& s) {
  if (s == "reverse-kl") return Divergence::ReverseKl;
  if (s == "forward-kl") return Divergence::ForwardKl;
  if (s == "js") return Divergence::Js;
  throw std::invalid_argument("unknown divergence: " + s);
}

std::string to_string(Divergence d) {
  switch (d) {
    case Divergence::ReverseKl: return "reverse-kl";
    case Divergence::ForwardKl: return "forward-kl";
    case Divergence::Js: return "js";
  }
  return "?";
}

namespace {

double vec_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (p[v] <= 0.0) continue;
    if (q[v] <= 0.0) throw std::invalid_argument("token KL undefined: zero mass under the target");
    s += p[v] * (std::log(p[v]) - std::log(q[v]));
  }
  return s;
}

void check_normalized(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x;
  if (std::fabs(s - 1.0) > 1e-10) throw std::invalid_argument("token distribution is not normalized");
}

}  // namespace

double token_divergence(const std::vector<double>& student, const std::vector<double>& teacher,
                        Divergence kind) {
  if (student.size() != teacher.size()) throw std::invalid_argument("distribution width mismatch");
  check_normalized(student);
  check_normalized(teacher);
  switch (kind) {
    case Divergence::ReverseKl:
      return vec_kl(student, teacher);
    case Divergence::ForwardKl:
      return vec_kl(teacher, student);
    case Divergence::Js: {
      std::vector<double> m(student.size());
      for (std::size_t v = 0; v < m.size(); ++v) m[v] = 0.5 * (student[v] + teacher[v]);
      return 0.5 * vec_kl(student, m) + 0.5 * vec_kl(teacher, m);
    }
  }
  throw std::invalid_argument("unknown divergence kind");
}

LossResult distill_loss(const Policy& student, const Policy& teacher, const Trajectory& traj,
                        const FeedbackRecord& fb, const DistillConfig& cfg) {
  if (fb.mode == FeedbackMode::None) throw std::invalid_argument("distillation needs feedback");
  if (traj.response.empty()) throw std::invalid_argument("empty trajectory");

  const std::size_t T = traj.response.size();
  Context s_ctx = Context::student(traj.prompt);
  Context t_ctx = Context::teacher(fb.tokens, traj.prompt);

  double loss = 0.0;
  std::vector<std::vector<double>> glogits(T);
  Context sc = s_ctx;
  Context tc = t_ctx;
  for (std::size_t t = 0; t < T; ++t) {
    auto s = next_token_dist(student, sc);
    auto q = next_token_dist(teacher, tc);
    loss += token_divergence(s, q, cfg.divergence);

    // d div / d student logit_k, with the teacher held constant (sg).
    std::vector<double> gl(s.size(), 0.0);
    switch (cfg.divergence) {
      case Divergence::ReverseKl: {
        double kl = token_divergence(s, q, Divergence::ReverseKl);
        for (std::size_t k = 0; k < s.size(); ++k)
          if (s[k] > 0.0) gl[k] = s[k] * (std::log(s[k] / q[k]) - kl);
        break;
      }
      case Divergence::ForwardKl: {
        for (std::size_t k = 0; k < s.size(); ++k)
          if (s[k] > 0.0) gl[k] = s[k] - q[k];
        break;
      }
      case Divergence::Js: {
        // dJS/ds_k = 0.5 log(s_k/m_k); chain through the softmax.
        double inner = 0.0;
        std::vector<double> dv(s.size(), 0.0);
        for (std::size_t k = 0; k < s.size(); ++k) {
          if (s[k] <= 0.0) continue;
          double m = 0.5 * (s[k] + q[k]);
          dv[k] = 0.5 * std::log(s[k] / m);
          inner += s[k] * dv[k];
        }
        for (std::size_t k = 0; k < s.size(); ++k)
          if (s[k] > 0.0) gl[k] = s[k] * (dv[k] - inner);
        break;
      }
    }
    glogits[t] = std::move(gl);
    sc.prefix.push_back(traj.response[t]);
    tc.prefix.push_back(traj.response[t]);
  }

  double scale = cfg.reduction == TokenReduction::Mean ? 1.0 / static_cast<double>(T) : 1.0;
  LossResult out;
  out.loss = loss * scale;
  out.grad = logits_grad_to_params(student, s_ctx, traj.response, glogits);
  out.grad.scale(scale);
  return out;
}

std::vector<double> importance_ratio(const Policy& current, const Trajectory& traj) {
  Context ctx = Context::student(traj.prompt);
  auto now = step_logprobs(current, ctx, traj.response);
  std::vector<double> out(now.size());
  for (std::size_t t = 0; t < now.size(); ++t) out[t] = std::exp(now[t] - traj.token_logprobs[t]);
  return out;
}

}  // namespace vpd
