#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "vpd/baselines.hpp"
#include "vpd/checks.hpp"
#include "vpd/config.hpp"
#include "vpd/oracle.hpp"
#include "vpd/trainer.hpp"

namespace py = pybind11;
using namespace vpd;

namespace {

Context make_context(const std::vector<int>& prompt, const std::optional<std::vector<int>>& feedback,
                     const std::vector<int>& prefix) {
  Context c;
  c.prompt = prompt;
  c.feedback = feedback;
  c.prefix = prefix;
  return c;
}

EnvSpec make_env(const std::string& family, int vocab_size, int prompt_len, int response_len,
                 std::uint64_t transform_key) {
  EnvSpec e;
  e.family = env_family_from_string(family);
  e.vocab = standard_vocab(vocab_size);
  e.prompt_len = prompt_len;
  e.response_len = response_len;
  e.transform_key = transform_key;
  e.validate();
  return e;
}

py::dict run_experiment(const std::string& config_text) {
  TrainConfig cfg = parse_config_text(config_text);
  Trainer trainer(cfg);
  py::list lines;
  while (trainer.batches_done() < cfg.total_batches) lines.append(trainer.run_batch().to_json_line());
  py::dict out;
  out["metrics"] = lines;
  out["summary"] = trainer.summary().to_json();
  return out;
}

py::list oracle_check(std::uint64_t seed) {
  py::list out;
  for (const auto& r : run_oracle_checks(seed)) {
    py::dict d;
    d["identity"] = r.name;
    d["max_residual"] = r.max_residual;
    d["tolerance"] = r.tolerance;
    d["cases"] = r.cases;
    d["violations"] = r.violations;
    d["pass"] = r.pass();
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(vpdcore, m) {
  m.doc() = "exact-oracle co-evolutionary distillation sandbox";

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_readonly("ordinary", &Vocabulary::ordinary)
      .def("total", &Vocabulary::total);
  m.def("standard_vocab", &standard_vocab, py::arg("ordinary"));

  py::class_<Trajectory>(m, "Trajectory")
      .def_readwrite("prompt", &Trajectory::prompt)
      .def_readwrite("response", &Trajectory::response)
      .def_readwrite("token_logprobs", &Trajectory::token_logprobs)
      .def_readwrite("total_logprob", &Trajectory::total_logprob)
      .def_readwrite("reward", &Trajectory::reward);

  py::class_<Policy>(m, "Policy")
      .def_static("tabular",
                  [](int vocab_size, int max_len) {
                    return Policy::tabular(standard_vocab(vocab_size), GenMask::Ordinary, max_len);
                  },
                  py::arg("vocab_size"), py::arg("max_len") = 8)
      .def("next_token_dist",
           [](const Policy& p, const std::vector<int>& prompt, const std::optional<std::vector<int>>& feedback,
              const std::vector<int>& prefix) { return next_token_dist(p, make_context(prompt, feedback, prefix)); },
           py::arg("prompt"), py::arg("feedback") = std::nullopt, py::arg("prefix") = std::vector<int>{})
      .def("sequence_logprob",
           [](const Policy& p, const std::vector<int>& prompt, const std::vector<int>& y,
              const std::optional<std::vector<int>>& feedback) {
             return sequence_logprob(p, make_context(prompt, feedback, {}), y);
           },
           py::arg("prompt"), py::arg("y"), py::arg("feedback") = std::nullopt)
      .def("sample",
           [](const Policy& p, const std::vector<int>& prompt, std::uint64_t seed, int max_len) {
             Rng rng(seed);
             return sample_trajectory(p, Context::student(prompt), rng, max_len);
           },
           py::arg("prompt"), py::arg("seed"), py::arg("max_len"))
      .def("greedy_decode",
           [](const Policy& p, const std::vector<int>& prompt, int len) {
             return greedy_decode(p, Context::student(prompt), len);
           })
      .def("set_logits",
           [](Policy& p, const std::vector<int>& prompt, const std::optional<std::vector<int>>& feedback,
              const std::vector<int>& prefix, const std::vector<double>& logits) {
             p.params.table[make_context(prompt, feedback, prefix).serialize(p.vocab)] = logits;
           });

  py::class_<EnvSpec>(m, "EnvSpec");
  m.def("make_env", &make_env, py::arg("family"), py::arg("vocab_size"), py::arg("prompt_len"),
        py::arg("response_len"), py::arg("transform_key") = 0);
  m.def("env_target", [](const EnvSpec& e, const std::vector<int>& x) { return target(e, x); });
  m.def("env_verify", [](const EnvSpec& e, const std::vector<int>& x, const std::vector<int>& y) {
    auto label = verify(e, x, y);
    py::dict d;
    d["reward"] = label.reward;
    d["first_error_pos"] = label.first_error_pos ? py::cast(*label.first_error_pos) : py::none();
    d["expected_token"] = label.expected_token ? py::cast(*label.expected_token) : py::none();
    return d;
  });

  m.def("log_partition",
        [](const std::vector<double>& ref, const std::vector<double>& rewards, double beta, int base, int length) {
          DistTable t{base, length, ref};
          return log_partition(t, rewards, beta);
        },
        py::arg("ref"), py::arg("rewards"), py::arg("beta"), py::arg("base"), py::arg("length"));
  m.def("optimal_policy",
        [](const std::vector<double>& ref, const std::vector<double>& rewards, double beta, int base, int length) {
          DistTable t{base, length, ref};
          return optimal_policy(t, rewards, beta).p;
        });
  m.def("exact_kl", [](const std::vector<double>& p, const std::vector<double>& q, int base, int length) {
    DistTable a{base, length, p}, b{base, length, q};
    return exact_kl(a, b);
  });
  m.def("elbo", [](const std::vector<double>& q, const std::vector<double>& ref, const std::vector<double>& rewards,
                   double beta, int base, int length) {
    DistTable a{base, length, q}, b{base, length, ref};
    return elbo(a, b, rewards, beta);
  });

  m.def("dpo_pair_loss", &dpo_pair_loss);
  m.def("neg_log_sigmoid", &neg_log_sigmoid);
  m.def("grpo_advantages", &grpo_advantages);
  m.def("reshape_advantage", [](double a, double d, double omega_rl, double omega_opd) {
    HybridConfig hc;
    hc.omega_rl = omega_rl;
    hc.omega_opd = omega_opd;
    return reshape_advantage(a, d, hc);
  });
  m.def("reweight_advantage", &reweight_advantage);
  m.def("token_divergence", [](const std::vector<double>& s, const std::vector<double>& t, const std::string& kind) {
    return token_divergence(s, t, divergence_from_string(kind));
  });

  m.def("run_experiment", &run_experiment, py::arg("config_text"));
  m.def("oracle_check", &oracle_check, py::arg("seed") = 0);
  m.def("em_monotonicity_run",
        [](const EnvSpec& env, const std::vector<int>& x, double beta, int cycles) {
          MonotonicityOptions opts;
          opts.cycles = cycles;
          return em_monotonicity_run(env, x, beta, opts);
        },
        py::arg("env"), py::arg("x"), py::arg("beta"), py::arg("cycles") = 20);
}
