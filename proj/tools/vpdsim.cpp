#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vpd/checks.hpp"
#include "vpd/config.hpp"
#include "vpd/svg_plot.hpp"
#include "vpd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitOracle = 3;

void apply_seed_env(vpd::TrainConfig& cfg) {
  if (const char* s = std::getenv("VPDSIM_SEED")) vpd::apply_override(cfg, std::string("seed=") + s);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

void render_run_charts(const fs::path& metrics_path, const fs::path& out_dir) {
  std::ifstream is(metrics_path);
  if (!is) throw std::runtime_error("cannot read " + metrics_path.string());
  vpd::PlotSeries train{"train_acc", {}, {}}, eval{"eval_acc", {}, {}}, margin{"reward_margin", {}, {}};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    double b = j.at("batch").get<double>();
    train.x.push_back(b);
    train.y.push_back(j.at("train_acc").get<double>());
    if (!j.at("eval_acc").is_null()) {
      eval.x.push_back(b);
      eval.y.push_back(j.at("eval_acc").get<double>());
    }
    if (!j.at("reward_margin").is_null()) {
      margin.x.push_back(b);
      margin.y.push_back(j.at("reward_margin").get<double>());
    }
  }
  write_file(out_dir / "accuracy.svg",
             vpd::render_line_chart("accuracy", "batch", "accuracy", {train, eval}));
  write_file(out_dir / "reward_margin.svg",
             vpd::render_line_chart("reward margin", "batch", "margin (nats)", {margin}));
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  vpd::RunSummary summary;
};

RunOutcome execute_run(const vpd::TrainConfig& cfg, const fs::path& out_dir, const std::string& resume) {
  RunOutcome out;
  fs::create_directories(out_dir);
  write_file(out_dir / "resolved_config.txt", vpd::serialize_config(cfg));

  vpd::Trainer trainer(cfg);
  if (!resume.empty()) trainer.load_checkpoint(resume);

  std::ofstream metrics(out_dir / "metrics.jsonl");
  if (!metrics) {
    out.error = "cannot open metrics stream";
    return out;
  }
  auto t0 = std::chrono::steady_clock::now();
  try {
    while (trainer.batches_done() < cfg.total_batches) {
      vpd::MetricsRecord rec = trainer.run_batch();
      metrics << rec.to_json_line() << "\n" << std::flush;
      if (cfg.checkpoint_every > 0 && trainer.batches_done() % cfg.checkpoint_every == 0)
        trainer.save_checkpoint((out_dir / ("ckpt_" + std::to_string(trainer.batches_done()) + ".bin")).string());
    }
  } catch (const std::exception& e) {
    out.error = e.what();  // partial metrics already flushed
    return out;
  }
  auto t1 = std::chrono::steady_clock::now();
  trainer.add_wall_ms(std::chrono::duration<double, std::milli>(t1 - t0).count());
  out.summary = trainer.summary();
  write_file(out_dir / "summary.json", out.summary.to_json() + "\n");
  render_run_charts(out_dir / "metrics.jsonl", out_dir);
  out.ok = true;
  return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out_dir,
              const std::string& resume) {
  vpd::TrainConfig cfg;
  try {
    cfg = vpd::parse_config_file(config_path);
    for (const auto& s : sets) vpd::apply_override(cfg, s);
    apply_seed_env(cfg);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  RunOutcome out = execute_run(cfg, out_dir, resume);
  if (!out.ok) {
    std::cerr << "run failed: " << out.error << "\n";
    return kExitRuntime;
  }
  std::cout << out.summary.to_json() << "\n";
  return kExitOk;
}

int cmd_oracle_check(const std::string& config_path, const std::string& out_path) {
  vpd::TrainConfig cfg;
  try {
    cfg = vpd::parse_config_file(config_path);
    apply_seed_env(cfg);
    auto env = cfg.env();
    std::size_t space = vpd::DistTable::space_size(env.vocab.ordinary, env.response_len);
    if (space > cfg.enum_cap)
      throw vpd::ConfigError("config error: enumeration space " + std::to_string(space) +
                             " exceeds oracle.enum_cap " + std::to_string(cfg.enum_cap) +
                             "; oracle checks refused");
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  auto results = vpd::run_oracle_checks(cfg.seed);
  std::string report = vpd::check_report_lines(results);
  std::cout << report;
  if (!out_path.empty()) write_file(out_path, report);
  bool all_pass = true;
  for (const auto& r : results) all_pass = all_pass && r.pass();
  return all_pass ? kExitOk : kExitOracle;
}

int cmd_compare(const std::string& config_path, std::vector<std::string> methods, std::vector<std::uint64_t> seeds,
                const std::string& out_dir) {
  vpd::TrainConfig base;
  try {
    base = vpd::parse_config_file(config_path);
    if (seeds.size() < 2) throw vpd::ConfigError("config error: compare needs at least 2 seeds");
    if (methods.empty()) throw vpd::ConfigError("config error: compare needs at least 1 method");
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  }
  fs::create_directories(out_dir);

  json table = json::array();
  std::vector<vpd::PlotSeries> overlays;
  bool any_failed = false;
  for (const auto& m : methods) {
    std::vector<double> finals;
    json row;
    row["method"] = m;
    json cells = json::array();
    for (auto seed : seeds) {
      vpd::TrainConfig cfg = base;
      try {
        vpd::apply_override(cfg, "method=" + m);
        vpd::apply_override(cfg, "seed=" + std::to_string(seed));
      } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
      }
      fs::path cell_dir = fs::path(out_dir) / (m + "_seed" + std::to_string(seed));
      RunOutcome out = execute_run(cfg, cell_dir, "");
      json cell;
      cell["seed"] = seed;
      cell["ok"] = out.ok;
      if (out.ok && out.summary.final_eval_acc) {
        cell["final_eval_acc"] = *out.summary.final_eval_acc;
        finals.push_back(*out.summary.final_eval_acc);
      } else if (!out.ok) {
        cell["error"] = out.error;
        any_failed = true;
      }
      cells.push_back(cell);

      if (out.ok && seed == seeds.front()) {
        // overlay the first seed's eval curve per method
        std::ifstream is(cell_dir / "metrics.jsonl");
        vpd::PlotSeries s{m, {}, {}};
        std::string line;
        while (std::getline(is, line)) {
          if (line.empty()) continue;
          json j = json::parse(line);
          if (!j.at("eval_acc").is_null()) {
            s.x.push_back(j.at("batch").get<double>());
            s.y.push_back(j.at("eval_acc").get<double>());
          }
        }
        overlays.push_back(std::move(s));
      }
    }
    double mean = 0.0;
    for (double f : finals) mean += f;
    mean = finals.empty() ? 0.0 : mean / finals.size();
    double var = 0.0;
    for (double f : finals) var += (f - mean) * (f - mean);
    double stddev = finals.empty() ? 0.0 : std::sqrt(var / finals.size());
    row["runs"] = cells;
    row["mean_final_eval_acc"] = mean;
    row["stddev_final_eval_acc"] = stddev;
    table.push_back(row);
  }
  write_file(fs::path(out_dir) / "comparison.json", table.dump(2) + "\n");
  write_file(fs::path(out_dir) / "comparison.svg",
             vpd::render_line_chart("eval accuracy by method", "batch", "accuracy", overlays));

  std::cout << "method                mean    stddev\n";
  for (const auto& row : table)
    std::cout << row["method"].get<std::string>() << std::string(22 - std::min<std::size_t>(21, row["method"].get<std::string>().size()), ' ')
              << row["mean_final_eval_acc"].get<double>() << "  " << row["stddev_final_eval_acc"].get<double>()
              << "\n";
  return any_failed ? kExitRuntime : kExitOk;
}

int cmd_report(const std::string& metrics_path, const std::string& out_dir) {
  try {
    fs::create_directories(out_dir);
    render_run_charts(metrics_path, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "report failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale co-evolutionary distillation simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run_out", resume, out_path, metrics_path;
  std::vector<std::string> sets, methods;
  std::vector<std::uint64_t> seeds;

  auto* train = app.add_subcommand("train", "run one training experiment");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--set", sets, "override key=value (repeatable)");
  train->add_option("--out", out_dir, "report directory");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* oracle = app.add_subcommand("oracle-check", "run the exact identity and gradient suite");
  oracle->add_option("--config", config_path, "experiment config file")->required();
  oracle->add_option("--out", out_path, "also write the report to this file");

  auto* compare = app.add_subcommand("compare", "run a method x seed grid");
  compare->add_option("--config", config_path, "base experiment config")->required();
  compare->add_option("--methods", methods, "methods to compare")->required()->delimiter(',');
  compare->add_option("--seeds", seeds, "seeds")->required()->delimiter(',');
  compare->add_option("--out", out_dir, "report directory");

  auto* report = app.add_subcommand("report", "re-render charts from a metrics stream");
  report->add_option("--metrics", metrics_path, "metrics.jsonl path")->required();
  report->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, sets, out_dir, resume);
    if (oracle->parsed()) return cmd_oracle_check(config_path, out_path);
    if (compare->parsed()) return cmd_compare(config_path, methods, seeds, out_dir);
    if (report->parsed()) return cmd_report(metrics_path, out_dir);
  } catch (const vpd::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
