#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "vpd/config.hpp"
#include "vpd/trainer.hpp"

using namespace vpd;
namespace fs = std::filesystem;

namespace {

const char* kMinimalConfig =
    "method = vpd\n"
    "env.family = mod-sum\n"
    "env.vocab_size = 6\n"
    "env.prompt_len = 1\n"
    "train.beta = 0.1\n"
    "train.total_batches = 4\n"
    "train.prompts_per_batch = 2\n"
    "train.rollouts_per_prompt = 4\n"
    "train.eval_prompts = 4\n";

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CliRunner {
  std::string bin;
  fs::path dir;

  CliRunner() {
    const char* b = std::getenv("VPDSIM_BIN");
    bin = b ? b : "";
    dir = fs::temp_directory_path() / "vpd_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }

  int run(const std::string& args) const {
    std::string cmd = bin + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                      (dir / "stderr.txt").string();
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  }

  std::string out() const { return slurp(dir / "stdout.txt"); }
  std::string err() const { return slurp(dir / "stderr.txt"); }
};

}  // namespace

TEST_SUITE("config_cli") {
  TEST_CASE("parse materializes defaults; serialization is idempotent") {
    TrainConfig cfg = parse_config_text(kMinimalConfig);
    CHECK(cfg.estep_frequency == 5);
    CHECK(cfg.rollouts_per_prompt == 4);
    CHECK(cfg.teacher_update_rate == 0.05);
    std::string once = serialize_config(cfg);
    TrainConfig cfg2 = parse_config_text(once);
    CHECK(serialize_config(cfg2) == once);
  }

  TEST_CASE("unknown and missing keys are named in errors") {
    CHECK_THROWS_WITH_AS(parse_config_text("train.beta = 0.1\nenv.family = mod-sum\nbogus.key = 1\n"),
                         doctest::Contains("bogus.key"), ConfigError);
    try {
      parse_config_text("env.family = mod-sum\n");
      FAIL("expected missing-beta error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.beta") != std::string::npos);
    }
  }

  TEST_CASE("overrides apply and revalidate") {
    TrainConfig cfg = parse_config_text(kMinimalConfig);
    apply_override(cfg, "method=grpo");
    CHECK(cfg.method == Method::Grpo);
    CHECK_THROWS_AS(apply_override(cfg, "train.beta=-1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "nope=1"), ConfigError);
  }

  TEST_CASE("config echo reproduces the run exactly") {
    TrainConfig cfg = parse_config_text(kMinimalConfig);
    TrainConfig echoed = parse_config_text(serialize_config(cfg));
    Trainer a(cfg), b(echoed);
    for (int i = 0; i < 4; ++i) CHECK(a.run_batch().to_json_line() == b.run_batch().to_json_line());
  }

  TEST_CASE("cli: determinism, exit codes, stream integrity") {
    CliRunner cli;
    if (cli.bin.empty()) {
      MESSAGE("VPDSIM_BIN not set; CLI cases skipped");
      return;
    }
    fs::path cfg_path = cli.dir / "exp.cfg";
    std::ofstream(cfg_path) << kMinimalConfig;

    // identical seeds -> identical metrics bytes
    REQUIRE(cli.run("train --config " + cfg_path.string() + " --set seed=1 --out " +
                    (cli.dir / "r1").string()) == 0);
    REQUIRE(cli.run("train --config " + cfg_path.string() + " --set seed=1 --out " +
                    (cli.dir / "r2").string()) == 0);
    CHECK(slurp(cli.dir / "r1/metrics.jsonl") == slurp(cli.dir / "r2/metrics.jsonl"));
    CHECK(!slurp(cli.dir / "r1/resolved_config.txt").empty());
    CHECK(slurp(cli.dir / "r1/accuracy.svg").find("<svg") != std::string::npos);

    // stream integrity: every line parses, batch indices increase without gaps
    std::istringstream stream(slurp(cli.dir / "r1/metrics.jsonl"));
    std::string line;
    int expect = 1;
    while (std::getline(stream, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("batch").get<int>() == expect++);
    }
    CHECK(expect == 5);

    // config errors: missing beta names the key, exit code 1
    fs::path bad = cli.dir / "bad.cfg";
    std::ofstream(bad) << "env.family = mod-sum\n";
    CHECK(cli.run("train --config " + bad.string() + " --out " + (cli.dir / "r3").string()) == 1);
    CHECK(cli.err().find("train.beta") != std::string::npos);

    // oversized env: clean refusal naming the enumeration cap
    fs::path big = cli.dir / "big.cfg";
    std::ofstream(big) << "train.beta = 0.1\nenv.family = keyed-copy\nenv.vocab_size = 10\n"
                       << "env.prompt_len = 8\noracle.enum_cap = 1000\n";
    CHECK(cli.run("oracle-check --config " + big.string()) == 1);
    CHECK(cli.err().find("enum_cap") != std::string::npos);

    // report subcommand re-renders charts from a stream
    CHECK(cli.run("report --metrics " + (cli.dir / "r1/metrics.jsonl").string() + " --out " +
                  (cli.dir / "rr").string()) == 0);
    CHECK(slurp(cli.dir / "rr/accuracy.svg").find("<svg") != std::string::npos);

    // compare: two methods, two seeds, aggregate table with per-seed dirs retained
    CHECK(cli.run("compare --config " + cfg_path.string() + " --methods grpo,vpd --seeds 1,2 --out " +
                  (cli.dir / "cmp").string()) == 0);
    auto table = nlohmann::json::parse(slurp(cli.dir / "cmp/comparison.json"));
    REQUIRE(table.size() == 2);
    CHECK(table[0].contains("mean_final_eval_acc"));
    CHECK(fs::exists(cli.dir / "cmp/grpo_seed1/metrics.jsonl"));
    CHECK(fs::exists(cli.dir / "cmp/vpd_seed2/metrics.jsonl"));

    // identical method listed twice -> identical statistics
    CHECK(cli.run("compare --config " + cfg_path.string() + " --methods vpd,vpd --seeds 1,2 --out " +
                  (cli.dir / "cmp2").string()) == 0);
    auto t2 = nlohmann::json::parse(slurp(cli.dir / "cmp2/comparison.json"));
    CHECK(t2[0]["mean_final_eval_acc"] == t2[1]["mean_final_eval_acc"]);

    // checkpoint + resume through the CLI reproduces the tail of the stream
    fs::path rc = cli.dir / "rc";
    REQUIRE(cli.run("train --config " + cfg_path.string() + " --set seed=1 --set train.checkpoint_every=2 --out " +
                    rc.string()) == 0);
    CHECK(fs::exists(rc / "ckpt_2.bin"));
    fs::path rr2 = cli.dir / "rc_resume";
    REQUIRE(cli.run("train --config " + cfg_path.string() + " --set seed=1 --resume " +
                    (rc / "ckpt_2.bin").string() + " --out " + rr2.string()) == 0);
    std::istringstream full_stream(slurp(rc / "metrics.jsonl"));
    std::string l1, l2;
    std::getline(full_stream, l1);
    std::getline(full_stream, l2);
    std::string rest((std::istreambuf_iterator<char>(full_stream)), std::istreambuf_iterator<char>());
    CHECK(slurp(rr2 / "metrics.jsonl") == rest);

    // global seed override via environment variable
    fs::path r4 = cli.dir / "r4";
    std::string env_cmd = "VPDSIM_SEED=1 " + cli.bin + " train --config " + cfg_path.string() +
                          " --set seed=99 --out " + r4.string() + " > /dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(env_cmd.c_str())) == 0);
    CHECK(slurp(r4 / "metrics.jsonl") == slurp(cli.dir / "r1/metrics.jsonl"));
  }

  TEST_CASE("oracle checks demand an enumerable response space") {
    std::string cfg =
        "train.beta = 0.1\nenv.family = keyed-copy\nenv.vocab_size = 10\nenv.prompt_len = 8\n"
        "train.oracle_checks = true\noracle.enum_cap = 1000\n";
    try {
      parse_config_text(cfg);
      FAIL("expected enum-cap refusal");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("enum_cap") != std::string::npos);
    }
  }

  TEST_CASE("zero-gradient counter covers every batch of a stalled GRPO run") {
    TrainConfig cfg = parse_config_text(kMinimalConfig);
    apply_override(cfg, "method=grpo");
    apply_override(cfg, "train.feedback_mode=none");
    apply_override(cfg, "policy.init=adversarial");
    Trainer t(cfg);
    while (t.batches_done() < cfg.total_batches) t.run_batch();
    CHECK(t.summary().zero_gradient_batches == cfg.total_batches);
  }
}
