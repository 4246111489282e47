#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "risemar/cli/commands.hpp"
#include "risemar/cqa/cqa.hpp"
#include "risemar/io/dataset.hpp"
#include "risemar/metrics/metrics.hpp"

using namespace risemar;
namespace fs = std::filesystem;

namespace {

// One tiny pipeline directory shared by the cases below; simulate runs once.
const fs::path& work_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "risemar_cli_pipeline";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

io::Config tiny_config() {
  io::Config cfg;
  cfg.set("out_dir", (work_dir() / "run").string());
  cfg.set("image_size", "64");
  cfg.set("seed", "3");
  cfg.set("sim.train_count", "4");
  cfg.set("sim.eval_count", "2");
  cfg.set("cli.train_count", "4");
  cfg.set("cli.eval_count", "2");
  cfg.set("cqa.count", "6");
  cfg.set("mar.depth", "3");
  cfg.set("mar.base_width", "4");
  cfg.set("cqa.dims", "4,8,8");
  cfg.set("cqa.heads", "1,2,2");
  cfg.set("cqa.blocks", "1");
  cfg.set("cqa.head_hidden", "16");
  cfg.set("cqa.epochs", "2");
  cfg.set("train.warm_epochs", "1");
  cfg.set("train.main_epochs", "1");
  cfg.set("train.sim_batch", "1");
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

int count_lines(const fs::path& p) {
  std::istringstream ss(slurp(p));
  int n = 0;
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate writes all splits with matching counts") {
  io::Config cfg = tiny_config();
  cli::cmd_simulate(cfg, false);
  const fs::path data = fs::path(cfg.get_str("out_dir")) / "data";

  io::LoadedSplit sim = io::load_split((data / "sim_train").string());
  io::LoadedSplit cli_s = io::load_split((data / "cli_train").string());
  CHECK(sim.pairs.size() == 4);
  CHECK(io::load_split((data / "sim_eval").string()).pairs.size() == 2);
  CHECK(cli_s.pairs.size() == 4);
  CHECK(io::load_split((data / "cli_eval").string()).pairs.size() == 2);
  CHECK(io::load_split((data / "cqa").string()).pairs.size() == 6);

  // the two domains carry different physics
  CHECK(sim.meta.spectrum.id != cli_s.meta.spectrum.id);
  CHECK(sim.meta.geometry.n_detectors != cli_s.meta.geometry.n_detectors);
  CHECK(sim.meta.domain == ctphys::DomainTag::simulated);
  CHECK(cli_s.meta.domain == ctphys::DomainTag::clinical);
  CHECK(sim.meta.config_hash == cfg.hash());

  auto recs = cqa::read_annotations_jsonl((data / "cqa" / "annotations.jsonl").string());
  CHECK(recs.size() == 12);  // artifact + clean per pair

  // re-running the same config is allowed and reproduces the manifest bytes
  const std::string before = slurp(data / "sim_train" / "manifest.json");
  cli::cmd_simulate(cfg, false);
  CHECK(slurp(data / "sim_train" / "manifest.json") == before);

  // a changed config must not overwrite without --force
  io::Config changed = tiny_config();
  changed.set("sim.train_count", "5");
  CHECK_THROWS_AS(cli::cmd_simulate(changed, false), io::CliError);
}

TEST_CASE("train-cqa produces a loadable checkpoint and a log") {
  io::Config cfg = tiny_config();
  const fs::path out(cfg.get_str("out_dir"));

  io::Config elsewhere = tiny_config();
  elsewhere.set("data_dir", (work_dir() / "nonexistent").string());
  CHECK_THROWS_AS(cli::cmd_train_cqa(elsewhere, false), io::CliError);

  cli::cmd_train_cqa(cfg, false);
  models::CQANet net = cli::load_cqanet((out / "cqa" / "checkpoint.ck").string());
  CHECK(net.config().input_size == 64);
  CHECK(net.param_count() > 0);
  CHECK(count_lines(out / "cqa" / "log.csv") == 3);  // header + 2 epochs
  CHECK(fs::exists(out / "cqa" / "annotations.jsonl"));
  CHECK(fs::exists(out / "cqa" / "summary.json"));
}

TEST_CASE("train-mar runs the full loop and honors no_ema") {
  io::Config cfg = tiny_config();
  const fs::path out(cfg.get_str("out_dir"));

  cli::cmd_train_mar(cfg, false);
  CHECK(count_lines(out / "mar" / "stats.csv") == 2);  // header + 1 epoch
  models::MARNet student = cli::load_marnet((out / "mar" / "student.ck").string());
  CHECK(student.config().depth == 3);
  CHECK(fs::exists(out / "mar" / "teacher.ck"));
  CHECK(fs::exists(out / "mar" / "warm.ck"));

  // frozen-teacher ablation: the teacher checkpoint stays the warm start
  io::Config frozen = tiny_config();
  frozen.set("ablation.no_ema", "true");
  frozen.set("out_dir", (work_dir() / "run_noema").string());
  frozen.set("data_dir", (out / "data").string());
  frozen.set("cqa.checkpoint", (out / "cqa" / "checkpoint.ck").string());
  cli::cmd_train_mar(frozen, false);
  const fs::path out2(frozen.get_str("out_dir"));
  models::MARNet warm = cli::load_marnet((out2 / "mar" / "warm.ck").string());
  models::MARNet teacher = cli::load_marnet((out2 / "mar" / "teacher.ck").string());
  CHECK(cli::params_hash(teacher.params()) == cli::params_hash(warm.params()));
  models::MARNet student2 = cli::load_marnet((out2 / "mar" / "student.ck").string());
  CHECK(cli::params_hash(student2.params()) != cli::params_hash(warm.params()));

  // missing quality checkpoint is a data error unless the ablation drops it
  io::Config broken = tiny_config();
  broken.set("out_dir", (work_dir() / "run_nockpt").string());
  broken.set("data_dir", (out / "data").string());
  broken.set("cqa.checkpoint", (work_dir() / "missing.ck").string());
  CHECK_THROWS_AS(cli::cmd_train_mar(broken, false), io::CliError);
  // dropping the gate via the ablation changes the config hash, so the
  // stamped directory from the failed attempt needs --force
  broken.set("ablation.no_cqa", "true");
  CHECK_NOTHROW(cli::cmd_train_mar(broken, true));
}

TEST_CASE("eval: identity model reproduces input metrics, runs repeat exactly") {
  io::Config cfg = tiny_config();
  cfg.set("eval.identity", "true");
  cfg.set("eval.use_cqa", "false");
  const fs::path out(cfg.get_str("out_dir"));
  cli::cmd_eval(cfg, false);

  const fs::path report = out / "eval" / "report.csv";
  std::istringstream ss(slurp(report));
  std::string line;
  std::getline(ss, line);  // header
  io::LoadedSplit sim_eval =
      io::load_split((out / "data" / "sim_eval").string());
  for (std::size_t i = 0; i < sim_eval.pairs.size(); ++i) {
    REQUIRE(std::getline(ss, line));
    std::istringstream row(line);
    std::string id, domain, psnr_s;
    std::getline(row, id, ',');
    std::getline(row, domain, ',');
    std::getline(row, psnr_s, ',');
    CHECK(id == sim_eval.ids[i]);
    CHECK(domain == "simulated");
    const auto& p = sim_eval.pairs[i];
    CHECK(std::stod(psnr_s) ==
          doctest::Approx(metrics::psnr(p.artifact_image, p.clean_image, p.metal_mask))
              .epsilon(1e-4));
  }

  const std::string summary = slurp(out / "eval" / "summary.txt");
  CHECK(summary.find("simulated") != std::string::npos);
  CHECK(summary.find("clinical") != std::string::npos);

  const std::string first = slurp(report);
  cli::cmd_eval(cfg, false);
  CHECK(slurp(report) == first);

  // a trained checkpoint also evaluates
  io::Config real_eval = tiny_config();
  cli::cmd_eval(real_eval, true);
  CHECK(count_lines(out / "eval" / "report.csv") >= 5);
}

TEST_CASE("sweep-q emits five rows sharing one warm start") {
  io::Config cfg = tiny_config();
  const fs::path out(cfg.get_str("out_dir"));
  cli::cmd_sweep_q(cfg, false);
  CHECK(count_lines(out / "sweep" / "sweep.csv") == 6);  // header + 5 ranges
  CHECK(fs::exists(out / "sweep" / "warm.ck"));

  // the dynamics file has one series per quality range
  std::istringstream ss(slurp(out / "sweep" / "dynamics.csv"));
  std::string line;
  std::getline(ss, line);
  std::set<std::string> series;
  int rows = 0;
  while (std::getline(ss, line)) {
    auto second_comma = line.find(',', line.find(',') + 1);
    series.insert(line.substr(0, second_comma));
    ++rows;
  }
  CHECK(series.size() == 5);
  CHECK(rows == 5);  // one epoch each
}

TEST_CASE("cli binary: exit codes and machine-parsable errors") {
  const fs::path dir = work_dir() / "binary";
  fs::create_directories(dir);
  const std::string bin = RISEMAR_CLI_PATH;

  auto run = [&](const std::string& args) {
    const std::string cmd =
        bin + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
        (dir / "stderr.txt").string();
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  };

  // no subcommand -> CLI11 usage failure
  CHECK(run("-c nowhere.cfg") != 0);
  // missing config file -> config category, exit 3
  CHECK(run("-c " + (dir / "nowhere.cfg").string() + " simulate") == 3);
  CHECK(slurp(dir / "stderr.txt").rfind("error: config:", 0) == 0);

  // a working end-to-end simulate through the binary
  std::ofstream(dir / "mini.cfg") << "out_dir = " << (dir / "run").string()
                                  << "\nimage_size = 64\nsim.train_count = 1\n"
                                     "sim.eval_count = 1\ncli.train_count = 1\n"
                                     "cli.eval_count = 1\ncqa.count = 1\n";
  CHECK(run("-c " + (dir / "mini.cfg").string() + " simulate") == 0);
  CHECK(fs::exists(dir / "run" / "data" / "cqa" / "manifest.json"));

  // stamped dir + changed config -> state category, exit 6; --force clears it
  const std::string override_arg = " -D sim.train_count=2 ";
  CHECK(run("-c " + (dir / "mini.cfg").string() + override_arg + "simulate") == 6);
  CHECK(slurp(dir / "stderr.txt").rfind("error: state:", 0) == 0);
  CHECK(run("-c " + (dir / "mini.cfg").string() + override_arg +
            "--force simulate") == 0);
}
