#include "risemar/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "risemar/cqa/cqa.hpp"
#include "risemar/io/dataset.hpp"
#include "risemar/metrics/metrics.hpp"
#include "risemar/selftrain/selftrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace risemar::cli {

namespace {

using ctphys::ArtifactPair;
using ctphys::Grid;

std::string data_dir(const io::Config& cfg) {
  return cfg.get_str("data_dir", cfg.get_str("out_dir") + "/data");
}

// ---- architecture configs in checkpoint metadata ----

json marcfg_json(const models::MARNetConfig& c) {
  return {{"depth", c.depth},
          {"base_width", c.base_width},
          {"input_mode", models::to_string(c.input_mode)}};
}

models::MARNetConfig marcfg_from_json(const json& j) {
  models::MARNetConfig c;
  c.depth = j.at("depth").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.input_mode = models::input_mode_from_string(j.at("input_mode").get<std::string>());
  return c;
}

json cqacfg_json(const models::CQAConfig& c) {
  return {{"input_size", c.input_size},
          {"dims", c.dims},
          {"heads", c.heads},
          {"blocks", c.blocks},
          {"window", c.window},
          {"use_positional", c.use_positional},
          {"use_freq", c.use_freq},
          {"head_hidden", c.head_hidden},
          {"num_classes", c.num_classes}};
}

models::CQAConfig cqacfg_from_json(const json& j) {
  models::CQAConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.dims = j.at("dims").get<std::array<int, 3>>();
  c.heads = j.at("heads").get<std::array<int, 3>>();
  c.blocks = j.at("blocks").get<int>();
  c.window = j.at("window").get<int>();
  c.use_positional = j.at("use_positional").get<bool>();
  c.use_freq = j.at("use_freq").get<bool>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  return c;
}

models::Checkpoint load_ck(const std::string& path, const char* kind) {
  if (!fs::exists(path))
    throw io::CliError("data", std::string(kind) + " checkpoint missing: " + path);
  try {
    return models::Checkpoint::load(path);
  } catch (const std::exception& e) {
    throw io::CliError("data", std::string(kind) + " checkpoint " + path +
                                   " is unreadable: " + e.what());
  }
}

// ---- config -> structs ----

std::array<int, 3> parse_triple(const io::Config& cfg, const std::string& key,
                                std::array<int, 3> fallback) {
  if (!cfg.has(key)) return fallback;
  std::array<int, 3> out{};
  std::stringstream ss(cfg.get_str(key));
  std::string tok;
  int i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3) throw io::CliError("config", key + ": expected 3 integers");
    out[static_cast<std::size_t>(i++)] = std::stoi(tok);
  }
  if (i != 3) throw io::CliError("config", key + ": expected 3 integers");
  return out;
}

models::MARNetConfig mar_arch(const io::Config& cfg) {
  models::MARNetConfig a;
  a.depth = static_cast<int>(cfg.get_int("mar.depth", a.depth));
  a.base_width = static_cast<int>(cfg.get_int("mar.base_width", a.base_width));
  a.input_mode =
      models::input_mode_from_string(cfg.get_str("mar.input_mode", "artifact"));
  return a;
}

models::CQAConfig cqa_arch(const io::Config& cfg) {
  models::CQAConfig a;
  a.input_size =
      static_cast<int>(cfg.get_int("cqa.input_size", cfg.get_int("image_size", 64)));
  a.dims = parse_triple(cfg, "cqa.dims", a.dims);
  a.heads = parse_triple(cfg, "cqa.heads", a.heads);
  a.blocks = static_cast<int>(cfg.get_int("cqa.blocks", a.blocks));
  a.window = static_cast<int>(cfg.get_int("cqa.window", a.window));
  a.use_positional = cfg.get_bool("cqa.positional", a.use_positional);
  a.use_freq = cfg.get_bool("cqa.freq", a.use_freq);
  a.head_hidden = static_cast<int>(cfg.get_int("cqa.head_hidden", a.head_hidden));
  return a;
}

selftrain::RiseTrainConfig rise_config(const io::Config& cfg) {
  selftrain::RiseTrainConfig t;
  t.quality_range = selftrain::QualityRange(cfg.get_double("train.q_lower", 7.0),
                                            cfg.get_double("train.q_upper", 10.0));
  t.ema_eta = cfg.get_double("train.ema_eta", t.ema_eta);
  t.warm_epochs = static_cast<int>(cfg.get_int("train.warm_epochs", t.warm_epochs));
  t.main_epochs = static_cast<int>(cfg.get_int("train.main_epochs", t.main_epochs));
  t.arch = mar_arch(cfg);
  t.no_cli_loss = cfg.get_bool("ablation.no_cli_loss", false);
  t.no_ema = cfg.get_bool("ablation.no_ema", false);
  t.no_cqa = cfg.get_bool("ablation.no_cqa", false);
  t.seed = cfg.get_u64("seed", 0);
  t.lr = cfg.get_double("train.lr", t.lr);
  t.sim_batch = static_cast<int>(cfg.get_int("train.sim_batch", t.sim_batch));
  return t;
}

// ---- data synthesis ----

std::vector<ArtifactPair> synth_split(int count, std::uint64_t seed,
                                      const ctphys::SpectrumModel& spectrum,
                                      const ctphys::ScanGeometry& geometry,
                                      ctphys::DomainTag tag) {
  // the two domains draw from different anatomy/metal families: the
  // simulated side is torso-heavy, the clinical side dental-heavy
  std::vector<ArtifactPair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const bool torso = (tag == ctphys::DomainTag::simulated) ? (i % 3 != 0)
                                                             : (i % 3 == 0);
    auto prof = torso ? ctphys::PhantomProfile::torso_like
                      : ctphys::PhantomProfile::dental_like;
    auto ph = ctphys::make_phantom(seed + static_cast<std::uint64_t>(i), prof,
                                   geometry.image_size);
    out.push_back(ctphys::simulate_metal_artifact(
        ph, spectrum, geometry, seed + 900000 + static_cast<std::uint64_t>(i),
        tag));
  }
  return out;
}

struct DataBundle {
  io::LoadedSplit sim_train, sim_eval, cli_train, cli_eval;
};

io::LoadedSplit load_required(const std::string& root, const char* split) {
  const std::string dir = root + "/" + split;
  if (!fs::exists(fs::path(dir) / "manifest.json"))
    throw io::CliError("data", "dataset split missing: " + dir +
                                   " (run `simulate` first)");
  return io::load_split(dir);
}

DataBundle load_bundle(const io::Config& cfg) {
  const std::string root = data_dir(cfg);
  DataBundle b;
  b.sim_train = load_required(root, "sim_train");
  b.sim_eval = load_required(root, "sim_eval");
  b.cli_train = load_required(root, "cli_train");
  b.cli_eval = load_required(root, "cli_eval");
  return b;
}

Grid predict_clipped(models::MARNet& net, const ArtifactPair& p,
                     const ctphys::SpectrumModel& spectrum) {
  nn::NoGradGuard ng;
  const Grid& x = p.artifact_image;
  nn::Tensor xt = nn::Tensor::from_vector({1, 1, x.rows, x.cols}, x.v);
  nn::Tensor li_t;
  if (net.config().input_mode != models::InputMode::artifact) {
    Grid li = ctphys::li_image_for_pair(p, spectrum);
    li_t = nn::Tensor::from_vector({1, 1, li.rows, li.cols}, li.v);
  }
  nn::Tensor y = net.forward(xt, li_t);
  Grid out(x.rows, x.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.v[i] = std::clamp(y.values()[i], 0.0, 1.0);
  return out;
}

}  // namespace

// ---- checkpoint helpers ----

void save_marnet(const std::string& path, models::MARNet& net,
                 const std::string& config_hash) {
  models::Checkpoint ck;
  ck.meta = {{"kind", "marnet"},
             {"arch", marcfg_json(net.config())},
             {"config_hash", config_hash}};
  models::store_params(ck, "net.", net.params());
  ck.save(path);
}

models::MARNet load_marnet(const std::string& path) {
  models::Checkpoint ck = load_ck(path, "marnet");
  if (ck.meta.value("kind", "") != "marnet")
    throw io::CliError("data", path + ": not a reduction-network checkpoint");
  Rng scratch(0);
  models::MARNet net(marcfg_from_json(ck.meta.at("arch")), scratch);
  nn::ParamList ps = net.params();
  models::restore_params(ck, "net.", ps);
  return net;
}

void save_cqanet(const std::string& path, models::CQANet& net,
                 const std::string& config_hash) {
  models::Checkpoint ck;
  ck.meta = {{"kind", "cqanet"},
             {"arch", cqacfg_json(net.config())},
             {"config_hash", config_hash}};
  models::store_params(ck, "net.", net.params());
  ck.save(path);
}

models::CQANet load_cqanet(const std::string& path) {
  models::Checkpoint ck = load_ck(path, "cqanet");
  if (ck.meta.value("kind", "") != "cqanet")
    throw io::CliError("data", path + ": not a quality-network checkpoint");
  Rng scratch(0);
  models::CQANet net(cqacfg_from_json(ck.meta.at("arch")), scratch);
  nn::ParamList ps = net.params();
  models::restore_params(ck, "net.", ps);
  return net;
}

std::string params_hash(nn::ParamList params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (auto& p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.tensor.values().data(), p.tensor.values().size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- commands ----

void cmd_simulate(const io::Config& cfg, bool force) {
  const std::string root = data_dir(cfg);
  const std::string hash = cfg.hash();
  io::prepare_out_dir(root, hash, force);

  const int size = static_cast<int>(cfg.get_int("image_size", 64));
  const std::uint64_t seed = cfg.get_u64("seed", 0);

  auto sim_geom = ctphys::ScanGeometry::desk_default(
      size, static_cast<int>(cfg.get_int("sim.angles", 90)),
      static_cast<int>(cfg.get_int("sim.detectors", 96)));
  auto cli_geom = ctphys::ScanGeometry::desk_default(
      size, static_cast<int>(cfg.get_int("cli.angles", 90)),
      static_cast<int>(cfg.get_int("cli.detectors", 80)));
  auto sim_spec = ctphys::SpectrumModel::simulated_default();
  auto cli_spec = ctphys::SpectrumModel::clinical_default();

  struct Plan {
    const char* split;
    int count;
    ctphys::DomainTag tag;
    std::uint64_t seed_off;
  };
  const Plan plans[5] = {
      {"sim_train", static_cast<int>(cfg.get_int("sim.train_count", 32)),
       ctphys::DomainTag::simulated, 1000},
      {"sim_eval", static_cast<int>(cfg.get_int("sim.eval_count", 8)),
       ctphys::DomainTag::simulated, 2000},
      {"cli_train", static_cast<int>(cfg.get_int("cli.train_count", 32)),
       ctphys::DomainTag::clinical, 3000},
      {"cli_eval", static_cast<int>(cfg.get_int("cli.eval_count", 8)),
       ctphys::DomainTag::clinical, 4000},
      {"cqa", static_cast<int>(cfg.get_int("cqa.count", 64)),
       ctphys::DomainTag::simulated, 5000},
  };

  for (const auto& plan : plans) {
    const bool simulated = plan.tag == ctphys::DomainTag::simulated;
    io::SplitMeta meta;
    meta.split = plan.split;
    meta.domain = plan.tag;
    meta.geometry = simulated ? sim_geom : cli_geom;
    meta.spectrum = simulated ? sim_spec : cli_spec;
    meta.seed = seed + plan.seed_off;
    meta.config_hash = hash;
    auto pairs = synth_split(plan.count, meta.seed, meta.spectrum,
                             meta.geometry, plan.tag);
    io::save_split(root + "/" + plan.split, meta, pairs);

    if (std::strcmp(plan.split, "cqa") == 0) {
      // oracle labels for the annotation set: scored artifact images plus
      // rule-labeled clean images
      std::vector<cqa::AnnotationRecord> recs;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "cqa_%05zu", i);
        recs.push_back({std::string(id) + "_artifact",
                        cqa::quality_oracle(pairs[i].artifact_image,
                                            pairs[i].clean_image,
                                            pairs[i].roi_mask),
                        cqa::Provenance::oracle_paired});
        recs.push_back({std::string(id) + "_clean", 10,
                        cqa::Provenance::oracle_rule});
      }
      cqa::write_annotations_jsonl(root + "/cqa/annotations.jsonl", recs);
    }
  }
}

void cmd_train_cqa(const io::Config& cfg, bool force) {
  const std::string out = cfg.get_str("out_dir") + "/cqa";
  const std::string hash = cfg.hash();
  io::LoadedSplit data = load_required(data_dir(cfg), "cqa");
  io::prepare_out_dir(out, hash, force);

  cqa::CqaTrainConfig tc;
  tc.arch = cqa_arch(cfg);
  tc.epochs = static_cast<int>(cfg.get_int("cqa.epochs", 20));
  tc.lr = cfg.get_double("cqa.lr", tc.lr);
  tc.batch = static_cast<int>(cfg.get_int("cqa.batch", tc.batch));
  tc.tau = cfg.get_double("cqa.tau", tc.tau);
  tc.lambda_scl = cfg.get_double("cqa.lambda_scl", tc.lambda_scl);
  tc.bank_capacity =
      static_cast<std::size_t>(cfg.get_int("cqa.bank_capacity", 300));
  tc.use_dqaug = cfg.get_bool("cqa.dqaug", true);
  tc.dqaug_fraction = cfg.get_double("cqa.dqaug_fraction", tc.dqaug_fraction);
  tc.val_fraction = cfg.get_double("cqa.val_fraction", tc.val_fraction);
  tc.seed = cfg.get_u64("seed", 0);
  tc.log_csv = out + "/log.csv";

  // warm starts of a small reduction net supply the moderate-quality
  // augmentation sources: the epoch-1 snapshot, a mid-length replay and the
  // final state cover the quality range the scorer must resolve
  selftrain::PretrainResult moderate_src, moderate_mid;
  if (tc.use_dqaug && cfg.get_bool("cqa.moderate", true)) {
    selftrain::RiseTrainConfig pc;
    pc.arch = mar_arch(cfg);
    pc.warm_epochs =
        static_cast<int>(cfg.get_int("cqa.moderate_epochs", 4));
    pc.seed = tc.seed;
    if (pc.arch.input_mode != models::InputMode::artifact)
      pc.sim_spectrum = &data.meta.spectrum;
    moderate_src = selftrain::pretrain_supervised(data.pairs, pc);
    pc.warm_epochs = std::max(1, pc.warm_epochs / 2);
    moderate_mid = selftrain::pretrain_supervised(data.pairs, pc);
    tc.undertrained = {&moderate_src.undertrained, &moderate_mid.student,
                       &moderate_src.student};
    tc.spectrum = &data.meta.spectrum;
  }

  cqa::CqaTrainResult res = cqa::train_cqa(data.pairs, tc);
  save_cqanet(out + "/checkpoint.ck", res.net, hash);
  cqa::write_annotations_jsonl(out + "/annotations.jsonl", res.annotations);

  json summary{{"final_srcc", res.final_srcc},
               {"final_plcc", res.final_plcc},
               {"dqaug_invocations", res.dqaug_invocations},
               {"config_hash", hash}};
  std::ofstream(out + "/summary.json") << summary.dump(2) << '\n';
}

void cmd_train_mar(const io::Config& cfg, bool force) {
  const std::string out = cfg.get_str("out_dir") + "/mar";
  const std::string hash = cfg.hash();
  DataBundle data = load_bundle(cfg);
  io::prepare_out_dir(out, hash, force);

  selftrain::RiseTrainConfig tc = rise_config(cfg);
  if (tc.arch.input_mode != models::InputMode::artifact) {
    tc.sim_spectrum = &data.sim_train.meta.spectrum;
    tc.cli_spectrum = &data.cli_train.meta.spectrum;
  }
  tc.stats_csv = out + "/stats.csv";

  models::CQANet cqa_net;
  const models::CQANet* cqa_ptr = nullptr;
  if (!tc.no_cqa) {
    cqa_net = load_cqanet(
        cfg.get_str("cqa.checkpoint", cfg.get_str("out_dir") + "/cqa/checkpoint.ck"));
    if (cqa_net.config().input_size != data.cli_train.meta.geometry.image_size)
      throw io::CliError("data", "quality network resolution does not match the dataset");
    cqa_ptr = &cqa_net;
  }

  models::MARNet student, teacher;
  const std::string warm_path = cfg.get_str("train.warm_checkpoint", "");
  if (!warm_path.empty() && fs::exists(warm_path)) {
    student = load_marnet(warm_path);
    teacher = selftrain::clone_net(student);
  } else {
    auto pre = selftrain::pretrain_supervised(data.sim_train.pairs, tc);
    student = std::move(pre.student);
    teacher = std::move(pre.teacher);
    save_marnet(out + "/warm.ck", student, hash);
  }

  selftrain::RiseResult res =
      selftrain::train_rise(student, teacher, cqa_ptr, data.sim_train.pairs,
                            data.cli_train.pairs, data.sim_eval.pairs,
                            data.cli_eval.pairs, tc);

  save_marnet(out + "/student.ck", student, hash);
  save_marnet(out + "/teacher.ck", teacher, hash);
  json summary{{"epochs", res.stats.size()},
               {"teacher_params", params_hash(teacher.params())},
               {"config_hash", hash}};
  std::ofstream(out + "/summary.json") << summary.dump(2) << '\n';
}

void cmd_eval(const io::Config& cfg, bool force) {
  const std::string out = cfg.get_str("out_dir") + "/eval";
  const std::string hash = cfg.hash();
  DataBundle data = load_bundle(cfg);
  io::prepare_out_dir(out, hash, force);

  const bool identity = cfg.get_bool("eval.identity", false);
  models::MARNet net;
  if (!identity)
    net = load_marnet(
        cfg.get_str("eval.checkpoint", cfg.get_str("out_dir") + "/mar/student.ck"));

  models::CQANet cqa_net;
  bool have_cqa = false;
  const std::string cqa_path =
      cfg.get_str("cqa.checkpoint", cfg.get_str("out_dir") + "/cqa/checkpoint.ck");
  if (cfg.get_bool("eval.use_cqa", fs::exists(cqa_path))) {
    cqa_net = load_cqanet(cqa_path);
    have_cqa = true;
  }

  std::vector<metrics::SampleMetrics> rows;
  struct DomainAgg {
    std::string name;
    double psnr = 0, ssim = 0, mae = 0, cqa = 0;
    int n = 0;
  };
  std::vector<DomainAgg> aggs;
  for (const io::LoadedSplit* split : {&data.sim_eval, &data.cli_eval}) {
    DomainAgg agg;
    agg.name = io::to_string(split->meta.domain);
    for (std::size_t i = 0; i < split->pairs.size(); ++i) {
      const auto& p = split->pairs[i];
      Grid pred = identity ? p.artifact_image
                           : predict_clipped(net, p, split->meta.spectrum);
      metrics::SampleMetrics m;
      m.sample_id = split->ids[i];
      m.domain = agg.name;
      m.psnr = metrics::psnr(pred, p.clean_image, p.metal_mask);
      m.ssim = metrics::ssim(pred, p.clean_image, p.metal_mask);
      m.mae = metrics::mae(pred, p.clean_image, p.roi_mask);
      if (have_cqa)
        m.cqa_quality = metrics::cqa_quality_metric(cqa_net, {pred});
      rows.push_back(m);
      if (std::isfinite(m.psnr)) agg.psnr += m.psnr;
      agg.ssim += m.ssim;
      agg.mae += m.mae;
      agg.cqa += m.cqa_quality;
      ++agg.n;
    }
    if (agg.n > 0) {
      agg.psnr /= agg.n;
      agg.ssim /= agg.n;
      agg.mae /= agg.n;
      agg.cqa /= agg.n;
    }
    aggs.push_back(agg);
  }

  metrics::write_report_csv(out + "/report.csv", rows);
  std::ofstream os(out + "/summary.txt", std::ios::trunc);
  os << "domain      n   psnr_db   ssim     mae      cqa\n";
  char line[128];
  for (const auto& a : aggs) {
    std::snprintf(line, sizeof(line), "%-10s %3d  %8.3f  %6.4f  %7.5f  %6.3f\n",
                  a.name.c_str(), a.n, a.psnr, a.ssim, a.mae, a.cqa);
    os << line;
  }
  os << "config " << hash << '\n';
}

void cmd_sweep_q(const io::Config& cfg, bool force) {
  const std::string out = cfg.get_str("out_dir") + "/sweep";
  const std::string hash = cfg.hash();
  DataBundle data = load_bundle(cfg);
  io::prepare_out_dir(out, hash, force);

  selftrain::RiseTrainConfig base = rise_config(cfg);
  if (base.arch.input_mode != models::InputMode::artifact) {
    base.sim_spectrum = &data.sim_train.meta.spectrum;
    base.cli_spectrum = &data.cli_train.meta.spectrum;
  }
  models::CQANet cqa_net = load_cqanet(
      cfg.get_str("cqa.checkpoint", cfg.get_str("out_dir") + "/cqa/checkpoint.ck"));

  // one warm start shared by every row
  auto pre = selftrain::pretrain_supervised(data.sim_train.pairs, base);
  save_marnet(out + "/warm.ck", pre.student, hash);

  const double ranges[5][2] = {{1, 4}, {4, 7}, {7, 10}, {9, 10}, {1, 10}};
  std::ofstream table(out + "/sweep.csv", std::ios::trunc);
  table << "q_lower,q_upper,psnr_out,ssim_out,cqa_out,accepted_final\n";
  std::ofstream dyn(out + "/dynamics.csv", std::ios::trunc);
  dyn << "q_lower,q_upper,epoch,accepted_count,mean_pseudo_quality\n";

  for (const auto& r : ranges) {
    selftrain::RiseTrainConfig tc = base;
    tc.quality_range = selftrain::QualityRange(r[0], r[1]);
    tc.stats_csv.clear();
    models::MARNet student = selftrain::clone_net(pre.student);
    models::MARNet teacher = selftrain::clone_net(pre.student);
    auto res = selftrain::train_rise(student, teacher, &cqa_net,
                                     data.sim_train.pairs, data.cli_train.pairs,
                                     {}, data.cli_eval.pairs, tc);
    const auto& last = res.stats.back();
    table << r[0] << ',' << r[1] << ',' << last.eval_psnr_out << ','
          << last.eval_ssim_out << ',' << last.eval_cqa_out << ','
          << last.accepted_count << '\n';
    for (const auto& st : res.stats)
      dyn << r[0] << ',' << r[1] << ',' << st.epoch << ',' << st.accepted_count
          << ',' << st.mean_pseudo_quality << '\n';
  }
}

}  // namespace risemar::cli
