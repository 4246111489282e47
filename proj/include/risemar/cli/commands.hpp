#pragma once

#include <string>

#include "risemar/io/config.hpp"
#include "risemar/models/checkpoint.hpp"
#include "risemar/models/cqanet.hpp"
#include "risemar/models/marnet.hpp"

namespace risemar::cli {

// Each command reads everything it needs from the experiment config and
// returns normally on success; failures surface as io::CliError with a
// stable category.
void cmd_simulate(const io::Config& cfg, bool force);
void cmd_train_cqa(const io::Config& cfg, bool force);
void cmd_train_mar(const io::Config& cfg, bool force);
void cmd_eval(const io::Config& cfg, bool force);
void cmd_sweep_q(const io::Config& cfg, bool force);

// Checkpoint plumbing shared by the commands and the tests: the architecture
// config rides in the metadata so a network can be rebuilt from the file
// alone.
void save_marnet(const std::string& path, models::MARNet& net,
                 const std::string& config_hash);
models::MARNet load_marnet(const std::string& path);
void save_cqanet(const std::string& path, models::CQANet& net,
                 const std::string& config_hash);
models::CQANet load_cqanet(const std::string& path);

// Stable content hash of a parameter list (used for frozen-teacher and
// shared-warm-start equality checks).
std::string params_hash(nn::ParamList params);

}  // namespace risemar::cli
