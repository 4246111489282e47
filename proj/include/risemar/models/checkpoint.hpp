#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "risemar/core/random.hpp"
#include "risemar/nn/layers.hpp"
#include "risemar/nn/optim.hpp"

namespace risemar::models {

// Single-file archive: a JSON metadata block (architecture config, epoch,
// RNG state, free-form extras) followed by named double arrays stored raw.
// Doubles round-trip bit-exactly, so load(save(x)) reproduces forward passes.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  void set_array(const std::string& name, std::vector<double> data);
  const std::vector<double>* find_array(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Copies every parameter in `params` into the checkpoint under its name.
void store_params(Checkpoint& ck, const std::string& prefix,
                  const nn::ParamList& params);
// Writes checkpoint arrays back into `params`; throws if a name is missing
// or a size differs.
void restore_params(const Checkpoint& ck, const std::string& prefix,
                    nn::ParamList& params);

void store_adam(Checkpoint& ck, const std::string& prefix, nn::Adam& opt);
void restore_adam(const Checkpoint& ck, const std::string& prefix,
                  nn::Adam& opt);

std::string rng_state_string(Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace risemar::models
