#include "risemar/models/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace risemar::models {

namespace {
constexpr char kMagic[8] = {'R', 'S', 'M', 'R', 'C', 'K', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void Checkpoint::set_array(const std::string& name, std::vector<double> data) {
  for (auto& [n, d] : arrays)
    if (n == name) {
      d = std::move(data);
      return;
    }
  arrays.emplace_back(name, std::move(data));
}

const std::vector<double>* Checkpoint::find_array(const std::string& name) const {
  for (auto& [n, d] : arrays)
    if (n == name) return &d;
  return nullptr;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  nlohmann::json full = meta;
  auto& index = full["arrays"] = nlohmann::json::array();
  for (auto& [name, data] : arrays)
    index.push_back({{"name", name}, {"size", data.size()}});
  const std::string js = full.dump();
  os.write(kMagic, 8);
  write_u64(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  for (auto& [name, data] : arrays)
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kMagic, 8))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t jlen = read_u64(is);
  std::string js(jlen, '\0');
  is.read(js.data(), static_cast<std::streamsize>(jlen));
  Checkpoint ck;
  nlohmann::json full = nlohmann::json::parse(js);
  for (auto& entry : full.at("arrays")) {
    std::vector<double> data(entry.at("size").get<std::size_t>());
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    ck.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(data));
  }
  if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
  full.erase("arrays");
  ck.meta = std::move(full);
  return ck;
}

void store_params(Checkpoint& ck, const std::string& prefix,
                  const nn::ParamList& params) {
  for (auto& p : params) ck.set_array(prefix + p.name, p.tensor.values());
}

void restore_params(const Checkpoint& ck, const std::string& prefix,
                    nn::ParamList& params) {
  for (auto& p : params) {
    const auto* a = ck.find_array(prefix + p.name);
    if (!a) throw std::runtime_error("checkpoint: missing array " + prefix + p.name);
    if (a->size() != p.tensor.numel())
      throw std::runtime_error("checkpoint: size mismatch for " + prefix + p.name);
    p.tensor.values() = *a;
  }
}

void store_adam(Checkpoint& ck, const std::string& prefix, nn::Adam& opt) {
  ck.meta[prefix + "step_count"] = opt.step_count();
  const auto& ps = opt.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ck.set_array(prefix + "m." + ps[i].name, opt.m()[i]);
    ck.set_array(prefix + "v." + ps[i].name, opt.v()[i]);
  }
}

void restore_adam(const Checkpoint& ck, const std::string& prefix,
                  nn::Adam& opt) {
  opt.set_step_count(ck.meta.at(prefix + "step_count").get<long>());
  const auto& ps = opt.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto* m = ck.find_array(prefix + "m." + ps[i].name);
    const auto* v = ck.find_array(prefix + "v." + ps[i].name);
    if (!m || !v || m->size() != opt.m()[i].size() || v->size() != opt.v()[i].size())
      throw std::runtime_error("checkpoint: bad optimizer state for " + ps[i].name);
    opt.m()[i] = *m;
    opt.v()[i] = *v;
  }
}

std::string rng_state_string(Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng.engine();
  if (is.fail()) throw std::runtime_error("checkpoint: bad RNG state string");
}

}  // namespace risemar::models
