#include "risemar/io/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace risemar::io {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void parse_into(Config& cfg, std::istream& is, const std::string& base_dir,
                int depth) {
  if (depth > 16) throw CliError("config", "include chain too deep");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      fs::path inc = fs::path(base_dir) / trim(line.substr(8));
      std::ifstream sub(inc);
      if (!sub)
        throw CliError("config", "cannot open included file: " + inc.string());
      parse_into(cfg, sub, inc.parent_path().string(), depth + 1);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CliError("config", "line " + std::to_string(lineno) +
                                   ": expected key=value, got: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw CliError("config", "line " + std::to_string(lineno) + ": empty key");
    cfg.set(key, val);
  }
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CliError("config", "cannot open config file: " + path);
  Config cfg;
  parse_into(cfg, is, fs::path(path).parent_path().string(), 0);
  return cfg;
}

Config Config::from_string(const std::string& text, const std::string& base_dir) {
  std::istringstream is(text);
  Config cfg;
  parse_into(cfg, is, base_dir, 0);
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::get_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end())
    throw CliError("config", "missing required config key: " + key);
  return it->second;
}

std::string Config::get_str(const std::string& key,
                            const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

long Config::get_int(const std::string& key, long fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw CliError("config", "key " + key + ": not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw CliError("config", "key " + key + ": not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw CliError("config", "key " + key + ": not a boolean: " + it->second);
}

std::uint64_t Config::get_u64(const std::string& key,
                              std::uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw CliError("config", "key " + key + ": not an unsigned integer: " +
                                 it->second);
  }
}

std::string Config::canonical() const {
  std::string out;  // std::map already iterates in sorted key order
  for (const auto& [k, v] : kv_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string Config::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string read_stamp(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "config_hash.txt");
  if (!is) return "";
  std::string s;
  std::getline(is, s);
  return trim(s);
}

void prepare_out_dir(const std::string& dir, const std::string& config_hash,
                     bool force) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw CliError("io", "cannot create directory " + dir + ": " + ec.message());
  const bool empty = fs::is_empty(p, ec) && !ec;
  if (!empty && !force) {
    const std::string stamp = read_stamp(dir);
    if (stamp != config_hash)
      throw CliError("state",
                     "output directory " + dir +
                         " already holds results for a different config "
                         "(stamp " + (stamp.empty() ? "<none>" : stamp) +
                         ", expected " + config_hash + "); pass --force to overwrite");
  }
  std::ofstream os(p / "config_hash.txt", std::ios::trunc);
  if (!os) throw CliError("io", "cannot write stamp in " + dir);
  os << config_hash << '\n';
}

}  // namespace risemar::io
