#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace risemar::io {

// Error with a stable one-word category for machine-parsable CLI output.
// Categories in use: usage, config, io, data, state, internal.
class CliError : public std::runtime_error {
 public:
  CliError(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

// Flat key=value experiment configuration. A line `include <path>` pulls in
// another file first (path relative to the including file), so keys set
// afterwards override the included values — ablation files are diffs
// against a base file.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text,
                            const std::string& base_dir = ".");

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key) const;  // throws if absent
  std::string get_str(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  // FNV-1a over the sorted canonical "key=value" serialization, as 16 hex
  // digits; insertion order does not matter.
  std::string hash() const;
  std::string canonical() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Creates `dir` (and parents). A non-empty existing directory is accepted
// only when its stamp matches `config_hash` or `force` is set; the stamp is
// (re)written either way.
void prepare_out_dir(const std::string& dir, const std::string& config_hash,
                     bool force);
std::string read_stamp(const std::string& dir);  // "" when absent

}  // namespace risemar::io
