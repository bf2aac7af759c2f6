#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lld::pipeline {

enum class KeyType { integer, real, text, boolean, real_list };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string toy;    // "default" preset value
  std::string paper;  // "paper" preset value
  std::string help;
};

const std::vector<KeySpec>& key_schema();

// Flat typed key=value configuration with dotted namespaces.
class RunConfig {
 public:
  // preset: "default" or "paper"
  static RunConfig preset(const std::string& name);
  // A preset name, or a file of key = value lines ('#' comments). A file may
  // start from another preset with `preset = paper`.
  static RunConfig load(const std::string& preset_or_path);

  void set(const std::string& key, const std::string& value);
  // Parses "key=value".
  void set_assignment(const std::string& kv);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_list(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& preset_name() const { return preset_; }

  // FNV-1a over the sorted "key=value" lines; independent of insertion order.
  std::uint64_t hash() const;
  std::string hash_hex() const;
  std::string dump() const;

 private:
  std::string preset_ = "default";
  std::map<std::string, std::string> values_;
};

}  // namespace lld::pipeline
