#pragma once

// Single-file model checkpoint (.lldc):
//   "LLDC" | u16 version | u64 metadata length | metadata (JSON text)
//   | u32 array count | { u32 name length | name | LLDK array }*

#include <map>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace lld {

constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Eigen::MatrixXd> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Prefixes every array name; used when several parameter stores share a file.
void merge_arrays(Checkpoint& ck, const std::string& prefix, const std::map<std::string, Eigen::MatrixXd>& arrays);
std::map<std::string, Eigen::MatrixXd> extract_arrays(const Checkpoint& ck, const std::string& prefix);

}  // namespace lld
