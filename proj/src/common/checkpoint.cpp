#include "common/checkpoint.hpp"

#include <fstream>

#include "common/binary_array.hpp"
#include "common/error.hpp"

namespace lld {

namespace {

void put_u(std::ostream& os, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    require(c != EOF, Errc::io, "truncated checkpoint");
    v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io, "cannot write checkpoint " + path);
  os.write("LLDC", 4);
  put_u(os, kCheckpointVersion, 2);
  const std::string meta = ck.meta.dump();
  put_u(os, meta.size(), 8);
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u(os, ck.arrays.size(), 4);
  for (const auto& [name, m] : ck.arrays) {
    put_u(os, name.size(), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    NdArray a;
    a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    a.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) a.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    write_array(os, a);
  }
  require(static_cast<bool>(os), Errc::io, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io, "cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  require(is && std::string(magic, 4) == "LLDC", Errc::io, "not a checkpoint file: " + path);
  const auto version = get_u(is, 2);
  require(version == kCheckpointVersion, Errc::io, "unsupported checkpoint version");
  const auto mlen = get_u(is, 8);
  std::string meta(mlen, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(mlen));
  require(static_cast<bool>(is), Errc::io, "truncated checkpoint metadata");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const std::exception& e) {
    fail(Errc::io, std::string("corrupt checkpoint metadata: ") + e.what());
  }
  const auto count = get_u(is, 4);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto nlen = get_u(is, 4);
    std::string name(nlen, '\0');
    is.read(name.data(), static_cast<std::streamsize>(nlen));
    NdArray a = read_array(is);
    require(a.dims.size() == 2, Errc::io, "checkpoint arrays must be rank 2");
    Eigen::MatrixXd m(a.dims[0], a.dims[1]);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = a.data[static_cast<std::size_t>(i * m.cols() + j)];
    ck.arrays[name] = std::move(m);
  }
  return ck;
}

void merge_arrays(Checkpoint& ck, const std::string& prefix, const std::map<std::string, Eigen::MatrixXd>& arrays) {
  for (const auto& [k, v] : arrays) ck.arrays[prefix + k] = v;
}

std::map<std::string, Eigen::MatrixXd> extract_arrays(const Checkpoint& ck, const std::string& prefix) {
  std::map<std::string, Eigen::MatrixXd> out;
  for (const auto& [k, v] : ck.arrays)
    if (k.compare(0, prefix.size(), prefix) == 0) out[k.substr(prefix.size())] = v;
  return out;
}

}  // namespace lld
