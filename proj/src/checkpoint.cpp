#include "bihand/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace bihand {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

constexpr std::size_t kMagicBytes = 8;
constexpr char kBlobSuffix[] = ".gcpt";

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos, const fs::path& path) {
  if (pos + sizeof(T) > buf.size()) {
    throw CheckpointError("tensor blob '" + path.string() + "' is truncated");
  }
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write '" + path.string() + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

}  // namespace

void save_tensor(const Matrix& m, const fs::path& path) {
  std::string buf(kTensorMagic, kMagicBytes);
  put<std::uint32_t>(buf, 2);
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put<float>(buf, static_cast<float>(m.data()[i]));
  write_file(path, buf);
}

Matrix load_tensor(const fs::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < kMagicBytes || buf.compare(0, kMagicBytes, kTensorMagic) != 0) {
    throw CheckpointError("tensor blob '" + path.string() + "' has a bad magic");
  }
  std::size_t pos = kMagicBytes;
  const auto rank = take<std::uint32_t>(buf, pos, path);
  if (rank > 2) {
    throw CheckpointError("tensor blob '" + path.string() + "' has unsupported rank " +
                          std::to_string(rank));
  }
  std::vector<std::uint64_t> dims;
  for (std::uint32_t d = 0; d < rank; ++d) dims.push_back(take<std::uint64_t>(buf, pos, path));
  const std::uint64_t rows = rank == 2 ? dims[0] : 1;
  const std::uint64_t cols = rank == 2 ? dims[1] : (rank == 1 ? dims[0] : 1);
  if (buf.size() - pos != rows * cols * sizeof(float)) {
    throw CheckpointError("tensor blob '" + path.string() + "' payload size does not match shape");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = take<float>(buf, pos, path);
  return m;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  fs::create_directories(dir);
  // Drop blobs left by an earlier save so the directory matches the manifest.
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == kBlobSuffix) fs::remove(entry.path());
  }
  json manifest = ckpt.manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  json index = json::object();
  for (const auto& [name, m] : ckpt.tensors) {
    const std::string file = name + kBlobSuffix;
    save_tensor(m, dir / file);
    index[name] = {{"file", file}, {"shape", {m.rows(), m.cols()}}};
  }
  manifest["tensors"] = index;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("checkpoint '" + dir.string() + "' not found");
  Checkpoint ckpt;
  try {
    ckpt.manifest = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw CheckpointError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
  }
  const json& version = ckpt.manifest.value("format_version", json());
  if (!version.is_number_integer() || version.get<int>() != kCheckpointFormatVersion) {
    throw CheckpointError("checkpoint format version " + version.dump() + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (!ckpt.manifest.contains("tensors") || !ckpt.manifest["tensors"].is_object()) {
    throw CheckpointError("checkpoint manifest has no tensor index");
  }
  for (const auto& [name, entry] : ckpt.manifest["tensors"].items()) {
    Matrix m = load_tensor(dir / entry.at("file").get<std::string>());
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols()) {
      throw CheckpointError("tensor '" + name + "' shape disagrees with the manifest");
    }
    ckpt.tensors.emplace(name, std::move(m));
  }
  return ckpt;
}

void export_parameters(const nn::ParameterStore& store, const std::string& prefix,
                       Checkpoint& ckpt) {
  for (const auto& p : store.with_prefix(prefix)) ckpt.tensors[p.name] = p.var.value();
}

void import_parameters(nn::ParameterStore& store, const std::string& prefix,
                       const Checkpoint& ckpt) {
  for (auto& p : store.with_prefix(prefix)) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + p.name + "'");
    if (it->second.rows() != p.var.rows() || it->second.cols() != p.var.cols()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + std::to_string(it->second.rows()) +
                            "x" + std::to_string(it->second.cols()) + ", model expects " +
                            std::to_string(p.var.rows()) + "x" + std::to_string(p.var.cols()));
    }
    p.var.mutable_value() = it->second;
  }
}

}  // namespace bihand
