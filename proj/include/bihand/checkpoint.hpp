#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bihand/autodiff.hpp"
#include "bihand/nn.hpp"

namespace bihand {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kTensorMagic[9] = "GCPT0001";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named tensors plus a JSON manifest. On disk: a directory with
// `manifest.json` and one `<name>.gcpt` blob per tensor. Blobs hold the
// magic, a u32 rank, u64 dims and float32 values, all little-endian.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Matrix> tensors;
};

void save_tensor(const Matrix& m, const std::filesystem::path& path);
Matrix load_tensor(const std::filesystem::path& path);

// Writes `format_version` and the tensor index into the manifest.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
// Throws CheckpointError on a format version mismatch or any unreadable blob.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies every parameter whose name starts with `prefix` into the checkpoint.
void export_parameters(const nn::ParameterStore& store, const std::string& prefix,
                       Checkpoint& ckpt);
// Overwrites matching parameters; every parameter under `prefix` must be
// present with the same shape.
void import_parameters(nn::ParameterStore& store, const std::string& prefix,
                       const Checkpoint& ckpt);

}  // namespace bihand
