#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace bihand {

struct ModelConfig {
  int channels = 128;
  int heads = 4;
  int ffn_width = 256;
  int frames = 64;
  int disc_width = 64;
  int disc_kernel = 5;
};

struct MemoryConfig {
  int slots = 512;
  double gamma = 0.8;
  int proto_slots = 512;
  bool proto_ema = true;
};

struct McmcConfig {
  int steps = 6;
  double delta_prior = 0.4;
  double delta_posterior = 0.1;
  double sigma_w = 1.0;
  double sigma_eps = 1.0;
  int dim = 32;
  int header_hidden = 64;
};

struct PretrainConfig {
  int steps = 2000;
  int batch = 256;
  double lr = 0.003;
};

struct StageTwoConfig {
  int hidden = 256;
  int smooth_window = 5;
  int diversity_samples = 10;
  int diversity_pairs = 500;
};

struct DataConfig {
  // "train", "val", "test" or "all".
  std::string train_split = "train";
};

struct TrainConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 30;
  int batch_size = 64;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  // Discriminator learning rate as a multiple of lr.
  double disc_lr_scale = 0.1;
  ModelConfig model;
  MemoryConfig memory;
  McmcConfig mcmc;
  PretrainConfig pretrain;
  StageTwoConfig stage2;
  DataConfig data;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace bihand
