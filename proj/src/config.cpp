#include "bihand/config.hpp"

#include <fstream>
#include <set>

#include "bihand/nn.hpp"

namespace bihand {

using nlohmann::json;

namespace {

// Reads `key` into `field` when present and records it as known.
template <typename T>
void read(const json& obj, const char* key, T& field, std::set<std::string>& known) {
  known.insert(key);
  if (!obj.contains(key)) return;
  try {
    field = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

const json& section(const json& doc, const char* key, std::set<std::string>& known) {
  static const json empty = json::object();
  known.insert(key);
  if (!doc.contains(key)) return empty;
  if (!doc.at(key).is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return doc.at(key);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(lr > 0.0, "lr");
  positive(epochs > 0, "epochs");
  positive(batch_size > 0, "batch_size");
  positive(grad_clip >= 0.0, "grad_clip");
  positive(disc_lr_scale > 0.0, "disc_lr_scale");
  positive(model.channels > 0, "model.channels");
  positive(model.heads > 0, "model.heads");
  positive(model.ffn_width > 0, "model.ffn_width");
  positive(model.frames > 0, "model.frames");
  positive(model.disc_width > 0, "model.disc_width");
  if (model.channels % model.heads != 0) {
    throw ConfigError("model.channels must be divisible by model.heads");
  }
  if (model.disc_kernel <= 0 || model.disc_kernel % 2 == 0) {
    throw ConfigError("model.disc_kernel must be odd and positive");
  }
  positive(memory.slots > 0, "memory.slots");
  positive(memory.proto_slots > 0, "memory.proto_slots");
  if (memory.gamma < 0.0 || memory.gamma > 1.0) throw ConfigError("memory.gamma must lie in [0, 1]");
  positive(mcmc.steps >= 1, "mcmc.steps");
  positive(mcmc.delta_prior > 0.0, "mcmc.delta_prior");
  positive(mcmc.delta_posterior > 0.0, "mcmc.delta_posterior");
  positive(mcmc.sigma_w > 0.0, "mcmc.sigma_w");
  positive(mcmc.sigma_eps > 0.0, "mcmc.sigma_eps");
  positive(mcmc.dim > 0, "mcmc.dim");
  positive(mcmc.header_hidden > 0, "mcmc.header_hidden");
  positive(pretrain.steps >= 0, "pretrain.steps");
  positive(pretrain.lr > 0.0, "pretrain.lr");
  positive(stage2.hidden > 0, "stage2.hidden");
  if (stage2.smooth_window < 1 || stage2.smooth_window % 2 == 0) {
    throw ConfigError("stage2.smooth_window must be odd and positive");
  }
  if (stage2.diversity_samples < 2) throw ConfigError("stage2.diversity_samples must be >= 2");
  positive(stage2.diversity_pairs > 0, "stage2.diversity_pairs");
  const auto& s = data.train_split;
  if (s != "train" && s != "val" && s != "test" && s != "all") {
    throw ConfigError("data.train_split must be train, val, test or all");
  }
}

TrainConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig cfg;
  std::set<std::string> known;
  read(doc, "lr", cfg.lr, known);
  read(doc, "beta1", cfg.beta1, known);
  read(doc, "beta2", cfg.beta2, known);
  read(doc, "epochs", cfg.epochs, known);
  read(doc, "batch_size", cfg.batch_size, known);
  read(doc, "seed", cfg.seed, known);
  read(doc, "grad_clip", cfg.grad_clip, known);
  read(doc, "disc_lr_scale", cfg.disc_lr_scale, known);

  {
    const json& m = section(doc, "model", known);
    std::set<std::string> k;
    read(m, "channels", cfg.model.channels, k);
    read(m, "heads", cfg.model.heads, k);
    read(m, "ffn_width", cfg.model.ffn_width, k);
    read(m, "frames", cfg.model.frames, k);
    read(m, "disc_width", cfg.model.disc_width, k);
    read(m, "disc_kernel", cfg.model.disc_kernel, k);
    reject_unknown(m, k, "model.");
  }
  {
    const json& m = section(doc, "memory", known);
    std::set<std::string> k;
    read(m, "slots", cfg.memory.slots, k);
    read(m, "gamma", cfg.memory.gamma, k);
    read(m, "proto_slots", cfg.memory.proto_slots, k);
    read(m, "proto_ema", cfg.memory.proto_ema, k);
    reject_unknown(m, k, "memory.");
  }
  {
    const json& m = section(doc, "mcmc", known);
    std::set<std::string> k;
    read(m, "steps", cfg.mcmc.steps, k);
    read(m, "delta_prior", cfg.mcmc.delta_prior, k);
    read(m, "delta_posterior", cfg.mcmc.delta_posterior, k);
    read(m, "sigma_w", cfg.mcmc.sigma_w, k);
    read(m, "sigma_eps", cfg.mcmc.sigma_eps, k);
    read(m, "dim", cfg.mcmc.dim, k);
    read(m, "header_hidden", cfg.mcmc.header_hidden, k);
    reject_unknown(m, k, "mcmc.");
  }
  {
    const json& m = section(doc, "pretrain", known);
    std::set<std::string> k;
    read(m, "steps", cfg.pretrain.steps, k);
    read(m, "batch", cfg.pretrain.batch, k);
    read(m, "lr", cfg.pretrain.lr, k);
    reject_unknown(m, k, "pretrain.");
  }
  {
    const json& m = section(doc, "stage2", known);
    std::set<std::string> k;
    read(m, "hidden", cfg.stage2.hidden, k);
    read(m, "smooth_window", cfg.stage2.smooth_window, k);
    read(m, "diversity_samples", cfg.stage2.diversity_samples, k);
    read(m, "diversity_pairs", cfg.stage2.diversity_pairs, k);
    reject_unknown(m, k, "stage2.");
  }
  {
    const json& m = section(doc, "data", known);
    std::set<std::string> k;
    read(m, "train_split", cfg.data.train_split, k);
    reject_unknown(m, k, "data.");
  }
  reject_unknown(doc, known, "");
  cfg.validate();
  return cfg;
}

json config_to_json(const TrainConfig& cfg) {
  json doc;
  doc["lr"] = cfg.lr;
  doc["beta1"] = cfg.beta1;
  doc["beta2"] = cfg.beta2;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["seed"] = cfg.seed;
  doc["grad_clip"] = cfg.grad_clip;
  doc["disc_lr_scale"] = cfg.disc_lr_scale;
  doc["model"] = {{"channels", cfg.model.channels},   {"heads", cfg.model.heads},
                  {"ffn_width", cfg.model.ffn_width}, {"frames", cfg.model.frames},
                  {"disc_width", cfg.model.disc_width}, {"disc_kernel", cfg.model.disc_kernel}};
  doc["memory"] = {{"slots", cfg.memory.slots},
                   {"gamma", cfg.memory.gamma},
                   {"proto_slots", cfg.memory.proto_slots},
                   {"proto_ema", cfg.memory.proto_ema}};
  doc["mcmc"] = {{"steps", cfg.mcmc.steps},
                 {"delta_prior", cfg.mcmc.delta_prior},
                 {"delta_posterior", cfg.mcmc.delta_posterior},
                 {"sigma_w", cfg.mcmc.sigma_w},
                 {"sigma_eps", cfg.mcmc.sigma_eps},
                 {"dim", cfg.mcmc.dim},
                 {"header_hidden", cfg.mcmc.header_hidden}};
  doc["pretrain"] = {{"steps", cfg.pretrain.steps},
                     {"batch", cfg.pretrain.batch},
                     {"lr", cfg.pretrain.lr}};
  doc["stage2"] = {{"hidden", cfg.stage2.hidden},
                   {"smooth_window", cfg.stage2.smooth_window},
                   {"diversity_samples", cfg.stage2.diversity_samples},
                   {"diversity_pairs", cfg.stage2.diversity_pairs}};
  doc["data"] = {{"train_split", cfg.data.train_split}};
  return doc;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace bihand
