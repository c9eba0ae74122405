#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "bihand/checkpoint.hpp"
#include "bihand/config.hpp"
#include "bihand/metrics.hpp"
#include "bihand/motion_data.hpp"
#include "bihand/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bihand::TrainConfig config_or_default(const std::string& path) {
  return path.empty() ? bihand::TrainConfig{} : bihand::load_config(path);
}

void print(const json& line) { std::cout << line.dump() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage body-to-hand gesture prediction"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  int count = 100;
  int frames = 64;
  std::string out, config_path, data, stage1, ckpt, ckpt2, split = "test", report, ckpt1, body,
      pretrained;
  int k = 1;
  bool plot = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with a 70/10/20 split");
  synth->add_option("--seed", seed, "Random seed")->required();
  synth->add_option("--count", count, "Number of sequences")->required()->check(CLI::PositiveNumber);
  synth->add_option("--frames", frames, "Frames per sequence")->required()->check(CLI::Range(2, 1 << 20));
  synth->add_option("--out", out, "Output dataset directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Train the single-hand and two-hand autoencoders");
  pretrain->add_option("--config", config_path, "Config JSON");
  pretrain->add_option("--data", data, "Dataset directory or manifest")->required();
  pretrain->add_option("--out", out, "Checkpoint directory")->required();

  auto* train1 = app.add_subcommand("train-stage1", "Train the stage-one predictor");
  train1->add_option("--config", config_path, "Config JSON");
  train1->add_option("--data", data, "Dataset directory or manifest")->required();
  train1->add_option("--out", out, "Checkpoint directory")->required();
  train1->add_option("--pretrained", pretrained,
                     "Autoencoder checkpoint from `pretrain` (trained inline when omitted)");

  auto* train2 = app.add_subcommand("train-stage2", "Train the diversification stage");
  train2->add_option("--config", config_path, "Config JSON");
  train2->add_option("--data", data, "Dataset directory or manifest")->required();
  train2->add_option("--stage1", stage1, "Stage-one checkpoint directory")->required();
  train2->add_option("--out", out, "Checkpoint directory")->required();

  auto* eval = app.add_subcommand("eval", "Compute L2, FHD, MPJRE and optionally Diversity");
  eval->add_option("--ckpt", ckpt, "Stage-one checkpoint directory")->required();
  eval->add_option("--ckpt2", ckpt2, "Stage-two checkpoint directory");
  eval->add_option("--data", data, "Dataset directory or manifest")->required();
  eval->add_option("--split", split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--report", report, "Output report JSON")->required();

  auto* sample = app.add_subcommand("sample", "Write K diverse hand sequences for one body file");
  sample->add_option("--ckpt1", ckpt1, "Stage-one checkpoint directory")->required();
  sample->add_option("--ckpt2", ckpt2, "Stage-two checkpoint directory")->required();
  sample->add_option("--body", body, "Sequence file with at least id, speaker_id, fps, body")->required();
  sample->add_option("--k", k, "Number of samples")->required();
  sample->add_option("--seed", seed, "Base seed; sample i uses seed + i")->required();
  sample->add_option("--out", out, "Output directory")->required();
  sample->add_flag("--plot", plot, "Also write plot.svg");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto manifest = bihand::split_dataset(bihand::generate_synthetic(seed, count, frames),
                                                  bihand::SplitRatios{}, seed);
      bihand::save_manifest(manifest, out);
      print({{"event", "synth"}, {"records", manifest.size()}, {"out", out},
             {"split_hash", bihand::split_hash(manifest)}});
    } else if (*pretrain) {
      const auto cfg = config_or_default(config_path);
      const auto manifest = bihand::load_manifest(data);
      const auto ckpt_out = bihand::run_pretrain(cfg, manifest, out);
      print({{"event", "pretrain"}, {"out", out}, {"step", ckpt_out.manifest["step"]}});
    } else if (*train1) {
      const auto cfg = config_or_default(config_path);
      const auto manifest = bihand::load_manifest(data);
      bihand::StageOneOptions opts;
      if (!pretrained.empty()) opts.pretrained = fs::path(pretrained);
      const auto result = bihand::train_stage_one(cfg, manifest, out, opts);
      print({{"event", "train-stage1"}, {"out", out}, {"step", result.manifest["step"]}});
    } else if (*train2) {
      const auto cfg = config_or_default(config_path);
      const auto manifest = bihand::load_manifest(data);
      const auto result = bihand::train_stage_two(cfg, manifest, stage1, out);
      print({{"event", "train-stage2"}, {"out", out}, {"step", result.manifest["step"]}});
    } else if (*eval) {
      const auto manifest = bihand::load_manifest(data);
      std::optional<fs::path> second;
      if (!ckpt2.empty()) second = fs::path(ckpt2);
      const json doc = bihand::to_json(bihand::evaluate(ckpt, second, manifest, split));
      std::ofstream file(report, std::ios::trunc);
      if (!file) throw std::runtime_error("cannot write report '" + report + "'");
      file << doc.dump(2) << "\n";
      print(doc);
    } else if (*sample) {
      const auto files = bihand::sample_diverse(ckpt1, ckpt2, body, k, seed, out, plot);
      json names = json::array();
      for (const auto& f : files) names.push_back(f.string());
      print({{"event", "sample"}, {"files", names}});
    }
  } catch (const std::exception& e) {
    print({{"event", "error"}, {"message", e.what()}});
    return 1;
  }
  return 0;
}
