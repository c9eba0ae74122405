#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bihand/checkpoint.hpp"
#include "bihand/config.hpp"
#include "bihand/diversify.hpp"
#include "bihand/hand_autoencoder.hpp"
#include "bihand/metrics.hpp"
#include "bihand/motion_data.hpp"
#include "bihand/stage_one.hpp"

namespace bihand {

// Raised when a loss or parameter turns non-finite. The last good state has
// already been written to the run's output directory.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Records of a split label, or every record for "all".
std::vector<const SequenceRecord*> select_records(const DatasetManifest& manifest,
                                                  const std::string& split);

// Single-hand autoencoder (`ae.single`, 45 -> C) and two-hand extractor
// (`ae.phi`, 90 -> C) sharing one parameter store.
struct Autoencoders {
  explicit Autoencoders(const TrainConfig& cfg);

  nn::ParameterStore store;
  HandAutoencoder single;
  HandAutoencoder phi;
};

// Stage-one generator and discriminator plus the frozen autoencoders.
struct StageOneBundle {
  explicit StageOneBundle(const TrainConfig& cfg);

  TrainConfig cfg;
  nn::ParameterStore store;
  HandAutoencoder single;
  HandAutoencoder phi;
  std::unique_ptr<StageOneModel> model;
};

// Stage-two networks plus the prototype bank.
struct StageTwoBundle {
  StageTwoBundle(const TrainConfig& cfg, Matrix proto_init);

  TrainConfig cfg;
  nn::ParameterStore store;
  GenerationModel generator;
  SamplingHeader header;
  MemoryBank proto;

  LangevinConfig langevin() const;
};

struct PretrainResult {
  std::vector<double> single_losses;
  std::vector<double> phi_losses;
};

// Trains both autoencoders on the configured training split.
PretrainResult pretrain_autoencoders(const TrainConfig& cfg, const DatasetManifest& manifest,
                                     nn::ParameterStore& store, HandAutoencoder& single,
                                     HandAutoencoder& phi);

Checkpoint run_pretrain(const TrainConfig& cfg, const DatasetManifest& manifest,
                        const std::filesystem::path& out);

struct StageOneOptions {
  // Pretrained autoencoders; when absent they are trained first.
  std::optional<std::filesystem::path> pretrained;
  // Stop once this many optimizer steps ran (0: run all epochs).
  long max_steps = 0;
};

// Alternating discriminator / generator updates, one each per batch, with
// memory EMA writes after every generator step. Writes the checkpoint and a
// per-epoch `log.jsonl` into `out`.
Checkpoint train_stage_one(const TrainConfig& cfg, const DatasetManifest& manifest,
                           const std::filesystem::path& out, const StageOneOptions& opts = {});

// Builds the prototype bank from the stage-one extractor, then trains the
// generation model and sampling header with short-run prior and posterior
// chains per frame.
Checkpoint train_stage_two(const TrainConfig& cfg, const DatasetManifest& manifest,
                           const std::filesystem::path& stage1, const std::filesystem::path& out);

std::unique_ptr<StageOneBundle> load_stage_one(const std::filesystem::path& dir);
std::unique_ptr<StageTwoBundle> load_stage_two(const std::filesystem::path& dir);

// Metrics of `predicted` against `target` with `phi` as the feature
// extractor. Diversity is left empty.
MetricReport evaluate_predictions(const std::vector<const HandPoseSequence*>& target,
                                  const std::vector<const HandPoseSequence*>& predicted,
                                  const HandAutoencoder& phi);

// K smoothed stage-two samples of one initial prediction; sample i uses
// prior chains seeded with seed + i.
std::vector<HandPoseSequence> diverse_samples(const StageTwoBundle& stage2,
                                              const HandAutoencoder& phi,
                                              const HandPoseSequence& initial, int k,
                                              std::uint64_t seed);

// Stage-one metrics on a split; with a stage-two checkpoint, also the mean
// per-input Diversity over K samples each.
MetricReport evaluate(const std::filesystem::path& ckpt1,
                      const std::optional<std::filesystem::path>& ckpt2,
                      const DatasetManifest& manifest, const std::string& split);

// Stage-one prediction for the body file, K diversified samples written as
// sequence files `sample_XX.json` into `out`, plus `plot.svg` on request.
std::vector<std::filesystem::path> sample_diverse(const std::filesystem::path& ckpt1,
                                                  const std::filesystem::path& ckpt2,
                                                  const std::filesystem::path& body_file, int k,
                                                  std::uint64_t seed,
                                                  const std::filesystem::path& out, bool plot);

}  // namespace bihand
