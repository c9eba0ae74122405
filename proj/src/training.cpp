#include "bihand/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bihand/losses.hpp"
#include "bihand/plot.hpp"

namespace bihand {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent, reproducible sub-seeds from the configured seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedTag : std::uint64_t {
  kTagPretrainSingle = 1,
  kTagPretrainPhi,
  kTagStageOneOrder,
  kTagStageTwoInit,
  kTagStageTwoOrder,
  kTagPrototype,
  kTagChains = 1000,
};

class JsonLog {
 public:
  explicit JsonLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write log '" + path.string() + "'");
  }
  void write(const json& entry) { out_ << entry.dump() << "\n" << std::flush; }

 private:
  std::ofstream out_;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

json base_manifest(const std::string& kind, const TrainConfig& cfg, long step,
                   const std::string& hash) {
  return json{{"kind", kind}, {"config", config_to_json(cfg)}, {"step", step}, {"split_hash", hash}};
}

Checkpoint load_kind(const fs::path& dir, const std::string& kind) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.manifest.value("kind", std::string()) != kind) {
    throw CheckpointError("'" + dir.string() + "' is not a " + kind + " checkpoint");
  }
  return ckpt;
}

std::vector<const SequenceRecord*> training_records(const TrainConfig& cfg,
                                                    const DatasetManifest& manifest) {
  auto records = select_records(manifest, cfg.data.train_split);
  if (records.empty()) {
    throw ValidationError("split '" + cfg.data.train_split + "' has no records to train on");
  }
  return records;
}

void require_frames(const std::vector<const SequenceRecord*>& records, int frames) {
  for (const auto* r : records) {
    if (r->body.length() != frames) {
      throw ValidationError("record '" + r->id + "' has " + std::to_string(r->body.length()) +
                            " frames, model.frames is " + std::to_string(frames));
    }
  }
}

Matrix stack_hands(const std::vector<const SequenceRecord*>& records) {
  std::vector<const Matrix*> frames;
  for (const auto* r : records) frames.push_back(&r->hands.frames);
  return stack_frames(frames);
}

Matrix stack_bodies(const std::vector<const SequenceRecord*>& records) {
  std::vector<const Matrix*> frames;
  for (const auto* r : records) frames.push_back(&r->body.frames);
  return stack_frames(frames);
}

// Epoch-wise shuffled minibatches of record indices.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t b = std::min<std::size_t>(n, static_cast<std::size_t>(batch_size));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += b) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
  }
  return out;
}

std::map<std::string, Matrix> snapshot(const nn::ParameterStore& store) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, var] : store.all()) out.emplace(name, var.value());
  return out;
}

void restore(nn::ParameterStore& store, const std::map<std::string, Matrix>& values) {
  for (const auto& [name, m] : values) store.get(name).mutable_value() = m;
}

std::vector<nn::NamedParam> stage_one_generator_params(const nn::ParameterStore& store) {
  std::vector<nn::NamedParam> out;
  for (const auto& [name, var] : store.all()) {
    if (name.starts_with("ae.") || name.starts_with("stage1.disc.")) continue;
    out.push_back({name, var});
  }
  return out;
}

void check_finite_grads(const std::vector<nn::NamedParam>& params, const char* what) {
  if (!std::isfinite(nn::grad_norm(params))) {
    throw TrainingAborted(std::string(what) + ": non-finite gradient");
  }
}

struct StageOneStepLoss {
  double rec = 0.0, adv_g = 0.0, adv_d = 0.0, perc = 0.0, dis = 0.0, total = 0.0;
};

}  // namespace

std::vector<const SequenceRecord*> select_records(const DatasetManifest& manifest,
                                                  const std::string& split) {
  if (split == "all") {
    std::vector<const SequenceRecord*> out;
    for (const auto& r : manifest.records) out.push_back(&r);
    return out;
  }
  return manifest.select(split_from_string(split));
}

Autoencoders::Autoencoders(const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  single = HandAutoencoder(store, "ae.single", kSingleHandDims, cfg.model.channels, rng);
  phi = HandAutoencoder(store, "ae.phi", kHandDims, cfg.model.channels, rng);
}

StageOneBundle::StageOneBundle(const TrainConfig& config) : cfg(config) {
  cfg.validate();
  Rng rng(cfg.seed);
  single = HandAutoencoder(store, "ae.single", kSingleHandDims, cfg.model.channels, rng);
  phi = HandAutoencoder(store, "ae.phi", kHandDims, cfg.model.channels, rng);
  model = std::make_unique<StageOneModel>(store, cfg.model, cfg.memory, rng);
}

StageTwoBundle::StageTwoBundle(const TrainConfig& config, Matrix proto_init) : cfg(config) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kTagStageTwoInit));
  const int width = static_cast<int>(proto_init.cols());
  generator = GenerationModel(store, "stage2.generator", width, cfg.mcmc.dim, cfg.stage2.hidden, rng);
  header = SamplingHeader(store, "stage2.header", cfg.mcmc.dim, cfg.mcmc.header_hidden,
                          cfg.mcmc.sigma_w, rng);
  proto = MemoryBank(store, "proto", std::move(proto_init), cfg.memory.gamma);
}

LangevinConfig StageTwoBundle::langevin() const {
  LangevinConfig lc;
  lc.steps = cfg.mcmc.steps;
  lc.delta_prior = cfg.mcmc.delta_prior;
  lc.delta_posterior = cfg.mcmc.delta_posterior;
  lc.sigma_eps = cfg.mcmc.sigma_eps;
  return lc;
}

PretrainResult pretrain_autoencoders(const TrainConfig& cfg, const DatasetManifest& manifest,
                                     nn::ParameterStore& store, HandAutoencoder& single,
                                     HandAutoencoder& phi) {
  const auto records = training_records(cfg, manifest);
  HandAutoencoder::TrainOptions opts;
  opts.steps = cfg.pretrain.steps;
  opts.batch = cfg.pretrain.batch;
  opts.lr = cfg.pretrain.lr;
  PretrainResult result;
  opts.seed = derive_seed(cfg.seed, kTagPretrainSingle);
  result.single_losses = single.train(store, pooled_single_hands(records), opts);
  opts.seed = derive_seed(cfg.seed, kTagPretrainPhi);
  result.phi_losses = phi.train(store, stack_hands(records), opts);
  return result;
}

Checkpoint run_pretrain(const TrainConfig& cfg, const DatasetManifest& manifest,
                        const fs::path& out) {
  cfg.validate();
  Autoencoders aes(cfg);
  const PretrainResult result = pretrain_autoencoders(cfg, manifest, aes.store, aes.single, aes.phi);
  fs::create_directories(out);
  JsonLog log(out / "log.jsonl");
  for (std::size_t i = 0; i < result.single_losses.size(); ++i) {
    log.write({{"event", "step"}, {"step", i + 1}, {"single_l1", result.single_losses[i]},
               {"phi_l1", result.phi_losses[i]}});
  }
  Checkpoint ckpt;
  ckpt.manifest = base_manifest("pretrain", cfg, cfg.pretrain.steps, split_hash(manifest));
  ckpt.manifest["trained"] = {{"ae.single", true}, {"ae.phi", true}};
  export_parameters(aes.store, "ae.", ckpt);
  save_checkpoint(ckpt, out);
  return ckpt;
}

Checkpoint train_stage_one(const TrainConfig& cfg, const DatasetManifest& manifest,
                           const fs::path& out, const StageOneOptions& opts) {
  cfg.validate();
  const auto records = training_records(cfg, manifest);
  require_frames(records, cfg.model.frames);
  std::optional<Checkpoint> pretrained;
  if (opts.pretrained) pretrained = load_kind(*opts.pretrained, "pretrain");

  StageOneBundle b(cfg);
  if (pretrained) {
    import_parameters(b.store, "ae.", *pretrained);
  } else {
    pretrain_autoencoders(cfg, manifest, b.store, b.single, b.phi);
  }
  b.single.set_trained(true);
  b.phi.set_trained(true);
  b.store.set_trainable("ae.", false);
  b.model->set_training(true);

  const nn::AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2};
  const auto gen_params = stage_one_generator_params(b.store);
  const auto disc_params = b.store.with_prefix("stage1.disc.");
  nn::Adam adam_g(gen_params, adam_cfg);
  nn::Adam adam_d(disc_params, nn::AdamConfig{cfg.lr * cfg.disc_lr_scale, cfg.beta1, cfg.beta2});
  const MotionDiscriminator& disc = b.model->discriminator();
  const Eigen::Index frames = cfg.model.frames;
  const std::string hash = split_hash(manifest);

  // Encoded ground-truth single hands, the disentanglement targets.
  std::vector<std::array<Matrix, 2>> side_targets;
  for (const auto* r : records) {
    side_targets.push_back({b.single.encode(Matrix(r->hands.frames.leftCols(kSingleHandDims))),
                            b.single.encode(mirror_single_hand(r->hands.frames.rightCols(kSingleHandDims)))});
  }

  fs::create_directories(out);
  JsonLog log(out / "log.jsonl");
  Rng order_rng(derive_seed(cfg.seed, kTagStageOneOrder));
  Stopwatch clock;
  long step = 0;
  long good_step = 0;
  auto last_good = snapshot(b.store);

  auto finish = [&](long final_step, bool aborted) {
    Checkpoint ckpt;
    ckpt.manifest = base_manifest("stage1", cfg, final_step, hash);
    ckpt.manifest["trained"] = {{"ae.single", true}, {"ae.phi", true}};
    ckpt.manifest["gamma"] = {{"srm.left", cfg.memory.gamma}, {"srm.right", cfg.memory.gamma},
                              {"tmm.left", cfg.memory.gamma}, {"tmm.right", cfg.memory.gamma}};
    if (aborted) ckpt.manifest["aborted"] = true;
    export_parameters(b.store, "", ckpt);
    save_checkpoint(ckpt, out);
    return ckpt;
  };

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      StageOneStepLoss sums;
      int batches = 0;
      for (const auto& batch : epoch_batches(records.size(), cfg.batch_size, order_rng)) {
        std::vector<const SequenceRecord*> chosen;
        std::vector<const Matrix*> left_t, right_t;
        for (std::size_t i : batch) {
          chosen.push_back(records[i]);
          left_t.push_back(&side_targets[i][0]);
          right_t.push_back(&side_targets[i][1]);
        }
        const ad::Var real = ad::constant(stack_hands(chosen));
        b.store.zero_grad();
        const StageOneModel::Outputs o = b.model->forward(ad::constant(stack_bodies(chosen)), frames);

        // Discriminator ascends E[log D(real)] + E[log(1 - D(fake))].
        const ad::Var adv_d = loss_adv_discriminator(disc.forward(real, frames),
                                                     disc.forward(ad::constant(o.hands.value()), frames));
        ad::backward(ad::scale(adv_d, -1.0));
        check_finite_grads(disc_params, "discriminator");
        nn::clip_grad_norm(disc_params, cfg.grad_clip);
        adam_d.step();

        StageOneLossParts parts;
        ad::Var total;
        {
          nn::FreezeGuard frozen(b.store, "stage1.disc.");
          parts.rec = loss_rec(real, o.hands);
          parts.adv = loss_adv_generator(disc.forward(o.hands, frames));
          parts.perc = loss_perc(real, o.hands, b.phi);
          const ad::Var dis_l = disentangle_loss(o.hand_features[0],
                                                 ad::constant(stack_frames(left_t)), b.single);
          const ad::Var dis_r = disentangle_loss(o.hand_features[1],
                                                 ad::constant(stack_frames(right_t)), b.single);
          parts.dis = ad::scale(ad::add(dis_l, dis_r), 0.5);
          total = loss_total_stage1(parts);
          if (!std::isfinite(total.scalar())) throw TrainingAborted("stage one: non-finite loss");
          ad::backward(total);
        }
        check_finite_grads(gen_params, "generator");
        nn::clip_grad_norm(gen_params, cfg.grad_clip);
        adam_g.step();
        b.model->update_memories(o, frames);
        b.store.round_to_float();
        b.store.zero_grad();
        if (!b.store.all_finite()) throw TrainingAborted("stage one: non-finite parameter");

        ++step;
        ++batches;
        sums.rec += parts.rec.scalar();
        sums.adv_g += parts.adv.scalar();
        sums.adv_d += adv_d.scalar();
        sums.perc += parts.perc.scalar();
        sums.dis += parts.dis.scalar();
        sums.total += total.scalar();
        if (opts.max_steps > 0 && step >= opts.max_steps) break;
      }
      const double n = static_cast<double>(batches);
      log.write({{"event", "epoch"}, {"epoch", epoch + 1}, {"step", step}, {"rec", sums.rec / n},
                 {"adv_g", sums.adv_g / n}, {"adv_d", sums.adv_d / n}, {"perc", sums.perc / n},
                 {"dis", sums.dis / n}, {"total", sums.total / n}, {"elapsed_s", clock.seconds()}});
      last_good = snapshot(b.store);
      good_step = step;
      if (opts.max_steps > 0 && step >= opts.max_steps) break;
    }
  } catch (const TrainingAborted& e) {
    restore(b.store, last_good);
    finish(good_step, true);
    log.write({{"event", "abort"}, {"step", step}, {"reason", e.what()}});
    throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step) +
                          "; last good checkpoint (step " + std::to_string(good_step) +
                          ") written to " + out.string());
  }
  return finish(step, false);
}

Checkpoint train_stage_two(const TrainConfig& cfg, const DatasetManifest& manifest,
                           const fs::path& stage1, const fs::path& out) {
  cfg.validate();
  if (!fs::is_regular_file(stage1 / "manifest.json")) {
    throw CheckpointError("stage-one checkpoint '" + stage1.string() + "' not found");
  }
  const auto s1 = load_stage_one(stage1);
  const auto records = training_records(cfg, manifest);
  require_frames(records, s1->cfg.model.frames);

  // Network shapes follow the stage-one checkpoint.
  TrainConfig merged = cfg;
  merged.model = s1->cfg.model;
  std::vector<const HandPoseSequence*> hands;
  for (const auto* r : records) hands.push_back(&r->hands);
  Rng proto_rng(derive_seed(cfg.seed, kTagPrototype));
  StageTwoBundle b(merged, prototype_slots(hands, s1->phi, cfg.memory.proto_slots, proto_rng));
  b.proto.set_training(cfg.memory.proto_ema);
  const LangevinConfig lc = b.langevin();

  const nn::AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2};
  const auto theta = b.store.with_prefix("stage2.generator.");
  const auto alpha = b.store.with_prefix("stage2.header.");
  nn::Adam adam_theta(theta, adam_cfg);
  nn::Adam adam_alpha(alpha, adam_cfg);
  const std::vector<ad::Var> generator_vars = [&] {
    std::vector<ad::Var> v;
    for (const auto& p : theta) v.push_back(p.var);
    return v;
  }();
  const std::string hash = split_hash(manifest);

  fs::create_directories(out);
  JsonLog log(out / "log.jsonl");
  log.write({{"event", "chain_settings"}, {"steps", lc.steps}, {"delta_prior", lc.delta_prior},
             {"delta_posterior", lc.delta_posterior}, {"sigma_w", cfg.mcmc.sigma_w},
             {"sigma_eps", lc.sigma_eps}, {"dim", cfg.mcmc.dim}});
  Rng order_rng(derive_seed(cfg.seed, kTagStageTwoOrder));
  Stopwatch clock;
  long step = 0;
  long good_step = 0;
  auto last_good = snapshot(b.store);

  auto finish = [&](long final_step, bool aborted) {
    Checkpoint ckpt;
    ckpt.manifest = base_manifest("stage2", merged, final_step, hash);
    ckpt.manifest["gamma"] = {{"proto", cfg.memory.gamma}};
    if (aborted) ckpt.manifest["aborted"] = true;
    export_parameters(b.store, "", ckpt);
    save_checkpoint(ckpt, out);
    return ckpt;
  };

  try {
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      double loss_sum = 0.0;
      int batches = 0;
      for (const auto& batch : epoch_batches(records.size(), cfg.batch_size, order_rng)) {
        std::vector<const SequenceRecord*> chosen;
        for (std::size_t i : batch) chosen.push_back(records[i]);
        StageTwoBatch data;
        data.hands = stack_hands(chosen);
        data.target = data.hands;
        data.proto = retrieve_prototypes(b.proto, s1->phi, data.hands);
        const Eigen::Index n = data.hands.rows();

        const std::uint64_t chain_seed = derive_seed(cfg.seed, kTagChains + static_cast<std::uint64_t>(step));
        Matrix w_minus, w_plus;
        try {
          w_minus = langevin_prior(b.header, lc, n, derive_seed(chain_seed, 0));
          PosteriorModel posterior;
          const ad::Var h = ad::constant(data.hands);
          const ad::Var proto = ad::constant(data.proto);
          posterior.predict = [&](const ad::Var& w) { return b.generator.forward(h, proto, w); };
          posterior.observed = data.target;
          posterior.frozen = generator_vars;
          w_plus = langevin_posterior(b.header, posterior, lc, derive_seed(chain_seed, 1));
        } catch (const NonFiniteGradient& e) {
          throw TrainingAborted(std::string("stage two: ") + e.what());
        }

        b.store.zero_grad();
        const StageTwoStep result = stage_two_grad_step(b.generator, b.header, data, w_minus, w_plus,
                                                        lc.sigma_eps);
        if (!std::isfinite(result.loss)) throw TrainingAborted("stage two: non-finite loss");
        check_finite_grads(theta, "generation model");
        check_finite_grads(alpha, "sampling header");
        nn::clip_grad_norm(theta, cfg.grad_clip);
        nn::clip_grad_norm(alpha, cfg.grad_clip);
        adam_theta.step();
        adam_alpha.step();
        if (b.proto.training()) {
          for (const auto* r : chosen) {
            b.proto.update_slot_ema(s1->phi.encode(r->hands.frames).colwise().mean());
          }
        }
        b.store.round_to_float();
        b.store.zero_grad();
        if (!b.store.all_finite()) throw TrainingAborted("stage two: non-finite parameter");

        ++step;
        ++batches;
        loss_sum += result.loss;
      }
      log.write({{"event", "epoch"}, {"epoch", epoch + 1}, {"step", step},
                 {"loss", loss_sum / static_cast<double>(batches)}, {"elapsed_s", clock.seconds()}});
      last_good = snapshot(b.store);
      good_step = step;
    }
  } catch (const TrainingAborted& e) {
    restore(b.store, last_good);
    finish(good_step, true);
    log.write({{"event", "abort"}, {"step", step}, {"reason", e.what()}});
    throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step) +
                          "; last good checkpoint (step " + std::to_string(good_step) +
                          ") written to " + out.string());
  }
  return finish(step, false);
}

std::unique_ptr<StageOneBundle> load_stage_one(const fs::path& dir) {
  const Checkpoint ckpt = load_kind(dir, "stage1");
  auto b = std::make_unique<StageOneBundle>(config_from_json(ckpt.manifest.at("config")));
  import_parameters(b->store, "", ckpt);
  b->single.set_trained(true);
  b->phi.set_trained(true);
  b->model->set_training(false);
  return b;
}

std::unique_ptr<StageTwoBundle> load_stage_two(const fs::path& dir) {
  const Checkpoint ckpt = load_kind(dir, "stage2");
  auto it = ckpt.tensors.find("proto.slots");
  if (it == ckpt.tensors.end()) throw CheckpointError("stage-two checkpoint lacks proto.slots");
  auto b = std::make_unique<StageTwoBundle>(config_from_json(ckpt.manifest.at("config")),
                                            Matrix::Zero(it->second.rows(), it->second.cols()));
  import_parameters(b->store, "", ckpt);
  b->proto.set_training(false);
  return b;
}

MetricReport evaluate_predictions(const std::vector<const HandPoseSequence*>& target,
                                  const std::vector<const HandPoseSequence*>& predicted,
                                  const HandAutoencoder& phi) {
  MetricReport report;
  report.l2 = metric_l2(target, predicted);
  report.mpjre_deg = metric_mpjre(target, predicted);
  report.fhd = metric_fhd(target, predicted, extractor_features(phi));
  return report;
}

std::vector<HandPoseSequence> diverse_samples(const StageTwoBundle& stage2,
                                              const HandAutoencoder& phi,
                                              const HandPoseSequence& initial, int k,
                                              std::uint64_t seed) {
  if (k < 1) throw ValidationError("k must be >= 1");
  if (stage2.proto.dim() != phi.channels()) {
    throw ValidationError("stage-two prototype width " + std::to_string(stage2.proto.dim()) +
                          " does not match the extractor width " + std::to_string(phi.channels()));
  }
  const LangevinConfig lc = stage2.langevin();
  std::vector<HandPoseSequence> out;
  for (int i = 0; i < k; ++i) {
    const Matrix w = langevin_prior(stage2.header, lc, initial.length(), seed + static_cast<std::uint64_t>(i));
    out.push_back(temporal_smooth(generate_diverse(stage2.generator, initial, stage2.proto, phi, w),
                                  stage2.cfg.stage2.smooth_window));
  }
  return out;
}

MetricReport evaluate(const fs::path& ckpt1, const std::optional<fs::path>& ckpt2,
                      const DatasetManifest& manifest, const std::string& split) {
  const auto s1 = load_stage_one(ckpt1);
  const auto s2 = ckpt2 ? load_stage_two(*ckpt2) : nullptr;
  const auto records = select_records(manifest, split);
  if (records.empty()) throw ValidationError("split '" + split + "' is empty");
  require_frames(records, s1->cfg.model.frames);

  constexpr std::size_t kChunk = 16;
  std::vector<HandPoseSequence> predicted;
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    std::vector<const BodyPoseSequence*> bodies;
    for (std::size_t i = start; i < std::min(records.size(), start + kChunk); ++i) {
      bodies.push_back(&records[i]->body);
    }
    for (auto& h : s1->model->predict(bodies)) predicted.push_back(std::move(h));
  }
  std::vector<const HandPoseSequence*> target_ptrs, predicted_ptrs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    target_ptrs.push_back(&records[i]->hands);
    predicted_ptrs.push_back(&predicted[i]);
  }
  MetricReport report = evaluate_predictions(target_ptrs, predicted_ptrs, s1->phi);

  if (s2) {
    const int k = s2->cfg.stage2.diversity_samples;
    const auto features = extractor_features(s1->phi);
    double mean_sum = 0.0;
    double ci_sq = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const std::uint64_t seed = s2->cfg.seed + static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(k);
      const auto samples = diverse_samples(*s2, s1->phi, predicted[i], k, seed);
      std::vector<const HandPoseSequence*> ptrs;
      for (const auto& s : samples) ptrs.push_back(&s);
      DiversityOptions opts;
      opts.pairs = s2->cfg.stage2.diversity_pairs;
      opts.seed = seed;
      const DiversityResult d = metric_diversity(ptrs, features, opts);
      mean_sum += d.mean;
      ci_sq += d.ci95 * d.ci95;
    }
    const double n = static_cast<double>(predicted.size());
    report.diversity = DiversityResult{mean_sum / n, std::sqrt(ci_sq) / n};
  }
  return report;
}

std::vector<fs::path> sample_diverse(const fs::path& ckpt1, const fs::path& ckpt2,
                                     const fs::path& body_file, int k, std::uint64_t seed,
                                     const fs::path& out, bool plot) {
  if (k < 1) throw ValidationError("k must be >= 1");
  const auto s1 = load_stage_one(ckpt1);
  const auto s2 = load_stage_two(ckpt2);
  const SequenceRecord input = load_body_sequence(body_file);
  const HandPoseSequence initial = s1->model->predict(input.body);
  const auto samples = diverse_samples(*s2, s1->phi, initial, k, seed);

  fs::create_directories(out);
  std::vector<fs::path> written;
  for (int i = 0; i < k; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%02d.json", i);
    SequenceRecord rec{input.id + "_sample" + std::to_string(i), input.speaker_id, input.body,
                       samples[static_cast<std::size_t>(i)]};
    save_sequence(rec, out / name);
    written.push_back(out / name);
  }

  if (plot) {
    // Rotation angle of the first joint of each hand over time.
    std::vector<PlotPanel> panels;
    for (int joint : {0, kSingleHandJoints}) {
      PlotPanel panel;
      panel.title = std::string(joint == 0 ? "left" : "right") + " hand, joint 0: rotation angle (rad)";
      auto angles = [joint](const Matrix& frames) {
        std::vector<double> a;
        for (Eigen::Index t = 0; t < frames.rows(); ++t) a.push_back(frames.row(t).segment(3 * joint, 3).norm());
        return a;
      };
      panel.series.push_back(angles(initial.frames));
      for (const auto& s : samples) panel.series.push_back(angles(s.frames));
      panels.push_back(std::move(panel));
    }
    std::vector<std::string> legend{"initial prediction"};
    for (int i = 0; i < k; ++i) legend.push_back("sample " + std::to_string(i));
    write_svg_plot(out / "plot.svg", "Diverse samples for " + input.id, panels, legend);
    written.push_back(out / "plot.svg");
  }
  return written;
}

}  // namespace bihand
