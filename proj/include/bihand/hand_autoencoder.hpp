#pragma once

#include <string>
#include <vector>

#include "bihand/motion_data.hpp"
#include "bihand/nn.hpp"

namespace bihand {

// Frame-level MLP autoencoder over hand poses. The single-hand variant
// (45 -> C) constrains the disentangled hand features; the two-hand
// variant (90 -> C) is the frozen feature extractor for the perceptual
// loss and for FHD / Diversity.
class HandAutoencoder {
 public:
  HandAutoencoder() = default;
  HandAutoencoder(nn::ParameterStore& store, std::string prefix, int input_width, int channels,
                  Rng& rng);

  ad::Var encode(const ad::Var& frames) const;
  ad::Var decode(const ad::Var& features) const;
  Matrix encode(const Matrix& frames) const;
  Matrix decode(const Matrix& features) const;

  int input_width() const { return encoder_.in_width(); }
  int channels() const { return encoder_.out_width(); }
  const std::string& prefix() const { return prefix_; }

  bool trained() const { return trained_; }
  void set_trained(bool on) { trained_ = on; }

  struct TrainOptions {
    int steps = 500;
    int batch = 256;  // frames per step; <= 0 means full batch
    double lr = 0.003;
    std::uint64_t seed = 0;
  };
  // L1 reconstruction training on the rows of `frames`; returns the loss
  // at every step and marks the autoencoder trained.
  std::vector<double> train(nn::ParameterStore& store, const Matrix& frames,
                            const TrainOptions& opts);

 private:
  std::string prefix_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  bool trained_ = false;
};

// ||f_recon - f||_1 + ||D(f_recon) - D(f)||_1, both as means over elements.
ad::Var disentangle_loss(const ad::Var& f_recon, const ad::Var& f, const HandAutoencoder& ae);

// Per-frame features of the frozen two-hand extractor: T x 90 -> T x C.
Matrix perceptual_features(const HandAutoencoder& phi, const HandPoseSequence& hands);

// Left hands as-is plus right hands mirrored into the left layout, stacked.
Matrix pooled_single_hands(const std::vector<const SequenceRecord*>& records);

}  // namespace bihand
