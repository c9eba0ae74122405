#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bihand/hand_autoencoder.hpp"
#include "bihand/nn.hpp"

namespace bihand {

// S learnable slots of width D, read by cosine similarity and written by
// exponential moving average. Slots live in the parameter store under
// `<name>.slots`, so gradients from soft reads train them as well.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(nn::ParameterStore& store, std::string name, Matrix init, double gamma);

  struct SoftRead {
    ad::Var aggregate;  // N x D
    ad::Var affinity;   // N x S, rows sum to 1
  };
  // One read per query row.
  SoftRead read_soft(const ad::Var& queries) const;

  struct HardRead {
    RowVector slot;
    Eigen::Index index = 0;
  };
  // Highest cosine similarity; ties resolve to the lowest index.
  HardRead read_hard(const RowVector& query) const;

  // m_r <- gamma m_r + (1 - gamma) q on the slot read_hard selects.
  // Returns the updated index. Only legal in training mode.
  Eigen::Index update_slot_ema(const RowVector& query);

  const std::string& name() const { return name_; }
  ad::Var slots() const { return slots_; }
  Eigen::Index size() const { return slots_.rows(); }
  Eigen::Index dim() const { return slots_.cols(); }
  double gamma() const { return gamma_; }
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

 private:
  std::string name_;
  ad::Var slots_;
  double gamma_ = 0.8;
  bool training_ = true;
};

// Unit-variance Gaussian slots, each row normalized to unit length.
Matrix random_slots(Eigen::Index count, Eigen::Index dim, Rng& rng);

// Cosine similarity matrix (rows of a vs rows of b); zero for near-zero rows.
Matrix cosine_similarity(const Matrix& a, const Matrix& b);

// softmax(f_delta^T f_t) over the last axis: C x C, rows sum to 1.
ad::Var spatial_dependency(const ad::Var& f_delta, const ad::Var& f_t);
// f_t + f_t S for a 1 x C row feature.
ad::Var srm_next_feature(const ad::Var& f_t, const ad::Var& dependency);

// Channel-mean pooling per frame followed by an MLP across the T frames of
// each sequence: (B*T) x C -> B x T.
class MotionEncoder {
 public:
  MotionEncoder() = default;
  MotionEncoder(nn::ParameterStore& store, const std::string& prefix, int frames, Rng& rng);

  ad::Var forward(const ad::Var& features) const;
  int frames() const { return frames_; }

 private:
  int frames_ = 0;
  nn::Mlp temporal_;
};

// F <- F + F * softmax(F_SHM), one softmax weight per frame broadcast
// across channels. features: (B*T) x C, embedding: B x T.
ad::Var tmm_enhance(const ad::Var& features, const ad::Var& embedding);

// Prototype slots: frame-mean extractor features of `slot_count` training
// sequences drawn without replacement.
Matrix prototype_slots(const std::vector<const HandPoseSequence*>& hands,
                       const HandAutoencoder& encoder, Eigen::Index slot_count, Rng& rng);

MemoryBank build_prototype_memory(nn::ParameterStore& store,
                                  const std::vector<const HandPoseSequence*>& hands,
                                  const HandAutoencoder& encoder, Eigen::Index slot_count,
                                  double gamma, Rng& rng);

}  // namespace bihand
