#pragma once

#include <array>
#include <vector>

#include "bihand/config.hpp"
#include "bihand/memory_bank.hpp"
#include "bihand/motion_data.hpp"
#include "bihand/nn.hpp"

namespace bihand {

// Sequence-level realism classifier built from temporal convolutions and a
// time-averaged logit. Outputs are clamped to [eps, 1 - eps].
class MotionDiscriminator {
 public:
  static constexpr double kClamp = 1e-7;

  MotionDiscriminator() = default;
  MotionDiscriminator(nn::ParameterStore& store, const std::string& prefix, int width, int kernel,
                      Rng& rng);

  // hands: (B*T) x 90 -> B x 1 probabilities.
  ad::Var forward(const ad::Var& hands, Eigen::Index frames) const;
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  int kernel_ = 5;
  std::vector<ad::Var> conv_weights_;
  std::vector<ad::Var> conv_biases_;
  ad::Var out_weight_, out_bias_;
};

class StageOneModel {
 public:
  static constexpr int kCrossBlocks = 3;
  static constexpr int kDecoderBlocks = 3;

  StageOneModel(nn::ParameterStore& store, const ModelConfig& model, const MemoryConfig& memory,
                Rng& rng);
  StageOneModel(const StageOneModel&) = delete;
  StageOneModel& operator=(const StageOneModel&) = delete;

  struct Outputs {
    ad::Var hands;             // (B*T) x 90, before canonicalization
    ad::Var body_features;     // (B*T) x C
    std::array<ad::Var, 2> hand_features;   // BHD projections, per side
    std::array<ad::Var, 2> body_motion;     // B x T motion embeddings, per side
    std::vector<Matrix> attention;          // filled when requested
  };

  // body: (B*T) x 24 stacked sequences of `frames` frames each.
  Outputs forward(const ad::Var& body, Eigen::Index frames, bool collect_attention = false) const;

  ad::Var encode_body(const ad::Var& body, Eigen::Index frames) const;
  ad::Var project_to_hand(const ad::Var& body_features, HandSide side) const;

  HandPoseSequence predict(const BodyPoseSequence& body) const;
  std::vector<HandPoseSequence> predict(const std::vector<const BodyPoseSequence*>& bodies) const;

  // EMA writes for SRM (per-sequence mean hand feature) and TMM (body
  // motion embedding) banks after a generator step.
  void update_memories(const Outputs& outputs, Eigen::Index frames);
  void set_training(bool on);

  const MotionDiscriminator& discriminator() const { return disc_; }
  MemoryBank& srm(HandSide side) { return branch(side).srm; }
  MemoryBank& tmm(HandSide side) { return branch(side).tmm; }
  const ModelConfig& config() const { return cfg_; }

 private:
  struct Branch {
    nn::Mlp bhd;
    MemoryBank srm;
    MemoryBank tmm;
    MotionEncoder motion;
    nn::AttentionBlock hand_transformer;
    std::array<nn::AttentionBlock, kCrossBlocks> cross;
  };

  Branch& branch(HandSide side) { return side == HandSide::kLeft ? left_ : right_; }
  const Branch& branch(HandSide side) const { return side == HandSide::kLeft ? left_ : right_; }
  Branch make_branch(nn::ParameterStore& store, HandSide side, const MemoryConfig& memory, Rng& rng);
  ad::Var run_branch(const Branch& b, const ad::Var& body_features, const ad::Var& query,
                     Eigen::Index frames, ad::Var& hand_features, ad::Var& motion,
                     std::vector<Matrix>* attention) const;

  ModelConfig cfg_;
  Matrix positional_;
  nn::Mlp body_encoder_;
  Branch left_;
  Branch right_;
  nn::AttentionBlock body_transformer_;
  nn::Mlp merge_;
  std::array<nn::AttentionBlock, kDecoderBlocks> decoder_;
  nn::Mlp head_;
  MotionDiscriminator disc_;
};

// Stacks sequence frames row-wise: B sequences of T frames -> (B*T) x width.
Matrix stack_frames(const std::vector<const Matrix*>& sequences);

}  // namespace bihand
