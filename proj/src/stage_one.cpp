#include "bihand/stage_one.hpp"

#include <stdexcept>

namespace bihand {

namespace {
constexpr double kSlope = 0.2;
constexpr int kConvLayers = 3;
}  // namespace

MotionDiscriminator::MotionDiscriminator(nn::ParameterStore& store, const std::string& prefix,
                                         int width, int kernel, Rng& rng)
    : prefix_(prefix), kernel_(kernel) {
  int in = kHandDims;
  for (int l = 0; l < kConvLayers; ++l) {
    const std::string base = prefix + ".conv" + std::to_string(l);
    const int fan_in = in * kernel;
    conv_weights_.push_back(store.add(base + ".weight", nn::fan_in_uniform(fan_in, width, fan_in, rng)));
    conv_biases_.push_back(store.add(base + ".bias", Matrix::Zero(1, width)));
    in = width;
  }
  out_weight_ = store.add(prefix + ".out.weight", nn::fan_in_uniform(width, 1, width, rng));
  out_bias_ = store.add(prefix + ".out.bias", Matrix::Zero(1, 1));
}

ad::Var MotionDiscriminator::forward(const ad::Var& hands, Eigen::Index frames) const {
  if (hands.cols() != kHandDims) throw ValidationError("discriminate: expected 90 values per frame");
  ad::Var h = hands;
  for (std::size_t l = 0; l < conv_weights_.size(); ++l) {
    h = ad::temporal_unfold(h, frames, kernel_);
    h = ad::leaky_relu(ad::add_rowvec(ad::matmul(h, conv_weights_[l]), conv_biases_[l]), kSlope);
  }
  const ad::Var pooled = ad::segment_mean(h, frames);
  const ad::Var logit = ad::add_rowvec(ad::matmul(pooled, out_weight_), out_bias_);
  return ad::clamp(ad::sigmoid(logit), kClamp, 1.0 - kClamp);
}

StageOneModel::StageOneModel(nn::ParameterStore& store, const ModelConfig& model,
                             const MemoryConfig& memory, Rng& rng)
    : cfg_(model),
      positional_(nn::sinusoidal_encoding(model.frames, model.channels)),
      body_encoder_(store, "stage1.body_encoder",
                    nn::MlpSpec{{kBodyDims, model.channels, model.channels}}, rng),
      left_(make_branch(store, HandSide::kLeft, memory, rng)),
      right_(make_branch(store, HandSide::kRight, memory, rng)),
      body_transformer_(store, "stage1.body_transformer", model.channels, model.heads,
                        model.ffn_width, rng),
      merge_(store, "stage1.merge",
             nn::MlpSpec{{2 * model.channels, model.channels, model.channels}}, rng),
      decoder_{nn::AttentionBlock(store, "stage1.decoder0", model.channels, model.heads,
                                  model.ffn_width, rng),
               nn::AttentionBlock(store, "stage1.decoder1", model.channels, model.heads,
                                  model.ffn_width, rng),
               nn::AttentionBlock(store, "stage1.decoder2", model.channels, model.heads,
                                  model.ffn_width, rng)},
      head_(store, "stage1.head", nn::MlpSpec{{model.channels, model.channels, kHandDims}}, rng),
      disc_(store, "stage1.disc", model.disc_width, model.disc_kernel, rng) {}

StageOneModel::Branch StageOneModel::make_branch(nn::ParameterStore& store, HandSide side,
                                                 const MemoryConfig& memory, Rng& rng) {
  const std::string s = to_string(side);
  const std::string base = "stage1." + s;
  const int c = cfg_.channels;
  Branch b{
      nn::Mlp(store, base + ".bhd", nn::MlpSpec{{c, c, c}}, rng),
      MemoryBank(store, "srm." + s, random_slots(memory.slots, c, rng), memory.gamma),
      MemoryBank(store, "tmm." + s, random_slots(memory.slots, cfg_.frames, rng), memory.gamma),
      MotionEncoder(store, base + ".motion", cfg_.frames, rng),
      nn::AttentionBlock(store, base + ".hand_transformer", c, cfg_.heads, cfg_.ffn_width, rng),
      {nn::AttentionBlock(store, base + ".cross0", c, cfg_.heads, cfg_.ffn_width, rng),
       nn::AttentionBlock(store, base + ".cross1", c, cfg_.heads, cfg_.ffn_width, rng),
       nn::AttentionBlock(store, base + ".cross2", c, cfg_.heads, cfg_.ffn_width, rng)}};
  return b;
}

ad::Var StageOneModel::encode_body(const ad::Var& body, Eigen::Index frames) const {
  if (body.cols() != kBodyDims) throw ValidationError("encode_body: expected 24 values per frame");
  if (frames < 1 || body.rows() % frames != 0) {
    throw ValidationError("encode_body: rows not a multiple of the frame count");
  }
  const Matrix pe = frames == positional_.rows() ? positional_
                                                 : nn::sinusoidal_encoding(frames, cfg_.channels);
  const Eigen::Index batch = body.rows() / frames;
  Matrix tiled(body.rows(), cfg_.channels);
  for (Eigen::Index b = 0; b < batch; ++b) tiled.middleRows(b * frames, frames) = pe;
  return ad::add(body_encoder_.forward(body), ad::constant(std::move(tiled)));
}

ad::Var StageOneModel::project_to_hand(const ad::Var& body_features, HandSide side) const {
  return branch(side).bhd.forward(body_features);
}

ad::Var StageOneModel::run_branch(const Branch& b, const ad::Var& body_features,
                                  const ad::Var& query, Eigen::Index frames,
                                  ad::Var& hand_features, ad::Var& motion,
                                  std::vector<Matrix>* attention) const {
  hand_features = b.bhd.forward(body_features);

  // Spatial-residual memory: the body feature of each frame reads the
  // residual that drives the hand feature's next-step mixing.
  const ad::Var residual = b.srm.read_soft(body_features).aggregate;
  const ad::Var spatial = ad::srm_mix(residual, hand_features);

  // Temporal-motion memory.
  motion = b.motion.forward(body_features);
  const ad::Var hand_motion = b.tmm.read_soft(motion).aggregate;
  const ad::Var temporal = tmm_enhance(spatial, hand_motion);

  const ad::Var kv = b.hand_transformer.forward(temporal, temporal, frames, frames, attention);
  ad::Var x = query;
  for (const auto& block : b.cross) x = block.forward(x, kv, frames, frames, attention);
  return x;
}

StageOneModel::Outputs StageOneModel::forward(const ad::Var& body, Eigen::Index frames,
                                              bool collect_attention) const {
  if (frames != cfg_.frames) {
    throw ValidationError("stage one: model built for " + std::to_string(cfg_.frames) +
                          " frames, got " + std::to_string(frames));
  }
  Outputs out;
  std::vector<Matrix>* attn = collect_attention ? &out.attention : nullptr;
  out.body_features = encode_body(body, frames);
  const ad::Var query =
      body_transformer_.forward(out.body_features, out.body_features, frames, frames, attn);

  std::array<ad::Var, 2> sides;
  for (int s = 0; s < 2; ++s) {
    const Branch& b = s == 0 ? left_ : right_;
    sides[s] = run_branch(b, out.body_features, query, frames, out.hand_features[s],
                          out.body_motion[s], attn);
  }

  ad::Var x = merge_.forward(ad::concat_cols(sides[0], sides[1]));
  x = decoder_[0].forward(x, x, frames, frames, attn);
  for (int i = 1; i < kDecoderBlocks; ++i) {
    x = decoder_[i].forward(x, out.body_features, frames, frames, attn);
  }
  out.hands = head_.forward(x);
  return out;
}

HandPoseSequence StageOneModel::predict(const BodyPoseSequence& body) const {
  return predict(std::vector<const BodyPoseSequence*>{&body}).front();
}

std::vector<HandPoseSequence> StageOneModel::predict(
    const std::vector<const BodyPoseSequence*>& bodies) const {
  std::vector<const Matrix*> frames;
  for (const auto* b : bodies) {
    b->validate();
    if (b->length() != cfg_.frames) {
      throw ValidationError("predict: expected " + std::to_string(cfg_.frames) + " frames, got " +
                            std::to_string(b->length()));
    }
    frames.push_back(&b->frames);
  }
  const Outputs out = forward(ad::constant(stack_frames(frames)), cfg_.frames);
  std::vector<HandPoseSequence> result;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const Matrix raw = out.hands.value().middleRows(static_cast<Eigen::Index>(i) * cfg_.frames,
                                                    cfg_.frames);
    result.push_back(HandPoseSequence{canonicalize_joints(raw), bodies[i]->fps});
  }
  return result;
}

void StageOneModel::update_memories(const Outputs& outputs, Eigen::Index frames) {
  for (int s = 0; s < 2; ++s) {
    Branch& b = s == 0 ? left_ : right_;
    const Matrix& features = outputs.hand_features[s].value();
    const Matrix& motion = outputs.body_motion[s].value();
    const Eigen::Index batch = features.rows() / frames;
    for (Eigen::Index i = 0; i < batch; ++i) {
      b.srm.update_slot_ema(features.middleRows(i * frames, frames).colwise().mean());
      b.tmm.update_slot_ema(motion.row(i));
    }
  }
}

void StageOneModel::set_training(bool on) {
  for (Branch* b : {&left_, &right_}) {
    b->srm.set_training(on);
    b->tmm.set_training(on);
  }
}

Matrix stack_frames(const std::vector<const Matrix*>& sequences) {
  if (sequences.empty()) throw ValidationError("stack_frames: no sequences");
  const Eigen::Index t = sequences.front()->rows();
  const Eigen::Index w = sequences.front()->cols();
  Matrix out(t * static_cast<Eigen::Index>(sequences.size()), w);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (sequences[i]->rows() != t || sequences[i]->cols() != w) {
      throw ValidationError("stack_frames: sequences differ in shape");
    }
    out.middleRows(static_cast<Eigen::Index>(i) * t, t) = *sequences[i];
  }
  return out;
}

}  // namespace bihand
