#include "bihand/hand_autoencoder.hpp"

#include <algorithm>
#include <numeric>

namespace bihand {

HandAutoencoder::HandAutoencoder(nn::ParameterStore& store, std::string prefix, int input_width,
                                 int channels, Rng& rng)
    : prefix_(std::move(prefix)),
      encoder_(store, prefix_ + ".encoder", nn::MlpSpec{{input_width, channels, channels}}, rng),
      decoder_(store, prefix_ + ".decoder", nn::MlpSpec{{channels, channels, input_width}}, rng) {}

ad::Var HandAutoencoder::encode(const ad::Var& frames) const { return encoder_.forward(frames); }
ad::Var HandAutoencoder::decode(const ad::Var& features) const {
  return decoder_.forward(features);
}

Matrix HandAutoencoder::encode(const Matrix& frames) const {
  return encoder_.forward(ad::constant(frames)).value();
}

Matrix HandAutoencoder::decode(const Matrix& features) const {
  return decoder_.forward(ad::constant(features)).value();
}

std::vector<double> HandAutoencoder::train(nn::ParameterStore& store, const Matrix& frames,
                                           const TrainOptions& opts) {
  if (frames.cols() != input_width()) {
    throw ValidationError(prefix_ + ": training frames have width " +
                          std::to_string(frames.cols()));
  }
  if (frames.rows() == 0) throw ValidationError(prefix_ + ": no training frames");
  nn::Adam adam(store.with_prefix(prefix_ + "."), nn::AdamConfig{opts.lr});
  Rng rng(opts.seed);
  const Eigen::Index n = frames.rows();
  const Eigen::Index batch = (opts.batch <= 0 || opts.batch >= n) ? n : opts.batch;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(opts.steps));
  Matrix x(batch, frames.cols());
  for (int step = 0; step < opts.steps; ++step) {
    if (batch == n) {
      x = frames;
    } else {
      for (Eigen::Index i = 0; i < batch; ++i) x.row(i) = frames.row(pick(rng));
    }
    store.zero_grad(prefix_ + ".");
    const ad::Var input = ad::constant(x);
    const ad::Var loss = ad::mean_abs(ad::sub(decode(encode(input)), input));
    ad::backward(loss);
    adam.step();
    store.round_to_float(prefix_ + ".");
    losses.push_back(loss.scalar());
  }
  store.zero_grad(prefix_ + ".");
  trained_ = true;
  return losses;
}

ad::Var disentangle_loss(const ad::Var& f_recon, const ad::Var& f, const HandAutoencoder& ae) {
  if (f_recon.cols() != ae.channels() || f.cols() != ae.channels() || f.rows() != f_recon.rows()) {
    throw ValidationError("disentangle_loss: feature shape mismatch");
  }
  const ad::Var feature_term = ad::mean_abs(ad::sub(f_recon, f));
  const ad::Var pose_term = ad::mean_abs(ad::sub(ae.decode(f_recon), ae.decode(f)));
  return ad::add(feature_term, pose_term);
}

Matrix perceptual_features(const HandAutoencoder& phi, const HandPoseSequence& hands) {
  if (!phi.trained()) throw ValidationError("perceptual_features: extractor is not trained");
  if (hands.frames.cols() != phi.input_width()) {
    throw ValidationError("perceptual_features: expected " + std::to_string(phi.input_width()) +
                          " values per frame");
  }
  return phi.encode(hands.frames);
}

Matrix pooled_single_hands(const std::vector<const SequenceRecord*>& records) {
  Eigen::Index total = 0;
  for (const auto* r : records) total += r->hands.length();
  Matrix out(2 * total, kSingleHandDims);
  Eigen::Index row = 0;
  for (const auto* r : records) {
    const Eigen::Index t = r->hands.length();
    out.middleRows(row, t) = r->hands.frames.leftCols(kSingleHandDims);
    row += t;
    out.middleRows(row, t) = mirror_single_hand(r->hands.frames.rightCols(kSingleHandDims));
    row += t;
  }
  return out;
}

}  // namespace bihand
