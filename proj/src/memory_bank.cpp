#include "bihand/memory_bank.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace bihand {

MemoryBank::MemoryBank(nn::ParameterStore& store, std::string name, Matrix init, double gamma)
    : name_(std::move(name)), gamma_(gamma) {
  if (init.rows() < 1 || init.cols() < 1) throw ConfigError(name_ + ": bank needs >= 1 slot");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError(name_ + ": gamma must lie in [0, 1]");
  if (!init.allFinite()) throw ValidationError(name_ + ": non-finite slot initialization");
  slots_ = store.add(name_ + ".slots", std::move(init));
}

Matrix random_slots(Eigen::Index count, Eigen::Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(count, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  for (Eigen::Index r = 0; r < count; ++r) {
    const double n = m.row(r).norm();
    if (n > 1e-12) m.row(r) /= n;
  }
  return m;
}

Matrix cosine_similarity(const Matrix& a, const Matrix& b) {
  return ad::matmul(ad::normalize_rows(ad::constant(a)),
                    ad::transpose(ad::normalize_rows(ad::constant(b))))
      .value();
}

MemoryBank::SoftRead MemoryBank::read_soft(const ad::Var& queries) const {
  if (queries.cols() != dim()) {
    throw ValidationError(name_ + ": query width " + std::to_string(queries.cols()) +
                          ", bank width " + std::to_string(dim()));
  }
  const ad::Var cos =
      ad::matmul(ad::normalize_rows(queries), ad::transpose(ad::normalize_rows(slots_)));
  SoftRead out;
  out.affinity = ad::softmax_rows(cos);
  out.aggregate = ad::matmul(out.affinity, slots_);
  return out;
}

MemoryBank::HardRead MemoryBank::read_hard(const RowVector& query) const {
  if (query.size() != dim()) {
    throw ValidationError(name_ + ": query width " + std::to_string(query.size()) +
                          ", bank width " + std::to_string(dim()));
  }
  if (!query.allFinite()) throw ValidationError(name_ + ": non-finite query");
  const Matrix cos = cosine_similarity(Matrix(query), slots_.value());
  HardRead out;
  double best = cos(0, 0);
  for (Eigen::Index j = 1; j < cos.cols(); ++j) {
    if (cos(0, j) > best) {
      best = cos(0, j);
      out.index = j;
    }
  }
  out.slot = slots_.value().row(out.index);
  return out;
}

Eigen::Index MemoryBank::update_slot_ema(const RowVector& query) {
  if (!training_) throw std::logic_error(name_ + ": EMA update on a frozen bank");
  const Eigen::Index r = read_hard(query).index;
  Matrix& slots = slots_.mutable_value();
  slots.row(r) = gamma_ * slots.row(r) + (1.0 - gamma_) * query;
  return r;
}

ad::Var spatial_dependency(const ad::Var& f_delta, const ad::Var& f_t) {
  if (f_delta.rows() != 1 || f_t.rows() != 1 || f_delta.cols() != f_t.cols()) {
    throw ValidationError("spatial_dependency: expected two 1 x C features of equal width");
  }
  return ad::softmax_rows(ad::matmul(ad::transpose(f_delta), f_t));
}

ad::Var srm_next_feature(const ad::Var& f_t, const ad::Var& dependency) {
  if (f_t.rows() != 1 || dependency.rows() != f_t.cols() || dependency.cols() != f_t.cols()) {
    throw ValidationError("srm_next_feature: expected 1 x C feature and C x C dependency");
  }
  return ad::add(f_t, ad::matmul(f_t, dependency));
}

MotionEncoder::MotionEncoder(nn::ParameterStore& store, const std::string& prefix, int frames,
                             Rng& rng)
    : frames_(frames), temporal_(store, prefix, nn::MlpSpec{{frames, frames, frames}}, rng) {}

ad::Var MotionEncoder::forward(const ad::Var& features) const {
  if (features.rows() % frames_ != 0) {
    throw ValidationError("motion_encode: rows not a multiple of " + std::to_string(frames_));
  }
  const Eigen::Index batch = features.rows() / frames_;
  return temporal_.forward(ad::reshape(ad::row_mean(features), batch, frames_));
}

ad::Var tmm_enhance(const ad::Var& features, const ad::Var& embedding) {
  if (embedding.rows() * embedding.cols() != features.rows()) {
    throw ValidationError("tmm_enhance: embedding length does not match frame count");
  }
  const ad::Var weights =
      ad::reshape(ad::softmax_rows(embedding), embedding.rows() * embedding.cols(), 1);
  return ad::add(features, ad::mul_colvec(features, weights));
}

Matrix prototype_slots(const std::vector<const HandPoseSequence*>& hands,
                       const HandAutoencoder& encoder, Eigen::Index slot_count, Rng& rng) {
  if (slot_count < 1) throw ConfigError("prototype memory: slot count must be >= 1");
  if (static_cast<Eigen::Index>(hands.size()) < slot_count) {
    throw ValidationError("prototype memory: need at least " + std::to_string(slot_count) +
                          " sequences, got " + std::to_string(hands.size()));
  }
  std::vector<std::size_t> order(hands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  Matrix slots(slot_count, encoder.channels());
  for (Eigen::Index s = 0; s < slot_count; ++s) {
    const auto* h = hands[order[static_cast<std::size_t>(s)]];
    slots.row(s) = encoder.encode(h->frames).colwise().mean();
  }
  return slots;
}

MemoryBank build_prototype_memory(nn::ParameterStore& store,
                                  const std::vector<const HandPoseSequence*>& hands,
                                  const HandAutoencoder& encoder, Eigen::Index slot_count,
                                  double gamma, Rng& rng) {
  return MemoryBank(store, "proto", prototype_slots(hands, encoder, slot_count, rng), gamma);
}

}  // namespace bihand
