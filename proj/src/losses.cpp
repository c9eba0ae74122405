#include "bihand/losses.hpp"

namespace bihand {

namespace {
void require_same_shape(const ad::Var& a, const ad::Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(what) + ": shape mismatch");
  }
}
}  // namespace

ad::Var loss_rec(const ad::Var& target, const ad::Var& predicted) {
  require_same_shape(target, predicted, "loss_rec");
  return ad::mean_abs(ad::sub(target, predicted));
}

ad::Var loss_perc(const ad::Var& target, const ad::Var& predicted, const HandAutoencoder& phi) {
  require_same_shape(target, predicted, "loss_perc");
  if (!phi.trained()) throw ValidationError("loss_perc: extractor is not trained");
  return ad::mean_abs(ad::sub(phi.encode(target), phi.encode(predicted)));
}

ad::Var loss_adv_discriminator(const ad::Var& d_real, const ad::Var& d_fake) {
  const ad::Var one_minus_fake = ad::sub(ad::constant(Matrix::Ones(d_fake.rows(), d_fake.cols())), d_fake);
  return ad::add(ad::mean(ad::log(d_real)), ad::mean(ad::log(one_minus_fake)));
}

ad::Var loss_adv_generator(const ad::Var& d_fake) {
  return ad::scale(ad::mean(ad::log(d_fake)), -1.0);
}

ad::Var loss_total_stage1(const StageOneLossParts& parts) {
  return ad::add(ad::add(ad::add(parts.rec, parts.adv), parts.perc),
                 ad::scale(parts.dis, kDisentangleWeight));
}

double loss_total_stage1(double rec, double adv, double perc, double dis) {
  return rec + adv + perc + kDisentangleWeight * dis;
}

ad::Var loss_stage2(const ad::Var& observed, const ad::Var& regenerated) {
  require_same_shape(observed, regenerated, "loss_stage2");
  return ad::mean_abs(ad::sub(observed, regenerated));
}

}  // namespace bihand
