#include <doctest.h>

#include <memory>

#include "bihand/hand_autoencoder.hpp"
#include "bihand/stage_one.hpp"
#include "test_util.hpp"

using namespace bihand;
using testutil::random_matrix;

namespace {

struct Fixture {
  ModelConfig model;
  MemoryConfig memory;
  nn::ParameterStore store;
  std::unique_ptr<StageOneModel> net;

  Fixture(int channels, int frames, std::uint64_t seed = 1) {
    model.channels = channels;
    model.heads = 4;
    model.ffn_width = 2 * channels;
    model.frames = frames;
    model.disc_width = 16;
    memory.slots = 8;
    Rng rng(seed);
    net = std::make_unique<StageOneModel>(store, model, memory, rng);
  }
};

void swap_values(nn::ParameterStore& store, const std::string& a, const std::string& b) {
  Matrix tmp = store.get(a).value();
  store.get(a).mutable_value() = store.get(b).value();
  store.get(b).mutable_value() = tmp;
}

void swap_prefix(nn::ParameterStore& store, const std::string& left, const std::string& right) {
  for (const auto& p : store.with_prefix(left)) {
    swap_values(store, p.name, right + p.name.substr(left.size()));
  }
}

}  // namespace

TEST_CASE("shapes") {
  Fixture f(32, 16);
  const Matrix body = random_matrix(2 * 16, 24, 1, 0.3);
  const auto out = f.net->forward(ad::constant(body), 16);
  CHECK(out.hands.rows() == 32);
  CHECK(out.hands.cols() == 90);
  CHECK(out.body_features.cols() == 32);
  CHECK(out.hand_features[0].cols() == 32);
  CHECK(out.body_motion[0].rows() == 2);
  CHECK(out.body_motion[0].cols() == 16);
  CHECK_THROWS_AS(f.net->forward(ad::constant(body), 8), ValidationError);
  CHECK_THROWS_AS(f.net->encode_body(ad::constant(random_matrix(16, 23, 2)), 16), ValidationError);

  const BodyPoseSequence seq{random_matrix(16, 24, 3, 0.3), 30};
  const HandPoseSequence pred = f.net->predict(seq);
  CHECK(pred.frames.rows() == 16);
  CHECK(pred.frames.cols() == 90);
  CHECK(canonicalize_joints(pred.frames) == pred.frames);
  CHECK_THROWS_AS(f.net->predict(BodyPoseSequence{random_matrix(8, 24, 3), 30}), ValidationError);
}

TEST_CASE("full-scale shapes") {
  Fixture f(128, 64);
  const auto out = f.net->forward(ad::constant(random_matrix(64, 24, 4, 0.3)), 64);
  CHECK(out.body_features.rows() == 64);
  CHECK(out.body_features.cols() == 128);
  CHECK(out.hands.rows() == 64);
  CHECK(out.hands.cols() == 90);
}

TEST_CASE("body encoder locality and hand projections") {
  Fixture f(16, 8);
  const Matrix body = random_matrix(8, 24, 5, 0.3);
  Matrix changed = body;
  changed.row(5).setConstant(0.9);
  const Matrix a = f.net->encode_body(ad::constant(body), 8).value();
  const Matrix b = f.net->encode_body(ad::constant(changed), 8).value();
  for (Eigen::Index t = 0; t < 8; ++t) {
    if (t == 5) {
      CHECK(testutil::max_abs_diff(a.row(t), b.row(t)) > 1e-6);
    } else {
      CHECK(testutil::max_abs_diff(a.row(t), b.row(t)) < 1e-12);
    }
  }
  const ad::Var feats = ad::constant(a);
  const Matrix left = f.net->project_to_hand(feats, HandSide::kLeft).value();
  const Matrix right = f.net->project_to_hand(feats, HandSide::kRight).value();
  CHECK(left.rows() == 8);
  CHECK(left.cols() == 16);
  CHECK(testutil::max_abs_diff(left, right) > 1e-6);

  Rng rng(6);
  nn::ParameterStore ae_store;
  HandAutoencoder single(ae_store, "single", 45, 16, rng);
  CHECK(disentangle_loss(ad::constant(left), ad::constant(random_matrix(8, 16, 7)), single).scalar() >= 0.0);
}

TEST_CASE("batch items are independent") {
  Fixture f(16, 8);
  const Matrix a = random_matrix(8, 24, 8, 0.3);
  const Matrix b = random_matrix(8, 24, 9, 0.3);
  Matrix both(16, 24);
  both << a, b;
  const Matrix joint = f.net->forward(ad::constant(both), 8).hands.value();
  const Matrix solo_a = f.net->forward(ad::constant(a), 8).hands.value();
  const Matrix solo_b = f.net->forward(ad::constant(b), 8).hands.value();
  CHECK(testutil::max_abs_diff(joint.topRows(8), solo_a) < 1e-10);
  CHECK(testutil::max_abs_diff(joint.bottomRows(8), solo_b) < 1e-10);
}

TEST_CASE("end-to-end gradient check at C=16, T=8") {
  Fixture f(16, 8, 2);
  f.net->set_training(false);
  const ad::Var body = ad::constant(random_matrix(2 * 8, 24, 10, 0.5));
  const Matrix probe = random_matrix(16, 90, 11);
  auto loss = [&] { return ad::sum(ad::mul(f.net->forward(body, 8).hands, ad::constant(probe))); };
  std::vector<nn::NamedParam> params;
  for (const auto& p : f.store.with_prefix("")) {
    if (p.name.rfind("stage1.disc.", 0) != 0) params.push_back(p);
  }
  const auto report = nn::finite_diff_check(loss, params, 1e-6, 2, 3, 1e-4);
  INFO("worst parameter: " << report.worst_param);
  CHECK(report.max_rel_error < 1e-2);
  CHECK(report.coordinates_checked > 100);
}

TEST_CASE("discriminator") {
  Fixture f(16, 8);
  const MotionDiscriminator& disc = f.net->discriminator();
  const Matrix hands = random_matrix(3 * 8, 90, 12);
  const Matrix p = disc.forward(ad::constant(hands), 8).value();
  CHECK(p.rows() == 3);
  CHECK(p.cols() == 1);
  CHECK((p.array() > 0.0).all());
  CHECK((p.array() < 1.0).all());
  CHECK_THROWS_AS(disc.forward(ad::constant(random_matrix(8, 45, 1)), 8), ValidationError);

  SUBCASE("zero weights give 0.5") {
    testutil::zero_parameters(f.store, "stage1.disc.");
    CHECK(disc.forward(ad::constant(hands), 8).value().isApproxToConstant(0.5, 0.0));
  }
  SUBCASE("outputs are clamped") {
    f.store.get("stage1.disc.out.bias").mutable_value()(0, 0) = 1e3;
    CHECK(disc.forward(ad::constant(hands), 8).value()(0, 0) == 1.0 - MotionDiscriminator::kClamp);
    f.store.get("stage1.disc.out.bias").mutable_value()(0, 0) = -1e3;
    CHECK(disc.forward(ad::constant(hands), 8).value()(0, 0) == MotionDiscriminator::kClamp);
  }
  SUBCASE("gradient check") {
    const ad::Var h = ad::constant(random_matrix(2 * 8, 90, 13));
    auto loss = [&] { return ad::sum(ad::log(disc.forward(h, 8))); };
    CHECK(nn::finite_diff_check(loss, f.store.with_prefix("stage1.disc."), 1e-6, 4, 0, 1e-6).max_rel_error < 1e-3);
  }
}

TEST_CASE("left/right symmetry") {
  Fixture f(16, 8, 4);
  const ad::Var body = ad::constant(random_matrix(8, 24, 14, 0.4));
  const Matrix before = f.net->forward(body, 8).hands.value();

  swap_prefix(f.store, "stage1.left.", "stage1.right.");
  swap_prefix(f.store, "srm.left.", "srm.right.");
  swap_prefix(f.store, "tmm.left.", "tmm.right.");
  // The merge MLP sees [left | right]; swap its input row blocks.
  Matrix& merge = f.store.get("stage1.merge.l0.weight").mutable_value();
  const Matrix top = merge.topRows(16);
  merge.topRows(16) = merge.bottomRows(16).eval();
  merge.bottomRows(16) = top;
  // Swap the output head's left/right columns.
  for (const char* name : {"stage1.head.l1.weight", "stage1.head.l1.bias"}) {
    Matrix& m = f.store.get(name).mutable_value();
    const Matrix left = m.leftCols(45);
    m.leftCols(45) = m.rightCols(45).eval();
    m.rightCols(45) = left;
  }
  const Matrix after = f.net->forward(body, 8).hands.value();
  CHECK(testutil::max_abs_diff(after.leftCols(45), before.rightCols(45)) < 1e-10);
  CHECK(testutil::max_abs_diff(after.rightCols(45), before.leftCols(45)) < 1e-10);
}

TEST_CASE("attention rows are stochastic at every application") {
  Fixture f(16, 8);
  const auto out = f.net->forward(ad::constant(random_matrix(2 * 8, 24, 15, 0.4)), 8, true);
  // Body transformer + per side (hand transformer + 3 cross) + 3 decoder,
  // each over 2 sequences x 4 heads.
  CHECK(out.attention.size() == static_cast<std::size_t>((1 + 2 * 4 + 3) * 2 * 4));
  for (const auto& w : out.attention) {
    CHECK((w.array() >= 0.0).all());
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("forward is deterministic and memory updates are gated") {
  Fixture a(16, 8, 7);
  Fixture b(16, 8, 7);
  const ad::Var body = ad::constant(random_matrix(8, 24, 16, 0.4));
  const auto oa = a.net->forward(body, 8);
  CHECK(oa.hands.value() == b.net->forward(body, 8).hands.value());
  CHECK(oa.hands.value() == a.net->forward(body, 8).hands.value());

  const Matrix srm_before = a.store.get("srm.left.slots").value();
  a.net->update_memories(oa, 8);
  CHECK(a.store.get("srm.left.slots").value() != srm_before);
  a.net->set_training(false);
  CHECK_THROWS_AS(a.net->update_memories(oa, 8), std::logic_error);
}
