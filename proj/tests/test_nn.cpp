#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "bihand/nn.hpp"
#include "test_util.hpp"

using namespace bihand;
using testutil::random_matrix;

namespace {

// Weighted sum of the output, a smooth scalar probe.
ad::Var probe(const ad::Var& y, std::uint64_t seed) {
  return ad::sum(ad::mul(y, ad::constant(random_matrix(y.rows(), y.cols(), seed))));
}

// Finite-difference check of a function of one input matrix.
double input_check(const std::function<ad::Var(const ad::Var&)>& f, const Matrix& x0,
                   std::uint64_t seed = 1) {
  nn::ParameterStore store;
  const ad::Var x = store.add("x", x0);
  return nn::finite_diff_check([&] { return probe(f(x), seed); }, store.with_prefix("x"), 1e-6, 0)
      .max_rel_error;
}

}  // namespace

TEST_CASE("mlp_forward") {
  Rng rng(1);
  nn::ParameterStore store;
  nn::Mlp mlp(store, "m", nn::MlpSpec{{5, 7, 3}}, rng);
  const ad::Var x = ad::constant(random_matrix(4, 5, 2));
  CHECK(mlp.forward(x).rows() == 4);
  CHECK(mlp.forward(x).cols() == 3);
  CHECK_THROWS_AS(mlp.forward(ad::constant(Matrix::Ones(4, 6))), ConfigError);
  CHECK_THROWS_AS(nn::Mlp(store, "bad", nn::MlpSpec{{5}}, rng), ConfigError);

  SUBCASE("zero parameters give zero output") {
    testutil::zero_parameters(store, "m.");
    CHECK(mlp.forward(x).value().isZero(0.0));
  }
  SUBCASE("identity linear layer") {
    nn::ParameterStore s;
    nn::Mlp lin(s, "lin", nn::MlpSpec{{5, 5}}, rng);
    s.get("lin.l0.weight").mutable_value() = Matrix::Identity(5, 5);
    s.get("lin.l0.bias").mutable_value().setZero();
    CHECK(lin.forward(x).value() == x.value());
  }
  SUBCASE("gradient matches finite differences") {
    const ad::Var xin = ad::constant(random_matrix(6, 5, 3));
    const Matrix target = random_matrix(6, 3, 4);
    auto loss = [&] { return ad::mean_abs(ad::sub(mlp.forward(xin), ad::constant(target))); };
    const auto report = nn::finite_diff_check(loss, store.with_prefix("m."), 1e-6, 0);
    CHECK(report.coordinates_checked == 5 * 7 + 7 + 7 * 3 + 3);
    CHECK(report.max_rel_error < 1e-3);
  }
}

TEST_CASE("multi_head_attention") {
  Rng rng(5);
  nn::ParameterStore store;
  nn::MultiHeadAttention mha(store, "a", 8, 2, rng);
  CHECK_THROWS_AS(nn::MultiHeadAttention(store, "bad", 10, 4, rng), ConfigError);

  SUBCASE("identical keys give identical output rows for any query") {
    const ad::Var q = ad::constant(random_matrix(6, 8, 1));
    Matrix ctx(5, 8);
    ctx.rowwise() = random_matrix(1, 8, 2).row(0);
    std::vector<Matrix> weights;
    const Matrix y = mha.forward(q, ad::constant(ctx), 6, 5, &weights).value();
    for (Eigen::Index r = 1; r < y.rows(); ++r) CHECK(testutil::max_abs_diff(y.row(r), y.row(0)) < 1e-12);
    for (const auto& w : weights) CHECK(testutil::max_abs_diff(w, Matrix::Constant(6, 5, 0.2)) < 1e-12);
  }
  SUBCASE("single key returns the projected value") {
    const Matrix ctx = random_matrix(1, 8, 3);
    const Matrix y1 = mha.forward(ad::constant(random_matrix(3, 8, 4)), ad::constant(ctx), 3, 1).value();
    const Matrix y2 = mha.forward(ad::constant(random_matrix(3, 8, 5)), ad::constant(ctx), 3, 1).value();
    CHECK(testutil::max_abs_diff(y1, y2) < 1e-12);
  }
  SUBCASE("full-scale shape") {
    nn::ParameterStore s;
    nn::MultiHeadAttention big(s, "b", 128, 4, rng);
    const ad::Var x = ad::constant(random_matrix(64, 128, 6));
    const Matrix y = big.forward(x, x, 64, 64).value();
    CHECK(y.rows() == 64);
    CHECK(y.cols() == 128);
  }
  SUBCASE("attention rows are stochastic") {
    std::vector<Matrix> weights;
    const ad::Var x = ad::constant(random_matrix(2 * 7, 8, 7, 3.0));
    mha.forward(x, x, 7, 7, &weights);
    REQUIRE(weights.size() == 4);  // 2 sequences x 2 heads
    for (const auto& w : weights) {
      CHECK((w.array() >= 0.0).all());
      CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("permuting key/value rows leaves the output unchanged") {
    const ad::Var q = ad::constant(random_matrix(4, 8, 8));
    const Matrix ctx = random_matrix(6, 8, 9);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix permuted(6, 8);
    for (int i = 0; i < 6; ++i) permuted.row(i) = ctx.row(perm[static_cast<std::size_t>(i)]);
    const Matrix a = mha.forward(q, ad::constant(ctx), 4, 6).value();
    const Matrix b = mha.forward(q, ad::constant(permuted), 4, 6).value();
    CHECK(testutil::max_abs_diff(a, b) < 1e-12);
  }
  SUBCASE("gradient matches finite differences") {
    const ad::Var q = ad::constant(random_matrix(2 * 4, 8, 10));
    const ad::Var ctx = ad::constant(random_matrix(2 * 5, 8, 11));
    auto loss = [&] { return probe(mha.forward(q, ctx, 4, 5), 12); };
    CHECK(nn::finite_diff_check(loss, store.with_prefix("a."), 1e-6, 0).max_rel_error < 1e-3);
  }
}

TEST_CASE("attention block and positional encoding") {
  Rng rng(6);
  nn::ParameterStore store;
  nn::AttentionBlock block(store, "blk", 8, 2, 16, rng);
  const ad::Var x = ad::constant(random_matrix(2 * 5, 8, 13));
  auto loss = [&] { return probe(block.forward(x, x, 5, 5), 14); };
  CHECK(nn::finite_diff_check(loss, store.with_prefix("blk."), 1e-6, 6).max_rel_error < 1e-3);
  const Matrix pe = nn::sinusoidal_encoding(4, 6);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe.rows() == 4);
}

TEST_CASE("finite_diff_check contract") {
  nn::ParameterStore store;
  const ad::Var p = store.add("p", random_matrix(3, 4, 15));
  auto quad = [&] { return ad::scale(ad::sum_squares(p), 0.5); };
  CHECK(nn::finite_diff_check(quad, store.with_prefix("p"), 1e-5, 0).max_rel_error < 1e-6);
  CHECK_THROWS(nn::finite_diff_check(quad, store.with_prefix("p"), 0.0));
  int calls = 0;
  auto flaky = [&] { return ad::scale(ad::sum(p), static_cast<double>(++calls)); };
  CHECK_THROWS(nn::finite_diff_check(flaky, store.with_prefix("p"), 1e-5));
}

TEST_CASE("autodiff primitives pass finite-difference checks") {
  const Matrix x = random_matrix(6, 4, 21);
  CHECK(input_check([](const ad::Var& a) { return ad::softmax_rows(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::layer_norm_rows(a); }, x) < 1e-5);
  CHECK(input_check([](const ad::Var& a) { return ad::normalize_rows(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::tanh(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::sigmoid(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::leaky_relu(a, 0.2); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::log(ad::add(ad::mul(a, a), ad::constant(Matrix::Ones(6, 4)))); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::segment_mean(a, 3); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::row_mean(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::reshape(a, 4, 6); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::transpose(a); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::slice_rows(ad::slice_cols(a, 1, 2), 2, 3); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::temporal_unfold(a, 3, 3); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::srm_mix(ad::scale(a, 0.5), a); }, x) < 1e-5);
  CHECK(input_check([](const ad::Var& a) { return ad::attention_core(a, ad::scale(a, 0.7), a, 3, 3, 2); }, x) < 1e-5);
  CHECK(input_check([](const ad::Var& a) { return ad::mul_colvec(a, ad::slice_cols(a, 0, 1)); }, x) < 1e-6);
  CHECK(input_check([](const ad::Var& a) { return ad::mul_rowvec(a, ad::slice_rows(a, 0, 1)); }, x) < 1e-6);
}

TEST_CASE("parameter store, clipping and Adam") {
  nn::ParameterStore store;
  const ad::Var a = store.add("a", Matrix::Constant(1, 2, 1.0));
  CHECK_THROWS_AS(store.add("a", Matrix::Zero(1, 1)), ConfigError);
  CHECK_THROWS_AS(store.get("missing"), ConfigError);
  ad::backward(ad::scale(ad::sum(a), 3.0));  // grad (3, 3), norm sqrt(18)
  const auto params = store.with_prefix("");
  CHECK(nn::clip_grad_norm(params, 1.0) == doctest::Approx(std::sqrt(18.0)));
  CHECK(nn::grad_norm(params) == doctest::Approx(1.0));
  nn::Adam adam(params, nn::AdamConfig{0.1});
  adam.step();
  // The first Adam step moves each coordinate by lr against the gradient sign.
  CHECK(a.value()(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  {
    nn::FreezeGuard guard(store, "a");
    CHECK_FALSE(a.requires_grad());
  }
  CHECK(a.requires_grad());
  store.get("a").mutable_value()(0, 0) = 0.1;
  store.round_to_float();
  CHECK(a.value()(0, 0) == static_cast<double>(0.1f));
}
