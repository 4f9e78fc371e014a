#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "lumifield/autodiff.hpp"
#include "lumifield/rng.hpp"

using namespace lumifield;
using lumitest::DMat;
using lumitest::gradcheck_max_rel_err;

namespace {

DMat random_mat(Rng& rng, int r, int c, double scale = 1.0, double offset = 0.0) {
  DMat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale + offset;
  return m;
}

}  // namespace

TEST_CASE("element-wise and scalar op gradients match finite differences") {
  Rng rng(5);
  const DMat a = random_mat(rng, 4, 3);
  const DMat b = random_mat(rng, 4, 3, 1.0, 3.0);  // keep positive-ish for div

  auto weighted_sum = [](Tape<double>& t, Var<double> v) {
    // deterministic weights so the loss mixes all entries
    DMat w(t.value(v).rows(), t.value(v).cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(mul(v, t.constant(w)));
  };

  SECTION("add/sub/mul/div") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = add(xs[0], xs[1]);
          u = sub(u, mul(xs[0], xs[1]));
          u = div(u, add_const(square(xs[1]), 1.0));
          return weighted_sum(t, u);
        },
        {a, b});
    CHECK(err < 1e-6);
  }

  SECTION("exp/log/sqrt/square") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = exp_(scale(xs[0], 0.5));
          u = add(u, log_(add_const(square(xs[1]), 1.0)));
          u = add(u, sqrt_(add_const(square(xs[0]), 0.7)));
          return weighted_sum(t, u);
        },
        {a, b});
    CHECK(err < 1e-6);
  }

  SECTION("sin/cos") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          return weighted_sum(t, add(sin_(xs[0]), cos_(scale(xs[0], 1.7))));
        },
        {a});
    CHECK(err < 1e-6);
  }

  SECTION("relu/softplus/clamp away from kinks") {
    DMat c = a;
    for (Eigen::Index i = 0; i < c.size(); ++i)
      if (std::abs(c.data()[i]) < 0.05) c.data()[i] = 0.2;
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = relu(xs[0]);
          u = add(u, softplus_shift(xs[0]));
          u = add(u, clamp_min(xs[0], -0.5));
          return weighted_sum(t, u);
        },
        {c}, 1e-5);
    CHECK(err < 1e-5);
  }

  SECTION("pow") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          return weighted_sum(t, pow_(add_const(square(xs[0]), 0.3), 2.7));
        },
        {a});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("matrix op gradients match finite differences") {
  Rng rng(6);
  const DMat a = random_mat(rng, 5, 4);
  const DMat b = random_mat(rng, 4, 3);
  const DMat rv = random_mat(rng, 1, 4);
  const DMat cv = random_mat(rng, 5, 1, 1.0, 2.5);

  auto spread = [](Tape<double>& t, Var<double> v) {
    DMat w(t.value(v).rows(), t.value(v).cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.2 + 0.05 * static_cast<double>(i % 11);
    return sum(mul(v, t.constant(w)));
  };

  SECTION("matmul/transpose/reshape") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = matmul(xs[0], xs[1]);            // 5x3
          u = matmul(transpose(u), xs[0]);                 // 3x4
          u = reshape(u, 4, 3);
          return spread(t, u);
        },
        {a, b});
    CHECK(err < 1e-6);
  }

  SECTION("broadcasts") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = add_rowvec(xs[0], xs[1]);
          u = mul_rowvec(u, xs[1]);
          u = mul_colvec(u, xs[2]);
          u = div_colvec(u, add_const(square(xs[2]), 1.0));
          return spread(t, u);
        },
        {a, rv, cv});
    CHECK(err < 1e-6);
  }

  SECTION("reductions and slices") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> u = concat_cols<double>({slice_cols(xs[0], 0, 2), slice_cols(xs[0], 2, 2)});
          Var<double> v = concat_rows<double>({slice_rows(u, 0, 3), slice_rows(u, 3, 2)});
          Var<double> g = gather_rows(v, {0, 2, 2, 4});
          Var<double> parts = add(rowsum(g), mul(rowsum(g), rowsum(g)));
          return add(sum(parts), add(mean(xs[0]), sum(colsum(square(xs[0])))));
        },
        {a});
    CHECK(err < 1e-6);
  }

  SECTION("scalar broadcast add") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          return spread(t, exp_(add_broadcast_scalar(xs[0], xs[1])));
        },
        {random_mat(rng, 3, 3, 0.3), random_mat(rng, 1, 1, 0.2)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("fused layer gradients match finite differences") {
  Rng rng(8);

  SECTION("layer norm") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> y = layer_norm_rows(xs[0], xs[1], xs[2]);
          DMat w(t.value(y).rows(), t.value(y).cols());
          for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.4 + 0.07 * static_cast<double>(i % 5);
          return sum(mul(y, t.constant(w)));
        },
        {random_mat(rng, 6, 8), random_mat(rng, 1, 8, 0.5, 1.0), random_mat(rng, 1, 8, 0.3)});
    CHECK(err < 1e-6);
  }

  SECTION("multi-head attention") {
    const double err = gradcheck_max_rel_err(
        [&](Tape<double>& t, const std::vector<Var<double>>& xs) {
          Var<double> y = multihead_attention(xs[0], xs[1], xs[2], 2);
          DMat w(t.value(y).rows(), t.value(y).cols());
          for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.4 + 0.03 * static_cast<double>(i % 9);
          return sum(mul(y, t.constant(w)));
        },
        {random_mat(rng, 5, 8), random_mat(rng, 4, 8), random_mat(rng, 4, 8)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("attention matches a manual single-head softmax") {
  Tape<float> t;
  Rng rng(4);
  Mat<float> q(2, 4), k(3, 4), v(3, 4);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = static_cast<float>(rng.normal());
  for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = static_cast<float>(rng.normal());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<float>(rng.normal());
  Var<float> out = multihead_attention(t.constant(q), t.constant(k), t.constant(v), 1);

  Mat<float> scores = (q * k.transpose()) / std::sqrt(4.0f);
  for (int r = 0; r < 2; ++r) {
    Eigen::RowVectorXf e = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    Eigen::RowVectorXf sm = e / e.sum();
    Eigen::RowVectorXf expect = sm * v;
    for (int c = 0; c < 4; ++c)
      CHECK(t.value(out)(r, c) == Catch::Approx(expect(c)).margin(1e-6));
  }
}

TEST_CASE("gradient API contract") {
  Tape<double> t;
  DMat z0(2, 3);
  z0 << 1, -2, 3, 0.5, 0, -1;
  Var<double> z = t.leaf(z0, true);

  SECTION("gradient of squared Frobenius norm is 2Z exactly") {
    Var<double> loss = sum(square(z));
    t.backward(loss);
    const DMat g = t.grad(z);
    CHECK((g - 2.0 * z0).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("constant loss yields zero gradients") {
    Var<double> loss = t.constant_scalar(3.0);
    t.backward(loss);
    CHECK(t.grad(z).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("unused parameter gets zero gradient") {
    Var<double> other = t.leaf(DMat::Ones(2, 2), true);
    Var<double> loss = sum(z);
    t.backward(loss);
    CHECK(t.grad(other).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("detached values error") {
    Var<double> c = t.constant(z0);
    CHECK_THROWS_AS(t.grad(c), std::logic_error);
    Tape<double> other_tape;
    Var<double> foreign = other_tape.leaf(z0, true);
    CHECK_THROWS_AS(t.value(foreign), std::logic_error);
    CHECK_THROWS_AS(add(z, foreign), std::logic_error);
  }

  SECTION("deterministic re-evaluation") {
    Var<double> l1 = sum(exp_(scale(z, 0.5)));
    Var<double> l2 = sum(exp_(scale(z, 0.5)));
    CHECK(t.scalar_value(l1) == t.scalar_value(l2));
  }
}
