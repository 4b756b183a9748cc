#include <doctest.h>

#include <cmath>
#include <sstream>

#include "alloc_layers/neuralnet.hpp"
#include "alloc_layers/rng.hpp"

using namespace alloc;
using namespace alloc::nn;

namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Scalar loss sum(c .* net(x, aux)) and its finite-difference gradient in the
// flattened parameters.
double loss(const ParamSet& p, const NetSpec& spec, const Matrix& x, const Matrix* aux, const Matrix& c) {
  return (forward(p, spec, x, aux).output().array() * c.array()).sum();
}

Vector fd_param_gradient(ParamSet p, const NetSpec& spec, const Matrix& x, const Matrix* aux, const Matrix& c) {
  const Vector flat = p.flatten();
  Vector g(flat.size());
  const double h = 1e-6;
  for (Index i = 0; i < flat.size(); ++i) {
    Vector probe = flat;
    probe[i] += h;
    p.assign(probe);
    const double up = loss(p, spec, x, aux, c);
    probe[i] -= 2 * h;
    p.assign(probe);
    const double down = loss(p, spec, x, aux, c);
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("init_params") {
  const NetSpec spec{{4, 4, 6}, Activation::kRelu, true, OutputActivation::kLinear};
  const ParamSet a = init_params(spec, 5), b = init_params(spec, 5);
  CHECK(a.flatten() == b.flatten());
  CHECK(a.flatten() != init_params(spec, 6).flatten());
  CHECK(a[0].value.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 8.0));
  const Matrix& w = a[4].value;  // 6 x 4 output weight
  CHECK((w.transpose() * w - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-6);
  const NetSpec wide{{3, 8, 2}, Activation::kTanh, false, OutputActivation::kLinear};
  const ParamSet pw = init_params(wide, 1);
  const Matrix& v = pw[2].value;  // 2 x 8
  CHECK((v * v.transpose() - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK_THROWS_AS((NetSpec{{3, 2}}).validate(), InvalidBounds);
}

TEST_CASE("forward special cases") {
  const NetSpec spec{{3, 5, 2}, Activation::kRelu, false, OutputActivation::kLinear};
  ParamSet p = init_params(spec, 1);
  p.assign(Vector::Zero(p.parameter_count()));
  p.mutable_value(3) = (Matrix(2, 1) << 0.3, -0.7).finished();
  const Vector out = predict(p, spec, Vector::Ones(3));
  CHECK(out[0] == 0.3);
  CHECK(out[1] == -0.7);

  NetSpec unit = spec;
  unit.output = OutputActivation::kTanhUnit;
  const Vector squashed = predict(p, unit, Vector::Ones(3));
  CHECK(squashed[0] == doctest::Approx((std::tanh(0.3) + 1) / 2));

  // Identity through ReLU on non-negative inputs.
  const NetSpec id{{2, 2, 2}, Activation::kRelu, false, OutputActivation::kLinear};
  ParamSet q = init_params(id, 2);
  q.mutable_value(0) = Matrix::Identity(2, 2);
  q.mutable_value(1).setZero();
  q.mutable_value(2) = Matrix::Identity(2, 2);
  q.mutable_value(3).setZero();
  const Vector x = (Vector(2) << 0.25, 0.75).finished();
  CHECK(predict(q, id, x) == x);

  CHECK_THROWS_AS(predict(p, spec, Vector::Ones(4)), DimensionMismatch);
}

TEST_CASE("backward matches finite differences") {
  Rng rng(42);
  int trial = 0;
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    for (bool ln : {false, true}) {
      for (OutputActivation out : {OutputActivation::kLinear, OutputActivation::kTanhUnit}) {
        for (Index aux_width : {0, 2}) {
          NetSpec spec{{3, 6, 5, 2}, act, ln, out, aux_width, 1};
          const ParamSet p = init_params(spec, static_cast<std::uint64_t>(++trial));
          const Matrix x = random_matrix(rng, 3, 4);
          const Matrix aux = random_matrix(rng, 2, 4);
          const Matrix* aux_ptr = aux_width > 0 ? &aux : nullptr;
          const Matrix c = random_matrix(rng, 2, 4);
          const Tape tape = forward(p, spec, x, aux_ptr);
          const Gradients g = backward(tape, c);
          const Vector fd = fd_param_gradient(p, spec, x, aux_ptr, c);
          CHECK(max_relative_error(g.params.flatten(), fd) <= 1e-4);

          // Input gradients, column by column.
          for (Index col = 0; col < 4; ++col) {
            auto f = [&](const Vector& v) {
              Matrix xx = x;
              xx.col(col) = v;
              return Vector::Constant(1, loss(p, spec, xx, aux_ptr, c));
            };
            const auto fdx = finite_diff_jacobian(f, x.col(col));
            CHECK(max_relative_error(g.input.col(col).transpose(), fdx.d_dy) <= 1e-4);
            if (aux_width > 0) {
              auto fa = [&](const Vector& v) {
                Matrix aa = aux;
                aa.col(col) = v;
                return Vector::Constant(1, loss(p, spec, x, &aa, c));
              };
              const auto fda = finite_diff_jacobian(fa, aux.col(col));
              CHECK(max_relative_error(g.aux.col(col).transpose(), fda.d_dy) <= 1e-4);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("linear layer gradient equals its input") {
  const NetSpec spec{{3, 1, 1}, Activation::kRelu, false, OutputActivation::kLinear};
  ParamSet p = init_params(spec, 3);
  p.mutable_value(0) = Matrix::Ones(1, 3);
  p.mutable_value(1) = Matrix::Constant(1, 1, 10.0);
  p.mutable_value(2) = Matrix::Ones(1, 1);
  const Vector x = (Vector(3) << 0.5, 1.5, 2.0).finished();
  const auto g = backward(forward(p, spec, x), Matrix::Ones(1, 1));
  CHECK(g.params[0].value.row(0).transpose() == x);
}

TEST_CASE("layer norm input gradient sums to zero") {
  Rng rng(8);
  // Identity first layer so the normalised group is the input itself.
  const NetSpec square{{5, 5, 1}, Activation::kTanh, true, OutputActivation::kLinear};
  ParamSet q = init_params(square, 4);
  q.mutable_value(0) = Matrix::Identity(5, 5);
  const Matrix x = random_matrix(rng, 5, 3);
  const auto g = backward(forward(q, square, x), Matrix::Ones(1, 3));
  for (Index c = 0; c < 3; ++c) CHECK(std::abs(g.input.col(c).sum()) <= 1e-10);
  const Vector shifted = predict(q, square, Vector(x.col(0).array() + 3.0));
  CHECK(shifted[0] == doctest::Approx(predict(q, square, Vector(x.col(0)))[0]).epsilon(1e-9));
}

TEST_CASE("stale tapes are rejected") {
  const NetSpec spec{{2, 3, 1}};
  ParamSet p = init_params(spec, 1);
  const Tape tape = forward(p, spec, Matrix::Ones(2, 1));
  CHECK_NOTHROW(backward(tape, Matrix::Ones(1, 1)));
  p.mutable_value(1)(0, 0) += 1.0;
  CHECK_THROWS_AS(backward(tape, Matrix::Ones(1, 1)), StaleTape);
  CHECK_THROWS_AS(backward(Tape{}, Matrix::Ones(1, 1)), StaleTape);
}

TEST_CASE("adam") {
  const NetSpec spec{{2, 3, 1}};
  ParamSet p = init_params(spec, 1);
  const Vector before = p.flatten();
  AdamState state = adam_init(p);
  adam_step(p, p.zeros_like(), state, {});
  CHECK(p.flatten() == before);

  ParamSet g = p.zeros_like();
  g.assign(Vector::Constant(p.parameter_count(), -0.3));
  ParamSet q = init_params(spec, 1);
  AdamState s2 = adam_init(q);
  adam_step(q, g, s2, {.lr = 0.01});
  CHECK(max_relative_error(q.flatten() - before, Vector::Constant(before.size(), 0.01)) <= 1e-6);
  for (int i = 0; i < 2000; ++i) {
    const Vector prev = q.flatten();
    adam_step(q, g, s2, {.lr = 0.01});
    if (i == 1999) CHECK(max_relative_error(q.flatten() - prev, Vector::Constant(before.size(), 0.01)) <= 1e-6);
  }
}

TEST_CASE("soft_update") {
  const NetSpec spec{{2, 3, 1}};
  ParamSet target = init_params(spec, 1);
  const ParamSet main = init_params(spec, 2);
  ParamSet copy = target;
  soft_update(copy, main, 1.0);
  CHECK(copy.flatten() == main.flatten());

  ParamSet zero = target.zeros_like();
  ParamSet two = target.zeros_like();
  two.assign(Vector::Constant(two.parameter_count(), 2.0));
  soft_update(zero, two, 0.5);
  CHECK(zero.flatten() == Vector::Constant(two.parameter_count(), 1.0));

  const double d0 = (target.flatten() - main.flatten()).norm();
  for (int k = 1; k <= 50; ++k) {
    soft_update(target, main, 0.1);
    CHECK((target.flatten() - main.flatten()).norm() == doctest::Approx(d0 * std::pow(0.9, k)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(soft_update(target, main, 0.0), InvalidBounds);
}

TEST_CASE("perturb_params") {
  const NetSpec spec{{4, 8, 8, 3}, Activation::kRelu, true, OutputActivation::kLinear};
  const ParamSet p = init_params(spec, 1);
  CHECK(perturb_params(p, 0.0, 9).flatten() == p.flatten());
  const ParamSet a = perturb_params(p, 0.1, 9), b = perturb_params(p, 0.1, 9);
  CHECK(a.flatten() == b.flatten());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool norm = p[i].kind == TensorKind::kNormGain || p[i].kind == TensorKind::kNormBias;
    CHECK((a[i].value == p[i].value) == norm);
  }

  Rng rng(2);
  const Matrix states = random_matrix(rng, 4, 64);
  const Matrix clean = forward(p, spec, states).output();
  double last = 0.0;
  for (double sigma : {0.01, 0.03, 0.1, 0.3, 1.0}) {
    const Matrix noisy = forward(perturb_params(p, sigma, 17), spec, states).output();
    const double div = (noisy - clean).colwise().norm().mean();
    CHECK(div > last);
    last = div;
  }
}

TEST_CASE("running moments") {
  RunningMoments m(2);
  for (double v : {1.0, 2.0, 3.0}) m.update(Vector::Constant(2, v));
  CHECK(m.mean()[0] == doctest::Approx(2.0));
  CHECK(m.variance()[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.normalize(m.mean()).isZero(0.0));

  RunningMoments single(1);
  single.update(Vector::Constant(1, 5.0));
  CHECK(single.variance()[0] == 0.0);
  CHECK(std::isfinite(single.normalize(Vector::Constant(1, 6.0))[0]));

  Rng rng(6);
  RunningMoments big(3);
  Matrix samples(3, 10000);
  for (Index j = 0; j < samples.cols(); ++j) {
    for (Index i = 0; i < 3; ++i) samples(i, j) = 100.0 + (i + 1) * rng.normal();
  }
  big.update_batch(samples);
  const Vector mean = samples.rowwise().mean();
  const Vector var = (samples.colwise() - mean).array().square().rowwise().mean();
  CHECK((big.mean() - mean).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((big.variance() - var).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("checkpoint round trip") {
  Checkpoint cp;
  const NetSpec spec{{4, 5, 3, 2}, Activation::kTanh, true, OutputActivation::kTanhUnit, 2, 1};
  cp.nets["actor"] = {spec, init_params(spec, 3)};
  cp.meta["method"] = "appropt";
  cp.meta["note"] = "two words";
  RunningMoments m(3);
  m.update(Vector::LinSpaced(3, 0.1, 0.7));
  m.update(Vector::LinSpaced(3, 1.0 / 3.0, 2.0));
  cp.moments["obs"] = m;

  std::stringstream buf;
  cp.write(buf);
  const Checkpoint back = Checkpoint::read(buf);
  CHECK(back.meta.at("note") == "two words");
  CHECK(back.nets.at("actor").spec == spec);
  CHECK(back.nets.at("actor").params.flatten() == cp.nets.at("actor").params.flatten());
  CHECK(back.moments.at("obs").mean() == m.mean());
  CHECK(back.moments.at("obs").variance() == m.variance());
  CHECK(back.moments.at("obs").count() == 2);

  std::stringstream bad("alloc-layers-checkpoint 1\nnet a 3 1 1 1 relu 1 linear 0 1 4\ntensor weight 1 1 zz\n");
  CHECK_THROWS_AS(Checkpoint::read(bad), ParseError);
}
