#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "coce/models.hpp"
#include "coce/rng.hpp"

using namespace coce;

namespace {

std::vector<LabeledExample> random_batch(Rng& rng, int n, int dim, int num_classes) {
  std::vector<LabeledExample> batch(n);
  for (LabeledExample& ex : batch) {
    ex.features.resize(dim);
    for (int j = 0; j < dim; ++j) ex.features[j] = rng.normal();
    ex.label = static_cast<int>(rng.uniform_int(num_classes));
  }
  return batch;
}

}  // namespace

TEST_CASE("all-zero parameters give the uniform-softmax loss") {
  for (int c : {2, 3, 7}) {
    const ModelSpec spec = ModelSpec::linear(4, c);
    const Vec params = Vec::Zero(spec.param_count());
    Rng rng(1);
    const std::vector<LabeledExample> batch = random_batch(rng, 3, 4, c);
    const Vec losses = per_example_losses(spec, params, BatchView(batch));
    for (Eigen::Index i = 0; i < losses.size(); ++i) {
      CHECK(losses[i] == doctest::Approx(std::log(double(c))).epsilon(1e-14));
    }
  }
}

TEST_CASE("parameter counts follow the declared layout") {
  CHECK(ModelSpec::linear(10, 3).param_count() == 33);
  CHECK(ModelSpec::mlp(10, 16, 3).param_count() == 16 * 11 + 3 * 17);
}

TEST_CASE("analytic gradients match finite differences on both architectures") {
  Rng rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool mlp = trial % 2 == 1;
    const int d = 2 + static_cast<int>(rng.uniform_int(4));
    const int c = 2 + static_cast<int>(rng.uniform_int(3));
    const int h = 3 + static_cast<int>(rng.uniform_int(3));
    const ModelSpec spec = mlp ? ModelSpec::mlp(d, h, c) : ModelSpec::linear(d, c);
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    const std::vector<LabeledExample> batch = random_batch(rng, 1, d, c);

    BatchEval ev;
    per_example_loss_and_grad(spec, params, BatchView(batch), ev);
    const Vec fd = finite_diff_grad(
        [&](const Vec& p) {
          return per_example_losses(spec, p, BatchView(batch))[0];
        },
        params, 1e-6);
    const double rel =
        (ev.grads[0] - fd).norm() / std::max({ev.grads[0].norm(), fd.norm(), 1e-10});
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("cross-entropy losses are positive and vanish only at certainty") {
  Rng rng(3);
  const ModelSpec spec = ModelSpec::linear(3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    const std::vector<LabeledExample> batch = random_batch(rng, 4, 3, 3);
    const Vec losses = per_example_losses(spec, params, BatchView(batch));
    CHECK(losses.minCoeff() > 0.0);
  }

  // A huge-margin model drives the loss to zero from above.
  Vec params = Vec::Zero(spec.param_count());
  params[9] = 50.0;  // bias of class 0
  LabeledExample ex;
  ex.features = Vec::Zero(3);
  ex.label = 0;
  const Vec losses =
      per_example_losses(spec, params, BatchView(std::vector<LabeledExample>{ex}));
  CHECK(losses[0] >= 0.0);
  CHECK(losses[0] < 1e-20);
}

TEST_CASE("predict: argmax with lowest-index tie break and shift invariance") {
  const ModelSpec spec = ModelSpec::linear(2, 2);
  Vec zero = Vec::Zero(spec.param_count());
  Vec x(2);
  x << 0.3, -0.4;
  CHECK(predict(spec, zero, x) == 0);

  // Logits {0.1, 0.9} via pure biases.
  Vec params = Vec::Zero(spec.param_count());
  params[4] = 0.1;
  params[5] = 0.9;
  CHECK(predict(spec, params, x) == 1);

  // Adding a constant to all logits (both biases) changes nothing.
  Vec shifted = params;
  shifted[4] += 3.7;
  shifted[5] += 3.7;
  CHECK(predict(spec, shifted, x) == predict(spec, params, x));
}

TEST_CASE("relabeling classes permutes logits and gradients consistently") {
  Rng rng(4);
  const int d = 3, c = 4;
  const ModelSpec spec = ModelSpec::linear(d, c);
  Rng init_rng(rng.raw());
  const Vec params = init_params(spec, init_rng);
  const std::vector<LabeledExample> batch = random_batch(rng, 1, d, c);

  const int perm[4] = {2, 0, 3, 1};  // class k becomes perm[k]
  Vec permuted = Vec::Zero(spec.param_count());
  for (int k = 0; k < c; ++k) {
    for (int j = 0; j < d; ++j) {
      permuted[perm[k] + c * j] = params[k + c * j];  // column-major W
    }
    permuted[c * d + perm[k]] = params[c * d + k];
  }
  std::vector<LabeledExample> relabeled = batch;
  relabeled[0].label = perm[batch[0].label];

  const Vec z = logits(spec, params, batch[0].features);
  const Vec zp = logits(spec, permuted, batch[0].features);
  for (int k = 0; k < c; ++k) {
    CHECK(zp[perm[k]] == doctest::Approx(z[k]).epsilon(1e-14));
  }

  BatchEval ev, evp;
  per_example_loss_and_grad(spec, params, BatchView(batch), ev);
  per_example_loss_and_grad(spec, permuted, BatchView(relabeled), evp);
  CHECK(ev.losses[0] == doctest::Approx(evp.losses[0]).epsilon(1e-14));
  for (int k = 0; k < c; ++k) {
    for (int j = 0; j < d; ++j) {
      CHECK(evp.grads[0][perm[k] + c * j] ==
            doctest::Approx(ev.grads[0][k + c * j]).epsilon(1e-12));
    }
    CHECK(evp.grads[0][c * d + perm[k]] ==
          doctest::Approx(ev.grads[0][c * d + k]).epsilon(1e-12));
  }
}

TEST_CASE("finite difference oracle basics") {
  const Vec p = Vec::LinSpaced(5, -1.0, 1.0);
  const Vec zero = finite_diff_grad([](const Vec&) { return 3.0; }, p, 1e-6);
  CHECK(zero.cwiseAbs().maxCoeff() == 0.0);

  const Vec quad =
      finite_diff_grad([](const Vec& v) { return 0.5 * v.squaredNorm(); }, p, 1e-6);
  CHECK((quad - p).cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS(finite_diff_grad([](const Vec&) { return 0.0; }, p, 0.0),
                  std::invalid_argument);
}

TEST_CASE("param_norm") {
  Vec v(2);
  v << 3.0, 4.0;
  CHECK(param_norm(v) == doctest::Approx(5.0));
  CHECK(param_norm(Vec::Zero(7)) == 0.0);

  Rng rng(5);
  Vec r(20);
  for (int i = 0; i < 20; ++i) r[i] = rng.normal();
  double sum = 0.0;
  for (int i = 0; i < 20; ++i) sum += r[i] * r[i];
  CHECK(param_norm(r) == doctest::Approx(std::sqrt(sum)).epsilon(1e-14));
}

TEST_CASE("dimension and label validation") {
  const ModelSpec spec = ModelSpec::linear(3, 2);
  const Vec params = Vec::Zero(spec.param_count());

  LabeledExample short_x;
  short_x.features = Vec::Zero(2);
  short_x.label = 0;
  CHECK_THROWS_AS(per_example_losses(spec, params,
                                     BatchView(std::vector<LabeledExample>{short_x})),
                  std::invalid_argument);

  LabeledExample bad_label;
  bad_label.features = Vec::Zero(3);
  bad_label.label = 2;
  CHECK_THROWS_AS(per_example_losses(spec, params,
                                     BatchView(std::vector<LabeledExample>{bad_label})),
                  std::invalid_argument);

  CHECK_THROWS_AS(per_example_losses(spec, Vec::Zero(5),
                                     BatchView(std::vector<LabeledExample>{bad_label})),
                  std::invalid_argument);
  CHECK_THROWS_AS(logits(spec, params, Vec::Zero(4)), std::invalid_argument);
}

TEST_CASE("init_params stays within the fan-in bound and is seed-deterministic") {
  const ModelSpec spec = ModelSpec::mlp(9, 4, 3);
  Rng a(77), b(77);
  const Vec pa = init_params(spec, a);
  const Vec pb = init_params(spec, b);
  CHECK((pa.array() == pb.array()).all());
  const double bound1 = 1.0 / 3.0;  // fan_in 9
  for (int i = 0; i < 4 * 10; ++i) CHECK(std::abs(pa[i]) <= bound1);
  const double bound2 = 0.5;  // fan_in 4
  for (int i = 4 * 10; i < pa.size(); ++i) CHECK(std::abs(pa[i]) <= bound2);
}
