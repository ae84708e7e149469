#include "coce/models.hpp"

#include <cmath>
#include <stdexcept>

namespace coce {

namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using MatMap = Eigen::Map<Mat>;
using VecMap = Eigen::Map<Vec>;

void require_dims(const ModelSpec& spec, const Vec& params) {
  if (spec.input_dim < 1 || spec.num_classes < 2 ||
      (spec.architecture == Architecture::Mlp && spec.hidden_dim < 1)) {
    throw std::invalid_argument("ModelSpec: invalid dimensions");
  }
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("model: parameter vector has wrong length");
  }
}

void require_example(const ModelSpec& spec, const LabeledExample& ex) {
  if (ex.features.size() != spec.input_dim) {
    throw std::invalid_argument("model: feature dimension mismatch");
  }
  if (ex.label < 0 || ex.label >= spec.num_classes) {
    throw std::invalid_argument("model: label out of range");
  }
}

// -log softmax(logits)[y] with max-subtraction; fills probs.
double cross_entropy(const Vec& raw_logits, int y, Vec& probs) {
  const double m = raw_logits.maxCoeff();
  probs = (raw_logits.array() - m).exp();
  const double sum = probs.sum();
  probs /= sum;
  const double loss = -(raw_logits[y] - m - std::log(sum));
  if (!std::isfinite(loss)) {
    throw std::runtime_error("model: non-finite activations");
  }
  return loss;
}

}  // namespace

ModelSpec ModelSpec::linear(int input_dim, int num_classes) {
  return {Architecture::Linear, input_dim, num_classes, 0};
}

ModelSpec ModelSpec::mlp(int input_dim, int hidden_dim, int num_classes) {
  return {Architecture::Mlp, input_dim, num_classes, hidden_dim};
}

int ModelSpec::param_count() const {
  if (architecture == Architecture::Linear) {
    return num_classes * (input_dim + 1);
  }
  return hidden_dim * (input_dim + 1) + num_classes * (hidden_dim + 1);
}

void per_example_loss_and_grad(const ModelSpec& spec, const Vec& params,
                               const BatchView& batch, BatchEval& out) {
  require_dims(spec, params);
  const std::size_t n = batch.size();
  out.losses.resize(static_cast<Eigen::Index>(n));
  out.grads.resize(n);

  const int d = spec.input_dim;
  const int c = spec.num_classes;

  if (spec.architecture == Architecture::Linear) {
    ConstMatMap w(params.data(), c, d);
    ConstVecMap b(params.data() + c * d, c);
    Vec probs(c);
    for (std::size_t i = 0; i < n; ++i) {
      const LabeledExample& ex = batch[i];
      require_example(spec, ex);
      const Vec z = w * ex.features + b;
      out.losses[static_cast<Eigen::Index>(i)] = cross_entropy(z, ex.label, probs);
      probs[ex.label] -= 1.0;  // dloss/dlogits
      Vec& g = out.grads[i];
      g.resize(params.size());
      MatMap gw(g.data(), c, d);
      VecMap gb(g.data() + c * d, c);
      gw.noalias() = probs * ex.features.transpose();
      gb = probs;
    }
    return;
  }

  const int h = spec.hidden_dim;
  ConstMatMap w1(params.data(), h, d);
  ConstVecMap b1(params.data() + h * d, h);
  ConstMatMap w2(params.data() + h * (d + 1), c, h);
  ConstVecMap b2(params.data() + h * (d + 1) + c * h, c);
  Vec probs(c);
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledExample& ex = batch[i];
    require_example(spec, ex);
    const Vec pre = w1 * ex.features + b1;
    const Vec act = pre.cwiseMax(0.0);
    const Vec z = w2 * act + b2;
    out.losses[static_cast<Eigen::Index>(i)] = cross_entropy(z, ex.label, probs);
    probs[ex.label] -= 1.0;
    Vec& g = out.grads[i];
    g.resize(params.size());
    MatMap gw1(g.data(), h, d);
    VecMap gb1(g.data() + h * d, h);
    MatMap gw2(g.data() + h * (d + 1), c, h);
    VecMap gb2(g.data() + h * (d + 1) + c * h, c);
    gw2.noalias() = probs * act.transpose();
    gb2 = probs;
    Vec dpre = w2.transpose() * probs;
    // ReLU derivative: 0 at exactly 0.
    for (int k = 0; k < h; ++k) {
      if (pre[k] <= 0.0) dpre[k] = 0.0;
    }
    gw1.noalias() = dpre * ex.features.transpose();
    gb1 = dpre;
  }
}

BatchEval per_example_loss_and_grad(const ModelSpec& spec, const Vec& params,
                                    const BatchView& batch) {
  BatchEval out;
  per_example_loss_and_grad(spec, params, batch, out);
  return out;
}

Vec per_example_losses(const ModelSpec& spec, const Vec& params,
                       const BatchView& batch) {
  require_dims(spec, params);
  const std::size_t n = batch.size();
  Vec losses(static_cast<Eigen::Index>(n));
  Vec probs(spec.num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledExample& ex = batch[i];
    require_example(spec, ex);
    losses[static_cast<Eigen::Index>(i)] =
        cross_entropy(logits(spec, params, ex.features), ex.label, probs);
  }
  return losses;
}

Vec logits(const ModelSpec& spec, const Vec& params, const Vec& x) {
  require_dims(spec, params);
  if (x.size() != spec.input_dim) {
    throw std::invalid_argument("model: feature dimension mismatch");
  }
  const int d = spec.input_dim;
  const int c = spec.num_classes;
  if (spec.architecture == Architecture::Linear) {
    ConstMatMap w(params.data(), c, d);
    ConstVecMap b(params.data() + c * d, c);
    return w * x + b;
  }
  const int h = spec.hidden_dim;
  ConstMatMap w1(params.data(), h, d);
  ConstVecMap b1(params.data() + h * d, h);
  ConstMatMap w2(params.data() + h * (d + 1), c, h);
  ConstVecMap b2(params.data() + h * (d + 1) + c * h, c);
  return w2 * (w1 * x + b1).cwiseMax(0.0) + b2;
}

int predict(const ModelSpec& spec, const Vec& params, const Vec& x) {
  const Vec z = logits(spec, params, x);
  int best = 0;
  for (int k = 1; k < z.size(); ++k) {
    if (z[k] > z[best]) best = k;
  }
  return best;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f,
                     const Vec& params, double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_diff_grad: step must be positive");
  }
  Vec g(params.size());
  Vec p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p[i] = params[i] + step;
    const double up = f(p);
    p[i] = params[i] - step;
    const double dn = f(p);
    p[i] = params[i];
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

double param_norm(const Vec& params) { return params.norm(); }

Vec init_params(const ModelSpec& spec, Rng& rng) {
  Vec p(spec.param_count());
  auto fill = [&](Eigen::Index offset, Eigen::Index count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < count; ++i) {
      p[offset + i] = bound * (2.0 * rng.uniform() - 1.0);
    }
  };
  const int d = spec.input_dim;
  const int c = spec.num_classes;
  if (spec.architecture == Architecture::Linear) {
    fill(0, c * (d + 1), d);
  } else {
    const int h = spec.hidden_dim;
    fill(0, h * (d + 1), d);
    fill(h * (d + 1), c * (h + 1), h);
  }
  return p;
}

}  // namespace coce
