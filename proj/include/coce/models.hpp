#pragma once

#include <functional>
#include <span>
#include <vector>

#include "coce/data.hpp"
#include "coce/rng.hpp"
#include "coce/types.hpp"

namespace coce {

enum class Architecture { Linear, Mlp };

/// Multinomial logistic regression or a one-hidden-layer ReLU MLP over a
/// flat parameter vector.
///
/// Flat layout (weights then bias, layer by layer, Eigen column-major
/// within each weight block) is part of the public contract:
///   linear: W (num_classes x input_dim), b (num_classes)
///   mlp:    W1 (hidden_dim x input_dim), b1 (hidden_dim),
///           W2 (num_classes x hidden_dim), b2 (num_classes)
struct ModelSpec {
  Architecture architecture = Architecture::Linear;
  int input_dim = 0;
  int num_classes = 2;
  int hidden_dim = 0;  // mlp only

  static ModelSpec linear(int input_dim, int num_classes);
  static ModelSpec mlp(int input_dim, int hidden_dim, int num_classes);

  int param_count() const;
};

/// Non-owning view of selected rows of an example vector. An empty index
/// span means "all rows in order".
class BatchView {
 public:
  BatchView(const std::vector<LabeledExample>& data)  // NOLINT: implicit
      : data_(data.data()), all_(data.size()) {}
  BatchView(const std::vector<LabeledExample>& data, std::span<const int> indices)
      : data_(data.data()), indices_(indices), all_(data.size()) {}

  std::size_t size() const { return indices_.empty() ? all_ : indices_.size(); }
  const LabeledExample& operator[](std::size_t k) const {
    return indices_.empty() ? data_[k] : data_[static_cast<std::size_t>(indices_[k])];
  }

 private:
  const LabeledExample* data_;
  std::span<const int> indices_;
  std::size_t all_;
};

/// Per-example cross-entropy losses and their exact parameter gradients.
struct BatchEval {
  Vec losses;
  std::vector<Vec> grads;
};

/// losses[i] = -log softmax(logits(x_i))[y_i], softmax with
/// max-subtraction; grads[i] the exact gradient of losses[i].
/// Throws on dimension mismatch and non-finite activations.
void per_example_loss_and_grad(const ModelSpec& spec, const Vec& params,
                               const BatchView& batch, BatchEval& out);
BatchEval per_example_loss_and_grad(const ModelSpec& spec, const Vec& params,
                                    const BatchView& batch);

/// Losses only (cheaper evaluation path).
Vec per_example_losses(const ModelSpec& spec, const Vec& params,
                       const BatchView& batch);

Vec logits(const ModelSpec& spec, const Vec& params, const Vec& x);

/// argmax over logits; ties break toward the lowest class index.
int predict(const ModelSpec& spec, const Vec& params, const Vec& x);

/// Central finite differences of a scalar function, coordinate by
/// coordinate. Test oracle grade; independent of the analytic gradients.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f,
                     const Vec& params, double step);

/// Euclidean norm of the parameter vector.
double param_norm(const Vec& params);

/// Per-layer uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Vec init_params(const ModelSpec& spec, Rng& rng);

}  // namespace coce
