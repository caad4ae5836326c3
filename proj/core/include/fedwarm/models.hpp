#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedwarm/numkit.hpp"

namespace fedwarm {

/// softmax_linear and mlp1 are cross-entropy classifiers with bias terms.
/// mlp1 uses a single tanh hidden layer so the loss stays smooth.
/// quadratic is the surrogate f(w, x) = 0.5 * scale * ||w - x||^2 (labels
/// ignored, M = input_dim); its smoothness constant is exactly `scale`.
enum class ModelKind { softmax_linear, mlp1, quadratic };

std::string_view to_string(ModelKind kind) noexcept;
ModelKind parse_model_kind(std::string_view name);

struct ModelSpec {
  ModelKind kind = ModelKind::softmax_linear;
  std::size_t input_dim = 0;
  std::size_t num_classes = 2;
  std::size_t hidden_dim = 0;      // mlp1 only
  double quadratic_scale = 1.0;    // quadratic only

  // Throws ConfigError on an invalid combination.
  void validate() const;
};

// softmax_linear: (input_dim+1)*num_classes
// mlp1:           (input_dim+1)*hidden_dim + (hidden_dim+1)*num_classes
// quadratic:      input_dim
std::size_t param_count(const ModelSpec& spec);

/// Row-major feature block plus labels. Owns its storage so local training can
/// gather minibatches without keeping the parent dataset alive.
struct Batch {
  std::size_t input_dim = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * input_dim, input_dim};
  }
  void push_back(std::span<const double> x, std::uint32_t label);
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Entries i.i.d. uniform on [-0.05, 0.05].
ParamVector init_params(const ModelSpec& spec, RngStream& rng);

// Mean cross-entropy (or mean quadratic loss). Samples are accumulated in
// ascending index order.
double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch);
ParamVector grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch);
LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch);

// Gradient of f(w, d) for a single sample.
ParamVector sample_grad(const ModelSpec& spec, const ParamVector& w, std::span<const double> x,
                        std::uint32_t label);

// Mean KL(softmax(anchor logits) || softmax(w logits)) over the batch at
// temperature 1, with its gradient in w. Classifiers only.
LossGrad distill_loss_and_grad(const ModelSpec& spec, const ParamVector& w,
                               const ParamVector& anchor, const Batch& batch);

std::vector<double> logits(const ModelSpec& spec, const ParamVector& w, std::span<const double> x);

// Fraction of argmax-correct predictions; ties go to the lowest class index.
double accuracy(const ModelSpec& spec, const ParamVector& w, const Batch& batch);

}  // namespace fedwarm
