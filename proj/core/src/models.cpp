#include "fedwarm/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedwarm/error.hpp"

namespace fedwarm {

namespace {

struct Workspace {
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> dlogits;
  std::vector<double> dhidden;
};

std::size_t mlp_output_offset(const ModelSpec& spec) {
  return (spec.input_dim + 1) * spec.hidden_dim;
}

void check_inputs(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  if (w.size() != param_count(spec)) {
    throw DimensionError("model expects " + std::to_string(param_count(spec)) +
                         " parameters, got " + std::to_string(w.size()));
  }
  if (batch.empty()) throw DataError("empty batch");
  if (batch.input_dim != spec.input_dim) {
    throw DimensionError("batch feature dimension " + std::to_string(batch.input_dim) +
                         " does not match model input_dim " + std::to_string(spec.input_dim));
  }
  if (batch.features.size() != batch.size() * batch.input_dim) {
    throw DimensionError("batch feature storage does not match its label count");
  }
  if (spec.kind != ModelKind::quadratic) {
    for (auto y : batch.labels) {
      if (y >= spec.num_classes) {
        throw DataError("label " + std::to_string(y) + " out of range for " +
                        std::to_string(spec.num_classes) + " classes");
      }
    }
  }
}

void forward(const ModelSpec& spec, const ParamVector& w, std::span<const double> x,
             Workspace& ws) {
  const std::size_t d = spec.input_dim;
  const std::size_t classes = spec.num_classes;
  ws.logits.assign(classes, 0.0);
  if (spec.kind == ModelKind::softmax_linear) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double* row = w.data() + c * (d + 1);
      double z = row[d];
      for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
      ws.logits[c] = z;
    }
    return;
  }
  const std::size_t hidden = spec.hidden_dim;
  ws.hidden.assign(hidden, 0.0);
  for (std::size_t h = 0; h < hidden; ++h) {
    const double* row = w.data() + h * (d + 1);
    double z = row[d];
    for (std::size_t j = 0; j < d; ++j) z += row[j] * x[j];
    ws.hidden[h] = std::tanh(z);
  }
  const double* out = w.data() + mlp_output_offset(spec);
  for (std::size_t c = 0; c < classes; ++c) {
    const double* row = out + c * (hidden + 1);
    double z = row[hidden];
    for (std::size_t h = 0; h < hidden; ++h) z += row[h] * ws.hidden[h];
    ws.logits[c] = z;
  }
}

// Adds d(objective)/dw to `g` given d(objective)/d(logits) in ws.dlogits.
void backward(const ModelSpec& spec, const ParamVector& w, std::span<const double> x,
              Workspace& ws, ParamVector& g) {
  const std::size_t d = spec.input_dim;
  const std::size_t classes = spec.num_classes;
  if (spec.kind == ModelKind::softmax_linear) {
    for (std::size_t c = 0; c < classes; ++c) {
      double* row = g.data() + c * (d + 1);
      const double dz = ws.dlogits[c];
      for (std::size_t j = 0; j < d; ++j) row[j] += dz * x[j];
      row[d] += dz;
    }
    return;
  }
  const std::size_t hidden = spec.hidden_dim;
  const std::size_t offset = mlp_output_offset(spec);
  ws.dhidden.assign(hidden, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    const double dz = ws.dlogits[c];
    const double* wrow = w.data() + offset + c * (hidden + 1);
    double* grow = g.data() + offset + c * (hidden + 1);
    for (std::size_t h = 0; h < hidden; ++h) {
      grow[h] += dz * ws.hidden[h];
      ws.dhidden[h] += dz * wrow[h];
    }
    grow[hidden] += dz;
  }
  for (std::size_t h = 0; h < hidden; ++h) {
    const double a = ws.hidden[h];
    const double dpre = ws.dhidden[h] * (1.0 - a * a);
    double* row = g.data() + h * (d + 1);
    for (std::size_t j = 0; j < d; ++j) row[j] += dpre * x[j];
    row[d] += dpre;
  }
}

// Returns log-sum-exp of the logits and writes softmax probabilities into `probs`.
double softmax(std::span<const double> z, std::vector<double>& probs) {
  const double m = *std::max_element(z.begin(), z.end());
  probs.resize(z.size());
  double s = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    probs[c] = std::exp(z[c] - m);
    s += probs[c];
  }
  for (double& p : probs) p /= s;
  return m + std::log(s);
}

// Cross-entropy for one sample; fills ws.dlogits with p - onehot(y).
double cross_entropy(Workspace& ws, std::uint32_t y) {
  const double lse = softmax(ws.logits, ws.dlogits);
  const double l = lse - ws.logits[y];
  ws.dlogits[y] -= 1.0;
  return l;
}

LossGrad quadratic_loss_and_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch,
                                 bool want_grad) {
  LossGrad out;
  if (want_grad) out.grad = ParamVector(w.size());
  const double a = spec.quadratic_scale;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double r = w[j] - x[j];
      sq += r * r;
      if (want_grad) out.grad[j] += a * r;
    }
    total += 0.5 * a * sq;
  }
  const double n = static_cast<double>(batch.size());
  out.loss = total / n;
  if (want_grad) {
    for (double& v : out.grad) v /= n;
  }
  return out;
}

LossGrad classifier_loss_and_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch,
                                  bool want_grad) {
  LossGrad out;
  if (want_grad) out.grad = ParamVector(w.size());
  Workspace ws;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.row(i);
    forward(spec, w, x, ws);
    total += cross_entropy(ws, batch.labels[i]);
    if (want_grad) backward(spec, w, x, ws, out.grad);
  }
  const double n = static_cast<double>(batch.size());
  out.loss = total / n;
  if (want_grad) {
    for (double& v : out.grad) v /= n;
  }
  return out;
}

}  // namespace

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::softmax_linear: return "softmax_linear";
    case ModelKind::mlp1: return "mlp1";
    case ModelKind::quadratic: return "quadratic";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "softmax_linear") return ModelKind::softmax_linear;
  if (name == "mlp1") return ModelKind::mlp1;
  if (name == "quadratic") return ModelKind::quadratic;
  throw ConfigError("unknown model kind '" + std::string(name) +
                    "' (expected softmax_linear, mlp1 or quadratic)");
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (kind == ModelKind::quadratic) {
    if (!(quadratic_scale > 0.0)) throw ConfigError("quadratic scale must be positive");
    return;
  }
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (kind == ModelKind::mlp1 && hidden_dim == 0) {
    throw ConfigError("mlp1 requires hidden_dim > 0");
  }
}

std::size_t param_count(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::softmax_linear: return (spec.input_dim + 1) * spec.num_classes;
    case ModelKind::mlp1:
      return (spec.input_dim + 1) * spec.hidden_dim + (spec.hidden_dim + 1) * spec.num_classes;
    case ModelKind::quadratic: return spec.input_dim;
  }
  return 0;
}

void Batch::push_back(std::span<const double> x, std::uint32_t label) {
  if (x.size() != input_dim) throw DimensionError("Batch::push_back: feature dimension mismatch");
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

ParamVector init_params(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ParamVector w(param_count(spec));
  for (double& v : w) v = rng.uniform(-0.05, 0.05);
  return w;
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  check_inputs(spec, w, batch);
  return spec.kind == ModelKind::quadratic ? quadratic_loss_and_grad(spec, w, batch, true)
                                           : classifier_loss_and_grad(spec, w, batch, true);
}

double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  check_inputs(spec, w, batch);
  return spec.kind == ModelKind::quadratic ? quadratic_loss_and_grad(spec, w, batch, false).loss
                                           : classifier_loss_and_grad(spec, w, batch, false).loss;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  return loss_and_grad(spec, w, batch).grad;
}

ParamVector sample_grad(const ModelSpec& spec, const ParamVector& w, std::span<const double> x,
                        std::uint32_t label) {
  Batch one{spec.input_dim, {}, {}};
  one.push_back(x, label);
  return grad(spec, w, one);
}

LossGrad distill_loss_and_grad(const ModelSpec& spec, const ParamVector& w,
                               const ParamVector& anchor, const Batch& batch) {
  if (spec.kind == ModelKind::quadratic) {
    throw ConfigError("distillation requires a classifier model");
  }
  check_inputs(spec, w, batch);
  require_same_dim(w, anchor, "distill_loss_and_grad");
  LossGrad out;
  out.grad = ParamVector(w.size());
  Workspace ws;
  std::vector<double> target;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.row(i);
    forward(spec, anchor, x, ws);
    const double lse_anchor = softmax(ws.logits, target);
    std::vector<double> anchor_logits = ws.logits;
    forward(spec, w, x, ws);
    const double lse = softmax(ws.logits, ws.dlogits);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      const double p = target[c];
      if (p > 0.0) total += p * ((anchor_logits[c] - lse_anchor) - (ws.logits[c] - lse));
      ws.dlogits[c] -= p;
    }
    backward(spec, w, x, ws, out.grad);
  }
  const double n = static_cast<double>(batch.size());
  out.loss = total / n;
  for (double& v : out.grad) v /= n;
  return out;
}

std::vector<double> logits(const ModelSpec& spec, const ParamVector& w, std::span<const double> x) {
  if (spec.kind == ModelKind::quadratic) throw ConfigError("quadratic model has no logits");
  if (w.size() != param_count(spec)) throw DimensionError("logits: parameter count mismatch");
  if (x.size() != spec.input_dim) throw DimensionError("logits: feature dimension mismatch");
  Workspace ws;
  forward(spec, w, x, ws);
  return ws.logits;
}

double accuracy(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  if (spec.kind == ModelKind::quadratic) throw ConfigError("quadratic model has no accuracy");
  if (batch.empty()) throw DataError("accuracy of an empty dataset");
  check_inputs(spec, w, batch);
  Workspace ws;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward(spec, w, batch.row(i), ws);
    std::size_t best = 0;
    for (std::size_t c = 1; c < ws.logits.size(); ++c) {
      if (ws.logits[c] > ws.logits[best]) best = c;
    }
    if (best == batch.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

}  // namespace fedwarm
