#include "fedwarm/localtrain.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <string>

#include "fedwarm/error.hpp"
#include "json.hpp"

namespace fedwarm {

namespace {

std::once_flag g_clamp_warning;

void warn_batch_clamp(std::size_t batch, std::size_t samples) {
  std::call_once(g_clamp_warning, [&] {
    std::cerr << "fedwarm: warning: batch size " << batch << " exceeds client dataset size "
              << samples << "; clamping to the dataset size (reported once)\n";
  });
}

}  // namespace

std::string_view to_string(Algorithm algorithm) noexcept {
  switch (algorithm) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::scaffold: return "scaffold";
    case Algorithm::fedacg: return "fedacg";
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (auto a : {Algorithm::fedavg, Algorithm::fedprox, Algorithm::scaffold, Algorithm::fedacg}) {
    if (name == to_string(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) +
                    "' (expected fedavg, fedprox, scaffold or fedacg)");
}

void LocalHyper::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("learning rate must be finite and >= 0");
  if (steps == 0) throw ConfigError("local steps must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(prox_mu >= 0.0)) throw ConfigError("prox_mu must be >= 0");
  if (!(acg_beta >= 0.0)) throw ConfigError("acg_beta must be >= 0");
  if (!(acg_lambda >= 0.0 && acg_lambda < 1.0)) throw ConfigError("acg_lambda must lie in [0, 1)");
  if (!(kl_coefficient >= 0.0)) throw ConfigError("kl_coefficient must be >= 0");
}

ServerCtx ServerCtx::start(const ParamVector& w, Algorithm algorithm, int session) {
  ServerCtx ctx;
  ctx.global = w;
  ctx.session = session;
  if (algorithm == Algorithm::scaffold) ctx.control = ParamVector(w.size());
  if (algorithm == Algorithm::fedacg) {
    ctx.momentum = ParamVector(w.size());
    ctx.anchor = w;
  }
  return ctx;
}

const ParamVector& ServerCtx::broadcast(Algorithm algorithm) const {
  return algorithm == Algorithm::fedacg ? anchor : global;
}

LocalCost& LocalCost::operator+=(const LocalCost& other) noexcept {
  epochs += other.epochs;
  grad_evals += other.grad_evals;
  samples_touched += other.samples_touched;
  return *this;
}

std::vector<std::vector<std::size_t>> sample_epoch_batches(std::size_t dataset_size,
                                                           std::size_t batch_size,
                                                           std::size_t steps, RngStream& rng) {
  if (dataset_size == 0) throw DataError("sample_epoch_batches: empty client dataset");
  if (batch_size == 0) throw ConfigError("sample_epoch_batches: batch size must be positive");
  const std::size_t b = std::min(batch_size, dataset_size);
  std::vector<std::size_t> perm(dataset_size);
  std::vector<std::vector<std::size_t>> out;
  out.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    // Partial Fisher-Yates: the first b slots are a uniform draw without replacement.
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t j = i + rng.index(dataset_size - i);
      std::swap(perm[i], perm[j]);
    }
    out.emplace_back(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

LocalResult local_train(const ModelSpec& spec, const ParamVector& w_start, const ServerCtx& ctx,
                        const Batch& data, const LocalHyper& hyper, const ClientState& state,
                        RngStream& rng) {
  hyper.validate();
  const std::size_t dim = param_count(spec);
  if (w_start.size() != dim) {
    throw DimensionError("local_train: start model has " + std::to_string(w_start.size()) +
                         " parameters, model expects " + std::to_string(dim));
  }
  if (data.empty()) throw DataError("local_train: client has no samples");
  if (hyper.batch_size > data.size()) warn_batch_clamp(hyper.batch_size, data.size());

  ParamVector client_control;
  if (hyper.algorithm == Algorithm::scaffold) {
    if (ctx.control.size() != dim) throw StateError("scaffold needs the global control variate");
    client_control = state.control.empty() ? ParamVector(dim) : state.control;
    require_same_dim(client_control, w_start, "scaffold client control variate");
  }
  if (hyper.algorithm == Algorithm::fedacg && ctx.anchor.size() != dim) {
    throw StateError("fedacg needs the server's accelerated anchor");
  }
  if (hyper.kl_coefficient > 0.0) {
    if (!hyper.distill_anchor) throw StateError("kl_coefficient > 0 needs a distillation anchor");
    require_same_dim(*hyper.distill_anchor, w_start, "distillation anchor");
  }

  const auto steps = sample_epoch_batches(data.size(), hyper.batch_size, hyper.steps, rng);
  LocalResult out;
  ParamVector w = w_start;
  for (const auto& positions : steps) {
    Batch batch{data.input_dim, {}, {}};
    batch.features.reserve(positions.size() * data.input_dim);
    batch.labels.reserve(positions.size());
    for (std::size_t p : positions) batch.push_back(data.row(p), data.labels[p]);

    ParamVector g = grad(spec, w, batch);
    ++out.cost.grad_evals;
    if (hyper.kl_coefficient > 0.0) {
      axpy(hyper.kl_coefficient, distill_loss_and_grad(spec, w, *hyper.distill_anchor, batch).grad, g);
      ++out.cost.grad_evals;
    }
    switch (hyper.algorithm) {
      case Algorithm::fedavg: break;
      case Algorithm::fedprox:
        for (std::size_t i = 0; i < dim; ++i) g[i] += hyper.prox_mu * (w[i] - w_start[i]);
        break;
      case Algorithm::scaffold:
        for (std::size_t i = 0; i < dim; ++i) g[i] = g[i] - client_control[i] + ctx.control[i];
        break;
      case Algorithm::fedacg:
        for (std::size_t i = 0; i < dim; ++i) g[i] += hyper.acg_beta * (w[i] - ctx.anchor[i]);
        break;
    }
    for (std::size_t i = 0; i < dim; ++i) w[i] -= hyper.eta * g[i];
    ++out.cost.epochs;
    out.cost.samples_touched += positions.size();
  }
  require_finite(w, "local_train");

  if (hyper.algorithm == Algorithm::scaffold) {
    // Option II: c_i' = c_i - c + (w_start - w_final) / (steps * eta).
    const double denom = static_cast<double>(hyper.steps) * hyper.eta;
    ParamVector updated(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const double drift = denom > 0.0 ? (w_start[i] - w[i]) / denom : 0.0;
      updated[i] = client_control[i] - ctx.control[i] + drift;
    }
    out.state.control = std::move(updated);
  }
  out.model = std::move(w);
  return out;
}

double LrSchedule::at(int round_in_session, int rounds) const noexcept {
  if (power == 0.0 || rounds <= 0) return base;
  const double frac = 1.0 - static_cast<double>(round_in_session) / static_cast<double>(rounds);
  return end + (base - end) * std::pow(std::max(frac, 0.0), power);
}

LrSchedule load_lr_schedule(const std::filesystem::path& path, double fallback_base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open learning-rate config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("learning-rate config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("learning-rate config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "base_lr" && key != "power" && key != "end_lr") {
      throw ConfigError("learning-rate config: unknown key '" + key + "'");
    }
    if (!value.is_number()) throw ConfigError("learning-rate config: '" + key + "' must be a number");
  }
  LrSchedule s;
  s.base = j.value("base_lr", fallback_base);
  s.power = j.value("power", 0.0);
  s.end = j.value("end_lr", 0.0);
  if (!(s.base >= 0.0) || !(s.power >= 0.0) || !(s.end >= 0.0)) {
    throw ConfigError("learning-rate config values must be non-negative");
  }
  return s;
}

}  // namespace fedwarm
