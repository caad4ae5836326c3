#include "fedwarm/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedwarm/error.hpp"
#include "json.hpp"

namespace fedwarm {

namespace {

double per_round(const std::vector<double>& values, std::size_t round, const char* name) {
  if (values.empty()) throw NumericError(std::string("bound constants: no ") + name + " values");
  if (values.size() == 1) return values.front();
  if (round >= values.size()) {
    throw NumericError(std::string("bound constants: no ") + name + " value for round " +
                       std::to_string(round));
  }
  return values[round];
}

}  // namespace

double BoundConstants::theta_at(std::size_t round) const { return per_round(theta, round, "theta"); }
double BoundConstants::lambda_at(std::size_t round) const { return per_round(lambda, round, "lambda"); }

void BoundConstants::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw NumericError("beta must be positive and finite");
  if (!(zeta1 >= 1.0) || !std::isfinite(zeta1)) throw NumericError("zeta1 must be finite and >= 1");
  if (!(zeta2 >= 0.0) || !std::isfinite(zeta2)) throw NumericError("zeta2 must be finite and >= 0");
  for (double t : theta) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw NumericError("theta must be finite and >= 0");
  }
  for (double l : lambda) {
    if (!(l > 0.0 && l < 1.0)) throw NumericError("Lambda must lie in (0, 1)");
  }
  for (const auto& [id, s] : sigma_tilde) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw NumericError("sigma_tilde must be finite and >= 0");
  }
}

double estimate_beta(const ModelSpec& spec, const Batch& data, std::size_t num_probes,
                     double radius, RngStream& rng) {
  if (num_probes == 0) throw NumericError("estimate_beta: need at least one probe");
  if (!(radius > 0.0)) throw NumericError("estimate_beta: radius must be positive");
  const std::size_t dim = param_count(spec);
  double best = 0.0;
  for (std::size_t p = 0; p < num_probes; ++p) {
    ParamVector w(dim);
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    ParamVector dir(dim);
    for (double& v : dir) v = rng.normal();
    const double len = norm(dir);
    if (len == 0.0) continue;
    ParamVector moved = w;
    axpy(radius / len, dir, moved);
    const double step = distance(w, moved);
    if (step == 0.0) continue;
    best = std::max(best, distance(grad(spec, w, data), grad(spec, moved, data)) / step);
  }
  return best;
}

double estimate_theta(const ModelSpec& spec, const ParamVector& w, const Batch& data,
                      std::size_t num_pairs, RngStream& rng) {
  const std::size_t n = data.size();
  if (n < 2) throw DataError("estimate_theta: need at least two samples");
  auto feature_distance = [&](std::size_t i, std::size_t j) {
    const auto a = data.row(i);
    const auto b = data.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  };
  double best = 0.0;
  bool any = false;
  const std::size_t total_pairs = n * (n - 1) / 2;
  if (num_pairs >= total_pairs) {
    std::vector<ParamVector> grads;
    grads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) grads.push_back(sample_grad(spec, w, data.row(i), data.labels[i]));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = feature_distance(i, j);
        if (dx < 1e-12) continue;
        any = true;
        best = std::max(best, distance(grads[i], grads[j]) / dx);
      }
    }
  } else {
    for (std::size_t p = 0; p < num_pairs; ++p) {
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      const double dx = feature_distance(i, j);
      if (dx < 1e-12) continue;
      any = true;
      const auto gi = sample_grad(spec, w, data.row(i), data.labels[i]);
      const auto gj = sample_grad(spec, w, data.row(j), data.labels[j]);
      best = std::max(best, distance(gi, gj) / dx);
    }
  }
  if (!any) throw DataError("estimate_theta: every sampled pair has identical features");
  return best;
}

double sigma_tilde(const Batch& data) {
  if (data.empty()) throw DataError("sigma_tilde: empty dataset");
  const std::size_t d = data.input_dim;
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
  }
  const double n = static_cast<double>(data.size());
  for (double& m : mu) m /= n;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    for (std::size_t j = 0; j < d; ++j) total += (x[j] - mu[j]) * (x[j] - mu[j]);
  }
  return std::sqrt(total / n);
}

ZetaEstimate estimate_zeta(const ModelSpec& spec, std::span<const Batch> clients,
                           std::span<const double> weights, std::span<const ParamVector> probes) {
  if (probes.empty()) throw NumericError("estimate_zeta: no probe points");
  if (clients.empty() || clients.size() != weights.size()) {
    throw DimensionError("estimate_zeta: need one weight per client");
  }
  double wsum = 0.0;
  for (double a : weights) {
    if (!(a >= 0.0)) throw NumericError("estimate_zeta: weights must be >= 0");
    wsum += a;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw NumericError("estimate_zeta: weights must sum to 1");

  struct Sides {
    double weighted_sq;  // sum_k a_k ||grad F_k||^2
    double mean_sq;      // ||sum_k a_k grad F_k||^2
  };
  std::vector<Sides> sides;
  for (const auto& w : probes) {
    ParamVector avg(w.size());
    double weighted_sq = 0.0;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      const auto g = grad(spec, w, clients[k]);
      weighted_sq += weights[k] * norm_sq(g);
      axpy(weights[k], g, avg);
    }
    sides.push_back({weighted_sq, norm_sq(avg)});
  }
  ZetaEstimate z;
  for (const auto& s : sides) {
    // Near-stationary probes only inform zeta2.
    if (s.mean_sq > 1e-12 * s.weighted_sq) z.zeta1 = std::max(z.zeta1, s.weighted_sq / s.mean_sq);
  }
  for (const auto& s : sides) z.zeta2 = std::max(z.zeta2, s.weighted_sq - z.zeta1 * s.mean_sq);
  return z;
}

LrCondition lr_condition(double beta, std::size_t e_min, std::size_t e_max, double lambda,
                         double zeta1) {
  if (!(beta > 0.0)) throw NumericError("lr_condition: beta must be positive");
  if (e_min < 1 || e_max < e_min) throw NumericError("lr_condition: need 1 <= e_min <= e_max");
  if (!(lambda > 0.0 && lambda < 1.0)) throw NumericError("lr_condition: Lambda must lie in (0, 1)");
  if (!(zeta1 >= 1.0)) throw NumericError("lr_condition: zeta1 must be >= 1");
  LrCondition out;
  const double inv = 1.0 / static_cast<double>(e_min) - 1.0;
  out.smoothness_term = (0.5 - inv * inv) / beta;
  if (e_max > 1) {
    const double e = static_cast<double>(e_max);
    out.drift_term = std::sqrt(lambda) / (2.0 * beta * std::sqrt((zeta1 + lambda) * e * (e - 1.0)));
  }
  if (out.smoothness_term <= 0.0) {
    out.satisfiable = false;
    return out;
  }
  out.eta_max = out.drift_term ? std::min(out.smoothness_term, *out.drift_term) : out.smoothness_term;
  return out;
}

BoundTerms bound_terms(std::span<const RoundRecord> rounds, const BoundConstants& constants) {
  constants.validate();
  const double beta = constants.beta;
  BoundTerms out;
  std::size_t g = 0;
  for (const auto& rec : rounds) {
    if (rec.phase != Phase::train) continue;
    if (rec.clients.empty()) {
      throw DataError("bound_terms: round " + std::to_string(rec.global_round) + " has no client data");
    }
    if (!(rec.eta > 0.0)) {
      throw DataError("bound_terms: round " + std::to_string(rec.global_round) + " has eta <= 0");
    }
    const double lambda = constants.lambda_at(g);
    const double theta = constants.theta_at(g);
    const double eta = rec.eta;
    const double shrink = 1.0 - lambda;
    double total_samples = 0.0;
    std::size_t e_min = std::numeric_limits<std::size_t>::max();
    std::size_t e_max = 0;
    for (const auto& c : rec.clients) {
      total_samples += static_cast<double>(c.samples);
      e_min = std::min(e_min, c.steps);
      e_max = std::max(e_max, c.steps);
    }
    double noise_sum = 0.0;   // term (b) inner sum
    double local_sum = 0.0;   // term (c) inner sum
    for (const auto& c : rec.clients) {
      auto it = constants.sigma_tilde.find(c.client_id);
      if (it == constants.sigma_tilde.end()) {
        throw DataError("bound_terms: no sigma_tilde for client " + std::to_string(c.client_id));
      }
      const double s2 = it->second * it->second;
      const double dk = static_cast<double>(c.samples);
      const double bk = static_cast<double>(c.batch_size);
      const double ek = static_cast<double>(c.steps);
      noise_sum += s2 * ek / bk * (dk - bk) / (dk * dk);
      local_sum += (ek - 1.0) * (1.0 - bk / dk) * theta * s2 / bk;
    }
    const double em = static_cast<double>(e_max);
    out.a += 2.0 * (rec.loss_start - rec.loss_end) / (eta * shrink);
    out.b += 4.0 * beta * theta * theta * eta / shrink * noise_sum;
    out.c += 4.0 * beta * beta * eta * eta / (total_samples * shrink) * local_sum;
    out.d += 8.0 * beta * beta * eta * eta * em * (em - 1.0) * constants.zeta2 / shrink;
    out.lhs_mean_grad_sq += rec.grad_norm_sq;

    const auto cond = lr_condition(beta, e_min, e_max, lambda, constants.zeta1);
    if (!cond.satisfiable || eta >= cond.eta_max || lambda >= constants.zeta1) {
      out.flagged_rounds.push_back(rec.global_round);
    }
    ++g;
  }
  if (g == 0) throw DataError("bound_terms: no train-phase rounds");
  const double inv_g = 1.0 / static_cast<double>(g);
  out.a *= inv_g;
  out.b *= inv_g;
  out.c *= inv_g;
  out.d *= inv_g;
  out.lhs_mean_grad_sq *= inv_g;
  out.rhs_total = out.a + out.b + out.c + out.d;
  out.rounds = g;
  return out;
}

std::string bound_report_json(const BoundTerms& terms, const BoundConstants& constants) {
  nlohmann::json j;
  j["schema"] = 1;
  auto& c = j["constants"];
  c["beta"] = constants.beta;
  c["zeta1"] = constants.zeta1;
  c["zeta2"] = constants.zeta2;
  c["theta"] = constants.theta;
  c["lambda"] = constants.lambda;
  auto& sig = c["sigma_tilde"] = nlohmann::json::object();
  for (const auto& [id, s] : constants.sigma_tilde) sig[std::to_string(id)] = s;
  j["terms"] = {{"a", terms.a}, {"b", terms.b}, {"c", terms.c}, {"d", terms.d}};
  j["rhs_total"] = terms.rhs_total;
  j["lhs_mean_grad_sq"] = terms.lhs_mean_grad_sq;
  j["rounds"] = terms.rounds;
  j["verdict"] = terms.holds() ? "holds" : "violated";
  j["flagged_rounds"] = terms.flagged_rounds;
  j["caveats"] = {
      "expectations are replaced by the realized single trajectory",
      "beta, theta and zeta are sampled estimates and therefore lower bounds of the true constants",
      "sigma_tilde uses the 1/D_k normalization",
      "term (c) sums clients within each round before averaging over rounds",
      "Lambda is a user-chosen diagnostic constant; rounds violating the learning-rate condition are flagged",
  };
  return j.dump(2);
}

std::string CostReport::to_json() const {
  nlohmann::json j{
      {"pilot_local_epochs", pilot_local_epochs},
      {"pilot_uploads", pilot_uploads},
      {"pilot_broadcasts", pilot_broadcasts},
      {"grad_local_epochs", grad_local_epochs},
      {"grad_uploads", grad_uploads},
      {"grad_broadcasts", grad_broadcasts},
      {"post_pilot_local_epochs", post_pilot_local_epochs},
      {"post_pilot_uploads", post_pilot_uploads},
      {"post_pilot_broadcasts", post_pilot_broadcasts},
      {"local_epochs_total", local_epochs_total},
      {"client_uploads", client_uploads},
      {"server_broadcasts", server_broadcasts},
      {"stored_vectors", stored_vectors},
      {"storage_growth_per_session", storage_growth_per_session},
  };
  return j.dump(2);
}

CostConfig cost_config_for(const TrainingPlan& plan) {
  CostConfig c;
  c.param_count = param_count(plan.spec);
  c.computed_gradients = uses_computed_gradients(plan.variant);
  c.grad_rounds = plan.grad_rounds;
  c.steps_min = plan.steps_min;
  c.steps_max = plan.steps_max;
  c.grad_steps = plan.grad_steps;
  c.participation = plan.participation;
  c.seed = plan.seed;
  return c;
}

CostReport cost_account(const SessionSchedule& schedule, const CostConfig& config) {
  CostReport r;
  const int S = schedule.num_sessions;
  const int P = schedule.pilot_sessions;
  auto steps_of = [&](std::size_t k) { return local_steps_for(k, config.steps_min, config.steps_max); };
  for (int s = 0; s < S; ++s) {
    const std::size_t K = schedule.sessions[static_cast<std::size_t>(s)].client_ids.size();
    const int T = schedule.rounds_in(s);
    if (s >= P && config.computed_gradients) {
      // V rounds over K^(sT): V * sum_k e_k epochs, V * |K| uploads, V broadcasts.
      const auto parts = select_participants(config.seed, s, 0, K, config.participation);
      std::size_t epochs = 0;
      for (auto k : parts) epochs += config.grad_steps > 0 ? config.grad_steps : steps_of(k);
      const auto V = static_cast<std::size_t>(config.grad_rounds);
      r.grad_local_epochs += V * epochs;
      r.grad_uploads += V * parts.size();
      r.grad_broadcasts += V;
    }
    for (int t = 0; t < T; ++t) {
      const auto parts = select_participants(config.seed, s, t, K, config.participation);
      std::size_t epochs = 0;
      for (auto k : parts) epochs += steps_of(k);
      if (s < P) {
        r.pilot_local_epochs += epochs;
        r.pilot_uploads += parts.size();
        r.pilot_broadcasts += 1;
      } else {
        r.post_pilot_local_epochs += epochs;
        r.post_pilot_uploads += parts.size();
        r.post_pilot_broadcasts += 1;
      }
    }
  }
  r.local_epochs_total = r.pilot_local_epochs + r.grad_local_epochs + r.post_pilot_local_epochs;
  r.client_uploads = r.pilot_uploads + r.grad_uploads + r.post_pilot_uploads;
  r.server_broadcasts = r.pilot_broadcasts + r.grad_broadcasts + r.post_pilot_broadcasts;
  const std::size_t per_session = config.computed_gradients ? 2 : 1;
  const auto post = static_cast<std::size_t>(S - P);
  r.stored_vectors = post * per_session;
  r.storage_growth_per_session = post > 0 ? per_session * config.param_count : 0;
  return r;
}

CostReport observed_costs(const RunLog& log, int pilot_sessions, std::size_t param_count) {
  CostReport r;
  for (const auto& rec : log.rounds) {
    if (rec.phase == Phase::grad_compute) {
      r.grad_local_epochs += rec.epochs;
      r.grad_uploads += rec.comm_up;
      r.grad_broadcasts += rec.comm_down;
    } else if (rec.session < pilot_sessions) {
      r.pilot_local_epochs += rec.epochs;
      r.pilot_uploads += rec.comm_up;
      r.pilot_broadcasts += rec.comm_down;
    } else {
      r.post_pilot_local_epochs += rec.epochs;
      r.post_pilot_uploads += rec.comm_up;
      r.post_pilot_broadcasts += rec.comm_down;
    }
  }
  r.local_epochs_total = r.pilot_local_epochs + r.grad_local_epochs + r.post_pilot_local_epochs;
  r.client_uploads = r.pilot_uploads + r.grad_uploads + r.post_pilot_uploads;
  r.server_broadcasts = r.pilot_broadcasts + r.grad_broadcasts + r.post_pilot_broadcasts;
  r.stored_vectors = log.store.q1.size() + log.store.q2.size();
  if (!log.store.q1.empty()) {
    r.storage_growth_per_session = (uses_computed_gradients(log.variant) ? 2 : 1) * param_count;
  }
  return r;
}

}  // namespace fedwarm
