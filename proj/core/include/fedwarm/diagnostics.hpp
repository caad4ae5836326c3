#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedwarm/datahub.hpp"
#include "fedwarm/models.hpp"
#include "fedwarm/numkit.hpp"
#include "fedwarm/server.hpp"

namespace fedwarm {

/// Constants entering the convergence bound.
///
/// theta and lambda are per train round; a single entry applies to every
/// round. sigma_tilde is keyed by client id.
struct BoundConstants {
  double beta = 1.0;
  double zeta1 = 1.0;
  double zeta2 = 0.0;
  std::vector<double> theta{0.0};
  std::vector<double> lambda{0.5};
  std::map<std::uint64_t, double> sigma_tilde;

  double theta_at(std::size_t round) const;
  double lambda_at(std::size_t round) const;
  // Throws NumericError when an invariant (zeta1 >= 1, lambda < 1, ...) fails.
  void validate() const;
};

// Max over probes of ||grad(w) - grad(w')|| / ||w - w'|| with
// w' = w + radius * u, u a random unit direction. Probe i's draws do not
// depend on num_probes, so the estimate is nondecreasing in num_probes.
double estimate_beta(const ModelSpec& spec, const Batch& data, std::size_t num_probes,
                     double radius, RngStream& rng);

// Max over sample pairs of ||grad f(w,d) - grad f(w,d')|| / ||d - d'||.
// Every pair is used when num_pairs covers them all; otherwise pairs are
// sampled. Pairs closer than 1e-12 in feature space are skipped; if all are,
// throws DataError.
double estimate_theta(const ModelSpec& spec, const ParamVector& w, const Batch& data,
                      std::size_t num_pairs, RngStream& rng);

// sqrt of the mean squared distance of the features to their mean (1/D_k).
double sigma_tilde(const Batch& data);

struct ZetaEstimate {
  double zeta1 = 1.0;
  double zeta2 = 0.0;
};

// Fits (zeta1 >= 1, zeta2 >= 0) so that
//   sum_k a_k ||grad F_k||^2 <= zeta1 ||sum_k a_k grad F_k||^2 + zeta2
// holds at every probe point. zeta1 is the largest ratio over probes whose
// mean gradient is not negligible (mean_sq > 1e-12 * weighted_sq); zeta2 then
// absorbs the remaining residuals.
ZetaEstimate estimate_zeta(const ModelSpec& spec, std::span<const Batch> clients,
                           std::span<const double> weights, std::span<const ParamVector> probes);

struct LrCondition {
  bool satisfiable = true;
  double eta_max = 0.0;       // valid when satisfiable
  double smoothness_term = 0.0;
  std::optional<double> drift_term;  // absent when e_max == 1
};

// eta < min{(0.5 - (1/e_min - 1)^2) / beta,
//           sqrt(Lambda) / (2 beta sqrt((zeta1 + Lambda) e_max (e_max - 1)))}
LrCondition lr_condition(double beta, std::size_t e_min, std::size_t e_max, double lambda,
                         double zeta1);

struct BoundTerms {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double d = 0.0;
  double rhs_total = 0.0;
  double lhs_mean_grad_sq = 0.0;
  std::size_t rounds = 0;
  std::vector<int> flagged_rounds;  // global rounds whose eta breaks lr_condition or Lambda >= zeta1

  bool holds() const noexcept { return lhs_mean_grad_sq <= rhs_total; }
};

// Evaluates the four bound terms over the train-phase records of `rounds`
// (grad_compute rows are skipped). Throws DataError if a record lacks client
// data or a sigma_tilde entry.
BoundTerms bound_terms(std::span<const RoundRecord> rounds, const BoundConstants& constants);

// JSON report: constants, per-term values, rhs_total, lhs, verdict, caveats.
std::string bound_report_json(const BoundTerms& terms, const BoundConstants& constants);

struct CostReport {
  std::size_t pilot_local_epochs = 0;
  std::size_t pilot_uploads = 0;
  std::size_t pilot_broadcasts = 0;
  std::size_t grad_local_epochs = 0;
  std::size_t grad_uploads = 0;
  std::size_t grad_broadcasts = 0;
  std::size_t post_pilot_local_epochs = 0;
  std::size_t post_pilot_uploads = 0;
  std::size_t post_pilot_broadcasts = 0;
  std::size_t local_epochs_total = 0;
  std::size_t client_uploads = 0;
  std::size_t server_broadcasts = 0;
  std::size_t stored_vectors = 0;               // post-pilot entries of Q1 and Q2
  std::size_t storage_growth_per_session = 0;   // parameters added per post-pilot session

  bool operator==(const CostReport&) const = default;
  std::string to_json() const;
};

struct CostConfig {
  std::size_t param_count = 0;  // W
  bool computed_gradients = true;
  int grad_rounds = 1;          // V
  std::size_t steps_min = 1;
  std::size_t steps_max = 1;
  std::size_t grad_steps = 0;   // 0: same as training
  double participation = 1.0;
  std::uint64_t seed = 0;
};

CostConfig cost_config_for(const TrainingPlan& plan);

// Closed-form counters from the schedule (pilot, gradient computation and
// post-pilot training phases).
CostReport cost_account(const SessionSchedule& schedule, const CostConfig& config);

// The same counters accumulated from a simulator log.
CostReport observed_costs(const RunLog& log, int pilot_sessions, std::size_t param_count);

}  // namespace fedwarm
