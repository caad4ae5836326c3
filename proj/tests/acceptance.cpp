// Acceptance checks: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedwarm/diagnostics.hpp"
#include "fedwarm/experiment.hpp"

using namespace fedwarm;

namespace {

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, RngStream& rng) {
  Batch b;
  b.input_dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal();
    b.push_back(x, static_cast<std::uint32_t>(rng.index(classes)));
  }
  return b;
}

void gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = derive_stream(2024, {0, 0, 0});
  const ModelSpec lin{ModelKind::softmax_linear, 5, 4, 0};
  const ModelSpec mlp{ModelKind::mlp1, 5, 4, 6};
  double worst_lin = 0.0;
  double worst_mlp = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const auto b = random_batch(16, 5, 4, rng);
    for (const auto* spec : {&lin, &mlp}) {
      ParamVector w(param_count(*spec));
      for (double& v : w) v = 0.5 * rng.normal();
      const auto fd = finite_diff_grad([&](const ParamVector& v) { return loss(*spec, v, b); }, w);
      const double err = max_relative_error(grad(*spec, w, b), fd);
      (spec == &lin ? worst_lin : worst_mlp) = std::max(spec == &lin ? worst_lin : worst_mlp, err);
    }
  }
  const double secs = seconds_since(t0);
  report(worst_lin < 1e-6 && worst_mlp < 1e-4 && secs < 5.0, "gradient_correctness",
         fmt("softmax max rel err %.2e (<1e-6), mlp1 %.2e (<1e-4), %.2fs (<5s)", worst_lin, worst_mlp, secs));
}

void weight_normalization() {
  auto rng = derive_stream(7, {0, 0, 0});
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> d(n);
    for (double& x : d) x = rng.uniform(0.0, 10.0) * std::pow(10.0, rng.uniform(-3.0, 2.0));
    double R = i == 0 ? 0.0 : (i == 1 ? 1e5 : std::pow(10.0, rng.uniform(-2.0, 5.0)));
    if (i % 100 == 2) R = 0.0;
    if (i % 100 == 3) R = 1e5;
    double sum = 0.0;
    for (double a : similarity_weights(d, R)) sum += a;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  report(worst <= 1e-12, "weight_normalization", fmt("max |sum(alpha) - 1| = %.2e over 1000 draws (<=1e-12)", worst));
}

RunConfig warm_config(std::uint64_t seed) {
  RunConfig c;
  c.dataset = "gaussian";
  c.gaussian_classes = 6;
  c.gaussian_per_class = 200;
  c.gaussian_dim = 10;
  c.gaussian_spread = 1.0;
  c.num_clients = 20;
  c.num_sessions = 4;
  c.num_sessions_pilot = 1;
  c.num_rounds_pilot = 30;
  c.num_rounds_actual = 30;
  c.labels_per_session = 3;
  c.cross_session_label_overlap = 0.0;
  c.dirichlet_alpha = 0.3;
  c.algorithm = "fedavg";
  c.lr = 0.1;
  c.num_SGD_training = 5;
  c.batch_size_training = 32;
  c.seed = seed;
  return c;
}

void r_limits() {
  auto c = warm_config(11);
  c.num_sessions = 5;
  c.num_rounds_pilot = 5;
  c.num_rounds_actual = 5;
  const auto ex = build_experiment(c);
  const auto log = run_training(ex.plan);
  ParamVector probe(param_count(ex.plan.spec));
  auto rng = derive_stream(11, {0, 0, 99});
  for (double& v : probe) v = 0.01 * rng.normal();
  const auto r0 = construct_initial_model(log.store, probe, 0.0);
  auto brng = derive_stream(0, {0, 0, 0});
  const auto avg = baseline_init(BaselineKind::average, log.store, std::nullopt, ex.plan.spec, brng);
  double diff = 0.0;
  for (std::size_t i = 0; i < avg.size(); ++i) diff = std::max(diff, std::abs(r0.model[i] - avg[i]));

  double worst_weight = 1.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng.index(8);
    std::vector<double> d(n);
    const std::size_t winner = rng.index(n);
    const double base = rng.uniform(0.0, 5.0);
    for (std::size_t j = 0; j < n; ++j) d[j] = j == winner ? base : base + 1e-3 + rng.uniform(0.0, 2.0);
    worst_weight = std::min(worst_weight, similarity_weights(d, 1e5)[winner]);
  }
  report(diff <= 1e-12 && worst_weight >= 1.0 - 1e-6, "r_limits",
         fmt("R=0 vs average init max diff %.2e (<=1e-12); R=1e5 nearest weight min %.12f (>=1-1e-6)", diff,
             worst_weight));
}

void pilot_identity() {
  auto rng = derive_stream(5, {0, 0, 0});
  double worst = 0.0;
  bool single_exact = true;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t P = 1 + rng.index(5);
    std::vector<ParamVector> models(P, ParamVector(20));
    for (auto& m : models) {
      for (double& v : m) v = rng.normal();
    }
    const auto pilot = compute_pilot(models);
    for (std::size_t i = 0; i < 20; ++i) {
      long double s = 0.0L;
      for (const auto& m : models) s += m[i];
      worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(pilot[i]) - s / P)));
    }
    if (P == 1) single_exact = single_exact && bit_identical(pilot, models.front());
  }
  report(worst <= 1e-15 && single_exact, "pilot_identity",
         fmt("max |pilot - mean| = %.2e (<=1e-15); P=1 bit-exact: ", worst) + (single_exact ? "yes" : "no"));
}

void optimizer_reductions() {
  auto c = warm_config(3);
  c.num_sessions = 3;
  c.num_rounds_pilot = 6;
  c.num_rounds_actual = 6;
  c.gaussian_per_class = 80;
  const auto avg_log = run_training(build_experiment(c).plan);
  c.algorithm = "fedprox";
  c.prox_alpha = 0.0;
  const auto prox_log = run_training(build_experiment(c).plan);
  c.algorithm = "fedacg";
  c.acg_beta = 0.0;
  c.acg_lambda = 0.0;
  const auto acg_log = run_training(build_experiment(c).plan);
  auto same = [&](const RunLog& other) {
    if (other.session_last.size() != avg_log.session_last.size()) return false;
    for (std::size_t s = 0; s < other.session_last.size(); ++s) {
      if (!bit_identical(other.session_last[s], avg_log.session_last[s])) return false;
    }
    auto a = to_rows(avg_log);
    auto b = to_rows(other);
    for (auto& r : a) r.variant.clear();
    for (auto& r : b) r.variant.clear();
    return a == b && bit_identical(other.final_model, avg_log.final_model);
  };
  const bool prox_ok = same(prox_log);
  const bool acg_ok = same(acg_log);
  report(prox_ok && acg_ok, "optimizer_reductions",
         std::string("3 sessions: fedprox(mu=0) ") + (prox_ok ? "bit-identical" : "DIFFERS") +
             ", fedacg(beta=0, anchor=start) " + (acg_ok ? "bit-identical" : "DIFFERS") + " to fedavg");
}

struct HarnessResult {
  BoundTerms terms;
  std::string metrics;
};

HarnessResult bound_harness(std::uint64_t seed) {
  constexpr std::size_t dim = 4;
  constexpr std::size_t clients = 5;
  TrainingPlan plan;
  plan.spec = {ModelKind::quadratic, dim, 2, 0, 1.0};
  auto rng = derive_stream(seed, {0, 0, make_actor(kRoleData, 0)});
  SessionData sd;
  std::vector<Batch> batches;
  ParamVector center_mean(dim);
  for (std::size_t k = 0; k < clients; ++k) {
    Batch b;
    b.input_dim = dim;
    std::vector<double> ck(dim);
    for (double& v : ck) v = 2.0 * rng.normal();
    b.push_back(ck, 0);
    for (std::size_t j = 0; j < dim; ++j) center_mean[j] += ck[j] / clients;
    sd.client_ids.push_back(k);
    sd.clients.push_back(b);
    batches.push_back(b);
  }
  plan.sessions = {sd};
  plan.pilot_sessions = 1;
  plan.pilot_rounds = 50;
  plan.rounds_per_session = 50;
  plan.variant = Variant::previous;
  plan.steps_min = 1;
  plan.steps_max = 3;
  plan.batch_size = 1;
  plan.seed = seed;

  // Probes: random points plus the minimizer of the global objective.
  std::vector<ParamVector> probes{center_mean};
  auto prng = derive_stream(seed, {0, 0, make_actor(kRoleProbe, 0)});
  for (int i = 0; i < 16; ++i) {
    ParamVector p(dim);
    for (double& v : p) v = 5.0 * prng.normal();
    probes.push_back(p);
  }
  const std::vector<double> a(clients, 1.0 / clients);
  const auto z = estimate_zeta(plan.spec, batches, a, probes);
  const double lambda = 0.5;
  const auto cond = lr_condition(1.0, plan.steps_min, plan.steps_max, lambda, z.zeta1);
  plan.lr = LrSchedule{0.9 * cond.eta_max, 0.0, 0.0};

  const auto log = run_training(plan);
  BoundConstants k;
  k.beta = 1.0;
  k.zeta1 = z.zeta1;
  k.zeta2 = z.zeta2;
  k.theta = {1.0};
  k.lambda = {lambda};
  for (std::size_t i = 0; i < clients; ++i) k.sigma_tilde[i] = sigma_tilde(batches[i]);
  return {bound_terms(log.rounds, k), metrics_csv(log)};
}

void convergence_bound(std::string& harness_metrics) {
  const auto t0 = std::chrono::steady_clock::now();
  int held = 0;
  double worst_ratio = 0.0;
  bool terms_zero = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = bound_harness(seed);
    if (seed == 0) harness_metrics = r.metrics;
    held += r.terms.holds() && r.terms.rounds == 50;
    worst_ratio = std::max(worst_ratio, r.terms.lhs_mean_grad_sq / r.terms.rhs_total);
    terms_zero = terms_zero && r.terms.b == 0.0 && r.terms.c == 0.0;
  }
  const double secs = seconds_since(t0);
  report(held == 5 && terms_zero && secs < 10.0, "convergence_bound",
         fmt("lhs <= rhs in %.0f/5 seeds (G=50), max lhs/rhs %.3f, %.2fs (<10s)", held, worst_ratio, secs) +
             (terms_zero ? "; terms (b),(c) = 0" : "; terms (b),(c) NONZERO"));
}

double session_window(const RunLog& log, int session, int window) {
  return session_window_accuracy(log, window)[static_cast<std::size_t>(session)];
}

void warm_start() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  bool never_worse = true;
  std::string gaps;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto c = warm_config(seed);
    c.variant = "proposed";
    const auto proposed = run_training(build_experiment(c).plan);
    c.variant = "previous";
    const auto previous = run_training(build_experiment(c).plan);
    const double gap = 100.0 * (session_window(proposed, 3, 10) - session_window(previous, 3, 10));
    wins += gap >= 5.0;
    never_worse = never_worse && gap >= -1.0;
    gaps += (gaps.empty() ? "" : ", ") + fmt("%+.1f", gap);
  }
  const double secs = seconds_since(t0);
  report(wins >= 2 && never_worse && secs < 60.0, "warm_start_reproduction",
         "proposed - previous at second A-session (N=10), points per seed: " + gaps +
             fmt("; >=5 in %.0f/3 (need 2), %.1fs (<60s)", wins, secs));
}

void cost_matrix() {
  struct Case {
    int P;
    int V;
    std::size_t e_min;
    std::size_t e_max;
    double participation;
    const char* variant;
  };
  const std::vector<Case> cases{{1, 1, 1, 3, 1.0, "proposed"}, {1, 2, 2, 5, 1.0, "proposed"},
                                {2, 1, 1, 4, 0.5, "proposed"}, {2, 2, 3, 3, 1.0, "random_pilot"},
                                {1, 2, 1, 2, 0.6, "average"},  {2, 1, 2, 6, 1.0, "previous"}};
  int ok = 0;
  for (const auto& cs : cases) {
    auto c = warm_config(21);
    c.gaussian_per_class = 30;
    c.num_clients = 5;
    c.num_sessions = 4;
    c.num_sessions_pilot = cs.P;
    c.num_round_grad_cal = cs.V;
    c.num_rounds_pilot = 3;
    c.num_rounds_actual = 4;
    c.num_SGD_training = cs.e_min;
    c.num_SGD_training_max = cs.e_max;
    c.participation_fraction = cs.participation;
    c.variant = cs.variant;
    const auto ex = build_experiment(c);
    const auto log = run_training(ex.plan);
    ok += observed_costs(log, ex.plan.pilot_sessions, param_count(ex.plan.spec)) ==
          cost_account(ex.schedule, cost_config_for(ex.plan));
  }
  report(ok == static_cast<int>(cases.size()), "cost_accounting",
         fmt("closed form == simulator counters in %.0f/%.0f configs (P in {1,2}, V in {1,2}, variable e_k)", ok,
             static_cast<double>(cases.size())));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism(const std::string& harness_metrics) {
  const auto base = std::filesystem::temp_directory_path() / "fedwarm_acceptance";
  std::filesystem::remove_all(base);
  bool same = true;
  for (const char* variant : {"proposed", "previous"}) {
    auto c = warm_config(0);
    c.variant = variant;
    c.threads = 1;
    c.output_dir = (base / (std::string(variant) + "_a")).string();
    const auto a = run_experiment(c);
    c.threads = 4;
    c.output_dir = (base / (std::string(variant) + "_b")).string();
    const auto b = run_experiment(c);
    c.threads = 1;
    c.output_dir = (base / (std::string(variant) + "_c")).string();
    const auto again = run_experiment(c);
    same = same && slurp(a.metrics) == slurp(b.metrics) && slurp(a.metrics) == slurp(again.metrics);
  }
  same = same && bound_harness(0).metrics == harness_metrics;
  report(same, "determinism", same ? "repeated runs (and 1 vs 4 threads) give byte-identical metrics.csv"
                                   : "metrics.csv differs between repeated runs");
}

void lr_spot_values() {
  const auto a = lr_condition(1.0, 1, 1, 0.5, 1.0);
  const auto b = lr_condition(1.0, 1, 2, 0.5, 1.0);
  const auto c = lr_condition(1.0, 4, 4, 0.5, 1.0);
  const bool ok = a.satisfiable && a.eta_max == 0.5 && !a.drift_term && b.satisfiable &&
                  std::abs(b.eta_max - 0.2041) <= 1e-4 && !c.satisfiable;
  report(ok, "lr_condition_spot_values",
         fmt("(1,1,1) -> %.4f; (1,1,2) -> %.4f; e_min=4 -> ", a.eta_max, b.eta_max) +
             (c.satisfiable ? "satisfiable" : "unsatisfiable"));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    gradient_check();
    weight_normalization();
    r_limits();
    pilot_identity();
    optimizer_reductions();
    std::string harness_metrics;
    convergence_bound(harness_metrics);
    warm_start();
    cost_matrix();
    determinism(harness_metrics);
    lr_spot_values();
  } catch (const std::exception& e) {
    std::printf("FAIL  %-28s %s\n", "exception", e.what());
    return 1;
  }
  std::printf("%d failure(s), %.1fs total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
