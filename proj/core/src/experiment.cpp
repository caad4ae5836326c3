#include "fedwarm/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fedwarm/error.hpp"
#include "json.hpp"

namespace fedwarm {

const char* const kMetricsHeader =
    "session,round_in_session,global_round,phase,variant,train_loss,test_accuracy,grad_norm_sq,eta,"
    "comm_up,comm_down,epochs_this_round,wall_ms";

namespace {

constexpr std::size_t kMetricsColumns = 13;

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("invalid " + key + ": " + what);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

bool is_r_dependent(Variant v) { return uses_computed_gradients(v); }

Batch concat(const std::vector<Batch>& parts) {
  Batch out;
  out.input_dim = parts.front().input_dim;
  for (const auto& b : parts) {
    out.features.insert(out.features.end(), b.features.begin(), b.features.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  }
  return out;
}

int follow_reuse(const SessionSchedule& schedule, int s) {
  while (schedule.sessions[static_cast<std::size_t>(s)].reuses) {
    s = *schedule.sessions[static_cast<std::size_t>(s)].reuses;
  }
  return s;
}

template <typename T>
T parse_number(std::string_view field, const std::string& where, const char* column) {
  T value{};
  auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw DataError(where + ": bad " + column + " value '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("missing required key 'dataset' (gaussian or csv:<path>)");
  require(dataset == "gaussian" || (dataset.rfind("csv:", 0) == 0 && dataset.size() > 4), "dataset",
          "expected 'gaussian' or 'csv:<path>', got '" + dataset + "'");
  if (dataset == "gaussian") {
    require(gaussian_classes >= 2, "gaussian_classes", "need at least 2 classes");
    require(gaussian_per_class >= 1, "gaussian_per_class", "need at least 1 sample per class");
    require(gaussian_dim >= 1, "gaussian_dim", "need at least 1 feature");
    require(gaussian_spread > 0.0, "gaussian_spread", "must be > 0");
  }
  parse_model_kind(model);
  parse_algorithm(algorithm);
  parse_variant(variant);
  if (model == "mlp1") require(hidden_dim >= 1, "hidden_dim", "mlp1 needs hidden_dim >= 1");
  require(num_clients >= 1, "num_clients", "need at least one client");
  require(num_sessions_pilot >= 1, "num_sessions_pilot", "P must be >= 1");
  require(num_sessions >= num_sessions_pilot, "num_sessions",
          "S must be >= P (got S=" + std::to_string(num_sessions) + ", P=" +
              std::to_string(num_sessions_pilot) + ")");
  require(num_rounds_pilot >= 1, "num_rounds_pilot", "must be >= 1");
  require(num_rounds_actual >= 1, "num_rounds_actual", "must be >= 1");
  require(num_round_grad_cal >= 1, "num_round_grad_cal", "V must be >= 1");
  require(cross_session_label_overlap >= 0.0 && cross_session_label_overlap < 1.0,
          "cross_session_label_overlap", "must lie in [0, 1)");
  const auto scheme = parse_partition_scheme(in_session_label_dist);
  if (scheme == PartitionScheme::dirichlet) {
    require(dirichlet_alpha > 0.0, "dirichlet_alpha", "must be > 0");
  }
  require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction", "must lie in [0, 1)");
  require(lr > 0.0, "lr", "must be > 0");
  require(num_SGD_training >= 1, "num_SGD_training", "must be >= 1");
  require(num_SGD_training_max == 0 || num_SGD_training_max >= num_SGD_training, "num_SGD_training_max",
          "must be 0 or >= num_SGD_training");
  require(batch_size_training >= 1, "batch_size_training", "must be >= 1");
  require(std::isfinite(similarity_scale), "similarity_scale", "must be finite");
  require(similarity == "two_norm", "similarity", "only 'two_norm' is supported");
  require(prox_alpha >= 0.0, "prox_alpha", "must be >= 0");
  require(acg_beta >= 0.0, "acg_beta", "must be >= 0");
  require(acg_lambda >= 0.0 && acg_lambda < 1.0, "acg_lambda", "must lie in [0, 1)");
  require(kl_coefficient >= 0.0, "kl_coefficient", "must be >= 0");
  require(participation_fraction > 0.0 && participation_fraction <= 1.0, "participation_fraction",
          "must lie in (0, 1]");
  require(!output_dir.empty(), "output_dir", "must not be empty");
  require(threads >= 1, "threads", "must be >= 1");
  require(bound_lambda > 0.0 && bound_lambda < 1.0, "bound_lambda", "must lie in (0, 1)");
  require(transition_window >= 1, "transition_window", "must be >= 1");
  parse_recurrence(recurrence);
}

std::map<int, int> parse_recurrence(const std::string& text) {
  std::map<int, int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("invalid recurrence entry '" + item + "' (expected session:earlier)");
    }
    int s = 0;
    int e = 0;
    const std::string a = item.substr(0, colon);
    const std::string b = item.substr(colon + 1);
    auto r1 = std::from_chars(a.data(), a.data() + a.size(), s);
    auto r2 = std::from_chars(b.data(), b.data() + b.size(), e);
    if (r1.ec != std::errc{} || r1.ptr != a.data() + a.size() || r2.ec != std::errc{} ||
        r2.ptr != b.data() + b.size() || e < 0 || e >= s) {
      throw ConfigError("invalid recurrence entry '" + item + "' (need 0 <= earlier < session)");
    }
    out[s] = e;
  }
  return out;
}

Experiment build_experiment(const RunConfig& c) {
  c.validate();
  LabeledDataset data;
  if (c.dataset == "gaussian") {
    auto rng = derive_stream(c.seed, {0, 0, make_actor(kRoleData, 0)});
    data = gen_gaussian_mixture(c.gaussian_classes, c.gaussian_per_class, c.gaussian_dim, c.gaussian_spread,
                                rng);
  } else {
    data = load_csv(c.dataset.substr(4));
  }
  standardize(data);

  const auto scheme = parse_partition_scheme(c.in_session_label_dist);
  ScheduleOptions opt;
  opt.num_labels = data.num_classes;
  opt.num_sessions = c.num_sessions;
  opt.pilot_sessions = c.num_sessions_pilot;
  opt.rounds_per_session = c.num_rounds_actual;
  opt.pilot_rounds = c.num_rounds_pilot;
  opt.overlap = c.cross_session_label_overlap;
  opt.labels_per_session =
      c.labels_per_session > 0 ? c.labels_per_session : std::max<std::size_t>(1, data.num_classes / 2);
  opt.num_clients = c.num_clients;
  opt.recurrence = parse_recurrence(c.recurrence);
  opt.unseen_final = c.unseen_final;
  if (scheme == PartitionScheme::dirichlet) {
    opt.partition = "dirichlet(alpha=" + fmt(c.dirichlet_alpha) + ")";
  } else {
    opt.partition = std::string(to_string(scheme));
  }
  auto schedule_rng = derive_stream(c.seed, {0, 0, make_actor(kRoleSchedule, 0)});

  Experiment ex;
  ex.schedule = build_session_schedule(opt, schedule_rng);

  TrainingPlan& plan = ex.plan;
  plan.spec.kind = parse_model_kind(c.model);
  plan.spec.input_dim = data.input_dim;
  plan.spec.num_classes = std::max<std::size_t>(2, data.num_classes);
  plan.spec.hidden_dim = plan.spec.kind == ModelKind::mlp1 ? c.hidden_dim : 0;

  for (const auto& sp : ex.schedule.sessions) {
    const int source = follow_reuse(ex.schedule, sp.session);
    const auto key = static_cast<std::uint64_t>(source);
    auto pool = indices_with_labels(data, sp.labels);
    auto split_rng = derive_stream(c.seed, {key, 0, make_actor(kRoleSplit, 0)});
    split_rng.shuffle(std::span<std::size_t>(pool));
    const auto n_test = static_cast<std::size_t>(std::llround(c.test_fraction * static_cast<double>(pool.size())));
    std::vector<std::size_t> test(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(pool.begin() + static_cast<std::ptrdiff_t>(n_test), pool.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    if (train.size() < c.num_clients) {
      throw DataError("session " + std::to_string(sp.session) + " has " + std::to_string(train.size()) +
                      " training samples for " + std::to_string(c.num_clients) + " clients");
    }
    auto part_rng = derive_stream(c.seed, {key, 0, make_actor(kRolePartition, 0)});
    std::vector<ClientDataset> parts;
    if (scheme == PartitionScheme::dirichlet) {
      parts = partition_dirichlet(data, train, c.dirichlet_alpha, c.num_clients, part_rng);
    } else {
      parts = partition_named(data, train, scheme, c.num_clients, part_rng,
                              {c.partial_overlap_set, c.partial_overlap_shared});
    }
    SessionData sd;
    sd.client_ids = sp.client_ids;
    for (const auto& p : parts) sd.clients.push_back(gather(data, p.indices));
    sd.test = gather(data, test);
    plan.sessions.push_back(std::move(sd));
  }

  plan.pilot_sessions = c.num_sessions_pilot;
  plan.pilot_rounds = c.num_rounds_pilot;
  plan.rounds_per_session = c.num_rounds_actual;
  plan.grad_rounds = c.num_round_grad_cal;
  plan.variant = parse_variant(c.variant);
  plan.algorithm = parse_algorithm(c.algorithm);
  plan.similarity_scale = c.similarity_scale;
  plan.lr = c.lr_config_path.empty() ? LrSchedule{c.lr, 0.0, 0.0} : load_lr_schedule(c.lr_config_path, c.lr);
  plan.steps_min = c.num_SGD_training;
  plan.steps_max = c.num_SGD_training_max > 0 ? c.num_SGD_training_max : c.num_SGD_training;
  plan.batch_size = c.batch_size_training;
  plan.grad_steps = c.num_SGD_grad_cal;
  plan.grad_batch_size = c.batch_size_grad_cal;
  plan.prox_mu = c.prox_alpha;
  plan.acg_beta = c.acg_beta;
  plan.acg_lambda = c.acg_lambda;
  plan.kl_coefficient = c.kl_coefficient;
  plan.participation = c.participation_fraction;
  plan.seed = c.seed;
  plan.threads = c.threads;
  plan.record_wall_time = c.timing;
  plan.validate();
  return ex;
}

BoundConstants estimate_bound_constants(const TrainingPlan& plan, const RunLog& log, double lambda) {
  BoundConstants k;
  k.lambda = {lambda};
  double theta = 0.0;
  k.beta = 0.0;
  for (int s = 0; s < plan.num_sessions(); ++s) {
    const auto& sd = plan.sessions[static_cast<std::size_t>(s)];
    const auto key = static_cast<std::uint64_t>(s);
    const Batch all = concat(sd.clients);
    auto beta_rng = derive_stream(plan.seed, {key, 0, make_actor(kRoleProbe, 0)});
    k.beta = std::max(k.beta, estimate_beta(plan.spec, all, 8, 1e-3, beta_rng));
    if (all.size() >= 2) {
      auto theta_rng = derive_stream(plan.seed, {key, 0, make_actor(kRoleProbe, 1)});
      try {
        theta = std::max(theta, estimate_theta(plan.spec, log.session_last[static_cast<std::size_t>(s)], all,
                                               2000, theta_rng));
      } catch (const DataError&) {
        // every sampled pair coincides; contributes nothing
      }
    }
    std::vector<double> weights;
    for (const auto& b : sd.clients) {
      weights.push_back(static_cast<double>(b.size()) / static_cast<double>(all.size()));
    }
    std::vector<ParamVector> probes{log.session_last[static_cast<std::size_t>(s)]};
    auto probe_rng = derive_stream(plan.seed, {key, 0, make_actor(kRoleProbe, 2)});
    probes.push_back(init_params(plan.spec, probe_rng));
    const auto z = estimate_zeta(plan.spec, sd.clients, weights, probes);
    k.zeta1 = std::max(k.zeta1, z.zeta1);
    k.zeta2 = std::max(k.zeta2, z.zeta2);
    for (std::size_t i = 0; i < sd.clients.size(); ++i) {
      k.sigma_tilde[sd.client_ids[i]] = sigma_tilde(sd.clients[i]);
    }
  }
  if (!(k.beta > 0.0)) k.beta = 1e-12;
  k.theta = {theta};
  return k;
}

std::vector<MetricsRow> to_rows(const RunLog& log) {
  std::vector<MetricsRow> rows;
  rows.reserve(log.rounds.size());
  for (const auto& r : log.rounds) {
    MetricsRow m;
    m.session = r.session;
    m.round_in_session = r.round_in_session;
    m.global_round = r.global_round;
    m.phase = std::string(to_string(r.phase));
    m.variant = std::string(to_string(log.variant));
    m.train_loss = r.loss_end;
    m.test_accuracy = r.test_accuracy;
    m.grad_norm_sq = r.grad_norm_sq;
    m.eta = r.eta;
    m.comm_up = r.comm_up;
    m.comm_down = r.comm_down;
    m.epochs_this_round = r.epochs;
    m.wall_ms = r.wall_ms;
    rows.push_back(std::move(m));
  }
  return rows;
}

std::string metrics_csv(const RunLog& log) { return format_metrics(to_rows(log)); }

std::vector<double> session_window_accuracy(const RunLog& log, int window) {
  if (window < 1) throw ConfigError("transition window must be >= 1");
  std::vector<double> out(log.sessions.size(), 0.0);
  std::vector<int> seen(log.sessions.size(), 0);
  for (const auto& r : log.rounds) {
    if (r.phase != Phase::train || r.round_in_session >= window) continue;
    const auto s = static_cast<std::size_t>(r.session);
    out[s] += r.test_accuracy;
    ++seen[s];
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (seen[s] > 0) out[s] /= seen[s];
  }
  return out;
}

RunOutputs run_experiment(const RunConfig& config) {
  const Experiment ex = build_experiment(config);
  const RunLog log = run_training(ex.plan);

  const std::filesystem::path dir(config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());

  RunOutputs out{dir / "metrics.csv", dir / "summary.json", dir / "bound_report.json", dir / "schedule.json"};
  write_file(out.metrics, metrics_csv(log));
  write_file(out.schedule, ex.schedule.to_json() + "\n");

  const auto constants = estimate_bound_constants(ex.plan, log, config.bound_lambda);
  const auto terms = bound_terms(log.rounds, constants);
  write_file(out.bound_report, bound_report_json(terms, constants) + "\n");

  const std::size_t W = param_count(ex.plan.spec);
  const auto observed = observed_costs(log, ex.plan.pilot_sessions, W);
  const auto closed = cost_account(ex.schedule, cost_config_for(ex.plan));
  const auto window = session_window_accuracy(log, config.transition_window);
  const bool r_dep = is_r_dependent(log.variant);

  nlohmann::json j;
  j["schema"] = 1;
  j["variant"] = std::string(to_string(log.variant));
  j["algorithm"] = std::string(to_string(log.algorithm));
  j["model"] = std::string(to_string(ex.plan.spec.kind));
  j["dataset"] = config.dataset;
  j["seed"] = config.seed;
  j["num_sessions"] = ex.plan.num_sessions();
  j["pilot_sessions"] = ex.plan.pilot_sessions;
  j["param_count"] = W;
  j["similarity_scale"] = r_dep ? nlohmann::json(config.similarity_scale) : nlohmann::json(nullptr);
  j["transition_window"] = config.transition_window;
  auto& sessions = j["sessions"] = nlohmann::json::array();
  for (const auto& s : log.sessions) {
    nlohmann::json e;
    e["session"] = s.session;
    e["init"] = s.init;
    e["labels"] = ex.schedule.sessions[static_cast<std::size_t>(s.session)].labels;
    e["window_accuracy"] = window[static_cast<std::size_t>(s.session)];
    const bool weighted = r_dep && !s.weights.empty();
    e["weight_sessions"] = weighted ? nlohmann::json(s.weight_sessions) : nlohmann::json(nullptr);
    e["distances"] = weighted ? nlohmann::json(s.distances) : nlohmann::json(nullptr);
    e["weights"] = weighted ? nlohmann::json(s.weights) : nlohmann::json(nullptr);
    e["gradient_norm"] = s.gradient ? nlohmann::json(norm(*s.gradient)) : nlohmann::json(nullptr);
    sessions.push_back(std::move(e));
  }
  auto& transitions = j["transitions"] = nlohmann::json::array();
  double sum = 0.0;
  for (std::size_t s = 1; s < window.size(); ++s) {
    transitions.push_back({{"from", s - 1}, {"to", s}, {"window_accuracy", window[s]}});
    sum += window[s];
  }
  j["mean_transition_accuracy"] =
      window.size() > 1 ? nlohmann::json(sum / static_cast<double>(window.size() - 1)) : nlohmann::json(nullptr);
  double final_acc = 0.0;
  for (const auto& r : log.rounds) {
    if (r.phase == Phase::train) final_acc = r.test_accuracy;
  }
  j["final_test_accuracy"] = final_acc;
  j["costs"] = {{"observed", nlohmann::json::parse(observed.to_json())},
                {"closed_form", nlohmann::json::parse(closed.to_json())},
                {"match", observed == closed}};
  j["bound"] = {{"verdict", terms.holds() ? "holds" : "violated"},
                {"rhs_total", terms.rhs_total},
                {"lhs_mean_grad_sq", terms.lhs_mean_grad_sq},
                {"flagged_rounds", terms.flagged_rounds.size()}};
  write_file(out.summary, j.dump(2) + "\n");

  if (config.checkpoint) log.store.save(dir / "store");
  return out;
}

std::vector<MetricsRow> parse_metrics(const std::string& text, const std::string& source) {
  std::vector<MetricsRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError(source + ": empty metrics (missing header)");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw DataError(source + ":1: unexpected metrics header");
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      f.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (f.size() != kMetricsColumns) {
      throw DataError(where + ": expected " + std::to_string(kMetricsColumns) + " fields, got " +
                      std::to_string(f.size()));
    }
    MetricsRow r;
    r.session = parse_number<int>(f[0], where, "session");
    r.round_in_session = parse_number<int>(f[1], where, "round_in_session");
    r.global_round = parse_number<int>(f[2], where, "global_round");
    r.phase = std::string(f[3]);
    if (r.phase != "train" && r.phase != "grad_compute") throw DataError(where + ": unknown phase '" + r.phase + "'");
    r.variant = std::string(f[4]);
    r.train_loss = parse_number<double>(f[5], where, "train_loss");
    r.test_accuracy = parse_number<double>(f[6], where, "test_accuracy");
    r.grad_norm_sq = parse_number<double>(f[7], where, "grad_norm_sq");
    r.eta = parse_number<double>(f[8], where, "eta");
    r.comm_up = parse_number<std::size_t>(f[9], where, "comm_up");
    r.comm_down = parse_number<std::size_t>(f[10], where, "comm_down");
    r.epochs_this_round = parse_number<std::size_t>(f[11], where, "epochs_this_round");
    r.wall_ms = parse_number<double>(f[12], where, "wall_ms");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics(ss.str(), path.string());
}

std::string format_metrics(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.session) + ',' + std::to_string(r.round_in_session) + ',' +
           std::to_string(r.global_round) + ',' + r.phase + ',' + r.variant + ',' + fmt(r.train_loss) + ',' +
           fmt(r.test_accuracy) + ',' + fmt(r.grad_norm_sq) + ',' + fmt(r.eta) + ',' +
           std::to_string(r.comm_up) + ',' + std::to_string(r.comm_down) + ',' +
           std::to_string(r.epochs_this_round) + ',' + fmt(r.wall_ms) + '\n';
  }
  return out;
}

TransitionTable transition_table(const std::vector<std::vector<MetricsRow>>& runs, int window) {
  if (window < 1) throw ConfigError("transition window must be >= 1");
  if (runs.empty()) throw DataError("transition table needs at least one metrics file");

  // Schedule signature: (session, train rounds, first global round) per session.
  using Signature = std::vector<std::tuple<int, int, int>>;
  auto signature = [](const std::vector<MetricsRow>& rows) {
    std::map<int, std::pair<int, int>> per;
    for (const auto& r : rows) {
      if (r.phase != "train") continue;
      auto [it, fresh] = per.try_emplace(r.session, 0, r.global_round);
      it->second.first += 1;
      it->second.second = std::min(it->second.second, r.global_round);
    }
    Signature sig;
    for (const auto& [s, v] : per) sig.emplace_back(s, v.first, v.second);
    return sig;
  };

  TransitionTable t;
  const Signature reference = signature(runs.front());
  if (reference.empty()) throw DataError("metrics file 1 has no train rows");
  for (const auto& [s, n, g] : reference) {
    if (s > std::get<0>(reference.front())) t.sessions.push_back(s);
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (signature(runs[i]) != reference) {
      throw DataError("metrics file " + std::to_string(i + 1) + " does not share the schedule of file 1");
    }
    t.variants.push_back(runs[i].front().variant);
    std::vector<double> row;
    for (int s : t.sessions) {
      double sum = 0.0;
      int count = 0;
      for (const auto& r : runs[i]) {
        if (r.phase == "train" && r.session == s && r.round_in_session < window) {
          sum += r.test_accuracy;
          ++count;
        }
      }
      row.push_back(sum / count);
    }
    t.values.push_back(std::move(row));
  }
  return t;
}

std::string TransitionTable::to_csv() const {
  std::string out = "variant";
  for (int s : sessions) out += ",session_" + std::to_string(s);
  out += '\n';
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out += variants[v];
    for (double x : values[v]) out += ',' + fmt(x);
    out += '\n';
  }
  return out;
}

std::string TransitionTable::to_text() const {
  std::size_t name_w = std::string("variant").size();
  for (const auto& v : variants) name_w = std::max(name_w, v.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "variant";
  for (int s : sessions) out << "  " << std::right << std::setw(10) << ("session " + std::to_string(s));
  out << '\n';
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out << std::left << std::setw(static_cast<int>(name_w)) << variants[v];
    for (double x : values[v]) out << "  " << std::right << std::setw(10) << std::fixed << std::setprecision(4) << x;
    out << '\n';
  }
  return out.str();
}

std::string emit_plotdata(const std::vector<MetricsRow>& rows) {
  std::vector<const MetricsRow*> train;
  for (const auto& r : rows) {
    if (r.phase == "train") train.push_back(&r);
  }
  std::stable_sort(train.begin(), train.end(),
                   [](const MetricsRow* a, const MetricsRow* b) { return a->global_round < b->global_round; });
  std::string out = "variant,global_round,accuracy\n";
  for (const auto* r : train) {
    out += r->variant + ',' + std::to_string(r->global_round) + ',' + fmt(r->test_accuracy) + '\n';
  }
  return out;
}

}  // namespace fedwarm
