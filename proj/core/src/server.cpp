#include "fedwarm/server.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "fedwarm/error.hpp"
#include "json.hpp"

namespace fedwarm {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    const std::size_t workers = std::min(threads, n);
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

struct RoundInput {
  int session = 0;
  int round_key = 0;
  int global_round = 0;
  Phase phase = Phase::train;
  double eta = 0.0;
  std::shared_ptr<const ParamVector> distill_anchor;
};

LocalHyper hyper_for(const TrainingPlan& plan, const RoundInput& in, std::size_t index) {
  LocalHyper h;
  h.eta = in.eta;
  h.algorithm = plan.algorithm;
  h.prox_mu = plan.prox_mu;
  h.acg_beta = plan.acg_beta;
  h.acg_lambda = plan.acg_lambda;
  if (in.phase == Phase::train) {
    h.steps = local_steps_for(index, plan.steps_min, plan.steps_max);
    h.batch_size = plan.batch_size;
    if (in.distill_anchor && plan.kl_coefficient > 0.0) {
      h.kl_coefficient = plan.kl_coefficient;
      h.distill_anchor = in.distill_anchor;
    }
  } else {
    h.steps = grad_steps_for(plan, index);
    h.batch_size = plan.grad_batch_size > 0 ? plan.grad_batch_size : plan.batch_size;
  }
  return h;
}

// Global objective F(w) = sum_k D_k F_k(w) / D over `participants`, with its
// gradient when requested.
LossGrad session_objective(const TrainingPlan& plan, const SessionData& sd,
                           std::span<const std::size_t> participants, const ParamVector& w,
                           bool want_grad) {
  std::vector<LossGrad> parts(participants.size());
  parallel_for(participants.size(), plan.threads, [&](std::size_t i) {
    const auto& data = sd.clients[participants[i]];
    if (want_grad) {
      parts[i] = loss_and_grad(plan.spec, w, data);
    } else {
      parts[i].loss = loss(plan.spec, w, data);
    }
  });
  LossGrad out;
  if (want_grad) out.grad = ParamVector(w.size());
  double total = 0.0;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const double dk = static_cast<double>(sd.clients[participants[i]].size());
    total += dk;
    out.loss += dk * parts[i].loss;
    if (want_grad) axpy(dk, parts[i].grad, out.grad);
  }
  out.loss /= total;
  if (want_grad) out.grad *= 1.0 / total;
  return out;
}

RoundRecord execute_round(const TrainingPlan& plan, const SessionData& sd, ServerCtx& ctx,
                          std::vector<ClientState>& states,
                          std::span<const std::size_t> participants, const RoundInput& in,
                          LocalCost& cost) {
  const auto started = std::chrono::steady_clock::now();
  RoundRecord rec;
  rec.session = in.session;
  rec.round_in_session = in.round_key;
  rec.global_round = in.global_round;
  rec.phase = in.phase;
  rec.eta = in.eta;

  const auto before = session_objective(plan, sd, participants, ctx.global, true);
  rec.loss_start = before.loss;
  rec.grad_norm_sq = norm_sq(before.grad);

  const std::uint64_t role = in.phase == Phase::train ? kRoleTrain : kRoleGradCompute;
  const ParamVector& start = ctx.broadcast(plan.algorithm);
  std::vector<LocalResult> results(participants.size());
  parallel_for(participants.size(), plan.threads, [&](std::size_t i) {
    const std::size_t k = participants[i];
    auto rng = derive_stream(plan.seed, {static_cast<std::uint64_t>(in.session),
                                         static_cast<std::uint64_t>(in.round_key),
                                         make_actor(role, sd.client_ids[k])});
    results[i] = local_train(plan.spec, start, ctx, sd.clients[k], hyper_for(plan, in, k),
                             states[k], rng);
  });

  std::vector<WeightedUpdate> updates;
  updates.reserve(participants.size());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const std::size_t k = participants[i];
    const auto& data = sd.clients[k];
    const LocalHyper h = hyper_for(plan, in, k);
    rec.clients.push_back({sd.client_ids[k], data.size(), std::min(h.batch_size, data.size()), h.steps});
    rec.epochs += results[i].cost.epochs;
    cost += results[i].cost;
    updates.push_back({sd.client_ids[k], results[i].model, static_cast<double>(data.size())});
  }
  ParamVector next = aggregate(updates);

  switch (plan.algorithm) {
    case Algorithm::scaffold: {
      // c <- c + (1/N) sum_{k in S} (c_k' - c_k), N = clients in the session.
      const double inv_n = 1.0 / static_cast<double>(sd.clients.size());
      for (std::size_t i = 0; i < participants.size(); ++i) {
        auto& old = states[participants[i]].control;
        const auto& fresh = results[i].state.control;
        for (std::size_t j = 0; j < fresh.size(); ++j) {
          ctx.control[j] += inv_n * (fresh[j] - (old.empty() ? 0.0 : old[j]));
        }
        old = fresh;
      }
      ctx.global = std::move(next);
      break;
    }
    case Algorithm::fedacg: {
      // m <- lambda m + (aggregate - anchor); w <- aggregate; anchor <- w + lambda m.
      for (std::size_t j = 0; j < next.size(); ++j) {
        ctx.momentum[j] = plan.acg_lambda * ctx.momentum[j] + (next[j] - ctx.anchor[j]);
      }
      ctx.global = std::move(next);
      ctx.anchor = ctx.global;
      axpy(plan.acg_lambda, ctx.momentum, ctx.anchor);
      break;
    }
    default:
      ctx.global = std::move(next);
  }
  ++ctx.round_in_session;

  rec.loss_end = session_objective(plan, sd, participants, ctx.global, false).loss;
  rec.test_accuracy = (plan.spec.kind == ModelKind::quadratic || sd.test.empty())
                          ? 0.0
                          : accuracy(plan.spec, ctx.global, sd.test);
  rec.comm_up = participants.size();
  rec.comm_down = 1;
  if (plan.record_wall_time) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
                      .count();
  }
  return rec;
}

void write_vector(const std::filesystem::path& path, const ParamVector& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw DataError("write failed for " + path.string());
}

ParamVector read_vector(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  ParamVector v(dim);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(dim * sizeof(double)) || in.peek() != EOF) {
    throw DataError(path.string() + ": expected " + std::to_string(dim) + " float64 values");
  }
  return v;
}

}  // namespace

ParamVector aggregate(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw StateError("aggregate: no client updates");
  std::vector<const WeightedUpdate*> order;
  order.reserve(updates.size());
  for (const auto& u : updates) {
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw NumericError("aggregate: weights must be positive and finite");
    }
    require_same_dim(u.model, updates.front().model, "aggregate");
    order.push_back(&u);
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->client_id < b->client_id; });
  const std::size_t dim = updates.front().model.size();
  ParamVector sum(dim);
  ParamVector lo(dim, std::numeric_limits<double>::infinity());
  ParamVector hi(dim, -std::numeric_limits<double>::infinity());
  double total = 0.0;
  for (const auto* u : order) {
    total += u->weight;
    for (std::size_t i = 0; i < dim; ++i) {
      const double v = u->model[i];
      sum[i] += u->weight * v;
      lo[i] = std::min(lo[i], v);
      hi[i] = std::max(hi[i], v);
    }
  }
  for (std::size_t i = 0; i < dim; ++i) sum[i] = std::clamp(sum[i] / total, lo[i], hi[i]);
  return sum;
}

ParamVector compute_pilot(std::span<const ParamVector> models) {
  if (models.empty()) throw StateError("compute_pilot: no saved models");
  return mean(models);
}

std::vector<double> similarity_weights(std::span<const double> distances, double R) {
  if (distances.empty()) throw NumericError("similarity_weights: no distances");
  if (!std::isfinite(R)) throw NumericError("similarity_weights: R must be finite");
  std::vector<double> scaled(distances.size());
  double shift = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < distances.size(); ++j) {
    const double d = distances[j];
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw NumericError("similarity_weights: distances must be finite and >= 0");
    }
    scaled[j] = R * d;
    shift = std::min(shift, scaled[j]);
  }
  std::vector<double> w(distances.size());
  double total = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] = std::exp(-(scaled[j] - shift));
    total += w[j];
  }
  for (double& v : w) v /= total;
  return w;
}

void ArtifactStore::save_last(int session, ParamVector model) {
  q1.emplace_back(session, std::move(model));
}

void ArtifactStore::save_gradient(int session, ParamVector gradient) {
  for (const auto& [s, g] : q2) {
    if (s == session) throw StateError("computed gradient already saved for session " + std::to_string(session));
  }
  q2.emplace_back(session, std::move(gradient));
}

const ParamVector& ArtifactStore::finalize_pilot(int pilot_sessions) {
  if (pilot_sessions < 1 || q1.size() < static_cast<std::size_t>(pilot_sessions)) {
    throw StateError("pilot needs " + std::to_string(pilot_sessions) + " saved models, have " +
                     std::to_string(q1.size()));
  }
  std::vector<ParamVector> first;
  for (int i = 0; i < pilot_sessions; ++i) first.push_back(q1[static_cast<std::size_t>(i)].second);
  pilot = compute_pilot(first);
  q1.erase(q1.begin(), q1.begin() + pilot_sessions);
  return *pilot;
}

std::vector<ParamVector> ArtifactStore::saved_models() const {
  std::vector<ParamVector> out;
  out.reserve(q1.size());
  for (const auto& [s, w] : q1) out.push_back(w);
  return out;
}

void ArtifactStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  std::size_t dim = pilot ? pilot->size() : (!q1.empty() ? q1.front().second.size()
                                                         : (!q2.empty() ? q2.front().second.size() : 0));
  manifest["format"] = "float64-le";
  manifest["dim"] = dim;
  if (pilot) {
    write_vector(dir / "pilot.bin", *pilot);
    manifest["pilot"] = "pilot.bin";
  } else {
    manifest["pilot"] = nullptr;
  }
  for (const char* list : {"q1", "q2"}) {
    const auto& entries = std::string_view(list) == "q1" ? q1 : q2;
    auto& arr = manifest[list] = nlohmann::json::array();
    for (const auto& [s, v] : entries) {
      if (v.size() != dim) throw DimensionError("ArtifactStore::save: mixed vector dimensions");
      const std::string file = std::string(list) + "_session" + std::to_string(s) + ".bin";
      write_vector(dir / file, v);
      arr.push_back({{"session", s}, {"file", file}});
    }
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
}

ArtifactStore ArtifactStore::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint manifest: " + std::string(e.what()));
  }
  ArtifactStore store;
  const auto dim = manifest.at("dim").get<std::size_t>();
  if (!manifest.at("pilot").is_null()) {
    store.pilot = read_vector(dir / manifest["pilot"].get<std::string>(), dim);
  }
  for (const auto& e : manifest.at("q1")) {
    store.q1.emplace_back(e.at("session").get<int>(), read_vector(dir / e.at("file").get<std::string>(), dim));
  }
  for (const auto& e : manifest.at("q2")) {
    store.q2.emplace_back(e.at("session").get<int>(), read_vector(dir / e.at("file").get<std::string>(), dim));
  }
  return store;
}

InitialModel construct_initial_model(const ArtifactStore& store, const ParamVector& gradient,
                                     double R) {
  InitialModel out;
  std::vector<const ParamVector*> models;
  for (const auto& [z, gz] : store.q2) {
    auto it = std::find_if(store.q1.begin(), store.q1.end(), [z = z](const auto& e) { return e.first == z; });
    if (it == store.q1.end()) continue;
    out.sessions.push_back(z);
    out.distances.push_back(distance(gradient, gz));
    models.push_back(&it->second);
  }
  if (models.empty()) {
    throw StateError("construct_initial_model: no saved post-pilot (model, gradient) pairs; use the pilot");
  }
  out.weights = similarity_weights(out.distances, R);
  out.model = ParamVector(models.front()->size());
  for (std::size_t j = 0; j < models.size(); ++j) axpy(out.weights[j], *models[j], out.model);
  return out;
}

ParamVector baseline_init(BaselineKind kind, const ArtifactStore& store,
                          const std::optional<ParamVector>& previous, const ModelSpec& spec,
                          RngStream& rng) {
  switch (kind) {
    case BaselineKind::previous:
      if (!previous) throw StateError("previous baseline needs a completed earlier session");
      return *previous;
    case BaselineKind::average: {
      if (store.q1.empty()) throw StateError("average baseline needs at least one saved model");
      const auto models = store.saved_models();
      return mean(models);
    }
    case BaselineKind::pilot:
      if (!store.pilot) throw StateError("pilot baseline needs a computed pilot model");
      return *store.pilot;
    case BaselineKind::random: return init_params(spec, rng);
  }
  throw StateError("unknown baseline kind");
}

std::string_view to_string(Variant variant) noexcept {
  switch (variant) {
    case Variant::proposed: return "proposed";
    case Variant::previous: return "previous";
    case Variant::average: return "average";
    case Variant::continuous: return "continuous";
    case Variant::random_pilot: return "random_pilot";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::proposed, Variant::previous, Variant::average, Variant::continuous,
                 Variant::random_pilot}) {
    if (name == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected proposed, previous, average, continuous or random_pilot)");
}

bool uses_computed_gradients(Variant variant) noexcept {
  return variant == Variant::proposed || variant == Variant::random_pilot;
}

std::string_view to_string(Phase phase) noexcept {
  return phase == Phase::train ? "train" : "grad_compute";
}

void TrainingPlan::validate() const {
  spec.validate();
  if (sessions.empty()) throw ConfigError("training plan has no sessions");
  if (pilot_sessions < 1 || pilot_sessions > num_sessions()) {
    throw ConfigError("need num_sessions >= pilot_sessions >= 1 (got S=" + std::to_string(num_sessions()) +
                      ", P=" + std::to_string(pilot_sessions) + ")");
  }
  if (pilot_rounds < 1 || rounds_per_session < 1) throw ConfigError("rounds per session must be >= 1");
  if (grad_rounds < 1) throw ConfigError("gradient computation rounds V must be >= 1");
  if (!std::isfinite(similarity_scale)) throw ConfigError("similarity scale must be finite");
  if (steps_min < 1 || steps_max < steps_min) throw ConfigError("need 1 <= steps_min <= steps_max");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) {
    throw ConfigError("participation fraction must lie in (0, 1]");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const auto& sd = sessions[s];
    if (sd.clients.empty() || sd.clients.size() != sd.client_ids.size()) {
      throw ConfigError("session " + std::to_string(s) + " has no clients or mismatched ids");
    }
    for (const auto& c : sd.clients) {
      if (c.empty()) throw ConfigError("session " + std::to_string(s) + " has a client without samples");
    }
  }
}

std::size_t local_steps_for(std::size_t index, std::size_t steps_min, std::size_t steps_max) noexcept {
  return steps_min + index % (steps_max - steps_min + 1);
}

std::size_t grad_steps_for(const TrainingPlan& plan, std::size_t index) noexcept {
  return plan.grad_steps > 0 ? plan.grad_steps : local_steps_for(index, plan.steps_min, plan.steps_max);
}

std::vector<std::size_t> select_participants(std::uint64_t seed, int session, int round,
                                             std::size_t num_clients, double fraction) {
  std::vector<std::size_t> all(num_clients);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (fraction >= 1.0) return all;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(num_clients))));
  auto rng = derive_stream(seed, {static_cast<std::uint64_t>(session), static_cast<std::uint64_t>(round),
                                  make_actor(kRoleParticipation, 0)});
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

GradientComputation compute_session_gradient(const TrainingPlan& plan, int session,
                                             const ParamVector& reference, int first_global_round) {
  if (session < 0 || session >= plan.num_sessions()) throw StateError("no such session");
  if (plan.grad_rounds < 1) throw ConfigError("gradient computation rounds V must be >= 1");
  require_same_dim(reference, ParamVector(param_count(plan.spec)), "compute_session_gradient");
  const auto& sd = plan.sessions[static_cast<std::size_t>(session)];
  const auto participants = select_participants(plan.seed, session, 0, sd.clients.size(), plan.participation);
  ServerCtx ctx = ServerCtx::start(reference, plan.algorithm, session);
  std::vector<ClientState> states(sd.clients.size());
  GradientComputation out;
  const double eta = plan.lr.at(0, plan.rounds_in(session));
  for (int v = 0; v < plan.grad_rounds; ++v) {
    RoundInput in;
    in.session = session;
    in.round_key = v;
    in.global_round = first_global_round;
    in.phase = Phase::grad_compute;
    in.eta = eta;
    out.rounds.push_back(execute_round(plan, sd, ctx, states, participants, in, out.cost));
  }
  out.gradient = ctx.global - reference;
  return out;
}

RunLog run_training(const TrainingPlan& plan) {
  plan.validate();
  RunLog log;
  log.variant = plan.variant;
  log.algorithm = plan.algorithm;

  auto init_rng = derive_stream(plan.seed, {0, 0, make_actor(kRoleInit, 0)});
  ParamVector w = init_params(plan.spec, init_rng);
  std::optional<ParamVector> random_reference;
  if (plan.variant == Variant::random_pilot) {
    auto rng = derive_stream(plan.seed, {0, 0, make_actor(kRoleRandomPilot, 0)});
    random_reference = init_params(plan.spec, rng);
  }

  const int num_sessions = plan.num_sessions();
  const int pilot_sessions = plan.pilot_sessions;
  int global_offset = 0;
  std::optional<ParamVector> previous_last;
  for (int s = 0; s < num_sessions; ++s) {
    const auto& sd = plan.sessions[static_cast<std::size_t>(s)];
    const int rounds = plan.rounds_in(s);
    SessionSummary summary;
    summary.session = s;
    std::shared_ptr<const ParamVector> distill_anchor;

    if (s < pilot_sessions) {
      summary.init = s == 0 ? "random" : "continue";
    } else {
      if (!log.store.pilot) throw StateError("pilot model missing after the pilot stage");
      const ParamVector& pilot = *log.store.pilot;
      switch (plan.variant) {
        case Variant::proposed:
        case Variant::random_pilot: {
          const ParamVector& reference = random_reference ? *random_reference : pilot;
          auto computed = compute_session_gradient(plan, s, reference, global_offset);
          log.total_cost += computed.cost;
          for (auto& r : computed.rounds) log.rounds.push_back(std::move(r));
          if (s > pilot_sessions) {
            auto init = construct_initial_model(log.store, computed.gradient, plan.similarity_scale);
            w = std::move(init.model);
            summary.init = "constructed";
            summary.weight_sessions = std::move(init.sessions);
            summary.distances = std::move(init.distances);
            summary.weights = std::move(init.weights);
          } else {
            w = pilot;
            summary.init = "pilot";
          }
          summary.gradient = computed.gradient;
          log.store.save_gradient(s, std::move(computed.gradient));
          break;
        }
        case Variant::previous:
          summary.init = "previous";
          break;
        case Variant::continuous:
          summary.init = "previous";
          distill_anchor = std::make_shared<const ParamVector>(*previous_last);
          break;
        case Variant::average: {
          auto rng = derive_stream(plan.seed, {static_cast<std::uint64_t>(s), 0, make_actor(kRoleInit, 0)});
          const auto kind = s > pilot_sessions ? BaselineKind::average : BaselineKind::pilot;
          w = baseline_init(kind, log.store, previous_last, plan.spec, rng);
          summary.init = "average";
          break;
        }
      }
    }

    ServerCtx ctx = ServerCtx::start(w, plan.algorithm, s);
    std::vector<ClientState> states(sd.clients.size());
    for (int t = 0; t < rounds; ++t) {
      const auto participants = select_participants(plan.seed, s, t, sd.clients.size(), plan.participation);
      RoundInput in;
      in.session = s;
      in.round_key = t;
      in.global_round = global_offset + t;
      in.phase = Phase::train;
      in.eta = plan.lr.at(t, rounds);
      in.distill_anchor = distill_anchor;
      log.rounds.push_back(execute_round(plan, sd, ctx, states, participants, in, log.total_cost));
    }
    w = ctx.global;
    log.session_last.push_back(w);
    log.store.save_last(s, w);
    if (!log.store.pilot && log.store.q1.size() == static_cast<std::size_t>(pilot_sessions)) {
      log.store.finalize_pilot(pilot_sessions);
    }
    previous_last = w;
    log.sessions.push_back(std::move(summary));
    global_offset += rounds;
  }
  log.final_model = w;
  return log;
}

}  // namespace fedwarm
