#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedwarm/localtrain.hpp"
#include "fedwarm/models.hpp"
#include "fedwarm/numkit.hpp"

namespace fedwarm {

// Role tags for StreamPath::actor (see make_actor).
enum StreamRole : std::uint64_t {
  kRoleTrain = 1,
  kRoleGradCompute = 2,
  kRoleParticipation = 3,
  kRoleInit = 4,
  kRoleRandomPilot = 5,
  kRoleData = 6,
  kRoleSplit = 7,
  kRolePartition = 8,
  kRoleSchedule = 9,
  kRoleProbe = 10,
};

struct WeightedUpdate {
  std::uint64_t client_id = 0;
  ParamVector model;
  double weight = 0.0;  // D_k
};

// sum_k D_k w_k / sum_k D_k, accumulated in ascending client-id order so the
// result does not depend on the order of `updates`.
ParamVector aggregate(std::span<const WeightedUpdate> updates);

// Arithmetic mean of the end-of-session models of the pilot sessions.
ParamVector compute_pilot(std::span<const ParamVector> models);

// alpha_j = exp(-R d_j) / sum_i exp(-R d_i), evaluated with the minimum
// distance shifted out so large R cannot underflow every term.
std::vector<double> similarity_weights(std::span<const double> distances, double R);

/// Q1 (end-of-session models), Q2 (computed gradients) and the pilot model.
struct ArtifactStore {
  std::vector<std::pair<int, ParamVector>> q1;
  std::vector<std::pair<int, ParamVector>> q2;
  std::optional<ParamVector> pilot;

  void save_last(int session, ParamVector model);
  void save_gradient(int session, ParamVector gradient);
  // Averages the first P entries of q1 into the pilot and deletes them.
  const ParamVector& finalize_pilot(int pilot_sessions);
  std::vector<ParamVector> saved_models() const;

  // Flat little-endian float64 files plus manifest.json.
  void save(const std::filesystem::path& dir) const;
  static ArtifactStore load(const std::filesystem::path& dir);

  bool operator==(const ArtifactStore&) const = default;
};

struct InitialModel {
  ParamVector model;
  std::vector<int> sessions;      // saved sessions z, in store order
  std::vector<double> distances;  // ||G_s - G_z||_2
  std::vector<double> weights;    // alpha_{s,z}
};

// Similarity-weighted blend of the saved post-pilot models. Throws StateError
// when the store holds no (model, gradient) pair.
InitialModel construct_initial_model(const ArtifactStore& store, const ParamVector& gradient,
                                     double R);

enum class BaselineKind { previous, average, pilot, random };

// previous: the last model of the preceding session; average: mean of the
// saved post-pilot models; pilot: the pilot; random: a fresh init_params draw.
ParamVector baseline_init(BaselineKind kind, const ArtifactStore& store,
                          const std::optional<ParamVector>& previous, const ModelSpec& spec,
                          RngStream& rng);

enum class Variant { proposed, previous, average, continuous, random_pilot };

std::string_view to_string(Variant variant) noexcept;
Variant parse_variant(std::string_view name);
// Whether the variant runs gradient-computation rounds and keeps Q2.
bool uses_computed_gradients(Variant variant) noexcept;

/// Training data of one session, already partitioned.
struct SessionData {
  std::vector<std::uint64_t> client_ids;
  std::vector<Batch> clients;
  Batch test;
};

struct TrainingPlan {
  ModelSpec spec;
  std::vector<SessionData> sessions;
  int pilot_sessions = 1;
  int pilot_rounds = 1;
  int rounds_per_session = 1;
  int grad_rounds = 1;  // V
  Variant variant = Variant::proposed;
  Algorithm algorithm = Algorithm::fedavg;
  double similarity_scale = 10.0;  // R
  LrSchedule lr;
  std::size_t steps_min = 1;  // e_k ranges over [steps_min, steps_max] by client index
  std::size_t steps_max = 1;
  std::size_t batch_size = 32;
  std::size_t grad_steps = 0;       // 0: same as training
  std::size_t grad_batch_size = 0;  // 0: same as training
  double prox_mu = 0.0;
  double acg_beta = 0.0;
  double acg_lambda = 0.0;
  double kl_coefficient = 0.0;
  double participation = 1.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool record_wall_time = false;

  int num_sessions() const noexcept { return static_cast<int>(sessions.size()); }
  int rounds_in(int session) const noexcept {
    return session < pilot_sessions ? pilot_rounds : rounds_per_session;
  }
  // Throws ConfigError.
  void validate() const;
};

// e_k for the client at position `index` within its session.
std::size_t local_steps_for(std::size_t index, std::size_t steps_min, std::size_t steps_max) noexcept;
std::size_t grad_steps_for(const TrainingPlan& plan, std::size_t index) noexcept;

// Positions (ascending) of the clients taking part in one round.
std::vector<std::size_t> select_participants(std::uint64_t seed, int session, int round,
                                             std::size_t num_clients, double fraction);

enum class Phase { train, grad_compute };
std::string_view to_string(Phase phase) noexcept;

struct ClientRound {
  std::uint64_t client_id = 0;
  std::size_t samples = 0;     // D_k
  std::size_t batch_size = 0;  // B_k after clamping
  std::size_t steps = 0;       // e_k
};

struct RoundRecord {
  int session = 0;
  int round_in_session = 0;
  int global_round = 0;
  Phase phase = Phase::train;
  double loss_start = 0.0;    // F(w^(g)) over participants
  double loss_end = 0.0;      // F(w^(g+1))
  double grad_norm_sq = 0.0;  // ||grad F(w^(g))||^2
  double eta = 0.0;
  double test_accuracy = 0.0;
  std::size_t comm_up = 0;
  std::size_t comm_down = 0;
  std::size_t epochs = 0;
  double wall_ms = 0.0;
  std::vector<ClientRound> clients;
};

struct SessionSummary {
  int session = 0;
  std::string init;  // random, continue, pilot, constructed, previous, average
  std::optional<ParamVector> gradient;
  std::vector<int> weight_sessions;
  std::vector<double> distances;
  std::vector<double> weights;
};

struct RunLog {
  Variant variant = Variant::proposed;
  Algorithm algorithm = Algorithm::fedavg;
  std::vector<RoundRecord> rounds;
  std::vector<SessionSummary> sessions;
  ArtifactStore store;
  std::vector<ParamVector> session_last;  // w_s^last for every session
  ParamVector final_model;
  LocalCost total_cost;
};

struct GradientComputation {
  ParamVector gradient;  // w after V aggregations minus the reference model
  std::vector<RoundRecord> rounds;
  LocalCost cost;
};

// Runs V rounds from `reference` on `session`'s clients (participants of the
// session's first round) and returns the displacement. Records are tagged
// Phase::grad_compute with global_round = first_global_round.
GradientComputation compute_session_gradient(const TrainingPlan& plan, int session,
                                             const ParamVector& reference, int first_global_round);

// Dynamic initial model construction around the chosen FL algorithm.
RunLog run_training(const TrainingPlan& plan);

}  // namespace fedwarm
