#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string_view>
#include <vector>

#include "fedwarm/models.hpp"
#include "fedwarm/numkit.hpp"

namespace fedwarm {

enum class Algorithm { fedavg, fedprox, scaffold, fedacg };

std::string_view to_string(Algorithm algorithm) noexcept;
Algorithm parse_algorithm(std::string_view name);

struct LocalHyper {
  double eta = 0.1;
  std::size_t steps = 1;        // e_k: local SGD steps
  std::size_t batch_size = 32;  // B_k, clamped to D_k
  Algorithm algorithm = Algorithm::fedavg;
  double prox_mu = 0.0;
  double acg_beta = 0.0;
  double acg_lambda = 0.0;
  // Continuous baseline: adds kl_coefficient * KL(anchor || w) per batch.
  double kl_coefficient = 0.0;
  std::shared_ptr<const ParamVector> distill_anchor;

  void validate() const;
};

/// SCAFFOLD's per-client control variate. Empty for the other algorithms.
struct ClientState {
  ParamVector control;
};

/// Server-side state broadcast to clients each round.
struct ServerCtx {
  ParamVector global;          // w^(g)
  ParamVector control;         // SCAFFOLD global control variate c
  ParamVector momentum;        // FedACG server momentum m
  ParamVector anchor;          // FedACG lookahead anchor w + lambda * m
  int session = 0;
  int round_in_session = 0;

  // Fresh context for a new session: zero variates and momentum, anchor = w.
  static ServerCtx start(const ParamVector& w, Algorithm algorithm, int session);
  // The vector clients start local training from.
  const ParamVector& broadcast(Algorithm algorithm) const;
};

struct LocalCost {
  std::size_t epochs = 0;          // local SGD steps run
  std::size_t grad_evals = 0;
  std::size_t samples_touched = 0;

  LocalCost& operator+=(const LocalCost& other) noexcept;
};

struct LocalResult {
  ParamVector model;
  ClientState state;
  LocalCost cost;
};

// One list of dataset positions per local step. Each step draws min(B, D_k)
// distinct positions from a fresh permutation of 0..D_k-1.
std::vector<std::vector<std::size_t>> sample_epoch_batches(std::size_t dataset_size,
                                                           std::size_t batch_size,
                                                           std::size_t steps, RngStream& rng);

/// Runs hyper.steps local SGD steps for one client starting from `w_start`.
///
///   fedavg   w <- w - eta * g
///   fedprox  g += prox_mu * (w - w_start)
///   scaffold g += c - c_i, then c_i' = c_i - c + (w_start - w_final) / (steps * eta)
///   fedacg   g += acg_beta * (w - anchor); w_start should be ctx.anchor
///
/// Throws DimensionError on shape mismatch and StateError when the algorithm
/// needs server state that `ctx` does not carry.
LocalResult local_train(const ModelSpec& spec, const ParamVector& w_start, const ServerCtx& ctx,
                        const Batch& data, const LocalHyper& hyper, const ClientState& state,
                        RngStream& rng);

/// Per-round learning rate. power == 0 gives a constant rate;
/// otherwise eta_t = end + (base - end) * (1 - t / rounds)^power.
struct LrSchedule {
  double base = 0.1;
  double power = 0.0;
  double end = 0.0;

  double at(int round_in_session, int rounds) const noexcept;
};

// JSON object with keys base_lr, power, end_lr (power and end_lr optional).
LrSchedule load_lr_schedule(const std::filesystem::path& path, double fallback_base);

}  // namespace fedwarm
