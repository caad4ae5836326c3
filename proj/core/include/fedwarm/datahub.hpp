#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedwarm/models.hpp"
#include "fedwarm/numkit.hpp"

namespace fedwarm {

/// Labeled samples sharing one feature dimension; features are row-major.
struct LabeledDataset {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<std::uint32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * input_dim, input_dim};
  }
  // Throws DataError if the invariants do not hold.
  void validate() const;
  bool operator==(const LabeledDataset&) const = default;
};

/// One client's share of a session's data.
struct ClientDataset {
  std::uint64_t client_id = 0;
  int session = 0;
  std::vector<std::size_t> indices;  // into the parent LabeledDataset

  std::size_t size() const noexcept { return indices.size(); }
};

// Class c is centered on a vertex of a scaled simplex when input_dim >=
// num_classes, otherwise on a circle of radius 3 in the first two coordinates.
// Samples are center + spread * N(0, I).
LabeledDataset gen_gaussian_mixture(std::size_t num_classes, std::size_t per_class,
                                    std::size_t input_dim, double spread, RngStream& rng);

// Header `label,f0,f1,...`. Errors name the 1-based line number.
LabeledDataset load_csv(const std::filesystem::path& path);
void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path);

// Zero mean, unit variance per coordinate over the whole dataset. Constant
// coordinates are only centered.
void standardize(LabeledDataset& dataset);

Batch gather(const LabeledDataset& dataset, std::span<const std::size_t> indices);
Batch as_batch(const LabeledDataset& dataset);

// Indices of every sample whose label is in `labels`, ascending.
std::vector<std::size_t> indices_with_labels(const LabeledDataset& dataset,
                                             std::span<const std::uint32_t> labels);

/// Label-set plan for one session.
struct SessionPlan {
  int session = 0;
  std::vector<std::uint32_t> labels;  // sorted
  std::vector<std::uint64_t> client_ids;
  std::string partition;              // descriptor, e.g. "dirichlet(alpha=0.3)"
  std::optional<int> reuses;          // session whose label set was copied
};

struct SessionSchedule {
  int num_sessions = 0;
  int pilot_sessions = 0;
  int rounds_per_session = 0;
  int pilot_rounds = 0;  // rounds in sessions < pilot_sessions
  std::vector<SessionPlan> sessions;

  int rounds_in(int session) const noexcept {
    return session < pilot_sessions ? pilot_rounds : rounds_per_session;
  }
  bool operator==(const SessionSchedule&) const;
  // Audit dump: sessions -> label sets, client ids, partition descriptor.
  std::string to_json() const;
};

struct ScheduleOptions {
  std::size_t num_labels = 0;
  int num_sessions = 1;
  int pilot_sessions = 1;
  int rounds_per_session = 1;
  int pilot_rounds = 0;  // 0 means rounds_per_session
  double overlap = 0.0;
  std::size_t labels_per_session = 0;
  std::size_t num_clients = 1;
  std::map<int, int> recurrence;  // session -> earlier session whose labels it reuses
  bool unseen_final = false;      // last session introduces never-seen labels
  std::string partition = "dirichlet";
};

// Shared labels between consecutive sessions: round(overlap * labels_per_session).
std::size_t shared_label_count(double overlap, std::size_t labels_per_session) noexcept;

// Recurrent sessions copy the earlier label set and client ids verbatim; the
// overlap rule is enforced on every other consecutive pair.
SessionSchedule build_session_schedule(const ScheduleOptions& options, RngStream& rng);

/// Per-label Dirichlet(alpha) split of `pool` across K clients. Clients with no
/// samples take one from the largest client. Client ids are 0..K-1.
std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& dataset,
                                               std::span<const std::size_t> pool, double alpha,
                                               std::size_t num_clients, RngStream& rng);
std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& dataset,
                                               std::span<const std::uint32_t> label_set,
                                               double alpha, std::size_t num_clients,
                                               RngStream& rng);

enum class PartitionScheme { dirichlet, two_shard, half, partial_overlap, distinct };

std::string_view to_string(PartitionScheme scheme) noexcept;
PartitionScheme parse_partition_scheme(std::string_view name);

struct NamedPartitionParams {
  double set_fraction = 0.6;     // partial_overlap: share of labels per client group
  double shared_fraction = 0.2;  // partial_overlap: share of labels held by both groups
};

// Two-Shard / Half / Partial-Overlap / Distinct label splits over the labels
// present in `pool`. Throws DataError naming the violated constraint.
std::vector<ClientDataset> partition_named(const LabeledDataset& dataset,
                                           std::span<const std::size_t> pool,
                                           PartitionScheme scheme, std::size_t num_clients,
                                           RngStream& rng, const NamedPartitionParams& params = {});

}  // namespace fedwarm
