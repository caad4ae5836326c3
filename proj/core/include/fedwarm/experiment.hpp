#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedwarm/datahub.hpp"
#include "fedwarm/diagnostics.hpp"
#include "fedwarm/server.hpp"

namespace fedwarm {

/// Flat experiment configuration. Field names double as CLI flags and
/// config-file keys.
struct RunConfig {
  std::string dataset;  // "gaussian" or "csv:<path>"
  std::size_t gaussian_classes = 6;
  std::size_t gaussian_per_class = 200;
  std::size_t gaussian_dim = 10;
  double gaussian_spread = 1.0;

  std::string model = "softmax_linear";
  std::size_t hidden_dim = 16;
  std::string algorithm = "fedavg";
  std::string variant = "proposed";

  std::size_t num_clients = 20;
  int num_sessions = 4;
  int num_sessions_pilot = 1;
  int num_rounds_pilot = 30;
  int num_rounds_actual = 30;
  int num_round_grad_cal = 1;

  double cross_session_label_overlap = 0.0;
  std::size_t labels_per_session = 0;  // 0: half of the classes
  std::string in_session_label_dist = "dirichlet";
  double dirichlet_alpha = 0.3;
  double partial_overlap_set = 0.6;
  double partial_overlap_shared = 0.2;
  std::string recurrence;  // "session:earlier,..."
  bool unseen_final = false;
  double test_fraction = 0.2;

  double lr = 0.1;
  std::string lr_config_path;
  std::size_t num_SGD_training = 5;
  std::size_t num_SGD_training_max = 0;  // 0: same as num_SGD_training
  std::size_t batch_size_training = 32;
  std::size_t num_SGD_grad_cal = 0;     // 0: same as training
  std::size_t batch_size_grad_cal = 0;  // 0: same as training

  double similarity_scale = 10.0;
  std::string similarity = "two_norm";
  double prox_alpha = 0.0;
  double acg_beta = 0.0;
  double acg_lambda = 0.0;
  double kl_coefficient = 0.0;
  double participation_fraction = 1.0;

  std::uint64_t seed = 0;
  std::string output_dir = "fedwarm_out";
  std::size_t threads = 1;
  double bound_lambda = 0.5;
  int transition_window = 10;
  bool timing = false;
  bool checkpoint = false;

  // Throws ConfigError with the offending key.
  void validate() const;
};

std::map<int, int> parse_recurrence(const std::string& text);

/// Everything run_training needs plus the schedule it was built from.
struct Experiment {
  TrainingPlan plan;
  SessionSchedule schedule;
};

Experiment build_experiment(const RunConfig& config);

struct RunOutputs {
  std::filesystem::path metrics;
  std::filesystem::path summary;
  std::filesystem::path bound_report;
  std::filesystem::path schedule;
};

// Bound constants estimated from the plan's data and the run's models.
BoundConstants estimate_bound_constants(const TrainingPlan& plan, const RunLog& log, double lambda);

std::string metrics_csv(const RunLog& log);
// Mean test accuracy over the first `window` train rounds of each session.
std::vector<double> session_window_accuracy(const RunLog& log, int window);

RunOutputs run_experiment(const RunConfig& config);

/// One parsed metrics.csv row.
struct MetricsRow {
  int session = 0;
  int round_in_session = 0;
  int global_round = 0;
  std::string phase;
  std::string variant;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double grad_norm_sq = 0.0;
  double eta = 0.0;
  std::size_t comm_up = 0;
  std::size_t comm_down = 0;
  std::size_t epochs_this_round = 0;
  double wall_ms = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

extern const char* const kMetricsHeader;

std::vector<MetricsRow> to_rows(const RunLog& log);

std::vector<MetricsRow> parse_metrics(const std::string& text, const std::string& source = "metrics");
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);
std::string format_metrics(const std::vector<MetricsRow>& rows);

struct TransitionTable {
  std::vector<int> sessions;          // sessions entered by a transition
  std::vector<std::string> variants;  // one per input file, in order
  std::vector<std::vector<double>> values;  // [variant][transition]

  std::string to_csv() const;
  std::string to_text() const;
};

// Throws DataError when the files do not share a schedule.
TransitionTable transition_table(const std::vector<std::vector<MetricsRow>>& runs, int window);

// Long-format `variant,global_round,accuracy`, train rows only.
std::string emit_plotdata(const std::vector<MetricsRow>& rows);

}  // namespace fedwarm
