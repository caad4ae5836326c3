#include "fedwarm/datahub.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "fedwarm/error.hpp"
#include "json.hpp"

namespace fedwarm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void csv_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw DataError(path.string() + ":" + std::to_string(line) + ": " + what);
}

// Splits `indices` into `parts` consecutive chunks whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> split_even(std::span<const std::size_t> indices,
                                                 std::size_t parts) {
  std::vector<std::vector<std::size_t>> out(parts);
  const std::size_t base = indices.size() / parts;
  const std::size_t extra = indices.size() % parts;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t n = base + (p < extra ? 1 : 0);
    out[p].assign(indices.begin() + static_cast<std::ptrdiff_t>(pos),
                  indices.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  return out;
}

std::map<std::uint32_t, std::vector<std::size_t>> group_by_label(const LabeledDataset& dataset,
                                                                 std::span<const std::size_t> pool) {
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i : pool) {
    if (i >= dataset.size()) throw DataError("partition pool index out of range");
    groups[dataset.labels[i]].push_back(i);
  }
  return groups;
}

std::vector<ClientDataset> make_clients(std::size_t k) {
  std::vector<ClientDataset> clients(k);
  for (std::size_t c = 0; c < k; ++c) clients[c].client_id = c;
  return clients;
}

void finish_clients(std::vector<ClientDataset>& clients, std::string_view scheme) {
  for (auto& c : clients) {
    if (c.indices.empty()) {
      throw DataError(std::string(scheme) + " partition left client " +
                      std::to_string(c.client_id) + " without samples; not enough data per label");
    }
    std::sort(c.indices.begin(), c.indices.end());
  }
}

std::vector<std::uint32_t> sample_labels(std::vector<std::uint32_t> candidates, std::size_t count,
                                         RngStream& rng) {
  rng.shuffle(std::span<std::uint32_t>(candidates));
  candidates.resize(count);
  return candidates;
}

}  // namespace

void LabeledDataset::validate() const {
  if (features.size() != labels.size() * input_dim) {
    throw DataError("dataset '" + name + "': feature storage does not match sample count");
  }
  for (auto y : labels) {
    if (y >= num_classes) {
      throw DataError("dataset '" + name + "': label " + std::to_string(y) + " >= num_classes");
    }
  }
}

LabeledDataset gen_gaussian_mixture(std::size_t num_classes, std::size_t per_class,
                                    std::size_t input_dim, double spread, RngStream& rng) {
  if (num_classes == 0 || per_class == 0 || input_dim == 0) {
    throw DataError("gaussian mixture: counts must be positive");
  }
  if (!(spread > 0.0)) throw DataError("gaussian mixture: spread must be positive");
  constexpr double kRadius = 3.0;
  LabeledDataset ds;
  ds.name = "gaussian";
  ds.input_dim = input_dim;
  ds.num_classes = num_classes;
  ds.features.reserve(num_classes * per_class * input_dim);
  ds.labels.reserve(num_classes * per_class);
  std::vector<double> center(input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::fill(center.begin(), center.end(), 0.0);
    if (input_dim >= num_classes) {
      center[c] = kRadius;
    } else if (input_dim >= 2) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                           static_cast<double>(num_classes);
      center[0] = kRadius * std::cos(angle);
      center[1] = kRadius * std::sin(angle);
    } else {
      center[0] = kRadius * static_cast<double>(c);
    }
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < input_dim; ++j) {
        ds.features.push_back(center[j] + spread * rng.normal());
      }
      ds.labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return ds;
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  LabeledDataset ds;
  ds.name = path.stem().string();
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  std::uint64_t max_label = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (!have_header) {
      if (fields.front() != "label" || fields.size() < 2) {
        csv_fail(path, line_no, "header must be 'label,f0,f1,...'");
      }
      ds.input_dim = fields.size() - 1;
      have_header = true;
      continue;
    }
    if (fields.size() != ds.input_dim + 1) {
      csv_fail(path, line_no, "expected " + std::to_string(ds.input_dim + 1) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    std::uint64_t label = 0;
    const auto lf = fields[0];
    auto [lp, lec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (lec != std::errc() || lp != lf.data() + lf.size() || label > UINT32_MAX) {
      csv_fail(path, line_no, "label '" + std::string(lf) + "' is not a non-negative integer");
    }
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      const auto f = fields[j];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v)) {
        csv_fail(path, line_no, "feature " + std::to_string(j - 1) + " '" + std::string(f) +
                                    "' is not a finite real");
      }
      ds.features.push_back(v);
    }
    ds.labels.push_back(static_cast<std::uint32_t>(label));
    max_label = std::max(max_label, label);
  }
  if (!have_header) throw DataError(path.string() + ": empty file");
  if (ds.labels.empty()) throw DataError(path.string() + ": no data rows");
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

void write_csv(const LabeledDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "label";
  for (std::size_t j = 0; j < dataset.input_dim; ++j) out << ",f" << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.labels[i];
    for (double v : dataset.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(p - buf));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

void standardize(LabeledDataset& dataset) {
  const std::size_t n = dataset.size();
  const std::size_t d = dataset.input_dim;
  if (n == 0) return;
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += dataset.features[i * d + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = dataset.features[i * d + j] - mu;
      var += r * r;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) {
      double& x = dataset.features[i * d + j];
      x -= mu;
      if (sd > 0.0) x /= sd;
    }
  }
}

Batch gather(const LabeledDataset& dataset, std::span<const std::size_t> indices) {
  Batch b{dataset.input_dim, {}, {}};
  b.features.reserve(indices.size() * dataset.input_dim);
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset.size()) throw DataError("gather: index out of range");
    b.push_back(dataset.row(i), dataset.labels[i]);
  }
  return b;
}

Batch as_batch(const LabeledDataset& dataset) {
  return Batch{dataset.input_dim, dataset.features, dataset.labels};
}

std::vector<std::size_t> indices_with_labels(const LabeledDataset& dataset,
                                             std::span<const std::uint32_t> labels) {
  const std::set<std::uint32_t> wanted(labels.begin(), labels.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (wanted.count(dataset.labels[i])) out.push_back(i);
  }
  return out;
}

bool SessionSchedule::operator==(const SessionSchedule& other) const {
  if (num_sessions != other.num_sessions || pilot_sessions != other.pilot_sessions ||
      rounds_per_session != other.rounds_per_session || pilot_rounds != other.pilot_rounds ||
      sessions.size() != other.sessions.size()) {
    return false;
  }
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const auto& a = sessions[s];
    const auto& b = other.sessions[s];
    if (a.session != b.session || a.labels != b.labels || a.client_ids != b.client_ids ||
        a.partition != b.partition || a.reuses != b.reuses) {
      return false;
    }
  }
  return true;
}

std::string SessionSchedule::to_json() const {
  nlohmann::json j;
  j["num_sessions"] = num_sessions;
  j["pilot_sessions"] = pilot_sessions;
  j["rounds_per_session"] = rounds_per_session;
  j["pilot_rounds"] = pilot_rounds;
  auto& arr = j["sessions"] = nlohmann::json::array();
  for (const auto& s : sessions) {
    nlohmann::json e;
    e["session"] = s.session;
    e["labels"] = s.labels;
    e["client_ids"] = s.client_ids;
    e["partition"] = s.partition;
    e["reuses"] = s.reuses ? nlohmann::json(*s.reuses) : nlohmann::json(nullptr);
    arr.push_back(std::move(e));
  }
  return j.dump(2);
}

std::size_t shared_label_count(double overlap, std::size_t labels_per_session) noexcept {
  return static_cast<std::size_t>(std::llround(overlap * static_cast<double>(labels_per_session)));
}

SessionSchedule build_session_schedule(const ScheduleOptions& o, RngStream& rng) {
  if (o.num_sessions < o.pilot_sessions || o.pilot_sessions < 1) {
    throw ConfigError("schedule needs num_sessions >= pilot_sessions >= 1");
  }
  if (o.rounds_per_session < 1 || o.pilot_rounds < 0) {
    throw ConfigError("schedule needs at least one round per session");
  }
  if (!(o.overlap >= 0.0 && o.overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)");
  if (o.labels_per_session == 0 || o.labels_per_session > o.num_labels) {
    throw ConfigError("labels_per_session must lie in [1, num_labels]");
  }
  if (o.num_clients == 0) throw ConfigError("schedule needs at least one client");
  for (auto [s, z] : o.recurrence) {
    if (s <= 0 || s >= o.num_sessions || z < 0 || z >= s) {
      throw ConfigError("recurrence " + std::to_string(s) + "->" + std::to_string(z) +
                        " must map a session to an earlier one");
    }
  }
  const std::size_t n = o.labels_per_session;
  const std::size_t shared = shared_label_count(o.overlap, n);
  const std::size_t fresh = n - shared;
  if (o.num_sessions > 1 && fresh > o.num_labels - n) {
    throw DataError("infeasible overlap: " + std::to_string(fresh) + " new labels per session but only " +
                    std::to_string(o.num_labels - n) + " labels outside the previous set");
  }

  SessionSchedule sched;
  sched.num_sessions = o.num_sessions;
  sched.pilot_sessions = o.pilot_sessions;
  sched.rounds_per_session = o.rounds_per_session;
  sched.pilot_rounds = o.pilot_rounds > 0 ? o.pilot_rounds : o.rounds_per_session;

  std::vector<std::uint32_t> all(o.num_labels);
  std::iota(all.begin(), all.end(), 0u);
  std::set<std::uint32_t> seen;
  for (int s = 0; s < o.num_sessions; ++s) {
    SessionPlan plan;
    plan.session = s;
    plan.partition = o.partition;
    if (auto it = o.recurrence.find(s); it != o.recurrence.end()) {
      const auto& src = sched.sessions[static_cast<std::size_t>(it->second)];
      plan.labels = src.labels;
      plan.client_ids = src.client_ids;
      plan.reuses = it->second;
    } else {
      if (s == 0) {
        plan.labels = sample_labels(all, n, rng);
      } else {
        const auto& prev = sched.sessions.back().labels;
        plan.labels = sample_labels(prev, shared, rng);
        const std::set<std::uint32_t> prev_set(prev.begin(), prev.end());
        const bool unseen = o.unseen_final && s == o.num_sessions - 1;
        std::vector<std::uint32_t> candidates;
        for (auto y : all) {
          if (prev_set.count(y)) continue;
          if (unseen && seen.count(y)) continue;
          candidates.push_back(y);
        }
        if (candidates.size() < fresh) {
          throw DataError("unseen_final: only " + std::to_string(candidates.size()) +
                          " never-seen labels remain, " + std::to_string(fresh) + " needed");
        }
        auto extra = sample_labels(std::move(candidates), fresh, rng);
        plan.labels.insert(plan.labels.end(), extra.begin(), extra.end());
      }
      std::sort(plan.labels.begin(), plan.labels.end());
      for (std::size_t k = 0; k < o.num_clients; ++k) {
        plan.client_ids.push_back(static_cast<std::uint64_t>(s) * o.num_clients + k);
      }
    }
    seen.insert(plan.labels.begin(), plan.labels.end());
    sched.sessions.push_back(std::move(plan));
  }
  return sched;
}

std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& dataset,
                                               std::span<const std::size_t> pool, double alpha,
                                               std::size_t num_clients, RngStream& rng) {
  if (!(alpha > 0.0)) throw DataError("dirichlet alpha must be positive");
  if (num_clients == 0) throw DataError("dirichlet partition needs at least one client");
  if (pool.size() < num_clients) {
    throw DataError("dirichlet partition: " + std::to_string(pool.size()) +
                    " samples cannot cover " + std::to_string(num_clients) + " clients");
  }
  auto clients = make_clients(num_clients);
  auto groups = group_by_label(dataset, pool);
  std::vector<double> share(num_clients);
  std::vector<std::size_t> counts(num_clients);
  std::vector<std::pair<double, std::size_t>> remainders(num_clients);
  for (auto& [label, idx] : groups) {
    rng.shuffle(std::span<std::size_t>(idx));
    double total = 0.0;
    for (auto& p : share) {
      p = rng.gamma(alpha);
      total += p;
    }
    if (!(total > 0.0)) {
      // All draws underflowed (tiny alpha): the whole label goes to one client.
      std::fill(share.begin(), share.end(), 0.0);
      share[rng.index(num_clients)] = 1.0;
      total = 1.0;
    }
    const double n = static_cast<double>(idx.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const double exact = share[k] / total * n;
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      assigned += counts[k];
      remainders[k] = {exact - std::floor(exact), k};
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) {
      ++counts[remainders[r % num_clients].second];
    }
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      clients[k].indices.insert(clients[k].indices.end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                idx.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }
  // Repair: every client trains on at least one sample.
  for (auto& c : clients) {
    if (!c.indices.empty()) continue;
    auto donor = std::max_element(clients.begin(), clients.end(), [](const auto& a, const auto& b) {
      return a.indices.size() < b.indices.size();
    });
    c.indices.push_back(donor->indices.back());
    donor->indices.pop_back();
  }
  finish_clients(clients, "dirichlet");
  return clients;
}

std::vector<ClientDataset> partition_dirichlet(const LabeledDataset& dataset,
                                               std::span<const std::uint32_t> label_set,
                                               double alpha, std::size_t num_clients,
                                               RngStream& rng) {
  if (label_set.empty()) throw DataError("dirichlet partition: empty label set");
  const auto pool = indices_with_labels(dataset, label_set);
  return partition_dirichlet(dataset, pool, alpha, num_clients, rng);
}

std::string_view to_string(PartitionScheme scheme) noexcept {
  switch (scheme) {
    case PartitionScheme::dirichlet: return "dirichlet";
    case PartitionScheme::two_shard: return "two_shard";
    case PartitionScheme::half: return "half";
    case PartitionScheme::partial_overlap: return "partial_overlap";
    case PartitionScheme::distinct: return "distinct";
  }
  return "unknown";
}

PartitionScheme parse_partition_scheme(std::string_view name) {
  for (auto s : {PartitionScheme::dirichlet, PartitionScheme::two_shard, PartitionScheme::half,
                 PartitionScheme::partial_overlap, PartitionScheme::distinct}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("unknown label distribution '" + std::string(name) +
                    "' (expected dirichlet, two_shard, half, partial_overlap or distinct)");
}

std::vector<ClientDataset> partition_named(const LabeledDataset& dataset,
                                           std::span<const std::size_t> pool,
                                           PartitionScheme scheme, std::size_t num_clients,
                                           RngStream& rng, const NamedPartitionParams& params) {
  if (scheme == PartitionScheme::dirichlet) {
    throw DataError("partition_named: use partition_dirichlet for the dirichlet scheme");
  }
  if (num_clients == 0) throw DataError("partition needs at least one client");
  auto groups = group_by_label(dataset, pool);
  for (auto& [label, idx] : groups) rng.shuffle(std::span<std::size_t>(idx));
  std::vector<std::uint32_t> labels;
  for (const auto& [label, idx] : groups) labels.push_back(label);
  const std::size_t m = labels.size();
  const std::size_t k_total = num_clients;
  auto clients = make_clients(k_total);

  auto give = [&](std::span<const std::size_t> idx, std::size_t first, std::size_t count) {
    auto parts = split_even(idx, count);
    for (std::size_t p = 0; p < count; ++p) {
      auto& dst = clients[first + p].indices;
      dst.insert(dst.end(), parts[p].begin(), parts[p].end());
    }
  };

  switch (scheme) {
    case PartitionScheme::distinct: {
      if (m < k_total || m % k_total != 0) {
        throw DataError("distinct partition needs the label count (" + std::to_string(m) +
                        ") to be a positive multiple of the client count (" +
                        std::to_string(k_total) + ")");
      }
      const std::size_t per = m / k_total;
      for (std::size_t l = 0; l < m; ++l) give(groups[labels[l]], l / per, 1);
      break;
    }
    case PartitionScheme::half: {
      if (k_total < 2 || m < 2) {
        throw DataError("half partition needs at least 2 clients and 2 labels");
      }
      const std::size_t k1 = k_total / 2;
      const std::size_t m1 = m / 2;
      for (std::size_t l = 0; l < m; ++l) {
        if (l < m1) give(groups[labels[l]], 0, k1);
        else give(groups[labels[l]], k1, k_total - k1);
      }
      break;
    }
    case PartitionScheme::partial_overlap: {
      const auto a = static_cast<std::size_t>(std::llround(params.set_fraction * static_cast<double>(m)));
      const auto o = static_cast<std::size_t>(std::llround(params.shared_fraction * static_cast<double>(m)));
      if (k_total < 2 || a == 0 || o > a || 2 * a - o != m) {
        throw DataError("partial_overlap partition needs >= 2 clients and two label sets of round(" +
                        std::to_string(params.set_fraction) + "*labels) sharing round(" +
                        std::to_string(params.shared_fraction) + "*labels) that cover all " +
                        std::to_string(m) + " labels");
      }
      const std::size_t k1 = k_total / 2;
      const std::size_t k2 = k_total - k1;
      for (std::size_t l = 0; l < m; ++l) {
        const auto& idx = groups[labels[l]];
        if (l < a - o) {
          give(idx, 0, k1);
        } else if (l < a) {
          const std::size_t half = (idx.size() + 1) / 2;
          give(std::span(idx).first(half), 0, k1);
          give(std::span(idx).subspan(half), k1, k2);
        } else {
          give(idx, k1, k2);
        }
      }
      break;
    }
    case PartitionScheme::two_shard: {
      if (k_total < 2 || m < 2) {
        throw DataError("two_shard partition needs at least 2 clients and 2 labels");
      }
      const std::size_t shards_per_label = std::max<std::size_t>(2, (2 * k_total + m - 1) / m);
      std::vector<std::uint32_t> order = labels;
      rng.shuffle(std::span<std::uint32_t>(order));
      std::size_t shard = 0;
      for (auto label : order) {
        const auto& idx = groups[label];
        if (idx.size() < shards_per_label) {
          throw DataError("two_shard partition: label " + std::to_string(label) + " has " +
                          std::to_string(idx.size()) + " samples, fewer than " +
                          std::to_string(shards_per_label) + " shards");
        }
        auto parts = split_even(idx, shards_per_label);
        for (auto& part : parts) {
          auto& dst = clients[shard % k_total].indices;
          dst.insert(dst.end(), part.begin(), part.end());
          ++shard;
        }
      }
      break;
    }
    case PartitionScheme::dirichlet: break;
  }
  finish_clients(clients, to_string(scheme));
  return clients;
}

}  // namespace fedwarm
