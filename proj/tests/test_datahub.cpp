#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "fedwarm/datahub.hpp"
#include "fedwarm/error.hpp"

using namespace fedwarm;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto dir = std::filesystem::temp_directory_path() / "fedwarm_datahub_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path, std::ios::binary) << body;
  return path;
}

// Every pool index appears in exactly one client.
void check_true_partition(const std::vector<ClientDataset>& parts, std::vector<std::size_t> pool) {
  std::vector<std::size_t> seen;
  for (const auto& c : parts) {
    CHECK(c.size() >= 1);
    seen.insert(seen.end(), c.indices.begin(), c.indices.end());
  }
  std::sort(seen.begin(), seen.end());
  std::sort(pool.begin(), pool.end());
  CHECK(seen == pool);
}

std::vector<std::size_t> all_indices(const LabeledDataset& d) {
  std::vector<std::size_t> out(d.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

std::set<std::uint32_t> labels_of(const LabeledDataset& d, const ClientDataset& c) {
  std::set<std::uint32_t> out;
  for (auto i : c.indices) out.insert(d.labels[i]);
  return out;
}

double mean_tv(const LabeledDataset& d, const std::vector<ClientDataset>& parts, std::size_t classes) {
  std::vector<double> global(classes, 0.0);
  for (auto y : d.labels) global[y] += 1.0 / static_cast<double>(d.size());
  double total = 0.0;
  for (const auto& c : parts) {
    std::vector<double> h(classes, 0.0);
    for (auto i : c.indices) h[d.labels[i]] += 1.0 / static_cast<double>(c.size());
    double tv = 0.0;
    for (std::size_t k = 0; k < classes; ++k) tv += 0.5 * std::abs(h[k] - global[k]);
    total += tv;
  }
  return total / static_cast<double>(parts.size());
}

}  // namespace

TEST_SUITE("datahub") {

TEST_CASE("gaussian mixture shape, determinism and degenerate spread") {
  auto r1 = derive_stream(1, {0, 0, 0});
  auto r2 = derive_stream(1, {0, 0, 0});
  const auto a = gen_gaussian_mixture(3, 100, 4, 1.0, r1);
  CHECK(a.size() == 300);
  CHECK(a.num_classes == 3);
  std::map<std::uint32_t, int> counts;
  for (auto y : a.labels) ++counts[y];
  CHECK(counts[0] == 100);
  CHECK(counts[1] == 100);
  CHECK(counts[2] == 100);
  CHECK(a == gen_gaussian_mixture(3, 100, 4, 1.0, r2));

  auto r3 = derive_stream(2, {0, 0, 0});
  const auto tight = gen_gaussian_mixture(3, 50, 4, 1e-9, r3);
  for (std::uint32_t c = 0; c < 3; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < tight.size(); ++i) {
      if (tight.labels[i] == c) idx.push_back(i);
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0.0;
      for (auto i : idx) m += tight.row(i)[j];
      m /= static_cast<double>(idx.size());
      double v = 0.0;
      for (auto i : idx) v += (tight.row(i)[j] - m) * (tight.row(i)[j] - m);
      CHECK(v / static_cast<double>(idx.size()) < 1e-6);
    }
  }
  CHECK_THROWS_AS(gen_gaussian_mixture(3, 10, 2, 0.0, r3), DataError);
}

TEST_CASE("csv parse, errors and round trip") {
  const auto p = temp_file("two.csv", "label,f0\n0,1.5\n1,-2.0\n");
  const auto d = load_csv(p);
  CHECK(d.size() == 2);
  CHECK(d.num_classes == 2);
  CHECK(d.row(0)[0] == 1.5);
  CHECK(d.row(1)[0] == -2.0);

  const auto bad = temp_file("bad.csv", "label,f0\nx,1.0\n");
  try {
    load_csv(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(load_csv(temp_file("empty.csv", "")), DataError);
  CHECK_THROWS_AS(load_csv(temp_file("short.csv", "label,f0,f1\n0,1.0\n")), DataError);

  auto rng = derive_stream(3, {0, 0, 0});
  auto g = gen_gaussian_mixture(4, 10, 3, 0.7, rng);
  const auto out = std::filesystem::temp_directory_path() / "fedwarm_datahub_test" / "rt.csv";
  write_csv(g, out);
  auto back = load_csv(out);
  CHECK(back.features == g.features);
  CHECK(back.labels == g.labels);
  CHECK(back.num_classes == g.num_classes);
}

TEST_CASE("standardize yields zero mean and unit variance") {
  auto rng = derive_stream(4, {0, 0, 0});
  auto d = gen_gaussian_mixture(3, 40, 5, 2.0, rng);
  standardize(d);
  for (std::size_t j = 0; j < 5; ++j) {
    double m = 0.0;
    double v = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) m += d.row(i)[j];
    m /= static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) v += (d.row(i)[j] - m) * (d.row(i)[j] - m);
    v /= static_cast<double>(d.size());
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1.0) < 1e-12);
  }
}

TEST_CASE("schedule overlap rules") {
  ScheduleOptions o;
  o.num_labels = 10;
  o.num_sessions = 2;
  o.labels_per_session = 5;
  o.num_clients = 3;
  auto rng = derive_stream(5, {0, 0, 0});
  auto s = build_session_schedule(o, rng);
  std::vector<std::uint32_t> inter;
  std::set_intersection(s.sessions[0].labels.begin(), s.sessions[0].labels.end(), s.sessions[1].labels.begin(),
                        s.sessions[1].labels.end(), std::back_inserter(inter));
  CHECK(inter.empty());
  CHECK(s.sessions[0].labels.size() == 5);

  CHECK(shared_label_count(0.2, 5) == 1);
  o.overlap = 0.2;
  o.num_sessions = 8;
  auto rng2 = derive_stream(6, {0, 0, 0});
  s = build_session_schedule(o, rng2);
  for (int k = 0; k + 1 < 8; ++k) {
    std::vector<std::uint32_t> shared;
    std::set_intersection(s.sessions[k].labels.begin(), s.sessions[k].labels.end(),
                          s.sessions[k + 1].labels.begin(), s.sessions[k + 1].labels.end(),
                          std::back_inserter(shared));
    CHECK(shared.size() == 1);
  }
  auto rng3 = derive_stream(6, {0, 0, 0});
  CHECK(build_session_schedule(o, rng3) == s);
}

TEST_CASE("schedule recurrence, unseen labels and infeasible overlap") {
  ScheduleOptions o;
  o.num_labels = 9;
  o.num_sessions = 3;
  o.labels_per_session = 3;
  o.num_clients = 2;
  o.recurrence = {{2, 0}};
  auto rng = derive_stream(7, {0, 0, 0});
  auto s = build_session_schedule(o, rng);
  CHECK(s.sessions[2].labels == s.sessions[0].labels);
  CHECK(s.sessions[2].client_ids == s.sessions[0].client_ids);
  CHECK(s.sessions[2].reuses == 0);

  o.recurrence.clear();
  o.unseen_final = true;
  auto rng2 = derive_stream(8, {0, 0, 0});
  s = build_session_schedule(o, rng2);
  for (auto y : s.sessions[2].labels) {
    for (int k = 0; k < 2; ++k) {
      CHECK(std::find(s.sessions[k].labels.begin(), s.sessions[k].labels.end(), y) == s.sessions[k].labels.end());
    }
  }

  o.unseen_final = false;
  o.num_labels = 5;
  o.labels_per_session = 4;
  auto rng3 = derive_stream(9, {0, 0, 0});
  CHECK_THROWS_AS(build_session_schedule(o, rng3), DataError);
  o.overlap = 1.0;
  CHECK_THROWS_AS(build_session_schedule(o, rng3), ConfigError);
}

TEST_CASE("dirichlet with huge alpha is near uniform") {
  LabeledDataset d;
  d.input_dim = 1;
  d.num_classes = 1;
  for (int i = 0; i < 1000; ++i) {
    d.features.push_back(static_cast<double>(i));
    d.labels.push_back(0);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto rng = derive_stream(seed, {0, 0, 0});
    const auto parts = partition_dirichlet(d, std::vector<std::uint32_t>{0}, 1e9, 10, rng);
    REQUIRE(parts.size() == 10);
    for (const auto& c : parts) {
      CHECK(c.size() >= 90);
      CHECK(c.size() <= 110);
    }
    check_true_partition(parts, all_indices(d));
  }
}

TEST_CASE("dirichlet partition properties and heterogeneity") {
  auto rng = derive_stream(10, {0, 0, 0});
  const auto d = gen_gaussian_mixture(5, 100, 2, 1.0, rng);
  const std::vector<std::uint32_t> labels{0, 1, 2, 3, 4};
  double tv_small = 0.0;
  double tv_large = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ra = derive_stream(seed, {0, 0, 1});
    auto rb = derive_stream(seed, {0, 0, 2});
    const auto a = partition_dirichlet(d, labels, 0.3, 10, ra);
    const auto b = partition_dirichlet(d, labels, 1e9, 10, rb);
    check_true_partition(a, all_indices(d));
    check_true_partition(b, all_indices(d));
    for (std::uint32_t y = 0; y < 5; ++y) {
      std::size_t count = 0;
      for (const auto& c : a) {
        for (auto i : c.indices) count += d.labels[i] == y;
      }
      CHECK(count == 100);
    }
    tv_small += mean_tv(d, a, 5);
    tv_large += mean_tv(d, b, 5);
  }
  CHECK(tv_small > tv_large);

  auto r2 = derive_stream(11, {0, 0, 0});
  const std::vector<std::size_t> tiny{0, 1, 2};
  CHECK_THROWS_AS(partition_dirichlet(d, tiny, 0.5, 4, r2), DataError);
  CHECK_THROWS_AS(partition_dirichlet(d, tiny, 0.0, 2, r2), DataError);
}

TEST_CASE("every client keeps at least one sample under extreme skew") {
  auto rng = derive_stream(12, {0, 0, 0});
  const auto d = gen_gaussian_mixture(2, 30, 2, 1.0, rng);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto r = derive_stream(seed, {0, 0, 3});
    const auto parts = partition_dirichlet(d, std::vector<std::uint32_t>{0, 1}, 1e-3, 20, r);
    check_true_partition(parts, all_indices(d));
  }
}

TEST_CASE("named partitions") {
  auto rng = derive_stream(13, {0, 0, 0});
  const auto d = gen_gaussian_mixture(10, 40, 2, 1.0, rng);
  const auto pool = all_indices(d);

  SUBCASE("distinct") {
    const auto parts = partition_named(d, pool, PartitionScheme::distinct, 10, rng);
    check_true_partition(parts, pool);
    for (std::size_t k = 0; k < 10; ++k) CHECK(labels_of(d, parts[k]) == std::set<std::uint32_t>{static_cast<std::uint32_t>(k)});
    CHECK_THROWS_AS(partition_named(d, pool, PartitionScheme::distinct, 3, rng), DataError);
  }
  SUBCASE("half") {
    const auto parts = partition_named(d, pool, PartitionScheme::half, 20, rng);
    check_true_partition(parts, pool);
    for (std::size_t k = 0; k < 20; ++k) {
      const auto ls = labels_of(d, parts[k]);
      CHECK(ls == (k < 10 ? std::set<std::uint32_t>{0, 1, 2, 3, 4} : std::set<std::uint32_t>{5, 6, 7, 8, 9}));
    }
    for (std::uint32_t y = 0; y < 10; ++y) {
      std::size_t lo = SIZE_MAX;
      std::size_t hi = 0;
      for (std::size_t k = (y < 5 ? 0 : 10); k < (y < 5 ? 10u : 20u); ++k) {
        std::size_t n = 0;
        for (auto i : parts[k].indices) n += d.labels[i] == y;
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      CHECK(hi - lo <= 1);
    }
  }
  SUBCASE("two_shard") {
    const auto parts = partition_named(d, pool, PartitionScheme::two_shard, 10, rng);
    check_true_partition(parts, pool);
    for (const auto& c : parts) {
      CHECK(labels_of(d, c).size() == 2);
      CHECK(c.size() == 40);
    }
  }
  SUBCASE("partial_overlap") {
    const auto parts = partition_named(d, pool, PartitionScheme::partial_overlap, 4, rng);
    check_true_partition(parts, pool);
    const auto g0 = labels_of(d, parts[0]);
    const auto g1 = labels_of(d, parts[3]);
    CHECK(g0.size() == 6);
    CHECK(g1.size() == 6);
    std::vector<std::uint32_t> shared;
    std::set_intersection(g0.begin(), g0.end(), g1.begin(), g1.end(), std::back_inserter(shared));
    CHECK(shared.size() == 2);
  }
  CHECK_THROWS_AS(parse_partition_scheme("shards"), ConfigError);
}

TEST_CASE("schedule json lists sessions") {
  ScheduleOptions o;
  o.num_labels = 4;
  o.num_sessions = 2;
  o.labels_per_session = 2;
  o.num_clients = 2;
  auto rng = derive_stream(14, {0, 0, 0});
  const auto s = build_session_schedule(o, rng);
  const auto j = s.to_json();
  CHECK(j.find("\"sessions\"") != std::string::npos);
  CHECK(j.find("\"client_ids\"") != std::string::npos);
}

}
