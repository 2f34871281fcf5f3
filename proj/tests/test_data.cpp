#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "smamba/data.hpp"

using namespace smamba;
namespace fs = std::filesystem;

namespace {

fs::path write_csv(const std::string& stem, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / ("smamba_data_" + stem + ".csv");
  std::ofstream out(p, std::ios::trunc);
  out << content;
  return p;
}

TimeSeriesDataset manual_dataset(std::size_t steps, std::size_t variates,
                                 std::size_t train_end, std::size_t val_end) {
  TimeSeriesDataset ds;
  ds.steps = steps;
  ds.variates = variates;
  ds.train_end = train_end;
  ds.val_end = val_end;
  for (std::size_t v = 0; v < variates; ++v) ds.variate_names.push_back("v" + std::to_string(v));
  ds.values.resize(steps * variates);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto& x : ds.values) x = dist(rng);
  return ds;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("load_csv shapes, names and timestamp detection") {
  auto p = write_csv("basic", "a,b,c\n1,2,3\n4,5,6\n7,8,9\n10,11,12\n13,14,15\n");
  TimeSeriesDataset ds = load_csv(p);
  CHECK(ds.steps == 5);
  CHECK(ds.variates == 3);
  CHECK(ds.variate_names == std::vector<std::string>{"a", "b", "c"});
  CHECK(ds.at(4, 2) == 15.0);
  fs::remove(p);

  auto pt = write_csv("stamped", "date,x,y\n2020-01-01,1,2\n2020-01-02,3,4\n");
  TimeSeriesDataset dt = load_csv(pt);
  CHECK(dt.variates == 2);
  CHECK(dt.variate_names == std::vector<std::string>{"x", "y"});
  CHECK(dt.at(1, 0) == 3.0);
  fs::remove(pt);
}

TEST_CASE("load_csv errors carry row/column locations") {
  std::string body = "a,b,c\n";
  for (int r = 1; r <= 6; ++r) body += "1,2,3\n";
  body += "1,abc,3\n";  // data row 7, file column 2
  auto p = write_csv("badcell", body);
  try {
    (void)load_csv(p);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 7") != std::string::npos);
    CHECK(msg.find("col 2") != std::string::npos);
  }
  fs::remove(p);

  auto ragged = write_csv("ragged", "a,b\n1,2\n3\n");
  CHECK_THROWS_AS((void)load_csv(ragged), LoadError);
  fs::remove(ragged);

  auto shorty = write_csv("short", "a\n1\n2\n3\n");
  CHECK_THROWS_AS((void)load_csv(shorty, 10), LoadError);
  fs::remove(shorty);
}

TEST_CASE("save/load csv round trip") {
  SyntheticSpec spec;
  spec.steps = 80;
  spec.periodic = 2;
  spec.walks = 1;
  spec.coupled = 0;
  TimeSeriesDataset ds = generate_synthetic(spec);
  auto p = fs::temp_directory_path() / "smamba_data_roundtrip.csv";
  save_csv(ds, p);
  TimeSeriesDataset back = load_csv(p);
  REQUIRE(back.steps == ds.steps);
  REQUIRE(back.variates == ds.variates);
  for (std::size_t i = 0; i < ds.values.size(); ++i)
    CHECK(std::fabs(back.values[i] - ds.values[i]) < 1e-12);
  fs::remove(p);
}

TEST_CASE("split_and_standardize statistics and inverse") {
  SyntheticSpec spec;
  spec.steps = 200;
  spec.periodic = 2;
  spec.walks = 1;
  spec.coupled = 0;
  TimeSeriesDataset raw = generate_synthetic(spec);
  TimeSeriesDataset ds = split_and_standardize(raw, 0.7, 0.1, 0.2, 10);

  CHECK(ds.train_end == 140);
  CHECK(ds.val_end == 160);
  for (std::size_t v = 0; v < ds.variates; ++v) {
    double mu = 0;
    for (std::size_t t = 0; t < ds.train_end; ++t) mu += ds.at(t, v);
    mu /= static_cast<double>(ds.train_end);
    double var = 0;
    for (std::size_t t = 0; t < ds.train_end; ++t) {
      const double d = ds.at(t, v) - mu;
      var += d * d;
    }
    var /= static_cast<double>(ds.train_end);
    CHECK(std::fabs(mu) < 1e-9);
    CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-9);
  }

  // de-standardize(standardize(x)) == x
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t v = 0; v < ds.variates; ++v)
      CHECK(std::fabs(ds.de_standardize(ds.at(t, v), v) - raw.at(t, v)) < 1e-12);
}

TEST_CASE("constant variate maps to zero via the std floor") {
  TimeSeriesDataset ds = manual_dataset(100, 2, 0, 0);
  for (std::size_t t = 0; t < 100; ++t) ds.values[t * 2 + 1] = 4.25;
  TimeSeriesDataset out = split_and_standardize(ds, 0.7, 0.1, 0.2, 5);
  CHECK(out.stddev[1] == 1e-8);
  for (std::size_t t = 0; t < 100; ++t) CHECK(out.at(t, 1) == 0.0);
}

TEST_CASE("split protocol errors") {
  TimeSeriesDataset ds = manual_dataset(100, 2, 0, 0);
  CHECK_THROWS_AS((void)split_and_standardize(ds, 0.7, 0.1, 0.1, 5), ProtocolError);
  CHECK_THROWS_AS((void)split_and_standardize(ds, 0.7, -0.1, 0.4, 5), ProtocolError);
  CHECK_THROWS_AS((void)split_and_standardize(ds, 0.7, 0.1, 0.2, 25), ProtocolError);
}

TEST_CASE("make_windows counts and adjacency") {
  TimeSeriesDataset ds = manual_dataset(130, 3, 100, 110);

  // split_len == L+T -> exactly one window
  auto one = make_windows(ds, Split::Val, 6, 4);
  CHECK(one.size() == 1);
  CHECK(one[0].origin == 100);

  // 100-step train split, L=96, T=4 -> 1 window
  CHECK(make_windows(ds, Split::Train, 96, 4).size() == 1);

  auto windows = make_windows(ds, Split::Train, 8, 3);
  CHECK(windows.size() == 100 - 8 - 3 + 1);
  for (const auto& w : windows) {
    for (std::size_t v = 0; v < 3; ++v)
      CHECK(w.target[v] == ds.at(w.origin + 8, v));  // first target row is adjacent
    CHECK(w.origin + 8 + 3 <= 100);                  // never crosses the split end
  }

  // too-short split -> empty
  CHECK(make_windows(ds, Split::Val, 9, 4).empty());
}

TEST_CASE("no leakage across split boundaries") {
  TimeSeriesDataset ds = manual_dataset(120, 2, 80, 100);
  auto before = make_windows(ds, Split::Train, 10, 5);

  TimeSeriesDataset perturbed = ds;
  for (std::size_t t = 80; t < 120; ++t)
    for (std::size_t v = 0; v < 2; ++v) perturbed.values[t * 2 + v] += 1000.0;
  auto after = make_windows(perturbed, Split::Train, 10, 5);

  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].lookback.data == after[i].lookback.data);
    CHECK(before[i].target.data == after[i].target.data);
  }

  // statistics depend only on the train split
  TimeSeriesDataset a = manual_dataset(100, 2, 0, 0);
  TimeSeriesDataset b = a;
  for (std::size_t t = 75; t < 100; ++t) b.values[t * 2] += 55.0;
  auto sa = split_and_standardize(a, 0.7, 0.1, 0.2, 5);
  auto sb = split_and_standardize(b, 0.7, 0.1, 0.2, 5);
  CHECK(sa.mean == sb.mean);
  CHECK(sa.stddev == sb.stddev);
}

TEST_CASE("synthetic generation is seed-deterministic") {
  SyntheticSpec spec;
  spec.steps = 150;
  TimeSeriesDataset a = generate_synthetic(spec);
  TimeSeriesDataset b = generate_synthetic(spec);
  CHECK(a.values == b.values);
  CHECK(a.variate_names == b.variate_names);

  spec.seed = 8;
  TimeSeriesDataset c = generate_synthetic(spec);
  CHECK(a.values != c.values);
}

TEST_CASE("planted coupling shows up as lagged cross-correlation") {
  SyntheticSpec spec;
  spec.steps = 800;
  spec.periodic = 1;
  spec.walks = 1;
  spec.coupled = 1;
  spec.coupling_lags = {3};
  spec.coupling_weights = {0.9};
  spec.coupled_noise = 0.05;
  TimeSeriesDataset ds = generate_synthetic(spec);

  const std::size_t lag = 3;
  const std::size_t src = 1, dst = 2;
  std::vector<double> x, y;
  for (std::size_t t = lag; t < ds.steps; ++t) {
    x.push_back(ds.at(t - lag, src));
    y.push_back(ds.at(t, dst));
  }
  CHECK(pearson(x, y) > 0.8);

  // zero coupling weight: the column reduces to its own noise process
  SyntheticSpec zero = spec;
  zero.coupling_weights = {0.0};
  TimeSeriesDataset dz = generate_synthetic(zero);
  std::vector<double> xz, yz;
  for (std::size_t t = lag; t < dz.steps; ++t) {
    xz.push_back(dz.at(t - lag, src));
    yz.push_back(dz.at(t, dst));
  }
  CHECK(std::fabs(pearson(xz, yz)) < 0.3);
}

TEST_CASE("periodicity classification") {
  // pure sine with an integer number of periods: single spectral line
  std::vector<double> sine(256);
  for (std::size_t t = 0; t < sine.size(); ++t)
    sine[t] = 2.5 * std::sin(2.0 * std::numbers::pi * 8.0 * static_cast<double>(t) / 256.0);
  auto r = classify_periodicity(sine);
  CHECK(r.periodic);
  CHECK(r.score > 0.9);

  std::vector<double> constant(128, 3.0);
  auto rc = classify_periodicity(constant);
  CHECK_FALSE(rc.periodic);
  CHECK(rc.score == 0.0);

  std::vector<double> tiny(32, 0.0);
  CHECK_THROWS_AS((void)classify_periodicity(tiny), ContractError);

  // amplitude scaling and mean shift leave the score unchanged
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> mixed(256);
  for (std::size_t t = 0; t < mixed.size(); ++t)
    mixed[t] = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 19.0) + 0.5 * g(rng);
  std::vector<double> scaled(mixed.size());
  for (std::size_t t = 0; t < mixed.size(); ++t) scaled[t] = 7.0 * mixed[t] - 100.0;
  CHECK(std::fabs(classify_periodicity(mixed).score - classify_periodicity(scaled).score) <
        1e-9);
}

TEST_CASE("white noise scores below threshold on at least 95 of 100 seeds") {
  std::size_t below = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> x(512);
    for (auto& v : x) v = g(rng);
    if (classify_periodicity(x).score < 0.2) ++below;
  }
  CHECK(below >= 95);
}

TEST_CASE("reorder_variates placements and inverse") {
  SyntheticSpec spec;
  spec.steps = 300;
  spec.periodic = 3;
  spec.walks = 2;
  spec.coupled = 1;
  spec.coupling_lags = {5};
  spec.coupling_weights = {0.9};
  spec.walk_damping = 0.7;
  TimeSeriesDataset ds = generate_synthetic(spec);

  auto orig = reorder_variates(ds, Placement::Original);
  for (std::size_t v = 0; v < ds.variates; ++v) CHECK(orig.permutation[v] == v);
  CHECK(orig.dataset.values == ds.values);

  auto end = reorder_variates(ds, Placement::AperiodicEnd);
  // aperiodic columns (damped walks + coupled walk) land at the back, stable order
  CHECK(end.permutation == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  auto mid = reorder_variates(ds, Placement::AperiodicMiddle);
  CHECK(mid.permutation == std::vector<std::size_t>{0, 1, 3, 4, 5, 2});

  // applying the permutation then its inverse restores the dataset
  std::vector<std::size_t> inverse(ds.variates);
  for (std::size_t v = 0; v < ds.variates; ++v) inverse[mid.permutation[v]] = v;
  TimeSeriesDataset undone = mid.dataset;
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t v = 0; v < ds.variates; ++v)
      undone.values[t * ds.variates + v] = mid.dataset.at(t, inverse[v]);
  CHECK(undone.values == ds.values);
}

TEST_CASE("all-periodic dataset keeps the identity permutation everywhere") {
  SyntheticSpec spec;
  spec.steps = 300;
  spec.periodic = 4;
  spec.walks = 0;
  spec.coupled = 0;
  spec.noise = 0.05;
  TimeSeriesDataset ds = generate_synthetic(spec);
  for (Placement p : {Placement::Original, Placement::AperiodicMiddle, Placement::AperiodicEnd}) {
    auto r = reorder_variates(ds, p);
    for (std::size_t v = 0; v < ds.variates; ++v) CHECK(r.permutation[v] == v);
  }
}

TEST_CASE("subset_variates sampling") {
  TimeSeriesDataset ds = manual_dataset(50, 10, 35, 40);

  auto full = subset_variates(ds, 1.0, 3);
  CHECK(full.subset.variates == 10);
  CHECK(full.subset.values == ds.values);

  auto sub = subset_variates(ds, 0.4, 3);
  CHECK(sub.subset.variates == 4);  // ceil(0.4 * 10)
  CHECK(std::is_sorted(sub.index_map.begin(), sub.index_map.end()));
  for (std::size_t t = 0; t < ds.steps; ++t)
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(sub.subset.at(t, i) == ds.at(t, sub.index_map[i]));

  auto again = subset_variates(ds, 0.4, 3);
  CHECK(again.index_map == sub.index_map);
  auto other = subset_variates(ds, 0.4, 4);
  CHECK(other.index_map != sub.index_map);
}
