#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fbn/csv.hpp"
#include "fbn/prng.hpp"
#include "fbn/tensor.hpp"

#include "json.hpp"

namespace fbn {

constexpr int kUnassigned = -1;

// ROI -> functional module map. Unassigned ROIs stay in training graphs but
// are excluded from module-level analysis.
struct ModulePartition {
  std::vector<int> assignment;           // per ROI, module index or kUnassigned
  std::vector<std::string> module_names;

  std::size_t n_rois() const { return assignment.size(); }
  std::size_t n_modules() const { return module_names.size(); }

  std::vector<std::size_t> module_rois(std::size_t u) const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < assignment.size(); ++p)
      if (assignment[p] == static_cast<int>(u)) out.push_back(p);
    return out;
  }

  void validate() const {
    for (const int a : assignment)
      detail::require(a == kUnassigned || (a >= 0 && a < static_cast<int>(module_names.size())),
                      "ModulePartition: assignment out of range");
    for (std::size_t u = 0; u < module_names.size(); ++u)
      if (module_rois(u).empty())
        throw data_error("ModulePartition: module '" + module_names[u] + "' is empty");
  }
};

// One v x t signal matrix with its class label.
struct BoldSample {
  Tensor x;   // [v x t]
  int label = 0;
};

struct Cohort {
  std::vector<BoldSample> samples;
  std::vector<std::string> class_names;
  ModulePartition partition;
  nlohmann::json generator_config;  // echo of how the cohort was produced

  std::size_t n() const { return samples.size(); }
  std::size_t v() const { return samples.empty() ? 0 : samples[0].x.rows(); }
  std::size_t t() const { return samples.empty() ? 0 : samples[0].x.cols(); }
  std::size_t n_classes() const { return class_names.size(); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }
};

// Class-conditional planted effect: the correlation of edges between
// module_a and module_b is raised by delta_per_class[c] for class c.
struct PlantedDelta {
  int module_a = 0;
  int module_b = 0;
  std::vector<double> delta_per_class;
};

struct SyntheticConfig {
  int n = 200;
  int v = 16;
  int t = 64;
  std::vector<double> class_balance = {0.5, 0.5};
  std::vector<int> module_sizes = {4, 4};  // consecutive ROI blocks, rest unassigned
  std::vector<PlantedDelta> planted = {
      {0, 0, {0.0, 0.4}},
      {1, 1, {0.3, 0.3}},
  };
  double base_correlation = 0.1;
  double noise_level = 0.0;
  std::string node_feature_mode = "pearson";  // pearson | identity
  std::uint64_t seed = 42;

  std::size_t n_classes() const { return class_balance.size(); }
};

namespace detail {

// In-place lower Cholesky; throws when the matrix is not positive definite.
inline std::vector<double> cholesky(const std::vector<double>& a, std::size_t n,
                                    const std::string& what) {
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (s <= 0.0) throw data_error(what + ": matrix is not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

}  // namespace detail

// Target correlation matrix for one class under the planted-effect config.
inline Tensor class_correlation(const SyntheticConfig& cfg, std::size_t c) {
  const std::size_t v = static_cast<std::size_t>(cfg.v);
  Tensor sigma = Tensor::zeros({v, v});
  for (std::size_t p = 0; p < v; ++p)
    for (std::size_t q = 0; q < v; ++q) sigma.at(p, q) = p == q ? 1.0 : cfg.base_correlation;

  // module block bounds from consecutive sizes
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  std::size_t start = 0;
  for (const int size : cfg.module_sizes) {
    blocks.emplace_back(start, start + static_cast<std::size_t>(size));
    start += static_cast<std::size_t>(size);
  }
  detail::require(start <= v, "SyntheticConfig: module sizes exceed ROI count");

  for (const PlantedDelta& eff : cfg.planted) {
    detail::require(eff.module_a >= 0 && eff.module_a < static_cast<int>(blocks.size()) &&
                        eff.module_b >= 0 && eff.module_b < static_cast<int>(blocks.size()),
                    "SyntheticConfig: planted effect references unknown module");
    detail::require(eff.delta_per_class.size() == cfg.n_classes(),
                    "SyntheticConfig: planted deltas must cover every class");
    const double delta = eff.delta_per_class[c];
    const auto [a0, a1] = blocks[static_cast<std::size_t>(eff.module_a)];
    const auto [b0, b1] = blocks[static_cast<std::size_t>(eff.module_b)];
    for (std::size_t p = a0; p < a1; ++p)
      for (std::size_t q = b0; q < b1; ++q) {
        if (p == q) continue;
        sigma.at(p, q) += delta;
        if (eff.module_a != eff.module_b) sigma.at(q, p) += delta;
      }
  }
  return sigma;
}

inline ModulePartition partition_from_sizes(int v, const std::vector<int>& module_sizes) {
  ModulePartition part;
  part.assignment.assign(static_cast<std::size_t>(v), kUnassigned);
  std::size_t start = 0;
  for (std::size_t u = 0; u < module_sizes.size(); ++u) {
    part.module_names.push_back("m" + std::to_string(u + 1));
    for (int i = 0; i < module_sizes[u]; ++i)
      part.assignment[start + static_cast<std::size_t>(i)] = static_cast<int>(u);
    start += static_cast<std::size_t>(module_sizes[u]);
  }
  part.validate();
  return part;
}

// Gaussian cohort with class-conditional planted covariance. Labels depend
// only on the covariance structure, never on marginal signal statistics.
// Per-sample streams are forked from (seed, sample index).
inline Cohort generate_synthetic(const SyntheticConfig& cfg) {
  detail::require(cfg.n >= 1 && cfg.v >= 2 && cfg.t >= 2, "SyntheticConfig: n, v, t too small");
  detail::require(!cfg.class_balance.empty(), "SyntheticConfig: class balance empty");

  const std::size_t v = static_cast<std::size_t>(cfg.v);
  const std::size_t t = static_cast<std::size_t>(cfg.t);
  const std::size_t n_classes = cfg.n_classes();

  // per-class counts by largest remainder
  std::vector<std::size_t> counts(n_classes, 0);
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double exact = cfg.class_balance[c] * cfg.n;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < static_cast<std::size_t>(cfg.n); ++i, ++assigned)
    ++counts[remainders[i % n_classes].second];

  std::vector<std::vector<double>> chol(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const Tensor sigma = class_correlation(cfg, c);
    chol[c] = detail::cholesky(sigma.values(), v, "generate_synthetic class " + std::to_string(c));
  }

  Cohort cohort;
  for (std::size_t c = 0; c < n_classes; ++c) cohort.class_names.push_back("c" + std::to_string(c));
  cohort.partition = partition_from_sizes(cfg.v, cfg.module_sizes);

  const Prng master(cfg.seed);
  std::size_t sample_id = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i, ++sample_id) {
      Prng rng = master.fork(sample_id);
      Tensor x = Tensor::zeros({v, t});
      std::vector<double> z(v);
      for (std::size_t col = 0; col < t; ++col) {
        for (std::size_t p = 0; p < v; ++p) z[p] = rng.normal();
        for (std::size_t p = 0; p < v; ++p) {
          double s = 0.0;
          const double* lrow = chol[c].data() + p * v;
          for (std::size_t q = 0; q <= p; ++q) s += lrow[q] * z[q];
          x.at(p, col) = s;
        }
      }
      if (cfg.noise_level > 0.0) {
        for (double& val : x.values()) val += cfg.noise_level * rng.normal();
      }
      cohort.samples.push_back({std::move(x), static_cast<int>(c)});
    }
  }

  cohort.generator_config = nlohmann::json{
      {"n", cfg.n},
      {"v", cfg.v},
      {"t", cfg.t},
      {"class_balance", cfg.class_balance},
      {"module_sizes", cfg.module_sizes},
      {"base_correlation", cfg.base_correlation},
      {"noise_level", cfg.noise_level},
      {"node_feature_mode", cfg.node_feature_mode},
      {"seed", cfg.seed},
  };
  nlohmann::json planted = nlohmann::json::array();
  for (const auto& eff : cfg.planted)
    planted.push_back({{"module_a", eff.module_a},
                       {"module_b", eff.module_b},
                       {"delta_per_class", eff.delta_per_class}});
  cohort.generator_config["planted"] = planted;
  return cohort;
}

// Absolute Pearson correlation matrix: symmetric, unit diagonal, entries in
// [0, 1]. A zero-variance row yields 0 off the diagonal and a warning.
inline Tensor pearson_matrix(const Tensor& x, std::vector<std::string>* warnings = nullptr) {
  detail::require(x.ndim() == 2, "pearson_matrix: input must be [v x t]");
  const std::size_t v = x.rows(), t = x.cols();
  std::vector<double> mean(v, 0.0), sd(v, 0.0);
  for (std::size_t p = 0; p < v; ++p) {
    for (std::size_t j = 0; j < t; ++j) mean[p] += x.at(p, j);
    mean[p] /= static_cast<double>(t);
    for (std::size_t j = 0; j < t; ++j) {
      const double c = x.at(p, j) - mean[p];
      sd[p] += c * c;
    }
    sd[p] = std::sqrt(sd[p]);
    if (sd[p] == 0.0 && warnings != nullptr)
      warnings->push_back("pearson_matrix: row " + std::to_string(p) + " has zero variance");
  }
  Tensor out = Tensor::zeros({v, v});
  for (std::size_t p = 0; p < v; ++p) {
    out.at(p, p) = 1.0;
    for (std::size_t q = p + 1; q < v; ++q) {
      double cov = 0.0;
      for (std::size_t j = 0; j < t; ++j) cov += (x.at(p, j) - mean[p]) * (x.at(q, j) - mean[q]);
      double r = 0.0;
      if (sd[p] > 0.0 && sd[q] > 0.0) r = std::fabs(cov / (sd[p] * sd[q]));
      out.at(p, q) = r;
      out.at(q, p) = r;
    }
  }
  return out;
}

enum class NodeFeatureMode { kPearson, kIdentity };

inline NodeFeatureMode parse_feature_mode(const std::string& s) {
  if (s == "pearson") return NodeFeatureMode::kPearson;
  if (s == "identity") return NodeFeatureMode::kIdentity;
  throw usage_error("unknown node_feature_mode '" + s + "' (expected pearson|identity)");
}

// Node features F [v x f] with f = v in both modes.
inline Tensor node_features(const Tensor& x, NodeFeatureMode mode) {
  if (mode == NodeFeatureMode::kPearson) return pearson_matrix(x);
  const std::size_t v = x.rows();
  Tensor eye = Tensor::zeros({v, v});
  for (std::size_t p = 0; p < v; ++p) eye.at(p, p) = 1.0;
  return eye;
}

inline Tensor uniform_graph(std::size_t v) {
  detail::require(v >= 1, "uniform_graph: v must be >= 1");
  return Tensor::full({v, v}, 1.0);
}

// ---------------------------------------------------------------------------
// persistence: manifest.json + labels.csv + samples/sample_<id>.csv

inline void save_cohort(const Cohort& cohort, const std::filesystem::path& dir) {
  ensure_dir(dir);
  ensure_dir(dir / "samples");
  nlohmann::json manifest{
      {"n", cohort.n()},
      {"v", cohort.v()},
      {"t", cohort.t()},
      {"class_names", cohort.class_names},
      {"module_names", cohort.partition.module_names},
      {"assignment", cohort.partition.assignment},
      {"generator_config", cohort.generator_config},
  };
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream labels = open_out(dir / "labels.csv");
  labels << "sample_id,label\n";
  for (std::size_t i = 0; i < cohort.n(); ++i) labels << i << "," << cohort.samples[i].label << "\n";

  for (std::size_t i = 0; i < cohort.n(); ++i)
    write_matrix_csv(dir / "samples" / ("sample_" + std::to_string(i) + ".csv"),
                     cohort.samples[i].x);
}

inline Cohort load_cohort(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw data_error("missing manifest file " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("cannot parse " + manifest_path.string() + ": " + e.what());
  }

  Cohort cohort;
  const std::size_t n = manifest.at("n").get<std::size_t>();
  const std::size_t v = manifest.at("v").get<std::size_t>();
  const std::size_t t = manifest.at("t").get<std::size_t>();
  cohort.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  cohort.partition.module_names = manifest.at("module_names").get<std::vector<std::string>>();
  cohort.partition.assignment = manifest.at("assignment").get<std::vector<int>>();
  if (manifest.contains("generator_config")) cohort.generator_config = manifest["generator_config"];
  if (cohort.partition.assignment.size() != v)
    throw data_error("manifest assignment length disagrees with v in " + manifest_path.string());
  cohort.partition.validate();

  const auto labels_path = dir / "labels.csv";
  if (!std::filesystem::exists(labels_path))
    throw data_error("missing labels file " + labels_path.string());
  std::ifstream labels = open_in(labels_path);
  std::string line;
  std::getline(labels, line);  // header
  std::map<std::size_t, int> label_by_id;
  while (std::getline(labels, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw data_error("malformed row in " + labels_path.string());
    const auto id = static_cast<std::size_t>(parse_double(cells[0], labels_path.string()));
    const int label = static_cast<int>(parse_double(cells[1], labels_path.string()));
    if (label < 0 || static_cast<std::size_t>(label) >= cohort.class_names.size())
      throw data_error("label out of range in " + labels_path.string());
    label_by_id[id] = label;
  }
  if (label_by_id.size() != n)
    throw data_error("labels.csv row count disagrees with manifest n in " + dir.string());

  for (std::size_t i = 0; i < n; ++i) {
    const auto sample_path = dir / "samples" / ("sample_" + std::to_string(i) + ".csv");
    if (!std::filesystem::exists(sample_path))
      throw data_error("missing sample file " + sample_path.string());
    Tensor x = read_matrix_csv(sample_path);
    if (x.rows() != v || x.cols() != t)
      throw data_error("sample dimensions disagree with manifest in " + sample_path.string());
    cohort.samples.push_back({std::move(x), label_by_id.at(i)});
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// stratified k-fold with repetitions

struct FoldSplit {
  std::size_t repetition = 0;
  std::size_t fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline std::vector<FoldSplit> stratified_kfold(const std::vector<int>& labels, std::size_t k,
                                               std::size_t repetitions, std::uint64_t seed) {
  detail::require(k >= 2, "stratified_kfold: k must be >= 2");
  int max_label = -1;
  for (const int y : labels) max_label = std::max(max_label, y);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (const auto& members : by_class)
    if (members.size() < k)
      throw std::invalid_argument("stratified_kfold: a class has fewer members than folds");

  const Prng base(seed);
  std::vector<FoldSplit> out;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    Prng rng = base.fork(rep);
    std::vector<std::vector<std::size_t>> test_folds(k);
    for (auto members : by_class) {
      rng.shuffle(members);
      for (std::size_t i = 0; i < members.size(); ++i) test_folds[i % k].push_back(members[i]);
    }
    for (std::size_t f = 0; f < k; ++f) {
      FoldSplit split;
      split.repetition = rep;
      split.fold = f;
      split.test = test_folds[f];
      std::sort(split.test.begin(), split.test.end());
      std::vector<bool> in_test(labels.size(), false);
      for (const std::size_t i : split.test) in_test[i] = true;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (!in_test[i]) split.train.push_back(i);
      out.push_back(std::move(split));
    }
  }
  return out;
}

}  // namespace fbn
