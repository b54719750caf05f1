#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fbn/csv.hpp"
#include "fbn/dataset.hpp"
#include "fbn/stats.hpp"
#include "fbn/tensor.hpp"

#include "json.hpp"

namespace fbn {

enum class HeatmapScope { kAll, kPerClass };

// ROI display order for heatmaps: assigned ROIs only, grouped by module and
// ascending ROI index within a module.
inline std::vector<std::size_t> assigned_roi_order(const ModulePartition& partition) {
  std::vector<std::size_t> order;
  for (std::size_t u = 0; u < partition.n_modules(); ++u)
    for (const std::size_t p : partition.module_rois(u)) order.push_back(p);
  return order;
}

struct Heatmap {
  Tensor matrix;                        // [v' x v'] over assigned ROIs
  std::vector<std::size_t> roi_order;   // original ROI index per row
  std::vector<std::string> row_labels;  // "roi<idx>:<module>"
};

// Entrywise mean over graphs, restricted and reordered to assigned ROIs.
inline Heatmap mean_heatmap(const std::vector<Tensor>& graphs, const ModulePartition& partition) {
  detail::require(!graphs.empty(), "mean_heatmap: empty graph list");
  const std::size_t v = graphs[0].rows();
  for (const Tensor& g : graphs)
    detail::require(g.rows() == v && g.cols() == v, "mean_heatmap: graph sizes differ");
  detail::require(partition.n_rois() == v, "mean_heatmap: partition size mismatch");

  Tensor mean = Tensor::zeros({v, v});
  const double inv = 1.0 / static_cast<double>(graphs.size());
  for (const Tensor& g : graphs)
    for (std::size_t i = 0; i < v * v; ++i) mean.values()[i] += g.values()[i] * inv;

  Heatmap hm;
  hm.roi_order = assigned_roi_order(partition);
  const std::size_t m = hm.roi_order.size();
  hm.matrix = Tensor::zeros({m, m});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t p = hm.roi_order[i];
    hm.row_labels.push_back(
        "roi" + std::to_string(p) + ":" +
        partition.module_names[static_cast<std::size_t>(partition.assignment[p])]);
    for (std::size_t j = 0; j < m; ++j) hm.matrix.at(i, j) = mean.at(p, hm.roi_order[j]);
  }
  return hm;
}

struct EdgeSignificance {
  Tensor t_stats;   // [v x v], symmetric, zero diagonal
  Tensor p_values;  // [v x v], symmetric, unit diagonal
  // upper-triangle edges that pass the threshold, unassigned ROIs excluded
  std::vector<std::pair<std::size_t, std::size_t>> significant;
  double alpha = 0.05;
  bool bonferroni = false;
};

// Welch's t-test per edge between two groups of graphs. Edges whose samples
// are constant and equal in both groups get t = 0, p = 1.
inline EdgeSignificance edge_ttest(const std::vector<Tensor>& group_a,
                                   const std::vector<Tensor>& group_b) {
  detail::require(group_a.size() >= 2 && group_b.size() >= 2,
                  "edge_ttest: each group needs at least 2 graphs");
  const std::size_t v = group_a[0].rows();
  EdgeSignificance sig;
  sig.t_stats = Tensor::zeros({v, v});
  sig.p_values = Tensor::full({v, v}, 1.0);

  std::vector<double> a(group_a.size()), b(group_b.size());
  for (std::size_t p = 0; p < v; ++p)
    for (std::size_t q = p + 1; q < v; ++q) {
      for (std::size_t i = 0; i < group_a.size(); ++i) a[i] = group_a[i].at(p, q);
      for (std::size_t i = 0; i < group_b.size(); ++i) b[i] = group_b[i].at(p, q);
      const WelchResult res = welch_t_test(a, b);
      sig.t_stats.at(p, q) = res.t;
      sig.t_stats.at(q, p) = res.t;
      sig.p_values.at(p, q) = res.p;
      sig.p_values.at(q, p) = res.p;
    }
  return sig;
}

// Collects E^d at the given threshold. Edges touching unassigned ROIs are
// skipped; Bonferroni divides the threshold by the number of tested edges.
inline void select_significant_edges(EdgeSignificance& sig, const ModulePartition& partition,
                                     double alpha = 0.05, bool bonferroni = false) {
  const std::size_t v = sig.p_values.rows();
  detail::require(partition.n_rois() == v, "select_significant_edges: partition size mismatch");
  sig.alpha = alpha;
  sig.bonferroni = bonferroni;
  sig.significant.clear();

  std::size_t n_tested = 0;
  for (std::size_t p = 0; p < v; ++p)
    for (std::size_t q = p + 1; q < v; ++q)
      if (partition.assignment[p] != kUnassigned && partition.assignment[q] != kUnassigned)
        ++n_tested;
  const double threshold = bonferroni && n_tested > 0
                               ? alpha / static_cast<double>(n_tested)
                               : alpha;
  for (std::size_t p = 0; p < v; ++p)
    for (std::size_t q = p + 1; q < v; ++q) {
      if (partition.assignment[p] == kUnassigned || partition.assignment[q] == kUnassigned)
        continue;
      if (sig.p_values.at(p, q) < threshold) sig.significant.emplace_back(p, q);
    }
}

struct ModuleScore {
  std::size_t module = 0;
  std::string name;
  std::size_t size = 0;
  double score = 0.0;  // T_u
  std::size_t rank = 0;
};

// Module difference score: every significant edge credits each endpoint's
// module with 1/|M_u| (so a within-module edge counts twice). Returned
// sorted by descending score.
inline std::vector<ModuleScore> module_difference_scores(const EdgeSignificance& sig,
                                                         const ModulePartition& partition) {
  partition.validate();
  std::vector<ModuleScore> scores(partition.n_modules());
  for (std::size_t u = 0; u < partition.n_modules(); ++u) {
    scores[u].module = u;
    scores[u].name = partition.module_names[u];
    scores[u].size = partition.module_rois(u).size();
  }
  for (const auto& [p, q] : sig.significant) {
    const int mu_p = partition.assignment[p];
    const int mu_q = partition.assignment[q];
    if (mu_p != kUnassigned)
      scores[static_cast<std::size_t>(mu_p)].score +=
          1.0 / static_cast<double>(scores[static_cast<std::size_t>(mu_p)].size);
    if (mu_q != kUnassigned)
      scores[static_cast<std::size_t>(mu_q)].score +=
          1.0 / static_cast<double>(scores[static_cast<std::size_t>(mu_q)].size);
  }
  std::stable_sort(scores.begin(), scores.end(), [](const ModuleScore& a, const ModuleScore& b) {
    return a.score > b.score;
  });
  for (std::size_t r = 0; r < scores.size(); ++r) scores[r].rank = r + 1;
  return scores;
}

// ---------------------------------------------------------------------------
// CSV outputs

inline void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& hm) {
  std::ofstream out = open_out(path);
  out << "roi";
  for (const std::string& label : hm.row_labels) out << "," << label;
  out << "\n";
  for (std::size_t i = 0; i < hm.matrix.rows(); ++i) {
    out << hm.row_labels[i];
    for (std::size_t j = 0; j < hm.matrix.cols(); ++j) out << "," << fmt17(hm.matrix.at(i, j));
    out << "\n";
  }
}

inline void write_labeled_matrix_csv(const std::filesystem::path& path, const Tensor& m,
                                     const ModulePartition& partition) {
  std::ofstream out = open_out(path);
  auto roi_label = [&](std::size_t p) {
    const int u = partition.assignment[p];
    return "roi" + std::to_string(p) + ":" +
           (u == kUnassigned ? std::string("unassigned") : partition.module_names[u]);
  };
  out << "roi";
  for (std::size_t p = 0; p < m.rows(); ++p) out << "," << roi_label(p);
  out << "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << roi_label(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out << "," << fmt17(m.at(i, j));
    out << "\n";
  }
}

inline void write_module_scores_csv(const std::filesystem::path& path,
                                    const std::vector<ModuleScore>& scores) {
  std::ofstream out = open_out(path);
  out << "module,size,T_u,rank\n";
  for (const ModuleScore& s : scores)
    out << s.name << "," << s.size << "," << fmt17(s.score) << "," << s.rank << "\n";
}

// Full interpretability suite over per-sample graphs split by class:
// mean heatmaps, per-edge Welch tests, and module difference scores.
inline void write_analysis(const std::filesystem::path& dir, const std::vector<Tensor>& graphs,
                           const std::vector<int>& labels, const Cohort& cohort,
                           double alpha = 0.05, bool bonferroni = false) {
  detail::require(graphs.size() == labels.size(), "write_analysis: graph/label count mismatch");
  detail::require(cohort.n_classes() == 2, "write_analysis: binary cohorts only");
  ensure_dir(dir);

  write_heatmap_csv(dir / "heatmap_all.csv", mean_heatmap(graphs, cohort.partition));
  std::vector<std::vector<Tensor>> by_class(cohort.n_classes());
  for (std::size_t i = 0; i < graphs.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(graphs[i]);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    write_heatmap_csv(dir / ("heatmap_class_" + cohort.class_names[c] + ".csv"),
                      mean_heatmap(by_class[c], cohort.partition));

  EdgeSignificance sig = edge_ttest(by_class[0], by_class[1]);
  select_significant_edges(sig, cohort.partition, alpha, bonferroni);
  write_labeled_matrix_csv(dir / "tstats.csv", sig.t_stats, cohort.partition);
  write_labeled_matrix_csv(dir / "pvalues.csv", sig.p_values, cohort.partition);
  const auto scores = module_difference_scores(sig, cohort.partition);
  write_module_scores_csv(dir / "module_scores.csv", scores);

  nlohmann::json top3 = nlohmann::json::array();
  for (std::size_t i = 0; i < std::min<std::size_t>(3, scores.size()); ++i)
    top3.push_back(scores[i].name);
  const nlohmann::json meta{
      {"test", "welch"},
      {"alpha", alpha},
      {"correction", bonferroni ? "bonferroni" : "none"},
      {"group_sizes", {by_class[0].size(), by_class[1].size()}},
      {"significant_edges", sig.significant.size()},
      {"top_modules", top3},
  };
  write_file(dir / "analysis_meta.json", meta.dump(2) + "\n");
}

}  // namespace fbn
