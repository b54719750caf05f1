#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fbn/adam.hpp"
#include "fbn/dataset.hpp"
#include "fbn/encoder.hpp"
#include "fbn/graphgen.hpp"
#include "fbn/predictor.hpp"
#include "fbn/stats.hpp"

#include "json.hpp"

namespace fbn {

enum class GraphSource { kLearnable, kPearson, kUniform };

inline GraphSource parse_graph_source(const std::string& s) {
  if (s == "learnable") return GraphSource::kLearnable;
  if (s == "pearson") return GraphSource::kPearson;
  if (s == "uniform") return GraphSource::kUniform;
  throw usage_error("unknown graph source '" + s + "' (expected learnable|pearson|uniform)");
}

struct RunConfig {
  EncoderConfig encoder;
  PredictorConfig predictor;

  std::string graph_source = "learnable";
  std::string loss_variant = "full";  // ce | ce+gl | ce+sl | full
  LossWeights weights;
  int epochs = 500;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int folds = 5;
  int repetitions = 3;
  std::string node_feature_mode = "pearson";
  std::uint64_t seed = 42;

  void validate() const {
    detail::require(epochs >= 1 && batch_size >= 2 && lr > 0.0 && weight_decay >= 0.0,
                    "RunConfig: epochs/batch/lr out of range");
    detail::require(folds >= 2 && repetitions >= 1, "RunConfig: folds/repetitions out of range");
    parse_graph_source(graph_source);
    loss_weights();  // validates the variant name
    parse_feature_mode(node_feature_mode);
  }

  // Effective weights under the loss-variant switch.
  LossWeights loss_weights() const {
    if (loss_variant == "ce") return {0.0, 0.0, 0.0};
    if (loss_variant == "ce+gl") return {weights.alpha, weights.beta, 0.0};
    if (loss_variant == "ce+sl") return {0.0, 0.0, weights.gamma};
    if (loss_variant == "full") return weights;
    throw usage_error("unknown loss variant '" + loss_variant +
                      "' (expected ce|ce+gl|ce+sl|full)");
  }
};

// ---------------------------------------------------------------------------
// AUROC, Mann-Whitney form with average ranks for ties.

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  detail::require(scores.size() == labels.size() && !scores.empty(),
                  "auroc: scores and labels must align");
  std::size_t n_pos = 0, n_neg = 0;
  for (const int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// models

struct Model {
  EncoderParams encoder;
  PredictorParams predictor;
  GraphSource source = GraphSource::kLearnable;

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    auto out = encoder.named_params("encoder");
    for (auto& kv : predictor.named_params("predictor")) out.push_back(std::move(kv));
    return out;
  }

  // Fixed-graph variants train only the predictor: the encoder and generator
  // sit outside the gradient path and must not receive updates.
  std::vector<Tensor> trainable_params() const {
    std::vector<Tensor> out;
    if (source == GraphSource::kLearnable) {
      for (const Tensor& t : encoder.params()) out.push_back(t);
    }
    for (const Tensor& t : predictor.params()) out.push_back(t);
    return out;
  }
};

// Per-cohort immutable inputs: node features and, for fixed sources, graphs.
struct PreparedCohort {
  const Cohort* cohort = nullptr;
  GraphSource source = GraphSource::kLearnable;
  std::vector<Tensor> features;      // per sample, [v x v]
  std::vector<Tensor> fixed_graphs;  // per sample when source is fixed

  std::size_t n() const { return cohort->n(); }
};

inline PreparedCohort prepare_cohort(const Cohort& cohort, const RunConfig& cfg) {
  PreparedCohort prep;
  prep.cohort = &cohort;
  prep.source = parse_graph_source(cfg.graph_source);
  const NodeFeatureMode mode = parse_feature_mode(cfg.node_feature_mode);
  prep.features.reserve(cohort.n());
  if (mode == NodeFeatureMode::kIdentity) {
    const Tensor eye = node_features(cohort.samples[0].x, mode);
    for (std::size_t i = 0; i < cohort.n(); ++i) prep.features.push_back(eye);
  } else {
    for (std::size_t i = 0; i < cohort.n(); ++i)
      prep.features.push_back(node_features(cohort.samples[i].x, mode));
  }
  if (prep.source == GraphSource::kPearson) {
    for (std::size_t i = 0; i < cohort.n(); ++i)
      prep.fixed_graphs.push_back(pearson_matrix(cohort.samples[i].x));
  } else if (prep.source == GraphSource::kUniform) {
    const Tensor ones = uniform_graph(cohort.v());
    for (std::size_t i = 0; i < cohort.n(); ++i) prep.fixed_graphs.push_back(ones);
  }
  return prep;
}

inline Model init_model(const Cohort& cohort, const RunConfig& cfg, std::uint64_t seed) {
  Model model;
  model.source = parse_graph_source(cfg.graph_source);
  // Separate streams so predictor initialization is identical across graph
  // sources (controlled comparisons share predictor starting points).
  const Prng root(seed);
  Prng enc_rng = root.fork(1);
  Prng pred_rng = root.fork(2);
  model.encoder = EncoderParams::init(cfg.encoder, cohort.t(), enc_rng);
  PredictorConfig pcfg = cfg.predictor;
  pcfg.n_classes = static_cast<int>(cohort.n_classes());
  model.predictor = PredictorParams::init(pcfg, cohort.v(), pred_rng);
  return model;
}

struct BatchForward {
  Tensor logits;
  std::vector<Tensor> graphs;
};

inline BatchForward forward_batch(const PreparedCohort& prep, Model& model,
                                  const std::vector<std::size_t>& indices, Mode mode) {
  const Cohort& cohort = *prep.cohort;
  const std::size_t v = cohort.v();
  std::vector<Tensor> graphs, features;
  graphs.reserve(indices.size());
  features.reserve(indices.size());
  if (model.source == GraphSource::kLearnable) {
    std::vector<const Tensor*> xs;
    xs.reserve(indices.size());
    for (const std::size_t i : indices) xs.push_back(&cohort.samples[i].x);
    Tensor h_all = encode_batch(xs, model.encoder);  // [B v x o]
    for (std::size_t b = 0; b < indices.size(); ++b)
      graphs.push_back(generate_graph(slice_rows(h_all, b * v, (b + 1) * v)));
  } else {
    for (const std::size_t i : indices) graphs.push_back(prep.fixed_graphs[i]);
  }
  for (const std::size_t i : indices) features.push_back(prep.features[i]);
  BatchForward fwd;
  fwd.logits = gcn_forward_batch(graphs, features, model.predictor, mode);
  fwd.graphs = std::move(graphs);
  return fwd;
}

// Positive-class scores (softmax probability of class 1) in eval mode.
inline std::vector<double> score_samples(const PreparedCohort& prep, Model& model,
                                         const std::vector<std::size_t>& indices) {
  NoGradGuard guard;
  std::vector<double> scores;
  scores.reserve(indices.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t stop = std::min(indices.size(), start + kChunk);
    std::vector<std::size_t> chunk(indices.begin() + start, indices.begin() + stop);
    BatchForward fwd = forward_batch(prep, model, chunk, Mode::kEval);
    Tensor probs = softmax_rows(fwd.logits);
    for (std::size_t b = 0; b < chunk.size(); ++b) scores.push_back(probs.at(b, 1));
  }
  return scores;
}

// Per-sample learnable graphs in eval mode (or the fixed graphs themselves).
inline std::vector<Tensor> generate_all_graphs(const PreparedCohort& prep, Model& model) {
  if (model.source != GraphSource::kLearnable) return prep.fixed_graphs;
  NoGradGuard guard;
  const Cohort& cohort = *prep.cohort;
  const std::size_t v = cohort.v();
  std::vector<Tensor> graphs;
  graphs.reserve(cohort.n());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < cohort.n(); start += kChunk) {
    const std::size_t stop = std::min(cohort.n(), start + kChunk);
    std::vector<const Tensor*> xs;
    for (std::size_t i = start; i < stop; ++i) xs.push_back(&cohort.samples[i].x);
    Tensor h_all = encode_batch(xs, model.encoder);
    for (std::size_t b = 0; b < xs.size(); ++b)
      graphs.push_back(generate_graph(slice_rows(h_all, b * v, (b + 1) * v)));
  }
  return graphs;
}

// ---------------------------------------------------------------------------
// training loop

struct EpochRow {
  std::size_t epoch = 0;
  LossBreakdown loss;
  double test_auroc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Model model;
  std::vector<EpochRow> epochs;
};

// Seeded mini-batch training; a trailing batch of one sample is merged into
// its predecessor so train-mode batch normalization always sees >= 2 rows.
inline TrainResult train_model(const PreparedCohort& prep, const RunConfig& cfg,
                               const std::vector<std::size_t>& train_idx,
                               const std::vector<std::size_t>& test_idx, std::uint64_t seed) {
  const Cohort& cohort = *prep.cohort;
  detail::require(train_idx.size() >= 2, "train_model: need at least two training samples");
  {
    bool classes[2] = {false, false};
    for (const std::size_t i : train_idx)
      if (cohort.samples[i].label <= 1) classes[cohort.samples[i].label] = true;
    detail::require(cohort.n_classes() < 2 || (classes[0] && classes[1]),
                    "train_model: training split must contain both classes");
  }

  TrainResult result;
  result.model = init_model(cohort, cfg, seed);
  Prng train_rng = Prng(seed).fork(3);

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  Adam opt(result.model.trainable_params(), adam_cfg);
  const LossWeights weights = cfg.loss_weights();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  std::vector<std::size_t> order = train_idx;
  std::vector<int> test_labels;
  for (const std::size_t i : test_idx) test_labels.push_back(cohort.samples[i].label);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    train_rng.shuffle(order);
    LossBreakdown epoch_loss;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t stop = std::min(order.size(), start + batch);
      if (order.size() - stop == 1) stop = order.size();  // absorb trailing singleton
      std::vector<std::size_t> indices(order.begin() + start, order.begin() + stop);
      std::vector<int> labels;
      labels.reserve(indices.size());
      for (const std::size_t i : indices) labels.push_back(cohort.samples[i].label);

      BatchForward fwd = forward_batch(prep, result.model, indices, Mode::kTrain);
      auto [loss, breakdown] = total_loss(fwd.logits, labels, fwd.graphs, weights,
                                          cohort.n_classes());
      if (!std::isfinite(breakdown.total))
        throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(n_batches));
      backward(loss);
      opt.step();
      opt.zero_grad();

      epoch_loss.ce += breakdown.ce;
      epoch_loss.inner += breakdown.inner;
      epoch_loss.intra += breakdown.intra;
      epoch_loss.sparsity += breakdown.sparsity;
      epoch_loss.total += breakdown.total;
      ++n_batches;
      if (stop == order.size()) break;
    }
    const double inv = 1.0 / static_cast<double>(n_batches);
    epoch_loss.ce *= inv;
    epoch_loss.inner *= inv;
    epoch_loss.intra *= inv;
    epoch_loss.sparsity *= inv;
    epoch_loss.total *= inv;

    EpochRow row;
    row.epoch = static_cast<std::size_t>(epoch);
    row.loss = epoch_loss;
    if (!test_idx.empty()) {
      const std::vector<double> scores = score_samples(prep, result.model, test_idx);
      row.test_auroc = auroc(scores, test_labels);
    }
    result.epochs.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------------------
// time-series baseline: encoder features straight into an MLP, no graphs

struct BaselineParams {
  EncoderParams encoder;
  Tensor head_w1, head_b1, head_w2, head_b2;

  std::vector<Tensor> params() const {
    std::vector<Tensor> out = encoder.params();
    out.push_back(head_w1);
    out.push_back(head_b1);
    out.push_back(head_w2);
    out.push_back(head_b2);
    return out;
  }
};

inline BaselineParams init_baseline(const Cohort& cohort, const RunConfig& cfg,
                                    std::uint64_t seed) {
  const Prng root(seed);
  Prng enc_rng = root.fork(1);
  Prng head_rng = root.fork(2);
  BaselineParams p;
  p.encoder = EncoderParams::init(cfg.encoder, cohort.t(), enc_rng);
  const std::size_t flat = cohort.v() * static_cast<std::size_t>(cfg.encoder.out_dim);
  const std::size_t hh = static_cast<std::size_t>(cfg.predictor.head_hidden);
  const std::size_t nc = cohort.n_classes();
  p.head_w1 = xavier_uniform({flat, hh}, flat, hh, head_rng);
  p.head_b1 = zeros_param({hh});
  p.head_w2 = xavier_uniform({hh, nc}, hh, nc, head_rng);
  p.head_b2 = zeros_param({nc});
  return p;
}

inline Tensor baseline_forward(const std::vector<const Tensor*>& xs, const BaselineParams& p) {
  const std::size_t v = xs[0]->rows();
  Tensor h = encode_batch(xs, p.encoder);  // [B v x o]
  Tensor flat = reshape(h, {xs.size(), v * static_cast<std::size_t>(p.encoder.cfg.out_dim)});
  Tensor hidden = relu(add_rowvec(matmul(flat, p.head_w1), p.head_b1));
  return add_rowvec(matmul(hidden, p.head_w2), p.head_b2);
}

struct BaselineResult {
  BaselineParams params;
  std::vector<EpochRow> epochs;
};

inline BaselineResult train_baseline(const Cohort& cohort, const RunConfig& cfg,
                                     const std::vector<std::size_t>& train_idx,
                                     const std::vector<std::size_t>& test_idx,
                                     std::uint64_t seed) {
  BaselineResult result;
  result.params = init_baseline(cohort, cfg, seed);
  Prng train_rng = Prng(seed).fork(3);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  Adam opt(result.params.params(), adam_cfg);
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  std::vector<std::size_t> order = train_idx;
  std::vector<int> test_labels;
  for (const std::size_t i : test_idx) test_labels.push_back(cohort.samples[i].label);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    train_rng.shuffle(order);
    LossBreakdown epoch_loss;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::size_t stop = std::min(order.size(), start + batch);
      if (order.size() - stop == 1) stop = order.size();
      std::vector<const Tensor*> xs;
      std::vector<int> labels;
      for (std::size_t k = start; k < stop; ++k) {
        xs.push_back(&cohort.samples[order[k]].x);
        labels.push_back(cohort.samples[order[k]].label);
      }
      Tensor logits = baseline_forward(xs, result.params);
      Tensor loss = cross_entropy_logits(logits, labels);
      if (!std::isfinite(loss.item()))
        throw numeric_error("non-finite baseline loss at epoch " + std::to_string(epoch));
      backward(loss);
      opt.step();
      opt.zero_grad();
      epoch_loss.ce += loss.item();
      epoch_loss.total += loss.item();
      ++n_batches;
      if (stop == order.size()) break;
    }
    EpochRow row;
    row.epoch = static_cast<std::size_t>(epoch);
    row.loss.ce = epoch_loss.ce / static_cast<double>(n_batches);
    row.loss.total = row.loss.ce;
    if (!test_idx.empty()) {
      NoGradGuard guard;
      std::vector<double> scores;
      constexpr std::size_t kChunk = 64;
      for (std::size_t start = 0; start < test_idx.size(); start += kChunk) {
        const std::size_t stop = std::min(test_idx.size(), start + kChunk);
        std::vector<const Tensor*> xs;
        for (std::size_t i = start; i < stop; ++i) xs.push_back(&cohort.samples[test_idx[i]].x);
        Tensor probs = softmax_rows(baseline_forward(xs, result.params));
        for (std::size_t b = 0; b < xs.size(); ++b) scores.push_back(probs.at(b, 1));
      }
      row.test_auroc = auroc(scores, test_labels);
    }
    result.epochs.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------------------
// cross-validation protocol

struct FoldRun {
  std::size_t repetition = 0;
  std::size_t fold = 0;
  std::vector<EpochRow> epochs;
  double final_auroc = std::numeric_limits<double>::quiet_NaN();
};

struct RunRecord {
  RunConfig cfg;
  std::vector<FoldRun> folds;
  double mean_auroc = 0.0;
  double std_auroc = 0.0;
  // graphs of a final model trained on the full cohort, for analysis
  std::vector<Tensor> final_graphs;
  std::optional<Model> final_model;
};

constexpr std::uint64_t kFoldStream = 0xF01D5;
constexpr std::uint64_t kFinalStream = 0xF17A1;

inline std::uint64_t fold_seed(std::uint64_t master, std::size_t rep, std::size_t fold) {
  return Prng::mix(Prng::mix(master, rep), fold);
}

inline RunRecord cross_validate(const Cohort& cohort, const RunConfig& cfg, int jobs = 1,
                                bool with_final_graphs = true) {
  cfg.validate();
  detail::require(cohort.n_classes() == 2, "cross_validate: binary cohorts only");
  RunRecord record;
  record.cfg = cfg;

  const PreparedCohort prep = prepare_cohort(cohort, cfg);
  const auto splits = stratified_kfold(cohort.labels(), static_cast<std::size_t>(cfg.folds),
                                       static_cast<std::size_t>(cfg.repetitions),
                                       Prng::mix(cfg.seed, kFoldStream));
  record.folds.resize(splits.size());

  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(splits.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  auto run_worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= splits.size()) break;
      try {
        const FoldSplit& split = splits[k];
        TrainResult tr = train_model(prep, cfg, split.train, split.test,
                                     fold_seed(cfg.seed, split.repetition, split.fold));
        FoldRun fr;
        fr.repetition = split.repetition;
        fr.fold = split.fold;
        fr.epochs = std::move(tr.epochs);
        fr.final_auroc = fr.epochs.back().test_auroc;
        record.folds[k] = std::move(fr);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run_worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run_worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<double> finals;
  for (const FoldRun& fr : record.folds) finals.push_back(fr.final_auroc);
  record.mean_auroc = mean_of(finals);
  record.std_auroc = sample_std(finals);

  if (with_final_graphs) {
    std::vector<std::size_t> all(cohort.n());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    TrainResult final_tr =
        train_model(prep, cfg, all, {}, Prng::mix(cfg.seed, kFinalStream));
    record.final_graphs = generate_all_graphs(prep, final_tr.model);
    record.final_model = std::move(final_tr.model);
  }
  return record;
}

// Full model trained on the whole cohort; returns its per-sample graphs.
inline std::vector<Tensor> train_full_and_generate_graphs(const Cohort& cohort,
                                                          const RunConfig& cfg) {
  const PreparedCohort prep = prepare_cohort(cohort, cfg);
  std::vector<std::size_t> all(cohort.n());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TrainResult tr = train_model(prep, cfg, all, {}, Prng::mix(cfg.seed, kFinalStream));
  return generate_all_graphs(prep, tr.model);
}

// ---------------------------------------------------------------------------
// experiment suites

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> variants = {"ce", "ce+gl", "ce+sl", "full"};
  return variants;
}

// The four loss ablations trained with a shared master seed, hence shared
// fold splits and shared initializations.
inline std::vector<std::pair<std::string, RunRecord>> run_ablation(const Cohort& cohort,
                                                                   const RunConfig& cfg,
                                                                   int jobs = 1) {
  std::vector<std::pair<std::string, RunRecord>> out;
  for (const std::string& variant : ablation_variants()) {
    RunConfig vcfg = cfg;
    vcfg.loss_variant = variant;
    out.emplace_back(variant, cross_validate(cohort, vcfg, jobs, /*with_final_graphs=*/false));
  }
  return out;
}

inline const std::vector<std::string>& graph_source_names() {
  static const std::vector<std::string> sources = {"learnable", "pearson", "uniform"};
  return sources;
}

// Learnable vs Pearson vs uniform graphs with identical features, predictor
// initialization, folds and seeds.
inline std::vector<std::pair<std::string, RunRecord>> run_graph_comparison(const Cohort& cohort,
                                                                           const RunConfig& cfg,
                                                                           int jobs = 1) {
  std::vector<std::pair<std::string, RunRecord>> out;
  for (const std::string& source : graph_source_names()) {
    RunConfig scfg = cfg;
    scfg.graph_source = source;
    out.emplace_back(source, cross_validate(cohort, scfg, jobs, /*with_final_graphs=*/false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// run-directory output

inline std::string metrics_csv(const RunRecord& record) {
  std::string out = "rep,fold,epoch,L_ce,L_inner,L_intra,L_sparsity,total,test_auroc\n";
  for (const FoldRun& fr : record.folds)
    for (const EpochRow& row : fr.epochs) {
      out += std::to_string(fr.repetition) + "," + std::to_string(fr.fold) + "," +
             std::to_string(row.epoch) + "," + fmt17(row.loss.ce) + "," +
             fmt17(row.loss.inner) + "," + fmt17(row.loss.intra) + "," +
             fmt17(row.loss.sparsity) + "," + fmt17(row.loss.total) + "," +
             fmt17(row.test_auroc) + "\n";
    }
  return out;
}

inline nlohmann::json summary_json(const RunRecord& record) {
  nlohmann::json folds = nlohmann::json::array();
  for (const FoldRun& fr : record.folds)
    folds.push_back({{"rep", fr.repetition}, {"fold", fr.fold}, {"auroc", fr.final_auroc}});
  const LossWeights w = record.cfg.loss_weights();
  return nlohmann::json{
      {"graph_source", record.cfg.graph_source},
      {"loss_variant", record.cfg.loss_variant},
      {"alpha", w.alpha},
      {"beta", w.beta},
      {"gamma", w.gamma},
      {"mean_auroc", record.mean_auroc},
      {"std_auroc", record.std_auroc},
      {"folds", folds},
  };
}

inline void write_run_record(const std::filesystem::path& dir, const RunRecord& record) {
  ensure_dir(dir);
  write_file(dir / "metrics.csv", metrics_csv(record));
  write_file(dir / "summary.json", summary_json(record).dump(2) + "\n");
  if (!record.final_graphs.empty()) {
    ensure_dir(dir / "graphs");
    for (std::size_t i = 0; i < record.final_graphs.size(); ++i)
      write_matrix_csv(dir / "graphs" / ("sample_" + std::to_string(i) + ".csv"),
                       record.final_graphs[i]);
  }
  if (record.final_model.has_value())
    save_checkpoint(dir / "model", record.final_model->named_params());
}

}  // namespace fbn
