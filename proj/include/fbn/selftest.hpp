#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fbn/gradcheck.hpp"
#include "fbn/graphgen.hpp"
#include "fbn/harness.hpp"
#include "fbn/prng.hpp"

namespace fbn {

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

namespace selftest_detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, Prng& rng, double scale = 1.0,
                            bool trainable = true) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  if (trainable) t.set_requires_grad(true);
  return t;
}

// Fixed random projection so the scalar objective exercises every output.
// The weights are drawn once per case; the loss closure must stay pure.
inline Tensor projection_weights(std::vector<std::size_t> shape, Prng& rng) {
  Tensor w = Tensor::zeros(std::move(shape));
  for (double& v : w.values()) v = rng.normal();
  return w;
}

inline Tensor project(const Tensor& x, const Tensor& w) { return sum_all(mul(x, w)); }

inline CheckResult grad_case(const std::string& name, double err, double threshold = 1e-4) {
  return {name, err, threshold, err < threshold};
}

}  // namespace selftest_detail

// Gradient checks for every differentiable operation, each at several random
// points (h = 1e-5, max relative error < 1e-4).
inline std::vector<CheckResult> gradient_check_suite(std::uint64_t seed = 7,
                                                     int points_per_op = 3) {
  using selftest_detail::grad_case;
  using selftest_detail::project;
  using selftest_detail::projection_weights;
  using selftest_detail::random_tensor;
  std::vector<CheckResult> results;
  Prng root(seed);

  auto run_case = [&](const std::string& name, auto make_params_and_loss) {
    double worst = 0.0;
    for (int rep = 0; rep < points_per_op; ++rep) {
      Prng rng = root.fork(static_cast<std::uint64_t>(std::hash<std::string>{}(name)) + rep);
      worst = std::max(worst, make_params_and_loss(rng));
    }
    results.push_back(grad_case(name, worst));
  };

  run_case("matmul", [&](Prng& rng) {
    Tensor a = random_tensor({4, 3}, rng), b = random_tensor({3, 5}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 5}, prj);
    return max_rel_grad_error([&] { return project(matmul(a, b), w); }, {a, b});
  });
  run_case("add_sub_mul_scale", [&](Prng& rng) {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({3, 4}, prj);
    return max_rel_grad_error(
        [&] { return project(scale(mul(add(a, b), sub(a, b)), 0.7), w); }, {a, b});
  });
  run_case("add_rowvec", [&](Prng& rng) {
    Tensor a = random_tensor({4, 3}, rng), b = random_tensor({3}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 3}, prj);
    return max_rel_grad_error([&] { return project(add_rowvec(a, b), w); }, {a, b});
  });
  run_case("transpose", [&](Prng& rng) {
    Tensor a = random_tensor({3, 5}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({5, 3}, prj);
    return max_rel_grad_error([&] { return project(transpose(a), w); }, {a});
  });
  run_case("relu", [&](Prng& rng) {
    // keep values away from the kink so central differences are valid
    Tensor a = random_tensor({4, 4}, rng);
    for (double& v : a.values())
      if (std::fabs(v) < 1e-3) v += v >= 0 ? 0.1 : -0.1;
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 4}, prj);
    return max_rel_grad_error([&] { return project(relu(a), w); }, {a});
  });
  run_case("tanh", [&](Prng& rng) {
    Tensor a = random_tensor({4, 4}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 4}, prj);
    return max_rel_grad_error([&] { return project(tanh_act(a), w); }, {a});
  });
  run_case("sigmoid", [&](Prng& rng) {
    Tensor a = random_tensor({4, 4}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 4}, prj);
    return max_rel_grad_error([&] { return project(sigmoid_act(a), w); }, {a});
  });
  run_case("softmax_rows", [&](Prng& rng) {
    Tensor a = random_tensor({4, 6}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({4, 6}, prj);
    return max_rel_grad_error([&] { return project(softmax_rows(a), w); }, {a});
  });
  run_case("reductions", [&](Prng& rng) {
    Tensor a = random_tensor({3, 4}, rng);
    for (double& v : a.values())
      if (std::fabs(v) < 1e-3) v += v >= 0 ? 0.1 : -0.1;  // l1 kink
    return max_rel_grad_error(
        [&] {
          return add(sum_squares(a), add(l1_norm(a), add(mean_all(a), sum_all(a))));
        },
        {a});
  });
  run_case("sum_over_rows", [&](Prng& rng) {
    Tensor a = random_tensor({5, 3}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({1, 3}, prj);
    return max_rel_grad_error([&] { return project(sum_over_rows(a), w); }, {a});
  });
  run_case("shape_ops", [&](Prng& rng) {
    Tensor a = random_tensor({6, 4}, rng);
    Prng prj = rng.fork(99);
    const Tensor w = projection_weights({10, 4}, prj);
    return max_rel_grad_error(
        [&] {
          Tensor r = reshape(a, {2, 3, 4});
          Tensor rev = reverse_time(r);
          Tensor cat = concat_feat(r, rev);
          Tensor step = reshape(timestep(cat, 1), {6, 4});
          Tensor sl = slice_rows(a, 1, 5);
          Tensor grouped = group_mean_rows(sl, 2);
          Tensor last = group_last_rows(sl, 2);
          Tensor stacked = stack_rows({grouped, last, step});
          return project(stacked, w);
        },
        {a});
  });
  run_case("conv1d_valid", [&](Prng& rng) {
    Tensor x = random_tensor({2, 3, 12}, rng);
    Tensor w = random_tensor({4, 3, 5}, rng);
    Tensor b = random_tensor({4}, rng);
    Prng prj = rng.fork(99);
    const Tensor pw = projection_weights({2, 4, 8}, prj);
    return max_rel_grad_error([&] { return project(conv1d_valid(x, w, b), pw); }, {x, w, b});
  });
  run_case("maxpool1d", [&](Prng& rng) {
    Tensor x = random_tensor({2, 3, 12}, rng);
    Prng prj = rng.fork(99);
    const Tensor pw = projection_weights({2, 3, 4}, prj);
    return max_rel_grad_error([&] { return project(maxpool1d(x, 3), pw); }, {x});
  });
  run_case("batchnorm_1d", [&](Prng& rng) {
    Tensor x = random_tensor({6, 4}, rng);
    Tensor gamma = random_tensor({4}, rng, 0.5);
    for (double& v : gamma.values()) v += 1.0;
    Tensor beta = random_tensor({4}, rng, 0.5);
    Prng prj = rng.fork(99);
    const Tensor pw = projection_weights({6, 4}, prj);
    return max_rel_grad_error(
        [&] {
          BatchNormState state(4);
          return project(batchnorm_1d(x, gamma, beta, state, Mode::kTrain), pw);
        },
        {x, gamma, beta});
  });
  run_case("cross_entropy_logits", [&](Prng& rng) {
    Tensor logits = random_tensor({5, 3}, rng);
    const std::vector<int> labels = {0, 2, 1, 0, 2};
    return max_rel_grad_error([&] { return cross_entropy_logits(logits, labels); }, {logits});
  });
  run_case("matmul_softmax_ce", [&](Prng& rng) {
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    const std::vector<int> labels = {0, 1, 1, 0};
    return max_rel_grad_error(
        [&] { return cross_entropy_logits(matmul(x, softmax_rows(w)), labels); }, {x, w});
  });
  run_case("gru_layer", [&](Prng& rng) {
    const std::size_t h = 4, in = 3;
    Tensor x = random_tensor({5, 2, in}, rng);
    Tensor w_ih = random_tensor({3 * h, in}, rng, 0.5);
    Tensor w_hh = random_tensor({3 * h, h}, rng, 0.5);
    Tensor b_ih = random_tensor({3 * h}, rng, 0.2);
    Tensor b_hh = random_tensor({3 * h}, rng, 0.2);
    Prng prj = rng.fork(99);
    const Tensor pw = projection_weights({5, 2, h}, prj);
    return max_rel_grad_error(
        [&] { return project(gru_layer(x, w_ih, w_hh, b_ih, b_hh), pw); },
        {x, w_ih, w_hh, b_ih, b_hh});
  });
  run_case("graph_losses", [&](Prng& rng) {
    Tensor h1 = random_tensor({5, 3}, rng);
    Tensor h2 = random_tensor({5, 3}, rng);
    Tensor h3 = random_tensor({5, 3}, rng);
    Tensor h4 = random_tensor({5, 3}, rng);
    const std::vector<int> labels = {0, 0, 1, 1};
    return max_rel_grad_error(
        [&] {
          std::vector<Tensor> graphs = {generate_graph(h1), generate_graph(h2),
                                        generate_graph(h3), generate_graph(h4)};
          GroupStats stats = group_statistics(graphs, labels, 2);
          return add(loss_inner(stats),
                     add(loss_intra(stats), loss_sparsity(graphs)));
        },
        {h1, h2, h3, h4});
  });
  return results;
}

// End-to-end check of the pipeline gradient: encoder -> graph generator ->
// GCN -> four-term loss, at batch 4, v = 6, t = 32.
inline CheckResult end_to_end_gradient_check(EncoderVariant variant, std::uint64_t seed = 11) {
  SyntheticConfig dcfg;
  dcfg.n = 4;
  dcfg.v = 6;
  dcfg.t = 32;
  dcfg.module_sizes = {2, 2};
  dcfg.planted = {{0, 0, {0.0, 0.3}}};
  dcfg.seed = seed;
  const Cohort cohort = generate_synthetic(dcfg);

  RunConfig cfg;
  cfg.encoder.variant = variant;
  cfg.encoder.out_dim = 4;
  cfg.encoder.mlp_hidden = 8;
  cfg.encoder.cnn_channels = {4, 4, 4};
  cfg.encoder.cnn_kernel = 6;
  cfg.encoder.cnn_pool = 4;
  cfg.encoder.gru_window = 8;
  cfg.encoder.gru_layers = 3;
  cfg.predictor.gcn_layers = 3;
  cfg.predictor.hidden = 8;
  cfg.predictor.head_hidden = 8;
  cfg.seed = seed;

  const PreparedCohort prep = prepare_cohort(cohort, cfg);
  Model model = init_model(cohort, cfg, seed);
  const std::vector<std::size_t> indices = {0, 1, 2, 3};
  const std::vector<int> labels = cohort.labels();
  const LossWeights weights = cfg.loss_weights();

  // keep frozen copies so every loss evaluation starts from the same stats
  const BatchNormState bn_init = model.predictor.bn_state;
  auto loss_fn = [&]() {
    model.predictor.bn_state = bn_init;
    BatchForward fwd = forward_batch(prep, model, indices, Mode::kTrain);
    auto [loss, breakdown] = total_loss(fwd.logits, labels, fwd.graphs, weights, 2);
    return loss;
  };
  const double err = max_rel_grad_error(loss_fn, model.trainable_params(), 1e-5);
  const std::string name =
      variant == EncoderVariant::kCnn ? "end_to_end_cnn" : "end_to_end_gru";
  return {name, err, 1e-4, err < 1e-4};
}

// O(n) group losses against their direct pairwise / double-sum definitions.
inline std::vector<CheckResult> loss_identity_suite(std::uint64_t seed = 13, int batches = 100) {
  std::vector<CheckResult> results;
  Prng root(seed);
  double worst_inner = 0.0, worst_intra = 0.0, worst_sparsity = 0.0;

  for (int rep = 0; rep < batches; ++rep) {
    Prng rng = root.fork(rep);
    const std::size_t n = 2 + rng.uniform_int(15);  // 2..16
    const std::size_t v = 2 + rng.uniform_int(7);   // 2..8
    std::vector<Tensor> graphs;
    std::vector<int> labels;
    bool seen[2] = {false, false};
    for (std::size_t i = 0; i < n; ++i) {
      Tensor g = Tensor::zeros({v, v});
      for (double& x : g.values()) x = rng.uniform();
      graphs.push_back(g);
      const int y = static_cast<int>(rng.uniform_int(2));
      labels.push_back(y);
      seen[y] = true;
    }
    if (!seen[0]) labels[0] = 0;
    if (!seen[1]) labels[n - 1] = 1;

    const GroupStats stats = group_statistics(graphs, labels, 2);
    const double inner = loss_inner(stats).item();
    const double intra = loss_intra(stats).item();
    const double sparsity = loss_sparsity(graphs).item();

    // direct double-sum: sum_c sum_{i in S_c} ||A_i - mu_c||^2 / |S_c|
    double inner_direct = 0.0;
    for (int c = 0; c < 2; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == c) members.push_back(i);
      if (members.empty()) continue;
      std::vector<double> mu(v * v, 0.0);
      for (const std::size_t i : members)
        for (std::size_t e = 0; e < v * v; ++e) mu[e] += graphs[i].values()[e];
      for (double& x : mu) x /= static_cast<double>(members.size());
      for (const std::size_t i : members) {
        double d2 = 0.0;
        for (std::size_t e = 0; e < v * v; ++e) {
          const double d = graphs[i].values()[e] - mu[e];
          d2 += d * d;
        }
        inner_direct += d2 / static_cast<double>(members.size());
      }
    }

    // pairwise form: sum_{a,b} (var_a + var_b - mean pairwise ||A_i - A_j||^2)
    double intra_direct = 0.0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        std::vector<std::size_t> sa, sb;
        for (std::size_t i = 0; i < n; ++i) {
          if (labels[i] == a) sa.push_back(i);
          if (labels[i] == b) sb.push_back(i);
        }
        if (sa.empty() || sb.empty()) continue;
        auto var_of = [&](const std::vector<std::size_t>& s) {
          std::vector<double> mu(v * v, 0.0);
          for (const std::size_t i : s)
            for (std::size_t e = 0; e < v * v; ++e) mu[e] += graphs[i].values()[e];
          for (double& x : mu) x /= static_cast<double>(s.size());
          double var = 0.0;
          for (const std::size_t i : s) {
            double d2 = 0.0;
            for (std::size_t e = 0; e < v * v; ++e) {
              const double d = graphs[i].values()[e] - mu[e];
              d2 += d * d;
            }
            var += d2 / static_cast<double>(s.size());
          }
          return var;
        };
        double cross = 0.0;
        for (const std::size_t i : sa)
          for (const std::size_t j : sb) {
            double d2 = 0.0;
            for (std::size_t e = 0; e < v * v; ++e) {
              const double d = graphs[i].values()[e] - graphs[j].values()[e];
              d2 += d * d;
            }
            cross += d2;
          }
        cross /= static_cast<double>(sa.size()) * static_cast<double>(sb.size());
        intra_direct += var_of(sa) + var_of(sb) - cross;
      }

    double l1_direct = 0.0;
    for (const Tensor& g : graphs)
      for (const double x : g.values()) l1_direct += std::fabs(x);
    l1_direct /= static_cast<double>(n) * static_cast<double>(v * v);

    worst_inner = std::max(worst_inner, std::fabs(inner - inner_direct));
    worst_intra = std::max(worst_intra, std::fabs(intra - intra_direct));
    worst_sparsity = std::max(worst_sparsity, std::fabs(sparsity - l1_direct));
  }

  results.push_back({"loss_inner_identity", worst_inner, 1e-8, worst_inner < 1e-8});
  results.push_back({"loss_intra_identity", worst_intra, 1e-8, worst_intra < 1e-8});
  results.push_back({"loss_sparsity_identity", worst_sparsity, 1e-12, worst_sparsity < 1e-12});
  return results;
}

}  // namespace fbn
