#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fbn/dataset.hpp"
#include "fbn/harness.hpp"

#include "json.hpp"

namespace fbn {

// One flat-keyed JSON document (e.g. "encoder.variant") drives every
// subcommand; it is echoed verbatim into run directories so runs diff
// cleanly. A single master seed feeds both generation and training.
struct FullConfig {
  SyntheticConfig data;
  RunConfig run;
  double analyze_alpha = 0.05;
  bool analyze_bonferroni = false;

  void set_seed(std::uint64_t seed) {
    data.seed = seed;
    run.seed = seed;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["seed"] = run.seed;
    j["data.n"] = data.n;
    j["data.v"] = data.v;
    j["data.t"] = data.t;
    j["data.class_balance"] = data.class_balance;
    j["data.module_sizes"] = data.module_sizes;
    nlohmann::json planted = nlohmann::json::array();
    for (const auto& eff : data.planted)
      planted.push_back({{"module_a", eff.module_a},
                         {"module_b", eff.module_b},
                         {"delta_per_class", eff.delta_per_class}});
    j["data.planted"] = planted;
    j["data.base_correlation"] = data.base_correlation;
    j["data.noise_level"] = data.noise_level;
    j["data.node_feature_mode"] = data.node_feature_mode;
    j["encoder.variant"] = run.encoder.variant == EncoderVariant::kCnn ? "cnn" : "gru";
    j["encoder.out_dim"] = run.encoder.out_dim;
    j["encoder.mlp_hidden"] = run.encoder.mlp_hidden;
    j["encoder.out_gain"] = run.encoder.out_gain;
    j["encoder.cnn.channels"] = run.encoder.cnn_channels;
    j["encoder.cnn.kernel"] = run.encoder.cnn_kernel;
    j["encoder.cnn.pool"] = run.encoder.cnn_pool;
    j["encoder.gru.window"] = run.encoder.gru_window;
    j["encoder.gru.layers"] = run.encoder.gru_layers;
    j["encoder.gru.aggregate"] =
        run.encoder.gru_aggregate == WindowAggregate::kMean ? "mean" : "last";
    j["predictor.gcn_layers"] = run.predictor.gcn_layers;
    j["predictor.hidden"] = run.predictor.hidden;
    j["predictor.head_hidden"] = run.predictor.head_hidden;
    j["train.graph_source"] = run.graph_source;
    j["train.loss_variant"] = run.loss_variant;
    j["train.alpha"] = run.weights.alpha;
    j["train.beta"] = run.weights.beta;
    j["train.gamma"] = run.weights.gamma;
    j["train.epochs"] = run.epochs;
    j["train.batch"] = run.batch_size;
    j["train.lr"] = run.lr;
    j["train.weight_decay"] = run.weight_decay;
    j["train.folds"] = run.folds;
    j["train.repetitions"] = run.repetitions;
    j["train.node_feature_mode"] = run.node_feature_mode;
    j["analyze.alpha"] = analyze_alpha;
    j["analyze.bonferroni"] = analyze_bonferroni;
    return j;
  }

  void apply(const std::string& key, const nlohmann::json& value) {
    try {
      if (key == "seed") {
        set_seed(value.get<std::uint64_t>());
      } else if (key == "data.n") {
        data.n = value.get<int>();
      } else if (key == "data.v") {
        data.v = value.get<int>();
      } else if (key == "data.t") {
        data.t = value.get<int>();
      } else if (key == "data.class_balance") {
        data.class_balance = value.get<std::vector<double>>();
      } else if (key == "data.module_sizes") {
        data.module_sizes = value.get<std::vector<int>>();
      } else if (key == "data.planted") {
        data.planted.clear();
        for (const auto& eff : value) {
          PlantedDelta d;
          d.module_a = eff.at("module_a").get<int>();
          d.module_b = eff.at("module_b").get<int>();
          d.delta_per_class = eff.at("delta_per_class").get<std::vector<double>>();
          data.planted.push_back(std::move(d));
        }
      } else if (key == "data.base_correlation") {
        data.base_correlation = value.get<double>();
      } else if (key == "data.noise_level") {
        data.noise_level = value.get<double>();
      } else if (key == "data.node_feature_mode") {
        data.node_feature_mode = value.get<std::string>();
      } else if (key == "encoder.variant") {
        run.encoder.variant = parse_encoder_variant(value.get<std::string>());
      } else if (key == "encoder.out_dim") {
        run.encoder.out_dim = value.get<int>();
      } else if (key == "encoder.mlp_hidden") {
        run.encoder.mlp_hidden = value.get<int>();
      } else if (key == "encoder.out_gain") {
        run.encoder.out_gain = value.get<double>();
      } else if (key == "encoder.cnn.channels") {
        run.encoder.cnn_channels = value.get<std::vector<int>>();
      } else if (key == "encoder.cnn.kernel") {
        run.encoder.cnn_kernel = value.get<int>();
      } else if (key == "encoder.cnn.pool") {
        run.encoder.cnn_pool = value.get<int>();
      } else if (key == "encoder.gru.window") {
        run.encoder.gru_window = value.get<int>();
      } else if (key == "encoder.gru.layers") {
        run.encoder.gru_layers = value.get<int>();
      } else if (key == "encoder.gru.aggregate") {
        const std::string s = value.get<std::string>();
        if (s == "mean")
          run.encoder.gru_aggregate = WindowAggregate::kMean;
        else if (s == "last")
          run.encoder.gru_aggregate = WindowAggregate::kLast;
        else
          throw usage_error("encoder.gru.aggregate must be mean|last");
      } else if (key == "predictor.gcn_layers") {
        run.predictor.gcn_layers = value.get<int>();
      } else if (key == "predictor.hidden") {
        run.predictor.hidden = value.get<int>();
      } else if (key == "predictor.head_hidden") {
        run.predictor.head_hidden = value.get<int>();
      } else if (key == "train.graph_source") {
        run.graph_source = value.get<std::string>();
      } else if (key == "train.loss_variant") {
        run.loss_variant = value.get<std::string>();
      } else if (key == "train.alpha") {
        run.weights.alpha = value.get<double>();
      } else if (key == "train.beta") {
        run.weights.beta = value.get<double>();
      } else if (key == "train.gamma") {
        run.weights.gamma = value.get<double>();
      } else if (key == "train.epochs") {
        run.epochs = value.get<int>();
      } else if (key == "train.batch") {
        run.batch_size = value.get<int>();
      } else if (key == "train.lr") {
        run.lr = value.get<double>();
      } else if (key == "train.weight_decay") {
        run.weight_decay = value.get<double>();
      } else if (key == "train.folds") {
        run.folds = value.get<int>();
      } else if (key == "train.repetitions") {
        run.repetitions = value.get<int>();
      } else if (key == "train.node_feature_mode") {
        run.node_feature_mode = value.get<std::string>();
      } else if (key == "analyze.alpha") {
        analyze_alpha = value.get<double>();
      } else if (key == "analyze.bonferroni") {
        analyze_bonferroni = value.get<bool>();
      } else {
        throw usage_error("unknown config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw usage_error("bad value for config key '" + key + "': " + e.what());
    }
  }

  void apply_document(const nlohmann::json& doc) {
    if (!doc.is_object()) throw usage_error("config document must be a JSON object of flat keys");
    for (const auto& [key, value] : doc.items()) apply(key, value);
  }

  // "key=value"; the value is parsed as JSON when possible, else as a string.
  void apply_override(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw usage_error("override '" + text + "' is not of the form key=value");
    const std::string key = text.substr(0, eq);
    const std::string raw = text.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;
    apply(key, value);
  }
};

inline FullConfig load_config(const std::string& config_path,
                              const std::vector<std::string>& overrides) {
  FullConfig cfg;
  if (!config_path.empty()) {
    if (!std::filesystem::exists(config_path))
      throw data_error("config file not found: " + config_path);
    nlohmann::json doc = nlohmann::json::parse(read_file(config_path), nullptr,
                                               /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw data_error("config file is not valid JSON: " + config_path);
    cfg.apply_document(doc);
  }
  for (const std::string& o : overrides) cfg.apply_override(o);
  return cfg;
}

}  // namespace fbn
