#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dialingle/corpus.hpp"

namespace dialingle {

/// Hyperparameters of the n-gram classifier. Also the autotune search space.
struct ModelConfig {
  int char_ngram_min = 2;
  int char_ngram_max = 4;
  /// 1 = word unigrams, 2 = unigrams and bigrams. 0 disables word features.
  int word_ngram_max = 1;
  std::uint32_t hash_buckets = 1u << 14;
  int embedding_dim = 16;
  double learning_rate = 0.5;
  int epochs = 50;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using FeatureId = std::uint32_t;

std::uint64_t fnv1a64(std::string_view bytes);

/// Hashed character n-grams (inside "<word>" sentinels) plus word n-grams.
/// Order follows the text; duplicates are kept.
std::vector<FeatureId> featurize(std::string_view normalized_text, const ModelConfig& config);

/// Probability per label; `labels` is the model's label index.
struct PredictionDistribution {
  std::vector<std::string> labels;
  std::vector<double> probs;

  double prob(std::string_view label) const;
  std::size_t argmax() const;
  const std::string& top_label() const { return labels.at(argmax()); }
  std::map<std::string, double> as_map() const;
};

class TrainedModel {
 public:
  /// All-zero parameters.
  TrainedModel(ModelConfig config, std::vector<std::string> label_index);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& label_index() const { return labels_; }
  std::size_t dim() const { return static_cast<std::size_t>(config_.embedding_dim); }
  std::size_t num_labels() const { return labels_.size(); }

  std::span<float> input_weights() { return input_; }
  std::span<const float> input_weights() const { return input_; }
  /// Row-major, one row of `dim()` weights per label.
  std::span<float> output_weights() { return output_; }
  std::span<const float> output_weights() const { return output_; }

  PredictionDistribution predict(std::string_view text) const;
  PredictionDistribution predict_features(std::span<const FeatureId> features) const;

  /// Serialized length in bytes, i.e. the model file size.
  std::size_t byte_size() const;

  std::string serialize() const;
  static TrainedModel deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static TrainedModel load(const std::filesystem::path& path);

 private:
  std::vector<double> hidden(std::span<const FeatureId> features) const;

  ModelConfig config_;
  std::vector<std::string> labels_;
  std::vector<float> input_;
  std::vector<float> output_;
};

/// Model file size for a config and label index, without building the model.
std::size_t serialized_size(const ModelConfig& config, const std::vector<std::string>& label_index);

/// One labeled sentence. Training expands multi-label examples into one
/// example per label; evaluation counts a prediction in the set as correct.
struct Example {
  std::string text;
  std::vector<std::string> labels;
  std::string variant_id;
};

/// One example per variant of the family, in corpus order.
std::vector<Example> examples_from(const FamilySnapshot& view);

/// Examples from a file in the corpus ingest format (e.g. a held-out set).
std::vector<Example> load_examples(const std::filesystem::path& path);

struct TrainTestSplit {
  std::vector<Example> train;
  std::vector<Example> test;
  /// Labels with fewer than two variants; all of their variants went to train.
  std::vector<std::string> too_small;
};

/// Stratified by each variant's first label; a variant never straddles the split.
TrainTestSplit split_train_test(std::span<const Example> examples, double ratio, std::uint64_t seed);
TrainTestSplit split_train_test(const FamilySnapshot& view, double ratio, std::uint64_t seed);

/// Averaged bag-of-features embedding, linear projection, softmax; SGD on
/// multinomial log loss. An empty `label_index` means "labels seen in the
/// examples, sorted". `epoch_losses`, when given, receives the mean training
/// loss after every epoch.
TrainedModel train(std::span<const Example> examples, const ModelConfig& config,
                   std::vector<std::string> label_index = {}, std::vector<double>* epoch_losses = nullptr);

/// Mean multinomial log loss of the model over the (expanded) examples.
double mean_loss(const TrainedModel& model, std::span<const Example> examples);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct EvalReport {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::map<std::string, ClassScores> per_class;
  std::uint64_t split_seed = 0;
  std::size_t test_size = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const TrainedModel& model, std::span<const Example> test, std::uint64_t split_seed = 0);

struct AutotuneBudget {
  /// Wall-clock limit. Used when `candidates` is zero.
  double seconds = 0.0;
  /// Deterministic mode: number of trained candidates, fallback included.
  std::size_t candidates = 0;
};

struct AutotuneResult {
  ModelConfig config;
  TrainedModel model;
  EvalReport report;
  std::size_t candidates_trained = 0;
};

/// The minimal configuration tried first by autotune.
ModelConfig minimal_config(std::uint64_t seed);

/// Seeded random search. Each candidate trains on an 80/20 split of
/// `examples` and is ranked by validation micro-F1; candidates whose model
/// file would exceed `max_model_bytes` are skipped without training. The
/// winner is retrained on all of `examples`.
AutotuneResult autotune(std::span<const Example> examples, const AutotuneBudget& budget, std::size_t max_model_bytes,
                        std::uint64_t seed, std::vector<std::string> label_index = {});
AutotuneResult autotune(const FamilySnapshot& view, const AutotuneBudget& budget, std::size_t max_model_bytes,
                        std::uint64_t seed);

namespace detail {

/// Multinomial log loss of one example and its gradient with respect to the
/// output projection (row-major, num_labels x hidden.size()). Returns the loss.
template <typename Weight>
double softmax_loss_output_gradient(std::span<const double> hidden, std::span<const Weight> output,
                                    std::size_t num_labels, std::size_t label, std::span<double> grad_output,
                                    std::span<double> probs) {
  const std::size_t dim = hidden.size();
  double max_logit = -INFINITY;
  for (std::size_t k = 0; k < num_labels; ++k) {
    double z = 0.0;
    for (std::size_t d = 0; d < dim; ++d) z += static_cast<double>(output[k * dim + d]) * hidden[d];
    probs[k] = z;
    max_logit = std::max(max_logit, z);
  }
  const double label_logit = probs[label];
  double sum = 0.0;
  for (std::size_t k = 0; k < num_labels; ++k) {
    probs[k] = std::exp(probs[k] - max_logit);
    sum += probs[k];
  }
  for (std::size_t k = 0; k < num_labels; ++k) probs[k] /= sum;
  for (std::size_t k = 0; k < num_labels; ++k) {
    const double g = probs[k] - (k == label ? 1.0 : 0.0);
    for (std::size_t d = 0; d < dim; ++d) grad_output[k * dim + d] = g * hidden[d];
  }
  return std::log(sum) + max_logit - label_logit;
}

}  // namespace detail

}  // namespace dialingle
