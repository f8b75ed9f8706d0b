#include "dialingle/classifier.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "dialingle/error.hpp"
#include "dialingle/text.hpp"

namespace dialingle {
namespace {

static_assert(std::endian::native == std::endian::little, "model files are written in host byte order");

constexpr char kMagic[4] = {'D', 'L', 'G', '1'};
constexpr std::size_t kHeaderBytes = 4 + 5 * 4 + 8 + 4 + 8 + 4;

// Deterministic helpers on top of mt19937_64; std distributions are not
// guaranteed to produce the same sequence across standard libraries.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void get_floats(std::span<float> out) {
    need(out.size() * sizeof(float));
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * sizeof(float));
    pos_ += out.size() * sizeof(float);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::InvalidModelFile, "model file is truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct FeaturizedExample {
  std::vector<FeatureId> features;
  std::size_t label = 0;
};

std::vector<FeaturizedExample> expand(std::span<const Example> examples, const ModelConfig& config,
                                      const std::vector<std::string>& label_index) {
  std::vector<FeaturizedExample> out;
  for (const auto& ex : examples) {
    auto features = featurize(normalize_text(ex.text), config);
    for (const auto& label : ex.labels) {
      auto it = std::lower_bound(label_index.begin(), label_index.end(), label);
      std::size_t idx = 0;
      if (it != label_index.end() && *it == label) {
        idx = static_cast<std::size_t>(it - label_index.begin());
      } else {
        auto lin = std::find(label_index.begin(), label_index.end(), label);
        if (lin == label_index.end()) fail(ErrorCode::UnknownLabel, "label '" + label + "' is not in the label index");
        idx = static_cast<std::size_t>(lin - label_index.begin());
      }
      out.push_back({features, idx});
    }
  }
  return out;
}

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

ModelConfig sample_config(std::mt19937_64& rng) {
  static constexpr int kDims[] = {4, 8, 12, 16, 24, 32, 48, 64};
  ModelConfig c;
  c.char_ngram_min = 1 + static_cast<int>(uniform_index(rng, 3));
  c.char_ngram_max = std::min(6, c.char_ngram_min + static_cast<int>(uniform_index(rng, 4)));
  c.word_ngram_max = 1 + static_cast<int>(uniform_index(rng, 2));
  c.hash_buckets = 1u << (12 + uniform_index(rng, 9));
  c.embedding_dim = kDims[uniform_index(rng, std::size(kDims))];
  c.learning_rate = std::exp(std::log(0.05) + uniform01(rng) * (std::log(1.0) - std::log(0.05)));
  c.epochs = 5 + static_cast<int>(uniform_index(rng, 36));
  c.seed = rng();
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& why) { fail(ErrorCode::InvalidConfig, why); };
  if (char_ngram_min < 1 || char_ngram_max < char_ngram_min || char_ngram_max > 6)
    bad("char n-gram range must satisfy 1 <= min <= max <= 6");
  if (word_ngram_max < 0 || word_ngram_max > 2) bad("word_ngram_max must be 0, 1 or 2");
  if (hash_buckets < (1u << 12) || !std::has_single_bit(hash_buckets)) bad("hash_buckets must be a power of two >= 4096");
  if (embedding_dim < 4) bad("embedding_dim must be >= 4");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (epochs < 1) bad("epochs must be >= 1");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"char_ngram_min", char_ngram_min}, {"char_ngram_max", char_ngram_max}, {"word_ngram_max", word_ngram_max},
          {"hash_buckets", hash_buckets},     {"embedding_dim", embedding_dim},   {"learning_rate", learning_rate},
          {"epochs", epochs},                 {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.char_ngram_min = j.value("char_ngram_min", c.char_ngram_min);
    c.char_ngram_max = j.value("char_ngram_max", c.char_ngram_max);
    c.word_ngram_max = j.value("word_ngram_max", c.word_ngram_max);
    c.hash_buckets = j.value("hash_buckets", c.hash_buckets);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<FeatureId> featurize(std::string_view normalized_text, const ModelConfig& config) {
  std::vector<FeatureId> out;
  const auto words = split_words(normalized_text);
  const auto bucket = [&](std::string_view key) {
    return static_cast<FeatureId>(fnv1a64(key) % config.hash_buckets);
  };
  for (const auto& word : words) {
    std::vector<std::string> cps{"<"};
    for (auto& cp : split_codepoints(word)) cps.push_back(std::move(cp));
    cps.emplace_back(">");
    const int len = static_cast<int>(cps.size());
    for (int start = 0; start < len; ++start) {
      std::string gram;
      for (int n = 1; n <= config.char_ngram_max && start + n <= len; ++n) {
        gram += cps[static_cast<std::size_t>(start + n - 1)];
        if (n < config.char_ngram_min) continue;
        if (n == 1 && (start == 0 || start == len - 1)) continue;  // bare sentinel
        out.push_back(bucket(gram));
      }
    }
  }
  // Word n-grams live in their own key space.
  for (int n = 1; n <= config.word_ngram_max; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
      std::string key = "\x02";
      for (int k = 0; k < n; ++k) {
        if (k) key += ' ';
        key += words[i + static_cast<std::size_t>(k)];
      }
      out.push_back(bucket(key));
    }
  }
  return out;
}

double PredictionDistribution::prob(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return probs[i];
  }
  return 0.0;
}

std::size_t PredictionDistribution::argmax() const {
  if (probs.empty()) fail(ErrorCode::EmptyInput, "empty distribution");
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

std::map<std::string, double> PredictionDistribution::as_map() const {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out[labels[i]] = probs[i];
  return out;
}

TrainedModel::TrainedModel(ModelConfig config, std::vector<std::string> label_index)
    : config_(config), labels_(std::move(label_index)) {
  config_.validate();
  if (labels_.empty()) fail(ErrorCode::InvalidConfig, "label index is empty");
  input_.assign(static_cast<std::size_t>(config_.hash_buckets) * dim(), 0.0f);
  output_.assign(labels_.size() * dim(), 0.0f);
}

std::vector<double> TrainedModel::hidden(std::span<const FeatureId> features) const {
  std::vector<double> h(dim(), 0.0);
  if (features.empty()) return h;
  for (auto f : features) {
    const float* row = input_.data() + static_cast<std::size_t>(f) * dim();
    for (std::size_t d = 0; d < dim(); ++d) h[d] += row[d];
  }
  const double scale = 1.0 / static_cast<double>(features.size());
  for (auto& x : h) x *= scale;
  return h;
}

PredictionDistribution TrainedModel::predict(std::string_view text) const {
  return predict_features(featurize(normalize_text(text), config_));
}

PredictionDistribution TrainedModel::predict_features(std::span<const FeatureId> features) const {
  const auto h = hidden(features);
  PredictionDistribution dist;
  dist.labels = labels_;
  dist.probs.assign(labels_.size(), 0.0);
  std::vector<double> logits(labels_.size(), 0.0);
  double max_logit = -INFINITY;
  for (std::size_t k = 0; k < labels_.size(); ++k) {
    double z = 0.0;
    for (std::size_t d = 0; d < dim(); ++d) z += static_cast<double>(output_[k * dim() + d]) * h[d];
    logits[k] = z;
    max_logit = std::max(max_logit, z);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < labels_.size(); ++k) {
    dist.probs[k] = std::exp(logits[k] - max_logit);
    sum += dist.probs[k];
  }
  for (auto& p : dist.probs) p /= sum;
  return dist;
}

std::size_t serialized_size(const ModelConfig& config, const std::vector<std::string>& label_index) {
  std::size_t n = kHeaderBytes;
  for (const auto& l : label_index) n += 4 + l.size();
  n += sizeof(float) * static_cast<std::size_t>(config.embedding_dim) *
       (static_cast<std::size_t>(config.hash_buckets) + label_index.size());
  return n;
}

std::size_t TrainedModel::byte_size() const { return serialized_size(config_, labels_); }

std::string TrainedModel::serialize() const {
  std::string out;
  out.reserve(byte_size());
  out.append(kMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.char_ngram_min));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.char_ngram_max));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.word_ngram_max));
  put<std::uint32_t>(out, config_.hash_buckets);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.embedding_dim));
  put<double>(out, config_.learning_rate);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(config_.epochs));
  put<std::uint64_t>(out, config_.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(labels_.size()));
  for (const auto& l : labels_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.size()));
    out += l;
  }
  out.append(reinterpret_cast<const char*>(input_.data()), input_.size() * sizeof(float));
  out.append(reinterpret_cast<const char*>(output_.data()), output_.size() * sizeof(float));
  return out;
}

TrainedModel TrainedModel::deserialize(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorCode::InvalidModelFile, "missing DLG1 magic");
  Reader in(bytes.substr(4));
  ModelConfig c;
  c.char_ngram_min = static_cast<int>(in.get<std::uint32_t>());
  c.char_ngram_max = static_cast<int>(in.get<std::uint32_t>());
  c.word_ngram_max = static_cast<int>(in.get<std::uint32_t>());
  c.hash_buckets = in.get<std::uint32_t>();
  c.embedding_dim = static_cast<int>(in.get<std::uint32_t>());
  c.learning_rate = in.get<double>();
  c.epochs = static_cast<int>(in.get<std::uint32_t>());
  c.seed = in.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::InvalidModelFile, e.what());
  }
  const auto k = in.get<std::uint32_t>();
  std::vector<std::string> labels;
  for (std::uint32_t i = 0; i < k; ++i) labels.push_back(in.get_string(in.get<std::uint32_t>()));
  TrainedModel model(c, std::move(labels));
  in.get_floats(model.input_);
  in.get_floats(model.output_);
  if (!in.done()) fail(ErrorCode::InvalidModelFile, "trailing bytes after weights");
  return model;
}

void TrainedModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp);
    const auto bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainedModel TrainedModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open model " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::vector<Example> examples_from(const FamilySnapshot& view) {
  std::vector<Example> out;
  for (const auto& g : view.groups) {
    for (const auto& v : g->variants) out.push_back({v.text, v.labels, v.variant_id});
  }
  return out;
}

std::vector<Example> load_examples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_text(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto group_id = j.at("group_id").get<std::string>();
      std::size_t n = 0;
      for (const auto& v : j.at("variants")) {
        Example e;
        e.text = normalize_text(v.at("text").get<std::string>());
        e.labels = v.at("labels").get<std::vector<std::string>>();
        std::sort(e.labels.begin(), e.labels.end());
        e.labels.erase(std::unique(e.labels.begin(), e.labels.end()), e.labels.end());
        e.variant_id = group_id + "#" + std::to_string(++n);
        if (e.text.empty() || e.labels.empty()) fail(ErrorCode::MalformedRecord, "line " + std::to_string(line_no));
        out.push_back(std::move(e));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MalformedRecord, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

TrainTestSplit split_train_test(std::span<const Example> examples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) fail(ErrorCode::InvalidConfig, "split ratio must be in (0, 1]");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].labels.empty()) fail(ErrorCode::UnknownLabel, "example without labels");
    strata[*std::min_element(examples[i].labels.begin(), examples[i].labels.end())].push_back(i);
  }
  TrainTestSplit split;
  std::vector<bool> in_test(examples.size(), false);
  for (auto& [label, members] : strata) {
    if (members.size() < 2) {
      split.too_small.push_back(label);
      continue;
    }
    std::mt19937_64 rng(seed ^ fnv1a64(label));
    shuffle(members, rng);
    auto n_test = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(members.size())));
    n_test = std::min(n_test, members.size() - 1);
    for (std::size_t i = 0; i < n_test; ++i) in_test[members[i]] = true;
  }
  for (std::size_t i = 0; i < examples.size(); ++i) (in_test[i] ? split.test : split.train).push_back(examples[i]);
  return split;
}

TrainTestSplit split_train_test(const FamilySnapshot& view, double ratio, std::uint64_t seed) {
  const auto examples = examples_from(view);
  return split_train_test(examples, ratio, seed);
}

TrainedModel train(std::span<const Example> examples, const ModelConfig& config, std::vector<std::string> label_index,
                   std::vector<double>* epoch_losses) {
  config.validate();
  if (examples.empty()) fail(ErrorCode::EmptyTrainingSet, "no training examples");
  std::set<std::string> seen;
  for (const auto& ex : examples) seen.insert(ex.labels.begin(), ex.labels.end());
  if (seen.size() < 2) fail(ErrorCode::SingleClassCorpus, "training needs at least two distinct labels");
  if (label_index.empty()) label_index.assign(seen.begin(), seen.end());

  TrainedModel model(config, label_index);
  const auto data = expand(examples, config, label_index);
  const std::size_t dim = model.dim();
  const std::size_t num_labels = model.num_labels();

  std::mt19937_64 rng(config.seed);
  auto input = model.input_weights();
  const float bound = 1.0f / static_cast<float>(dim);
  for (auto& w : input) w = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  auto output = model.output_weights();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> hidden(dim), grad_hidden(dim), grad_out(num_labels * dim), probs(num_labels);
  const double total_steps = static_cast<double>(config.epochs) * static_cast<double>(data.size());
  double step = 0.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    for (auto idx : order) {
      const auto& ex = data[idx];
      const double lr = config.learning_rate * std::max(0.0, 1.0 - step / total_steps);
      step += 1.0;
      if (ex.features.empty()) continue;
      std::fill(hidden.begin(), hidden.end(), 0.0);
      for (auto f : ex.features) {
        const float* row = input.data() + static_cast<std::size_t>(f) * dim;
        for (std::size_t d = 0; d < dim; ++d) hidden[d] += row[d];
      }
      const double inv = 1.0 / static_cast<double>(ex.features.size());
      for (auto& x : hidden) x *= inv;

      detail::softmax_loss_output_gradient<float>(hidden, output, num_labels, ex.label, grad_out, probs);

      std::fill(grad_hidden.begin(), grad_hidden.end(), 0.0);
      for (std::size_t k = 0; k < num_labels; ++k) {
        const double g = probs[k] - (k == ex.label ? 1.0 : 0.0);
        for (std::size_t d = 0; d < dim; ++d) grad_hidden[d] += g * static_cast<double>(output[k * dim + d]);
      }
      for (std::size_t i = 0; i < grad_out.size(); ++i) output[i] -= static_cast<float>(lr * grad_out[i]);
      for (auto f : ex.features) {
        float* row = input.data() + static_cast<std::size_t>(f) * dim;
        for (std::size_t d = 0; d < dim; ++d) row[d] -= static_cast<float>(lr * grad_hidden[d] * inv);
      }
    }
    if (epoch_losses) epoch_losses->push_back(mean_loss(model, examples));
  }
  return model;
}

double mean_loss(const TrainedModel& model, std::span<const Example> examples) {
  const auto data = expand(examples, model.config(), model.label_index());
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : data) {
    const auto dist = model.predict_features(ex.features);
    total += -std::log(std::max(dist.probs[ex.label], 1e-300));
  }
  return total / static_cast<double>(data.size());
}

nlohmann::json EvalReport::to_json() const {
  auto classes = nlohmann::json::object();
  for (const auto& [label, s] : per_class)
    classes[label] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  return {{"micro_f1", micro_f1},
          {"macro_f1", macro_f1},
          {"per_class", classes},
          {"split_seed", split_seed},
          {"test_size", test_size}};
}

EvalReport evaluate(const TrainedModel& model, std::span<const Example> test, std::uint64_t split_seed) {
  if (test.empty()) fail(ErrorCode::EmptyTestSet, "test set is empty");
  std::map<std::string, std::size_t> tp, fp, fn, support;
  std::size_t correct = 0;
  for (const auto& ex : test) {
    if (ex.labels.empty()) fail(ErrorCode::UnknownLabel, "test example without labels");
    const auto dist = model.predict(ex.text);
    const auto& predicted = dist.top_label();
    const bool hit = std::find(ex.labels.begin(), ex.labels.end(), predicted) != ex.labels.end();
    if (hit) {
      ++correct;
      ++tp[predicted];
      ++support[predicted];
    } else {
      const auto& truth = *std::min_element(ex.labels.begin(), ex.labels.end());
      ++fp[predicted];
      ++fn[truth];
      ++support[truth];
    }
  }
  EvalReport report;
  report.split_seed = split_seed;
  report.test_size = test.size();
  // With one decision per example, micro precision = micro recall = accuracy.
  report.micro_f1 = static_cast<double>(correct) / static_cast<double>(test.size());
  std::set<std::string> classes;
  for (const auto* m : {&tp, &fp, &fn}) {
    for (const auto& [k, v] : *m) classes.insert(k);
  }
  double macro = 0.0;
  for (const auto& k : classes) {
    ClassScores s;
    const double t = static_cast<double>(tp[k]);
    s.precision = safe_div(t, t + static_cast<double>(fp[k]));
    s.recall = safe_div(t, t + static_cast<double>(fn[k]));
    s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
    s.support = support[k];
    macro += s.f1;
    report.per_class[k] = s;
  }
  report.macro_f1 = classes.empty() ? 0.0 : macro / static_cast<double>(classes.size());
  return report;
}

ModelConfig minimal_config(std::uint64_t seed) {
  ModelConfig c;
  c.char_ngram_min = 2;
  c.char_ngram_max = 3;
  c.word_ngram_max = 1;
  c.hash_buckets = 1u << 12;
  c.embedding_dim = 4;
  c.learning_rate = 0.5;
  c.epochs = 10;
  c.seed = seed;
  return c;
}

AutotuneResult autotune(std::span<const Example> examples, const AutotuneBudget& budget, std::size_t max_model_bytes,
                        std::uint64_t seed, std::vector<std::string> label_index) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const bool count_mode = budget.candidates > 0;
  if (!count_mode && !(budget.seconds > 0.0)) fail(ErrorCode::InvalidConfig, "autotune budget must be positive");

  std::set<std::string> seen;
  for (const auto& ex : examples) seen.insert(ex.labels.begin(), ex.labels.end());
  if (seen.size() < 2) fail(ErrorCode::SingleClassCorpus, "autotune needs at least two distinct labels");
  if (label_index.empty()) label_index.assign(seen.begin(), seen.end());

  const auto fallback = minimal_config(seed);
  if (serialized_size(fallback, label_index) > max_model_bytes)
    fail(ErrorCode::NoFeasibleModel, "even the minimal model exceeds " + std::to_string(max_model_bytes) + " bytes");

  auto split = split_train_test(examples, 0.8, seed);
  std::vector<Example> validation = split.test.empty() ? split.train : split.test;

  std::mt19937_64 rng(seed);
  std::optional<ModelConfig> best_config;
  EvalReport best_report;
  std::size_t trained = 0;
  double slowest = 0.0;
  const auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - started).count(); };

  for (std::size_t draws = 0; draws < 100000; ++draws) {
    if (count_mode && trained >= budget.candidates) break;
    if (!count_mode && trained > 0 && elapsed() + 2.0 * slowest > budget.seconds) break;
    const ModelConfig candidate = draws == 0 ? fallback : sample_config(rng);
    if (serialized_size(candidate, label_index) > max_model_bytes) continue;
    const auto t0 = clock::now();
    EvalReport report;
    try {
      const auto model = train(split.train, candidate, label_index);
      report = evaluate(model, validation, seed);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingleClassCorpus) throw;
      const auto model = train(examples, candidate, label_index);
      report = evaluate(model, examples, seed);
    }
    ++trained;
    slowest = std::max(slowest, std::chrono::duration<double>(clock::now() - t0).count());
    if (!best_config || report.micro_f1 > best_report.micro_f1) {
      best_config = candidate;
      best_report = report;
    }
  }
  auto model = train(examples, *best_config, label_index);
  return {*best_config, std::move(model), best_report, trained};
}

AutotuneResult autotune(const FamilySnapshot& view, const AutotuneBudget& budget, std::size_t max_model_bytes,
                        std::uint64_t seed) {
  const auto examples = examples_from(view);
  return autotune(examples, budget, max_model_bytes, seed,
                  std::vector<std::string>(view.label_set.begin(), view.label_set.end()));
}

}  // namespace dialingle
