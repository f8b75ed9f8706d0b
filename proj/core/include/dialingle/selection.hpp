#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dialingle/classifier.hpp"
#include "dialingle/corpus.hpp"

namespace dialingle {

enum class Tier { Easy, Normal, Hard };

std::string_view to_string(Tier tier);
Tier parse_tier(std::string_view text);

/// Per-class entropy of a group, in nats.
struct ClassEntropy {
  enum class Basis { Observed, MaxFallback };

  std::string label_id;
  double value = 0.0;
  Basis basis = Basis::Observed;
};

struct DifficultyRecord {
  std::string group_id;
  /// Difficulty in nats: the sum of class entropies over K.
  double score = 0.0;
  Tier tier = Tier::Normal;
  std::uint64_t scored_with = 0;
};

/// Anything that maps a sentence to a distribution over K.
using Predictor = std::function<PredictionDistribution(const std::string& text)>;

Predictor predictor_for(const TrainedModel& model);

/// −Σ p ln p with 0·ln 0 = 0. Throws NotNormalized if |Σp − 1| > 1e-6.
double sentence_entropy(std::span<const double> probs);
double sentence_entropy(const PredictionDistribution& dist);

/// Mean prediction entropy over the group's variants carrying `label`, or
/// ln|K| when no variant carries it.
ClassEntropy class_entropy(const ParallelGroup& group, const std::string& label, const Predictor& predict,
                           const std::set<std::string>& label_set);
ClassEntropy class_entropy(const ParallelGroup& group, const std::string& label, const TrainedModel& model,
                           const std::set<std::string>& label_set);

/// Sum of class entropies over every label in K. Each variant is predicted once.
double difficulty_score(const ParallelGroup& group, const Predictor& predict, const std::set<std::string>& label_set);
double difficulty_score(const ParallelGroup& group, const TrainedModel& model, const std::set<std::string>& label_set);

/// Sorts by (score desc, group_id asc): the first ceil(0.2M) become HARD, the
/// last floor(0.2M) EASY, the rest NORMAL. Returns the records in that order.
std::vector<DifficultyRecord> assign_tiers(std::vector<DifficultyRecord> records);

/// Immutable result of a scoring pass.
class TierTable {
 public:
  TierTable() = default;
  TierTable(std::vector<DifficultyRecord> tiered, std::uint64_t model_version);

  const std::vector<DifficultyRecord>& records() const { return records_; }
  const std::vector<std::string>& groups_in(Tier tier) const;
  const DifficultyRecord* find(std::string_view group_id) const;
  std::uint64_t model_version() const { return model_version_; }
  bool empty() const { return records_.empty(); }

 private:
  std::vector<DifficultyRecord> records_;
  std::vector<std::string> by_tier_[3];
  std::uint64_t model_version_ = 0;
};

/// Per-session sampler state.
struct SelectionState {
  std::set<std::string> seen;
  std::mt19937_64 rng;
};

/// Uniform pick among unseen groups of the requested tier, falling back to
/// the nearest easier tier, then the remaining one; when every group has
/// been seen, repeats are allowed. The pick is marked seen.
std::string next_sentence(SelectionState& state, Tier requested, const TierTable& table);

/// Scores every group with the model and tiers them.
std::vector<DifficultyRecord> rescore_all(const FamilySnapshot& view, const TrainedModel& model,
                                          std::uint64_t model_version);

/// Same, against any predictor (used when no model exists yet).
std::vector<DifficultyRecord> rescore_all(const FamilySnapshot& view, const Predictor& predict,
                                          std::uint64_t model_version);

struct RetrainPolicy {
  std::size_t threshold = 50;
};

bool should_retrain(std::size_t accepted_since_last_train, const RetrainPolicy& policy, bool label_set_grew);

}  // namespace dialingle
