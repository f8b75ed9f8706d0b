#include "dialingle/selection.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dialingle/error.hpp"

namespace dialingle {
namespace {

std::size_t tier_slot(Tier t) { return static_cast<std::size_t>(t); }

}  // namespace

std::string_view to_string(Tier tier) {
  switch (tier) {
    case Tier::Easy: return "EASY";
    case Tier::Normal: return "NORMAL";
    case Tier::Hard: return "HARD";
  }
  return "NORMAL";
}

Tier parse_tier(std::string_view text) {
  if (text == "EASY") return Tier::Easy;
  if (text == "NORMAL") return Tier::Normal;
  if (text == "HARD") return Tier::Hard;
  fail(ErrorCode::BadRequest, "tier must be EASY, NORMAL or HARD");
}

Predictor predictor_for(const TrainedModel& model) {
  return [&model](const std::string& text) { return model.predict(text); };
}

double sentence_entropy(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) sum += p;
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorCode::NotNormalized, "distribution sums to " + std::to_string(sum));
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

double sentence_entropy(const PredictionDistribution& dist) { return sentence_entropy(dist.probs); }

ClassEntropy class_entropy(const ParallelGroup& group, const std::string& label, const Predictor& predict,
                           const std::set<std::string>& label_set) {
  if (!label_set.count(label)) fail(ErrorCode::UnknownLabel, "label '" + label + "' is not in K");
  const auto members = group.variants_with_label(label);
  if (members.empty())
    return {label, std::log(static_cast<double>(label_set.size())), ClassEntropy::Basis::MaxFallback};
  double total = 0.0;
  for (const auto* v : members) total += sentence_entropy(predict(v->text));
  return {label, total / static_cast<double>(members.size()), ClassEntropy::Basis::Observed};
}

ClassEntropy class_entropy(const ParallelGroup& group, const std::string& label, const TrainedModel& model,
                           const std::set<std::string>& label_set) {
  return class_entropy(group, label, predictor_for(model), label_set);
}

double difficulty_score(const ParallelGroup& group, const Predictor& predict, const std::set<std::string>& label_set) {
  if (label_set.empty()) return 0.0;
  std::vector<double> entropy(group.variants.size());
  for (std::size_t i = 0; i < group.variants.size(); ++i) entropy[i] = sentence_entropy(predict(group.variants[i].text));
  const double h_max = std::log(static_cast<double>(label_set.size()));
  double score = 0.0;
  for (const auto& k : label_set) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < group.variants.size(); ++i) {
      if (group.variants[i].has_label(k)) {
        total += entropy[i];
        ++n;
      }
    }
    score += n == 0 ? h_max : total / static_cast<double>(n);
  }
  return score;
}

double difficulty_score(const ParallelGroup& group, const TrainedModel& model, const std::set<std::string>& label_set) {
  return difficulty_score(group, predictor_for(model), label_set);
}

std::vector<DifficultyRecord> assign_tiers(std::vector<DifficultyRecord> records) {
  if (records.empty()) fail(ErrorCode::EmptyInput, "no records to tier");
  std::sort(records.begin(), records.end(), [](const DifficultyRecord& a, const DifficultyRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.group_id < b.group_id;
  });
  const std::size_t m = records.size();
  const std::size_t hard = (m + 4) / 5;  // ceil(0.2 m)
  const std::size_t easy = m / 5;        // floor(0.2 m)
  for (std::size_t i = 0; i < m; ++i) {
    records[i].tier = i < hard ? Tier::Hard : (i >= m - easy ? Tier::Easy : Tier::Normal);
  }
  return records;
}

TierTable::TierTable(std::vector<DifficultyRecord> tiered, std::uint64_t model_version)
    : records_(std::move(tiered)), model_version_(model_version) {
  for (const auto& r : records_) by_tier_[tier_slot(r.tier)].push_back(r.group_id);
}

const std::vector<std::string>& TierTable::groups_in(Tier tier) const { return by_tier_[tier_slot(tier)]; }

const DifficultyRecord* TierTable::find(std::string_view group_id) const {
  for (const auto& r : records_) {
    if (r.group_id == group_id) return &r;
  }
  return nullptr;
}

std::string next_sentence(SelectionState& state, Tier requested, const TierTable& table) {
  if (table.empty()) fail(ErrorCode::NoGroups, "no groups to offer");
  std::vector<Tier> order;
  switch (requested) {
    case Tier::Easy: order = {Tier::Easy, Tier::Normal, Tier::Hard}; break;
    case Tier::Normal: order = {Tier::Normal, Tier::Easy, Tier::Hard}; break;
    case Tier::Hard: order = {Tier::Hard, Tier::Normal, Tier::Easy}; break;
  }
  auto pick = [&](const std::vector<std::string>& pool) {
    const auto& chosen = pool[static_cast<std::size_t>(state.rng() % pool.size())];
    state.seen.insert(chosen);
    return chosen;
  };
  for (Tier t : order) {
    std::vector<std::string> unseen;
    for (const auto& g : table.groups_in(t)) {
      if (!state.seen.count(g)) unseen.push_back(g);
    }
    if (!unseen.empty()) return pick(unseen);
  }
  for (Tier t : order) {
    if (!table.groups_in(t).empty()) return pick(table.groups_in(t));
  }
  fail(ErrorCode::NoGroups, "no groups to offer");
}

std::vector<DifficultyRecord> rescore_all(const FamilySnapshot& view, const Predictor& predict,
                                          std::uint64_t model_version) {
  if (view.groups.empty()) return {};
  // Each distinct text is predicted once per pass.
  std::map<std::string, PredictionDistribution> cache;
  Predictor cached = [&](const std::string& text) -> PredictionDistribution {
    auto it = cache.find(text);
    if (it == cache.end()) it = cache.emplace(text, predict(text)).first;
    return it->second;
  };
  std::vector<DifficultyRecord> records;
  records.reserve(view.groups.size());
  for (const auto& g : view.groups)
    records.push_back({g->group_id, difficulty_score(*g, cached, view.label_set), Tier::Normal, model_version});
  return assign_tiers(std::move(records));
}

std::vector<DifficultyRecord> rescore_all(const FamilySnapshot& view, const TrainedModel& model,
                                          std::uint64_t model_version) {
  const std::set<std::string> model_labels(model.label_index().begin(), model.label_index().end());
  if (model_labels != view.label_set || model_labels.size() != model.label_index().size())
    fail(ErrorCode::ModelLabelMismatch, "model label index does not match the family's label set");
  return rescore_all(view, predictor_for(model), model_version);
}

bool should_retrain(std::size_t accepted_since_last_train, const RetrainPolicy& policy, bool label_set_grew) {
  return label_set_grew || accepted_since_last_train >= std::max<std::size_t>(policy.threshold, 1);
}

}  // namespace dialingle
