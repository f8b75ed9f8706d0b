#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dialingle/classifier.hpp"
#include "dialingle/clock.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/selection.hpp"

namespace dialingle {

enum class SessionPath { Quiz, Match };
enum class Stage { Choice, Quiz, Review, Match, Done };

std::string_view to_string(SessionPath path);
std::string_view to_string(Stage stage);

struct QuizTurn {
  std::string group_id;
  std::string standard_text;
  Tier tier_at_issue = Tier::Easy;
  std::optional<std::string> submitted_text;
  std::optional<PredictionDistribution> prediction;
  std::vector<std::string> predicted_labels;
};

struct MatchItem {
  std::string variant_id;
  std::string group_id;
  std::string text;
  std::set<std::string> reference_divisions;
  std::optional<std::set<std::string>> answer;
  std::optional<double> score;
};

struct MatchRound {
  std::vector<MatchItem> items;

  bool complete() const;
};

struct Session {
  std::string session_id;
  std::string family_id;
  SessionPath path = SessionPath::Quiz;
  Stage stage = Stage::Choice;
  Tier level = Tier::Easy;
  std::set<std::string> seen_groups;
  std::optional<QuizTurn> turn;
  std::optional<MatchRound> round;
  int rounds_played = 0;
  Timestamp last_active = 0;
};

enum class RetrainMode {
  /// Retrain synchronously inside the confirm/correct call that made it due.
  Inline,
  /// Hand the family to the retrain hook (the service runs it in the background).
  Deferred,
  /// Only explicit retrain() calls.
  Manual,
};

struct EngineConfig {
  /// Labels with probability >= tau are shown alongside the top-1 label.
  double tau = 0.3;
  RetrainPolicy retrain_policy;
  RetrainMode retrain_mode = RetrainMode::Deferred;
  Timestamp session_idle_timeout_ms = 30 * 60 * 1000;
  std::uint64_t seed = 0;
  std::size_t suggestion_seed_words = 20;
  std::size_t suggestion_limit = 10;
  /// Used by retrain() unless autotune is set.
  ModelConfig model_config;
  std::optional<AutotuneBudget> autotune;
  std::size_t max_model_bytes = 2 * 1024 * 1024;
  std::uint64_t split_seed = 7;
  /// Where retrained models are written; empty disables persistence.
  std::filesystem::path model_dir;
  /// Session token generator; defaults to 128-bit random URL-safe tokens.
  std::function<std::string()> session_id_generator;
};

struct QuizPrompt {
  std::string group_id;
  std::string standard_text;
  Tier tier = Tier::Easy;
  std::vector<std::string> suggestion_seed_words;
};

struct RegionPayload {
  std::string label_id;
  std::string name;
  double probability = 0.0;
  std::vector<Ring> rings;
};

struct SubmitResult {
  PredictionDistribution prediction;
  std::vector<std::string> predicted_labels;
  std::vector<RegionPayload> regions;
};

struct ConfirmResult {
  Tier new_level = Tier::Easy;
  bool variant_added = false;
  std::uint64_t event_id = 0;
};

struct GeoEdit {
  CellSet add;
  CellSet remove;
};

/// Either an existing label or a new dialect name, plus an optional region edit.
struct Correction {
  std::optional<std::string> label;
  std::optional<std::string> new_dialect;
  std::optional<GeoEdit> geo_edit;
};

struct CorrectResult {
  std::string label_id;
  bool variant_added = false;
  std::optional<HexRegion> region;
};

struct MatchItemView {
  std::size_t index = 0;
  std::string variant_id;
  std::string text;
  bool answered = false;
};

struct MatchAnswer {
  std::set<std::string> reference_divisions;
  double score = 0.0;
};

struct RetrainOutcome {
  std::uint64_t model_version = 0;
  EvalReport report;
  ModelConfig config;
  std::size_t byte_size = 0;
};

/// Jaccard similarity |a ∩ b| / |a ∪ b|; two empty sets score 1.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

/// Session state machine for the Quiz/Review and Match games. All corpus
/// effects go through the store; models and tier tables are swapped
/// atomically per family.
class GameEngine {
 public:
  GameEngine(CorpusStore& store, const Clock& clock, EngineConfig config = {});
  ~GameEngine();

  GameEngine(const GameEngine&) = delete;
  GameEngine& operator=(const GameEngine&) = delete;

  Session start_session(const std::string& family_id, bool familiar);
  Session session(const std::string& session_id);
  void end_session(const std::string& session_id);
  std::size_t expire_idle_sessions();

  QuizPrompt begin_quiz_turn(const std::string& session_id);
  SubmitResult submit_rewrite(const std::string& session_id, const std::string& text);
  ConfirmResult review_confirm(const std::string& session_id);
  CorrectResult review_correct(const std::string& session_id, const Correction& correction);
  Session set_difficulty(const std::string& session_id, Tier tier);

  std::vector<std::string> suggest_words(const std::string& family_id, const std::string& prefix);

  std::vector<MatchItemView> begin_match_round(const std::string& session_id);
  MatchAnswer submit_match_answer(const std::string& session_id, std::size_t item_index,
                                  const std::vector<std::string>& division_ids);
  MatchAnswer submit_match_answer(const std::string& session_id, std::size_t item_index, const DivisionQuery& query);
  std::uint64_t record_match_correction(const std::string& session_id, std::size_t item_index,
                                        const std::vector<std::string>& division_ids);

  /// Train on the family's current corpus, rescore every group and swap the
  /// new model and tier table in. Throws RetrainInProgress if one is running.
  RetrainOutcome retrain(const std::string& family_id);
  /// Installs an externally trained model and rescores.
  std::uint64_t install_model(const std::string& family_id, std::shared_ptr<const TrainedModel> model);

  std::shared_ptr<const TrainedModel> model(const std::string& family_id) const;
  std::uint64_t model_version(const std::string& family_id) const;
  std::shared_ptr<const TierTable> tiers(const std::string& family_id);
  bool retrain_due(const std::string& family_id) const;
  bool retrain_running(const std::string& family_id) const;
  void set_retrain_hook(std::function<void(const std::string&)> hook);

  /// Current model's prediction, or uniform over K when no model exists.
  PredictionDistribution predict(const std::string& family_id, const std::string& text) const;

  const EngineConfig& config() const { return config_; }
  CorpusStore& store() { return store_; }

 private:
  struct SessionSlot;
  struct FamilyModel;

  std::shared_ptr<SessionSlot> slot(const std::string& session_id);
  FamilyModel& family_model(const std::string& family_id) const;
  void after_contribution(const std::string& family_id);
  std::vector<std::pair<std::string, std::size_t>> word_counts(const std::string& family_id);

  CorpusStore& store_;
  const Clock& clock_;
  EngineConfig config_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  std::uint64_t session_counter_ = 0;

  mutable std::mutex models_mu_;
  mutable std::map<std::string, std::unique_ptr<FamilyModel>> models_;
  std::function<void(const std::string&)> retrain_hook_;

  std::mutex words_mu_;
  std::map<std::string, std::pair<CorpusView, std::vector<std::pair<std::string, std::size_t>>>> word_cache_;
};

}  // namespace dialingle
