#include "dialingle/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#include "dialingle/error.hpp"
#include "dialingle/text.hpp"

namespace dialingle {

struct GameEngine::SessionSlot {
  std::mutex mu;
  Session session;
  SelectionState selection;
};

struct GameEngine::FamilyModel {
  std::shared_ptr<const TrainedModel> model;
  std::uint64_t version = 0;
  std::shared_ptr<const TierTable> tiers;
  std::size_t accepted_since_train = 0;
  std::set<std::string> trained_label_set;
  std::mutex retrain_mu;
  std::atomic<bool> running{false};
};

namespace {

std::string random_token() {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::random_device rd;
  std::uint64_t hi = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  std::uint64_t lo = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  std::string out;
  // 22 base64url digits carry 132 bits; the top 4 are zero.
  for (int i = 0; i < 22; ++i) {
    out.push_back(kAlphabet[lo & 63]);
    lo = (lo >> 6) | ((hi & 63) << 58);
    hi >>= 6;
  }
  return out;
}

Tier step_up(Tier t) { return t == Tier::Easy ? Tier::Normal : Tier::Hard; }

std::vector<std::string> tokens_of(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& w : split_words(text)) {
    auto word = case_fold(strip_punctuation(w));
    if (!word.empty()) out.push_back(std::move(word));
  }
  return out;
}

PredictionDistribution uniform_over(const std::set<std::string>& labels) {
  PredictionDistribution d;
  d.labels.assign(labels.begin(), labels.end());
  d.probs.assign(d.labels.size(), labels.empty() ? 0.0 : 1.0 / static_cast<double>(labels.size()));
  return d;
}

}  // namespace

std::string_view to_string(SessionPath path) { return path == SessionPath::Quiz ? "QUIZ" : "MATCH"; }

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Choice: return "CHOICE";
    case Stage::Quiz: return "QUIZ";
    case Stage::Review: return "REVIEW";
    case Stage::Match: return "MATCH";
    case Stage::Done: return "DONE";
  }
  return "DONE";
}

bool MatchRound::complete() const {
  return std::all_of(items.begin(), items.end(), [](const MatchItem& i) { return i.score.has_value(); });
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  const std::size_t uni = a.size() + b.size() - common;
  return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

GameEngine::GameEngine(CorpusStore& store, const Clock& clock, EngineConfig config)
    : store_(store), clock_(clock), config_(std::move(config)) {
  if (!config_.session_id_generator) config_.session_id_generator = random_token;
  if (!config_.model_dir.empty()) std::filesystem::create_directories(config_.model_dir);
}

GameEngine::~GameEngine() = default;

GameEngine::FamilyModel& GameEngine::family_model(const std::string& family_id) const {
  std::lock_guard lock(models_mu_);
  auto& slot = models_[family_id];
  if (!slot) slot = std::make_unique<FamilyModel>();
  return *slot;
}

std::shared_ptr<GameEngine::SessionSlot> GameEngine::slot(const std::string& session_id) {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) fail(ErrorCode::UnknownSession, "unknown session '" + session_id + "'");
  return it->second;
}

Session GameEngine::start_session(const std::string& family_id, bool familiar) {
  if (!store_.has_family(family_id)) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  expire_idle_sessions();
  auto s = std::make_shared<SessionSlot>();
  std::uint64_t ordinal = 0;
  {
    std::lock_guard lock(sessions_mu_);
    ordinal = ++session_counter_;
    do {
      s->session.session_id = config_.session_id_generator();
    } while (sessions_.count(s->session.session_id));
  }
  s->session.family_id = family_id;
  s->session.path = familiar ? SessionPath::Quiz : SessionPath::Match;
  s->session.stage = familiar ? Stage::Quiz : Stage::Match;
  s->session.level = Tier::Easy;
  s->session.last_active = clock_.now();
  s->selection.rng.seed(config_.seed ^ (ordinal * 0x9E3779B97F4A7C15ull));
  store_.open_session(s->session.session_id, family_id);
  std::lock_guard lock(sessions_mu_);
  sessions_[s->session.session_id] = s;
  return s->session;
}

Session GameEngine::session(const std::string& session_id) {
  auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  return s->session;
}

void GameEngine::end_session(const std::string& session_id) {
  auto s = slot(session_id);
  {
    std::lock_guard lock(s->mu);
    s->session.stage = Stage::Done;
  }
  std::lock_guard lock(sessions_mu_);
  sessions_.erase(session_id);
}

std::size_t GameEngine::expire_idle_sessions() {
  const Timestamp now = clock_.now();
  std::lock_guard lock(sessions_mu_);
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock slot_lock(it->second->mu, std::try_to_lock);
    if (slot_lock.owns_lock() && now - it->second->session.last_active > config_.session_idle_timeout_ms) {
      slot_lock.unlock();
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

// Locks the session, expiring it if it has been idle too long.
#define DIALINGLE_LOCK_SESSION(var, id)                                                      \
  auto var##_slot = slot(id);                                                                \
  std::unique_lock var##_lock(var##_slot->mu);                                               \
  Session& var = var##_slot->session;                                                        \
  do {                                                                                       \
    const Timestamp now_ = clock_.now();                                                     \
    if (now_ - var.last_active > config_.session_idle_timeout_ms) {                          \
      var##_lock.unlock();                                                                   \
      {                                                                                      \
        std::lock_guard expire_lock(sessions_mu_);                                           \
        sessions_.erase(id);                                                                 \
      }                                                                                      \
      fail(ErrorCode::UnknownSession, "session '" + std::string(id) + "' expired");          \
    }                                                                                        \
    var.last_active = now_;                                                                  \
  } while (0)

QuizPrompt GameEngine::begin_quiz_turn(const std::string& session_id) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Quiz || s.stage != Stage::Quiz)
    fail(ErrorCode::WrongStage, "quiz turns need a QUIZ session in the QUIZ stage");
  if (s.turn) fail(ErrorCode::TurnAlreadyOpen, "a quiz turn is already open");

  const auto table = tiers(s.family_id);
  if (!table || table->empty()) fail(ErrorCode::NoGroups, "family " + s.family_id + " has no groups");
  const auto group_id = next_sentence(s_slot->selection, s.level, *table);
  s.seen_groups.insert(group_id);

  const auto view = store_.snapshot(s.family_id);
  const auto* group = view->find_group(group_id);
  if (!group) fail(ErrorCode::Internal, "tier table references unknown group " + group_id);
  const auto* record = table->find(group_id);

  QuizTurn turn;
  turn.group_id = group_id;
  turn.standard_text = group->standard_text;
  turn.tier_at_issue = record ? record->tier : s.level;
  s.turn = turn;

  QuizPrompt prompt{group_id, group->standard_text, turn.tier_at_issue, {}};
  const auto counts = word_counts(s.family_id);
  for (std::size_t i = 0; i < counts.size() && i < config_.suggestion_seed_words; ++i)
    prompt.suggestion_seed_words.push_back(counts[i].first);
  return prompt;
}

SubmitResult GameEngine::submit_rewrite(const std::string& session_id, const std::string& text) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Quiz) fail(ErrorCode::WrongStage, "rewrites belong to the QUIZ path");
  if (s.stage == Stage::Review) fail(ErrorCode::WrongStage, "the rewrite was already submitted");
  if (!s.turn) fail(ErrorCode::NoOpenTurn, "no quiz turn is open");
  const auto normalized = normalize_text(text);
  if (normalized.empty()) fail(ErrorCode::EmptyText, "rewrite text is empty");

  SubmitResult result;
  result.prediction = predict(s.family_id, normalized);
  std::vector<std::size_t> order(result.prediction.labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto& probs = result.prediction.probs;
  const auto& labels = result.prediction.labels;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs[a] != probs[b]) return probs[a] > probs[b];
    return labels[a] < labels[b];
  });
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (rank == 0 || probs[order[rank]] >= config_.tau) result.predicted_labels.push_back(labels[order[rank]]);
  }

  const auto view = store_.snapshot(s.family_id);
  for (std::size_t rank = 0; rank < result.predicted_labels.size(); ++rank) {
    const auto& id = result.predicted_labels[rank];
    RegionPayload payload;
    payload.label_id = id;
    payload.probability = probs[order[rank]];
    if (const auto* label = view->find_label(id)) {
      payload.name = label->name;
      payload.rings = region_boundary(label->region.cells, view->family);
    }
    result.regions.push_back(std::move(payload));
  }

  s.turn->submitted_text = normalized;
  s.turn->prediction = result.prediction;
  s.turn->predicted_labels = result.predicted_labels;
  s.stage = Stage::Review;
  return result;
}

ConfirmResult GameEngine::review_confirm(const std::string& session_id) {
  ConfirmResult result;
  std::string family_id;
  {
    DIALINGLE_LOCK_SESSION(s, session_id);
    if (s.stage != Stage::Review || !s.turn || !s.turn->submitted_text)
      fail(ErrorCode::WrongStage, "confirm is only valid in the REVIEW stage");
    const auto recorded = store_.record_event({session_id,
                                               FeedbackKind::Confirm,
                                               {{"group_id", s.turn->group_id},
                                                {"text", *s.turn->submitted_text},
                                                {"labels", s.turn->predicted_labels}}});
    result.event_id = recorded.event_id;
    result.variant_added = recorded.payload.value("added", false);
    s.level = step_up(s.level);
    s.stage = Stage::Quiz;
    s.turn.reset();
    result.new_level = s.level;
    family_id = s.family_id;
  }
  after_contribution(family_id);
  return result;
}

CorrectResult GameEngine::review_correct(const std::string& session_id, const Correction& correction) {
  CorrectResult result;
  std::string family_id;
  {
    DIALINGLE_LOCK_SESSION(s, session_id);
    if (s.stage != Stage::Review || !s.turn || !s.turn->submitted_text)
      fail(ErrorCode::WrongStage, "corrections are only valid in the REVIEW stage");
    if (correction.label.has_value() == correction.new_dialect.has_value())
      fail(ErrorCode::BadRequest, "a correction names exactly one existing label or one new dialect");

    const auto view = store_.snapshot(s.family_id);
    if (correction.label && !view->find_label(*correction.label))
      fail(ErrorCode::UnknownLabel, "unknown label '" + *correction.label + "'");
    if (correction.geo_edit)  // validate before anything is recorded
      edit_cells({}, correction.geo_edit->add, correction.geo_edit->remove, view->family);

    RecordedEvent recorded;
    if (correction.new_dialect) {
      recorded = store_.record_event({session_id,
                                      FeedbackKind::NewDialect,
                                      {{"group_id", s.turn->group_id},
                                       {"text", *s.turn->submitted_text},
                                       {"name", *correction.new_dialect}}});
      result.label_id = recorded.payload.at("label_id").get<std::string>();
    } else {
      recorded = store_.record_event(
          {session_id,
           FeedbackKind::Relabel,
           {{"group_id", s.turn->group_id}, {"text", *s.turn->submitted_text}, {"label", *correction.label}}});
      result.label_id = *correction.label;
    }
    result.variant_added = recorded.payload.value("added", false);
    if (correction.geo_edit)
      result.region = store_.apply_geo_edit(session_id, result.label_id, correction.geo_edit->add,
                                            correction.geo_edit->remove);
    s.stage = Stage::Quiz;
    s.turn.reset();
    family_id = s.family_id;
  }
  after_contribution(family_id);
  return result;
}

Session GameEngine::set_difficulty(const std::string& session_id, Tier tier) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Quiz || s.stage != Stage::Quiz)
    fail(ErrorCode::WrongStage, "difficulty can only change in the QUIZ stage");
  if (s.turn) fail(ErrorCode::TurnAlreadyOpen, "finish the open turn before changing difficulty");
  s.level = tier;
  return s;
}

std::vector<std::pair<std::string, std::size_t>> GameEngine::word_counts(const std::string& family_id) {
  const auto view = store_.snapshot(family_id);
  std::lock_guard lock(words_mu_);
  auto& cached = word_cache_[family_id];
  if (cached.first == view) return cached.second;
  std::map<std::string, std::size_t> counts;
  for (const auto& g : view->groups) {
    for (const auto& v : g->variants) {
      for (auto& w : tokens_of(v.text)) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  cached = {view, ranked};
  return ranked;
}

std::vector<std::string> GameEngine::suggest_words(const std::string& family_id, const std::string& prefix) {
  if (!store_.has_family(family_id)) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  const auto folded = case_fold(normalize_text(prefix));
  if (folded.empty()) fail(ErrorCode::EmptyText, "prefix is empty");
  std::vector<std::string> out;
  for (const auto& [word, count] : word_counts(family_id)) {
    if (out.size() >= config_.suggestion_limit) break;
    if (starts_with(word, folded)) out.push_back(word);
  }
  return out;
}

std::vector<MatchItemView> GameEngine::begin_match_round(const std::string& session_id) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Match || s.stage != Stage::Match)
    fail(ErrorCode::WrongStage, "match rounds need a MATCH session");
  if (s.round && !s.round->complete()) fail(ErrorCode::TurnAlreadyOpen, "the current match round is unfinished");

  const auto view = store_.snapshot(s.family_id);
  std::map<std::string, std::set<std::string>> label_divisions;
  for (const auto& [id, label] : view->labels)
    label_divisions[id] = divisions_covering(label.region.cells, view->family, view->divisions);

  std::vector<MatchItem> eligible;
  for (const auto& g : view->groups) {
    for (const auto& v : g->variants) {
      std::set<std::string> reference;
      for (const auto& l : v.labels) reference.insert(label_divisions[l].begin(), label_divisions[l].end());
      if (!reference.empty()) eligible.push_back({v.variant_id, g->group_id, v.text, reference, {}, {}});
    }
  }
  auto& rng = s_slot->selection.rng;
  for (std::size_t i = eligible.size(); i > 1; --i) std::swap(eligible[i - 1], eligible[rng() % i]);

  MatchRound round;
  std::set<std::string> groups_used;
  for (auto& item : eligible) {
    if (round.items.size() == 3) break;
    if (groups_used.insert(item.group_id).second) round.items.push_back(std::move(item));
  }
  if (round.items.size() < 3)
    fail(ErrorCode::InsufficientData, "need three variants from distinct groups with mapped divisions");
  s.round = round;

  std::vector<MatchItemView> views;
  for (std::size_t i = 0; i < round.items.size(); ++i)
    views.push_back({i, round.items[i].variant_id, round.items[i].text, false});
  return views;
}

MatchAnswer GameEngine::submit_match_answer(const std::string& session_id, std::size_t item_index,
                                            const std::vector<std::string>& division_ids) {
  DivisionQuery query;
  query.ids = division_ids;
  return submit_match_answer(session_id, item_index, query);
}

MatchAnswer GameEngine::submit_match_answer(const std::string& session_id, std::size_t item_index,
                                            const DivisionQuery& query) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Match || s.stage != Stage::Match) fail(ErrorCode::WrongStage, "not a MATCH session");
  if (!s.round) fail(ErrorCode::NoOpenTurn, "no match round is open");
  if (item_index >= s.round->items.size()) fail(ErrorCode::BadRequest, "match item index out of range");
  auto& item = s.round->items[item_index];
  if (item.score) fail(ErrorCode::AlreadyAnswered, "match item already answered");

  const auto view = store_.snapshot(s.family_id);
  const auto answer = divisions_hit(query, view->divisions);
  item.answer = answer;
  item.score = jaccard(answer, item.reference_divisions);
  if (s.round->complete()) ++s.rounds_played;
  return {item.reference_divisions, *item.score};
}

std::uint64_t GameEngine::record_match_correction(const std::string& session_id, std::size_t item_index,
                                                  const std::vector<std::string>& division_ids) {
  DIALINGLE_LOCK_SESSION(s, session_id);
  if (s.path != SessionPath::Match) fail(ErrorCode::WrongStage, "not a MATCH session");
  if (!s.round || item_index >= s.round->items.size()) fail(ErrorCode::BadRequest, "no such match item");
  const auto& item = s.round->items[item_index];
  if (!item.score) fail(ErrorCode::WrongStage, "answer the item before correcting its mapping");
  return store_
      .record_event({session_id,
                     FeedbackKind::MatchCorrection,
                     {{"variant_id", item.variant_id}, {"divisions", division_ids}}})
      .event_id;
}

#undef DIALINGLE_LOCK_SESSION

void GameEngine::after_contribution(const std::string& family_id) {
  auto& fm = family_model(family_id);
  {
    std::lock_guard lock(models_mu_);
    ++fm.accepted_since_train;
  }
  if (!retrain_due(family_id)) return;
  switch (config_.retrain_mode) {
    case RetrainMode::Inline:
      try {
        retrain(family_id);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingleClassCorpus && e.code() != ErrorCode::EmptyTrainingSet &&
            e.code() != ErrorCode::RetrainInProgress)
          throw;
      }
      break;
    case RetrainMode::Deferred: {
      std::function<void(const std::string&)> hook;
      {
        std::lock_guard lock(models_mu_);
        hook = retrain_hook_;
      }
      if (hook) hook(family_id);
      break;
    }
    case RetrainMode::Manual:
      break;
  }
}

RetrainOutcome GameEngine::retrain(const std::string& family_id) {
  if (!store_.has_family(family_id)) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  auto& fm = family_model(family_id);
  std::unique_lock guard(fm.retrain_mu, std::try_to_lock);
  if (!guard.owns_lock()) fail(ErrorCode::RetrainInProgress, "a retrain is already running for " + family_id);
  fm.running = true;
  struct Reset {
    std::atomic<bool>& flag;
    ~Reset() { flag = false; }
  } reset{fm.running};

  const auto view = store_.snapshot(family_id);
  const std::vector<std::string> label_index(view->label_set.begin(), view->label_set.end());
  const auto examples = examples_from(*view);
  const auto split = split_train_test(examples, 0.8, config_.split_seed);

  ModelConfig chosen = config_.model_config;
  if (config_.autotune) {
    chosen = autotune(split.train, *config_.autotune, config_.max_model_bytes, config_.split_seed, label_index).config;
  }
  const auto held_out = train(split.train, chosen, label_index);
  RetrainOutcome outcome;
  outcome.report = evaluate(held_out, split.test.empty() ? split.train : split.test, config_.split_seed);
  auto final_model = std::make_shared<const TrainedModel>(train(examples, chosen, label_index));
  outcome.config = chosen;
  outcome.byte_size = final_model->byte_size();

  std::uint64_t version = 0;
  {
    std::lock_guard lock(models_mu_);
    version = fm.version + 1;
  }
  auto table = std::make_shared<const TierTable>(rescore_all(*view, *final_model, version), version);
  if (!config_.model_dir.empty()) final_model->save(config_.model_dir / (family_id + ".dlg"));
  {
    std::lock_guard lock(models_mu_);
    fm.model = final_model;
    fm.version = version;
    fm.tiers = table;
    fm.accepted_since_train = 0;
    fm.trained_label_set = view->label_set;
  }
  outcome.model_version = version;
  return outcome;
}

std::uint64_t GameEngine::install_model(const std::string& family_id, std::shared_ptr<const TrainedModel> model) {
  const auto view = store_.snapshot(family_id);
  auto& fm = family_model(family_id);
  std::uint64_t version = 0;
  {
    std::lock_guard lock(models_mu_);
    version = fm.version + 1;
  }
  auto table = std::make_shared<const TierTable>(rescore_all(*view, *model, version), version);
  std::lock_guard lock(models_mu_);
  fm.model = std::move(model);
  fm.version = version;
  fm.tiers = std::move(table);
  fm.accepted_since_train = 0;
  fm.trained_label_set = view->label_set;
  return version;
}

std::shared_ptr<const TrainedModel> GameEngine::model(const std::string& family_id) const {
  auto& fm = family_model(family_id);
  std::lock_guard lock(models_mu_);
  return fm.model;
}

std::uint64_t GameEngine::model_version(const std::string& family_id) const {
  auto& fm = family_model(family_id);
  std::lock_guard lock(models_mu_);
  return fm.version;
}

std::shared_ptr<const TierTable> GameEngine::tiers(const std::string& family_id) {
  auto& fm = family_model(family_id);
  {
    std::lock_guard lock(models_mu_);
    if (fm.tiers) return fm.tiers;
  }
  // No model yet: every prediction is uniform, so groups rank by missing labels.
  const auto view = store_.snapshot(family_id);
  const auto uniform = uniform_over(view->label_set);
  auto table = std::make_shared<const TierTable>(
      rescore_all(*view, [&](const std::string&) { return uniform; }, 0), 0);
  std::lock_guard lock(models_mu_);
  if (!fm.tiers) fm.tiers = table;
  return fm.tiers;
}

bool GameEngine::retrain_due(const std::string& family_id) const {
  const auto view = store_.snapshot(family_id);
  auto& fm = family_model(family_id);
  std::lock_guard lock(models_mu_);
  return should_retrain(fm.accepted_since_train, config_.retrain_policy, view->label_set != fm.trained_label_set);
}

bool GameEngine::retrain_running(const std::string& family_id) const { return family_model(family_id).running; }

void GameEngine::set_retrain_hook(std::function<void(const std::string&)> hook) {
  std::lock_guard lock(models_mu_);
  retrain_hook_ = std::move(hook);
}

PredictionDistribution GameEngine::predict(const std::string& family_id, const std::string& text) const {
  if (auto m = model(family_id)) return m->predict(text);
  return uniform_over(store_.snapshot(family_id)->label_set);
}

}  // namespace dialingle
