// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
//
// usage: dialingle_acceptance <dialingle-cli> <synthetic-data-dir> [filter]

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dialingle/classifier.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/engine.hpp"
#include "dialingle/geo.hpp"
#include "dialingle/selection.hpp"
#include "dialingle/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dialingle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

fs::path g_cli;
fs::path g_data;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << std::fixed << v;
  return ss.str();
}

std::vector<double> random_distribution(std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(k);
  double sum = 0.0;
  for (auto& x : p) {
    // Some exact zeros exercise the 0 ln 0 convention.
    x = rng() % 5 == 0 ? 0.0 : u(rng);
    sum += x;
  }
  if (sum == 0.0) {
    p[0] = 1.0;
    return p;
  }
  for (auto& x : p) x /= sum;
  return p;
}

// Direct summation in long double, skipping zero terms.
double entropy_oracle(const std::vector<double>& p) {
  long double h = 0.0L;
  for (double x : p) {
    if (x > 0.0) h -= static_cast<long double>(x) * std::log(static_cast<long double>(x));
  }
  return static_cast<double>(h);
}

PredictionDistribution as_dist(const std::vector<std::string>& labels, std::vector<double> p) {
  return {labels, std::move(p)};
}

// ---- entropy ---------------------------------------------------------------

Outcome check_entropy() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_distribution(2 + rng() % 7, rng);
    worst = std::max(worst, std::abs(sentence_entropy(p) - entropy_oracle(p)));
  }
  bool edge_ok = true;
  for (std::size_t k = 2; k <= 8; ++k) {
    std::vector<double> one_hot(k, 0.0);
    one_hot[rng() % k] = 1.0;
    edge_ok &= sentence_entropy(one_hot) == 0.0;
    edge_ok &= std::abs(sentence_entropy(std::vector<double>(k, 1.0 / static_cast<double>(k))) -
                        std::log(static_cast<double>(k))) <= 1e-12;
  }
  const double h8 = sentence_entropy(std::vector<double>(8, 0.125));
  edge_ok &= std::abs(h8 - 2.079442) < 5e-7;
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && edge_ok && secs < 1.0,
          "max |err| " + std::to_string(worst) + ", H(uniform 8) " + fmt(h8, 6) + ", " + fmt(secs, 3) + " s"};
}

// ---- difficulty brute force ------------------------------------------------

struct RandomCorpus {
  std::vector<std::string> labels;
  std::map<std::string, PredictionDistribution> predictions;
  std::unique_ptr<ManualClock> clock = std::make_unique<ManualClock>();
  std::unique_ptr<CorpusStore> store = std::make_unique<CorpusStore>(*clock);
};

RandomCorpus random_corpus(std::mt19937_64& rng) {
  RandomCorpus rc;
  const std::size_t nk = 1 + rng() % 4;
  Registry reg;
  reg.family.family_id = "rand";
  reg.family.display_name = "rand";
  reg.family.bounding_box = {0, 0, 1, 1};
  reg.family.hex_resolution = 0.1;
  for (std::size_t k = 0; k < nk; ++k) {
    rc.labels.push_back("k" + std::to_string(k));
    DialectLabel l;
    l.label_id = rc.labels.back();
    l.name = "Label " + std::to_string(k);
    l.affiliation = "rand";
    l.region.family_id = "rand";
    reg.labels.push_back(l);
  }
  rc.store->register_family(reg);
  std::stringstream corpus;
  const std::size_t groups = 1 + rng() % 10;
  int text_id = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    auto variants = json::array();
    const std::size_t nv = rng() % 6;
    for (std::size_t v = 0; v < nv; ++v) {
      std::set<std::string> carried = {rc.labels[rng() % nk]};
      if (rng() % 4 == 0) carried.insert(rc.labels[rng() % nk]);
      const std::string text = "text " + std::to_string(text_id++);
      variants.push_back({{"text", text}, {"labels", carried}});
      rc.predictions[text] = as_dist(rc.labels, random_distribution(nk, rng));
    }
    corpus << json{{"group_id", "g" + std::to_string(g)}, {"standard", "s" + std::to_string(g)}, {"variants", variants}}
                  .dump()
           << "\n";
  }
  rc.store->ingest_stream(corpus, "rand");
  return rc;
}

// Standalone transcription: D(s) = Σ_k H(k), H(k) the mean prediction
// entropy of the group's k-variants, or ln|K| if there are none.
double difficulty_oracle(const ParallelGroup& g, const std::vector<std::string>& labels,
                         const std::map<std::string, PredictionDistribution>& predictions) {
  double d = 0.0;
  for (const auto& k : labels) {
    double total = 0.0;
    int n = 0;
    for (const auto& v : g.variants) {
      if (std::find(v.labels.begin(), v.labels.end(), k) == v.labels.end()) continue;
      total += entropy_oracle(predictions.at(v.text).probs);
      ++n;
    }
    d += n > 0 ? total / n : std::log(static_cast<double>(labels.size()));
  }
  return d;
}

Outcome check_difficulty() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(77);
  double worst = 0.0;
  std::size_t groups = 0;
  for (int c = 0; c < 500; ++c) {
    auto rc = random_corpus(rng);
    const auto view = rc.store->snapshot("rand");
    const Predictor predict = [&](const std::string& t) { return rc.predictions.at(t); };
    std::map<std::string, double> scored;
    for (const auto& r : rescore_all(*view, predict, 0)) scored[r.group_id] = r.score;
    for (const auto& g : view->groups) {
      worst = std::max(worst, std::abs(scored.at(g->group_id) - difficulty_oracle(*g, rc.labels, rc.predictions)));
      worst = std::max(worst, std::abs(difficulty_score(*g, predict, view->label_set) - scored.at(g->group_id)));
      ++groups;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 10.0,
          "500 corpora, " + std::to_string(groups) + " groups, max |err| " + std::to_string(worst) + ", " +
              fmt(secs, 2) + " s"};
}

// ---- missing-label fallback ------------------------------------------------

Outcome check_fallback() {
  std::mt19937_64 rng(99);
  int exact = 0, decreased = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t nk = 2 + rng() % 7;
    std::vector<std::string> labels;
    for (std::size_t k = 0; k < nk; ++k) labels.push_back("k" + std::to_string(k));
    const std::set<std::string> k_set(labels.begin(), labels.end());
    std::map<std::string, PredictionDistribution> table;
    ParallelGroup g;
    g.group_id = "g";
    const std::string missing = labels[rng() % nk];
    const std::size_t nv = rng() % 5;
    for (std::size_t v = 0; v < nv; ++v) {
      std::string label = labels[rng() % nk];
      if (label == missing) continue;
      const std::string text = "t" + std::to_string(v);
      g.variants.push_back({"v" + std::to_string(v), text, {label}, Provenance::Seed, 0});
      table[text] = as_dist(labels, random_distribution(nk, rng));
    }
    const Predictor predict = [&](const std::string& t) { return table.at(t); };
    const auto h = class_entropy(g, missing, predict, k_set);
    if (h.value == std::log(static_cast<double>(nk)) && h.basis == ClassEntropy::Basis::MaxFallback) ++exact;

    const double before = difficulty_score(g, predict, k_set);
    // Entropy strictly below ln|K|: any non-uniform distribution.
    std::vector<double> p;
    do {
      p = random_distribution(nk, rng);
    } while (entropy_oracle(p) >= std::log(static_cast<double>(nk)) - 1e-9);
    table["added"] = as_dist(labels, p);
    g.variants.push_back({"added", "added", {missing}, Provenance::User, 0});
    if (difficulty_score(g, predict, k_set) < before) ++decreased;
  }
  return {exact == 200 && decreased == 200,
          "fallback exact " + std::to_string(exact) + "/200, strictly decreasing " + std::to_string(decreased) + "/200"};
}

// ---- tiering ---------------------------------------------------------------

Outcome check_tiering() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::ostringstream detail;
  bool ok = true;
  for (std::size_t m : {1, 2, 5, 10, 100, 1000}) {
    std::vector<DifficultyRecord> records;
    for (std::size_t i = 0; i < m; ++i)
      records.push_back({"g" + std::to_string(i), std::round(u(rng) * 4) / 4, Tier::Normal, 0});  // ties on purpose
    const auto tiered = assign_tiers(records);
    std::map<Tier, std::size_t> counts;
    for (const auto& r : tiered) ++counts[r.tier];
    const std::size_t hard = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(m)));
    const std::size_t easy = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(m)));
    ok &= counts[Tier::Hard] == hard && counts[Tier::Easy] == easy && counts[Tier::Normal] == m - hard - easy;
    for (std::size_t i = 1; i < tiered.size(); ++i) ok &= tiered[i - 1].score >= tiered[i].score;

    // Same records in another order must tier identically.
    auto shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto again = assign_tiers(shuffled);
    for (std::size_t i = 0; i < m; ++i) ok &= again[i].group_id == tiered[i].group_id && again[i].tier == tiered[i].tier;
    detail << "M=" << m << ":" << counts[Tier::Hard] << "/" << counts[Tier::Normal] << "/" << counts[Tier::Easy] << " ";
  }
  return {ok, detail.str() + "(hard/normal/easy)"};
}

// ---- classifier ------------------------------------------------------------

Outcome check_classifier() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = g_data / "alpine3";
  const auto corpus = load_examples(dir / "corpus.jsonl");
  const auto heldout = load_examples(dir / "heldout.jsonl");
  const std::size_t cap = 2'097'152;
  const auto split = split_train_test(corpus, 0.8, 7);
  const auto tuned = autotune(split.train, {30.0, 0}, cap, 7);
  const auto split_report = evaluate(tuned.model, split.test, 7);
  const auto heldout_report = evaluate(tuned.model, heldout, 7);

  const auto model_file = fs::temp_directory_path() / ("dialingle-acceptance-" + std::to_string(::getpid()) + ".dlg");
  tuned.model.save(model_file);
  const auto file_size = fs::file_size(model_file);
  const auto reloaded = TrainedModel::load(model_file);
  fs::remove(model_file);
  const bool same = reloaded.predict(heldout.front().text).probs == tuned.model.predict(heldout.front().text).probs;

  // Gradient check on the trained model's own output layer.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  const std::size_t k = tuned.model.num_labels(), dim = tuned.model.dim();
  std::vector<double> output(tuned.model.output_weights().begin(), tuned.model.output_weights().end());
  std::vector<double> grad(k * dim), probs(k), g2(k * dim), p2(k);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> hidden(dim);
    for (auto& h : hidden) h = u(rng);
    const std::size_t label = rng() % k;
    detail::softmax_loss_output_gradient<double>(hidden, output, k, label, grad, probs);
    // Confident predictions put the loss near 20 while some gradient
    // entries are ~1e-8, so a smaller step drowns in rounding.
    const double eps = 1e-4;
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double saved = output[i];
      output[i] = saved + eps;
      const double up = detail::softmax_loss_output_gradient<double>(hidden, output, k, label, g2, p2);
      output[i] = saved - eps;
      const double down = detail::softmax_loss_output_gradient<double>(hidden, output, k, label, g2, p2);
      output[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      // Entries below 1e-6 are dominated by rounding in the difference quotient.
      worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-6}));
    }
  }
  const bool ok = heldout_report.micro_f1 >= 0.95 && split_report.micro_f1 >= 0.95 && file_size <= cap &&
                  file_size == tuned.model.byte_size() && same && worst <= 1e-4;
  return {ok, "held-out micro-F1 " + fmt(heldout_report.micro_f1) + ", split micro-F1 " + fmt(split_report.micro_f1) +
                  ", " + std::to_string(file_size) + " bytes, " + std::to_string(tuned.candidates_trained) +
                  " candidates, gradient rel err " + std::to_string(worst) + ", " + fmt(seconds_since(t0), 1) + " s"};
}

// ---- end-to-end loop -------------------------------------------------------

Outcome check_loop() {
  const auto t0 = std::chrono::steady_clock::now();
  double initial = 0.0, final_f1 = 0.0;
  bool growth_ok = true;
  std::ostringstream detail;
  for (int seed = 1; seed <= 5; ++seed) {
    const std::string cmd = "'" + g_cli.string() + "' simulate --family delta8 --rounds 200 --seed " +
                            std::to_string(seed) + " --source '" + (g_data / "delta8").string() + "' 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return {false, "cannot run " + cmd};
    std::string line, last;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) {
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        if (line.find("\"summary\"") != std::string::npos) last = line;
        line.clear();
      }
    }
    const int status = ::pclose(pipe);
    if (status != 0 || last.empty()) return {false, "simulate seed " + std::to_string(seed) + " failed"};
    const auto summary = json::parse(last);
    const auto growth = summary.at("corpus_growth").get<int>();
    growth_ok &= growth == 200;
    initial += summary.at("f1_initial").get<double>() / 5.0;
    final_f1 += summary.at("f1_final").get<double>() / 5.0;
    detail << "s" << seed << ":+" << growth << " ";
  }
  const double secs = seconds_since(t0);
  const bool ok = growth_ok && final_f1 >= initial - 0.02 && final_f1 - initial >= 0.05 && secs < 300.0;
  return {ok, detail.str() + "mean F1 " + fmt(initial) + " -> " + fmt(final_f1) + ", " + fmt(secs, 1) + " s"};
}

// ---- state machine fuzz ----------------------------------------------------

void load_family(CorpusStore& store, const fs::path& dir) {
  store.register_family(load_registry(dir / "registry.json"));
  const auto registry = load_registry(dir / "registry.json");
  store.set_divisions(registry.family.family_id, load_divisions(dir / "divisions.json"));
  store.ingest_corpus(dir / "corpus.jsonl", registry.family.family_id);
}

int tier_rank(Tier t) { return t == Tier::Easy ? 0 : t == Tier::Normal ? 1 : 2; }

Outcome check_state_machine() {
  ManualClock clock(1'000'000, 1);
  CorpusStore store(clock);
  load_family(store, g_data / "kinneret2");
  load_family(store, g_data / "alpine3");
  EngineConfig cfg;
  cfg.retrain_mode = RetrainMode::Manual;
  cfg.model_config = minimal_config(1);
  cfg.model_config.epochs = 2;
  cfg.seed = 11;
  GameEngine engine(store, clock, cfg);

  std::map<std::string, std::pair<std::string, std::string>> label_info;  // id -> (name, affiliation)
  auto snapshot_labels = [&](bool record) {
    bool stable = true;
    for (const auto& fam : {"alpine3", "kinneret2"}) {
      for (const auto& [id, l] : store.snapshot(fam)->labels) {
        const auto key = std::string(fam) + "/" + id;
        auto it = label_info.find(key);
        if (it == label_info.end()) {
          if (record) label_info[key] = {l.name, l.affiliation};
        } else {
          stable &= it->second == std::make_pair(l.name, l.affiliation);
        }
      }
    }
    return stable;
  };
  snapshot_labels(true);

  const std::set<std::pair<Stage, Stage>> allowed = {
      {Stage::Quiz, Stage::Quiz}, {Stage::Quiz, Stage::Review}, {Stage::Review, Stage::Quiz},
      {Stage::Review, Stage::Review}, {Stage::Match, Stage::Match}};

  std::mt19937_64 rng(4242);
  std::vector<std::string> sessions;
  std::map<std::string, Session> shadow;
  int violations = 0, errors = 0, ok_ops = 0, new_labels = 0;
  std::string first_violation;
  auto violation = [&](const std::string& what) {
    if (violations++ == 0) first_violation = what;
  };
  const std::vector<std::string> words = {"grüezi", "moin", "servus", "shalom", "hoi", "xyz"};

  for (int step = 0; step < 10'000; ++step) {
    if (sessions.empty() || rng() % 40 == 0) {
      const auto fam = rng() % 2 ? "alpine3" : "kinneret2";
      const auto s = engine.start_session(fam, rng() % 3 != 0);
      sessions.push_back(s.session_id);
      shadow[s.session_id] = s;
      continue;
    }
    const auto sid = sessions[rng() % sessions.size()];
    const Session before = shadow.at(sid);
    const int op = static_cast<int>(rng() % 12);
    bool set_level = false;
    std::optional<Tier> requested;
    try {
      switch (op) {
        case 0: engine.begin_quiz_turn(sid); break;
        case 1:
        case 2: engine.submit_rewrite(sid, words[rng() % words.size()] + " " + std::to_string(rng() % 1000)); break;
        case 3: engine.review_confirm(sid); break;
        case 4: {
          Correction c;
          const auto view = store.snapshot(before.family_id);
          auto it = view->labels.begin();
          std::advance(it, static_cast<long>(rng() % view->labels.size()));
          c.label = rng() % 8 == 0 ? std::string("no-such-label") : it->first;
          if (rng() % 3 == 0) c.geo_edit = GeoEdit{{HexCell{static_cast<int>(rng() % 30), static_cast<int>(rng() % 10)}}, {}};
          engine.review_correct(sid, c);
          break;
        }
        case 5: {
          Correction c;
          c.new_dialect = "Fuzz " + std::to_string(rng() % 50);
          engine.review_correct(sid, c);
          ++new_labels;
          break;
        }
        case 6:
          requested = static_cast<Tier>(rng() % 3);
          engine.set_difficulty(sid, *requested);
          set_level = true;
          break;
        case 7: engine.begin_match_round(sid); break;
        case 8: engine.submit_match_answer(sid, rng() % 4, std::vector<std::string>{}); break;
        case 9: engine.record_match_correction(sid, rng() % 3, {}); break;
        case 10:
          if (rng() % 50 == 0) engine.retrain(before.family_id);
          break;
        case 11:
          if (rng() % 10 == 0) {
            engine.end_session(sid);
            sessions.erase(std::find(sessions.begin(), sessions.end(), sid));
            shadow.erase(sid);
            continue;
          }
          break;
      }
      ++ok_ops;
    } catch (const Error&) {
      ++errors;
    } catch (const std::exception& e) {
      violation(std::string("non-domain exception: ") + e.what());
    }
    const Session after = engine.session(sid);
    if (after.path != before.path) violation("path changed at step " + std::to_string(step));
    if (!allowed.count({before.stage, after.stage})) violation("illegal transition at step " + std::to_string(step));
    if (tier_rank(after.level) < tier_rank(before.level) && !set_level)
      violation("level decreased without set_difficulty at step " + std::to_string(step));
    if (set_level && after.level != *requested && before.stage == Stage::Quiz && !before.turn)
      violation("set_difficulty ignored at step " + std::to_string(step));
    if ((after.stage == Stage::Review) != (after.turn && after.turn->submitted_text.has_value()))
      violation("review stage without a submitted turn at step " + std::to_string(step));
    shadow[sid] = after;
    if (step % 100 == 0 && !snapshot_labels(false)) violation("label name/affiliation mutated at step " + std::to_string(step));
    snapshot_labels(true);
  }
  if (!snapshot_labels(false)) violation("label name/affiliation mutated");
  return {violations == 0, "10000 steps, " + std::to_string(ok_ops) + " accepted, " + std::to_string(errors) +
                               " rejected, " + std::to_string(violations) + " violations" +
                               (first_violation.empty() ? "" : " (" + first_violation + ")")};
}

// ---- persistence -----------------------------------------------------------

ServerConfig persistence_config(const fs::path& dir) {
  ServerConfig c;
  c.port = 0;
  c.data_dir = dir;
  c.retrain_mode = RetrainMode::Manual;
  c.seed = 5;
  c.fsync_events = true;
  return c;
}

void seed_store(const fs::path& dir) {
  ManualClock clock;
  CorpusStore store(clock, dir, false);
  load_family(store, g_data / "alpine3");
}

// Plays deterministic quiz and match turns until at least `min_events`
// events are recorded. With `leave_open` a final turn is left in REVIEW.
int drive(int port, int min_events, bool leave_open) {
  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(60, 0);
  auto call = [&](const std::string& method, const std::string& path, const json& body = nullptr) {
    auto res = method == "GET" ? client.Get(path) : client.Post(path, body.is_null() ? "{}" : body.dump(), "application/json");
    if (!res) throw std::runtime_error("request failed: " + path);
    if (res->status >= 400) throw std::runtime_error(path + " -> " + std::to_string(res->status) + " " + res->body);
    return json::parse(res->body);
  };
  std::mt19937_64 rng(31);
  int events = 0, turn = 0;
  std::string quiz = call("POST", "/api/sessions", {{"family_id", "alpine3"}, {"familiar", true}})["session_id"];
  std::string match = call("POST", "/api/sessions", {{"family_id", "alpine3"}, {"familiar", false}})["session_id"];
  const std::vector<std::string> labels = {"lakeside", "highland", "valley"};
  while (events < min_events) {
    ++turn;
    if (turn % 7 == 0) {
      call("GET", "/api/sessions/" + match + "/match");
      for (int i = 0; i < 3; ++i) call("POST", "/api/sessions/" + match + "/match/" + std::to_string(i), {{"divisions", {"alpine3-d1"}}});
      call("POST", "/api/sessions/" + match + "/match/0/correction", {{"divisions", {"alpine3-d2"}}});
      ++events;
      continue;
    }
    call("GET", "/api/sessions/" + quiz + "/quiz");
    call("POST", "/api/sessions/" + quiz + "/quiz/submit", {{"text", "fuzz text " + std::to_string(turn)}});
    const auto pick = rng() % 10;
    if (pick < 5) {
      call("POST", "/api/sessions/" + quiz + "/review", {{"decision", "confirm"}});
      ++events;
    } else if (pick < 8) {
      call("POST", "/api/sessions/" + quiz + "/review", {{"decision", {{"label", labels[rng() % 3]}}}});
      ++events;
    } else if (pick < 9) {
      call("POST", "/api/sessions/" + quiz + "/review",
           {{"decision", {{"new_dialect", "Dialect " + std::to_string(turn)}}},
            {"geo_edit", {{"add", {"3:3", "4:3"}}}}});
      events += 2;
    } else {
      call("POST", "/api/sessions/" + quiz + "/review",
           {{"decision", {{"label", labels[rng() % 3]}}}, {"geo_edit", {{"add", {"5:5"}}, {"remove", {"6:6"}}}}});
      events += 2;
    }
  }
  if (leave_open) {
    call("GET", "/api/sessions/" + quiz + "/quiz");
    call("POST", "/api/sessions/" + quiz + "/quiz/submit", {{"text", "never reviewed"}});
  }
  return events;
}

Outcome check_persistence() {
  const auto root = fs::temp_directory_path() / ("dialingle-persist-" + std::to_string(::getpid()));
  fs::remove_all(root);
  const auto killed_dir = root / "killed", reference_dir = root / "reference";
  seed_store(killed_dir);
  seed_store(reference_dir);

  int fds[2];
  if (::pipe(fds) != 0) return {false, "pipe failed"};
  std::cout.flush();
  const pid_t child = ::fork();
  if (child == 0) {
    ::close(fds[0]);
    ManualClock clock(1'700'000'000'000, 1);
    Application app(persistence_config(killed_dir), &clock);
    const int port = app.start();
    if (::write(fds[1], &port, sizeof port) != sizeof port) ::_exit(1);
    for (;;) ::pause();
  }
  ::close(fds[1]);
  int port = 0;
  if (::read(fds[0], &port, sizeof port) != sizeof port) return {false, "server child did not report a port"};
  ::close(fds[0]);

  int events = 0;
  std::string failure;
  try {
    events = drive(port, 50, true);
  } catch (const std::exception& e) {
    failure = e.what();
  }
  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  if (!failure.empty()) return {false, "driving killed server: " + failure};
  const bool was_killed = WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL;

  std::string reference_dump;
  std::size_t reference_events = 0;
  {
    ManualClock clock(1'700'000'000'000, 1);
    Application app(persistence_config(reference_dir), &clock);
    const int ref_port = app.start();
    try {
      drive(ref_port, 50, false);
    } catch (const std::exception& e) {
      return {false, "driving reference server: " + std::string(e.what())};
    }
    app.stop();
    reference_dump = app.store().canonical_dump();
    reference_events = app.store().events().size();
  }

  ManualClock clock;
  CorpusStore restarted(clock, killed_dir);
  const auto replayed = restarted.canonical_dump();
  const bool identical = replayed == reference_dump;
  const auto replayed_events = restarted.events().size();
  fs::remove_all(root);
  return {was_killed && identical && replayed_events == reference_events && events >= 50,
          std::to_string(replayed_events) + " events replayed after SIGKILL, snapshot " +
              (identical ? "byte-identical" : "DIFFERS") + " (" + std::to_string(replayed.size()) + " bytes)"};
}

// ---- geometry --------------------------------------------------------------

Outcome check_geometry() {
  LanguageFamily fam;
  fam.family_id = "geo";
  fam.bounding_box = {0, 0, 10, 10};
  fam.hex_resolution = 0.1;
  std::mt19937_64 rng(8);
  const int dq[6] = {1, 1, 0, -1, -1, 0}, dr[6] = {0, -1, -1, 0, 1, 1};
  int matched = 0;
  for (int c = 0; c < 200; ++c) {
    CellSet cells;
    const std::size_t n = 1 + rng() % 50;
    HexCell cur{20, 20};
    while (cells.size() < n) {
      if (rng() % 4 == 0) {
        cur = {10 + static_cast<int>(rng() % 20), 10 + static_cast<int>(rng() % 20)};
      } else {
        const int d = static_cast<int>(rng() % 6);
        cur = {cur.q + dq[d], cur.r + dr[d]};
      }
      cells.insert(cur);
    }
    // Brute-force adjacency over all pairs.
    std::size_t adjacent = 0;
    for (auto a = cells.begin(); a != cells.end(); ++a) {
      for (auto b = std::next(a); b != cells.end(); ++b) {
        for (int d = 0; d < 6; ++d) adjacent += a->q + dq[d] == b->q && a->r + dr[d] == b->r;
      }
    }
    std::size_t edges = 0;
    for (const auto& ring : region_boundary(cells, fam)) edges += ring.size() - 1;
    matched += edges == 6 * cells.size() - 2 * adjacent;
  }
  const auto two = region_boundary({HexCell{3, 3}, HexCell{4, 3}}, fam);
  const bool two_ok = two.size() == 1 && two[0].size() == 11;  // closed ring: 10 vertices + repeat
  return {matched == 200 && two_ok,
          std::to_string(matched) + "/200 regions match 6n-2a, two-cell ring " +
              std::to_string(two.empty() ? 0 : two[0].size() - 1) + " vertices"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: " << argv[0] << " <dialingle-cli> <synthetic-data-dir> [filter]\n";
    return 2;
  }
  g_cli = argv[1];
  g_data = argv[2];
  const std::string filter = argc > 3 ? argv[3] : "";

  // Persistence forks a server child, so it runs before anything starts threads.
  const std::vector<Criterion> criteria = {
      {"persistence", check_persistence},
      {"entropy-oracle", check_entropy},
      {"difficulty-brute-force", check_difficulty},
      {"missing-label-fallback", check_fallback},
      {"tiering", check_tiering},
      {"classifier", check_classifier},
      {"end-to-end-loop", check_loop},
      {"state-machine-fuzz", check_state_machine},
      {"geometry", check_geometry},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
