// Operator CLI: ingest, train, eval, rescore, serve, simulate, synth.
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>

#include <unistd.h>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dialingle/classifier.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/error.hpp"
#include "dialingle/selection.hpp"
#include "dialingle/server.hpp"
#include "dialingle/synthetic.hpp"

#ifndef DIALINGLE_DATA_DIR
#define DIALINGLE_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dialingle;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitServer = 3;

struct ServerFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_model_path(const fs::path& data_dir, const std::string& family) {
  return data_dir / "models" / (family + ".dlg");
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
  std::string family;
  fs::path registry, corpus, divisions;
};

int cmd_ingest(const fs::path& data_dir, const IngestArgs& a) {
  SystemClock clock;
  CorpusStore store(clock, data_dir);
  if (!a.registry.empty()) {
    const auto registry = load_registry(a.registry);
    if (registry.family.family_id != a.family)
      fail(ErrorCode::InvalidConfig, "registry is for family '" + registry.family.family_id + "', not '" + a.family + "'");
    if (!store.has_family(a.family)) store.register_family(registry);
  }
  if (!store.has_family(a.family)) fail(ErrorCode::UnknownFamily, "unknown family '" + a.family + "'; pass --registry");
  if (!a.divisions.empty()) store.set_divisions(a.family, load_divisions(a.divisions));
  std::size_t added = 0;
  if (!a.corpus.empty()) added = store.ingest_corpus(a.corpus, a.family);
  const auto view = store.snapshot(a.family);
  std::cout << "groups: " << added << ", labels: " << view->labels.size() << "\n";
  return 0;
}

// ---- train / eval / rescore ------------------------------------------------

struct TrainArgs {
  std::string family;
  bool autotune = false;
  double budget = 30.0;
  std::size_t candidates = 0;
  std::size_t max_bytes = 2 * 1024 * 1024;
  std::uint64_t seed = 1;
  fs::path out;
};

int cmd_train(const fs::path& data_dir, const TrainArgs& a) {
  SystemClock clock;
  CorpusStore store(clock, data_dir);
  const auto view = store.snapshot(a.family);
  const std::vector<std::string> labels(view->label_set.begin(), view->label_set.end());
  const auto split = split_train_test(*view, 0.8, a.seed);
  ModelConfig config;
  config.seed = a.seed;
  std::optional<TrainedModel> model;
  std::size_t candidates = 1;
  if (a.autotune) {
    AutotuneBudget budget{a.budget, a.candidates};
    auto result = autotune(split.train, budget, a.max_bytes, a.seed, labels);
    config = result.config;
    candidates = result.candidates_trained;
    model.emplace(std::move(result.model));
  } else {
    model.emplace(train(split.train, config, labels));
  }
  const auto report = evaluate(*model, split.test.empty() ? split.train : split.test, a.seed);
  const auto out = a.out.empty() ? default_model_path(data_dir, a.family) : a.out;
  fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  model->save(out);
  json line{{"family_id", a.family},     {"model", out.string()},          {"byte_size", fs::file_size(out)},
            {"micro_f1", report.micro_f1}, {"macro_f1", report.macro_f1}, {"test_size", report.test_size},
            {"train_size", split.train.size()}, {"candidates_trained", candidates}, {"config", config.to_json()}};
  std::cout << line.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string family;
  std::uint64_t seed = 1;
  fs::path model, heldout;
  bool json_out = false;
};

int cmd_eval(const fs::path& data_dir, const EvalArgs& a) {
  SystemClock clock;
  CorpusStore store(clock, data_dir);
  const auto view = store.snapshot(a.family);
  const auto model = TrainedModel::load(a.model.empty() ? default_model_path(data_dir, a.family) : a.model);
  std::vector<Example> test;
  if (!a.heldout.empty()) {
    test = load_examples(a.heldout);
  } else {
    auto split = split_train_test(*view, 0.8, a.seed);
    test = split.test.empty() ? std::move(split.train) : std::move(split.test);
  }
  const auto report = evaluate(model, test, a.seed);
  if (a.json_out) {
    std::cout << report.to_json().dump() << "\n";
    return 0;
  }
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "micro_f1 " << report.micro_f1 << "\nmacro_f1 " << report.macro_f1 << "\ntest_size "
            << report.test_size << "\n\n";
  std::cout << std::left << std::setw(20) << "label" << std::right << std::setw(10) << "precision" << std::setw(10)
            << "recall" << std::setw(10) << "f1" << std::setw(10) << "support" << "\n";
  for (const auto& [label, s] : report.per_class) {
    std::cout << std::left << std::setw(20) << label << std::right << std::setw(10) << s.precision << std::setw(10)
              << s.recall << std::setw(10) << s.f1 << std::setw(10) << s.support << "\n";
  }
  return 0;
}

struct RescoreArgs {
  std::string family;
  fs::path model, out;
};

int cmd_rescore(const fs::path& data_dir, const RescoreArgs& a) {
  SystemClock clock;
  CorpusStore store(clock, data_dir);
  const auto view = store.snapshot(a.family);
  const auto model_path = a.model.empty() ? default_model_path(data_dir, a.family) : a.model;
  std::vector<DifficultyRecord> records;
  if (fs::exists(model_path)) {
    records = rescore_all(*view, TrainedModel::load(model_path), 1);
  } else {
    PredictionDistribution uniform;
    uniform.labels.assign(view->label_set.begin(), view->label_set.end());
    uniform.probs.assign(uniform.labels.size(), 1.0 / static_cast<double>(uniform.labels.size()));
    records = rescore_all(*view, [&](const std::string&) { return uniform; }, 0);
  }
  const auto out_path = a.out.empty() ? data_dir / "reports" / (a.family + "-difficulty.jsonl") : a.out;
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + out_path.string());
  std::map<std::string, std::size_t> counts{{"EASY", 0}, {"NORMAL", 0}, {"HARD", 0}};
  for (const auto& r : records) {
    ++counts[std::string(to_string(r.tier))];
    out << json{{"group_id", r.group_id}, {"score", r.score}, {"tier", to_string(r.tier)}}.dump() << "\n";
  }
  std::cout << json{{"family_id", a.family}, {"report", out_path.string()}, {"groups", records.size()}, {"tier_counts", counts}}
                   .dump()
            << "\n";
  return 0;
}

// ---- serve -----------------------------------------------------------------

int cmd_serve(const std::string& config_path) {
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("DIALINGLE_CONFIG")) path = env;
  }
  const auto config = path.empty() ? ServerConfig{} : ServerConfig::load(path);
  Application app(config);
  const int port = app.bind();
  std::cout << json{{"listening", config.host + ":" + std::to_string(port)}}.dump() << std::endl;
  app.run();
  return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string family;
  int rounds = 200;
  std::uint64_t seed = 1;
  double confirm_accuracy = 0.9;
  std::string server;
  fs::path source;
  int session_rounds = 10;
  std::size_t retrain_threshold = 50;
};

class ApiClient {
 public:
  explicit ApiClient(const std::string& base) : client_(base) { client_.set_read_timeout(600, 0); }

  json call(const std::string& method, const std::string& path, const json& body = nullptr) {
    httplib::Result res = method == "GET"      ? client_.Get(path)
                          : method == "DELETE" ? client_.Delete(path)
                                               : client_.Post(path, body.is_null() ? "{}" : body.dump(), "application/json");
    if (!res) throw ServerFailure("request " + method + " " + path + " failed: " + httplib::to_string(res.error()));
    json out = res->body.empty() ? json::object() : json::parse(res->body);
    if (res->status >= 400)
      throw ServerFailure(method + " " + path + " -> " + std::to_string(res->status) + " " + out.dump());
    return out;
  }

 private:
  httplib::Client client_;
};

double mean_difficulty(ApiClient& api, const std::string& family) {
  const auto report = api.call("GET", "/api/admin/difficulty/" + family);
  double sum = 0.0;
  for (const auto& r : report.at("records")) sum += r.at("score").get<double>();
  return report.at("records").empty() ? 0.0 : sum / static_cast<double>(report.at("records").size());
}

int play(ApiClient& api, const SimulateArgs& a, const SpeakerSet& speakers) {
  std::mt19937_64 rng(a.seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto coin = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  const auto variants_before = api.call("GET", "/api/families/" + a.family + "/stats").at("variants").get<std::size_t>();
  api.call("POST", "/api/admin/retrain", {{"family_id", a.family}});
  const double f1_initial = api.call("GET", "/api/admin/evaluate/" + a.family).at("micro_f1").get<double>();

  std::set<std::string> produced;
  std::string session;
  const Speaker* speaker = nullptr;
  int in_session = 0;
  std::size_t confirms = 0, corrections = 0;
  for (int round = 1; round <= a.rounds; ++round) {
    if (session.empty() || in_session == a.session_rounds) {
      if (!session.empty()) api.call("DELETE", "/api/sessions/" + session);
      session = api.call("POST", "/api/sessions", {{"family_id", a.family}, {"familiar", true}}).at("session_id");
      speaker = &speakers.speakers[pick(speakers.speakers.size())];
      in_session = 0;
    }
    ++in_session;
    const auto prompt = api.call("GET", "/api/sessions/" + session + "/quiz");
    const auto standard = prompt.at("standard_text").get<std::string>();
    std::string text;
    for (int attempt = 0;; ++attempt) {
      text = speak(standard, *speaker, speakers.fillers, 1 + static_cast<int>(pick(2)) + attempt / 10, rng);
      if (produced.insert(text).second) break;
    }
    const auto result = api.call("POST", "/api/sessions/" + session + "/quiz/submit", {{"text", text}});
    const auto predicted = result.at("predicted_labels").get<std::vector<std::string>>();
    const bool correct = !predicted.empty() && predicted.front() == speaker->label_id;
    const bool careful = coin() < a.confirm_accuracy;

    json review;
    std::string action;
    if (correct == careful) {
      review = {{"decision", "confirm"}};
      action = "confirm";
      ++confirms;
    } else {
      std::string label = speaker->label_id;
      if (!careful) {
        std::vector<std::string> others;
        for (const auto& s : speakers.speakers) {
          if (s.label_id != predicted.front()) others.push_back(s.label_id);
        }
        label = others[pick(others.size())];
      }
      review = {{"decision", {{"label", label}}}};
      action = "correct:" + label;
      ++corrections;
    }
    const auto reviewed = api.call("POST", "/api/sessions/" + session + "/review", review);
    std::cout << json{{"round", round},
                      {"tier", prompt.at("tier")},
                      {"group_id", prompt.at("group_id")},
                      {"speaker", speaker->label_id},
                      {"predicted", predicted},
                      {"correct", correct},
                      {"action", action},
                      {"variant_added", reviewed.at("variant_added")},
                      {"level", reviewed.at("level")},
                      {"D_mean", mean_difficulty(api, a.family)}}
                     .dump()
              << "\n";
  }

  api.call("POST", "/api/admin/retrain", {{"family_id", a.family}});
  const auto final_eval = api.call("GET", "/api/admin/evaluate/" + a.family);
  const auto variants_after = api.call("GET", "/api/families/" + a.family + "/stats").at("variants").get<std::size_t>();
  std::cout << json{{"summary", true},
                    {"rounds", a.rounds},
                    {"confirms", confirms},
                    {"corrections", corrections},
                    {"corpus_growth", variants_after - variants_before},
                    {"f1_initial", f1_initial},
                    {"f1_final", final_eval.at("micro_f1")},
                    {"model_version", final_eval.at("model_version")}}
                   .dump()
            << std::endl;
  return 0;
}

int cmd_simulate(const SimulateArgs& a) {
  const fs::path source = a.source.empty() ? fs::path(DIALINGLE_DATA_DIR) / "synthetic" / a.family : a.source;
  const auto speakers = SpeakerSet::load(source / "speakers.json");
  if (!a.server.empty()) {
    ApiClient api(a.server);
    return play(api, a, speakers);
  }

  // In-process server over a scratch store seeded from the family's files.
  const auto scratch = fs::temp_directory_path() /
                       ("dialingle-sim-" + a.family + "-" + std::to_string(a.seed) + "-" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  struct Cleanup {
    fs::path dir;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } cleanup{scratch};
  {
    SystemClock clock;
    CorpusStore store(clock, scratch, false);
    store.register_family(load_registry(source / "registry.json"));
    if (fs::exists(source / "divisions.json")) store.set_divisions(a.family, load_divisions(source / "divisions.json"));
    store.ingest_corpus(source / "corpus.jsonl", a.family);
  }
  ServerConfig config;
  config.host = "127.0.0.1";
  config.port = 0;
  config.data_dir = scratch;
  config.retrain_mode = RetrainMode::Inline;
  config.retrain_threshold = a.retrain_threshold;
  config.seed = a.seed;
  config.fsync_events = false;
  if (fs::exists(source / "heldout.jsonl")) config.heldout[a.family] = source / "heldout.jsonl";
  Application app(config);
  const int port = app.start();
  ApiClient api("http://127.0.0.1:" + std::to_string(port));
  const int rc = play(api, a, speakers);
  app.stop();
  return rc;
}

// ---- synth -----------------------------------------------------------------

int cmd_synth(const fs::path& out, const std::string& only) {
  for (const auto& spec : bundled_specs()) {
    if (!only.empty() && spec.family_id != only) continue;
    const auto family = generate_family(spec);
    write_family(family, out / spec.family_id);
    std::size_t variants = 0;
    for (const auto& g : family.corpus) variants += g.at("variants").size();
    std::cout << json{{"family_id", spec.family_id}, {"groups", family.corpus.size()}, {"variants", variants}}.dump()
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialingle: dialect corpus collection toolkit"};
  app.require_subcommand(1);
  std::string data_dir = "store";
  if (const char* env = std::getenv("DIALINGLE_DATA")) data_dir = env;
  app.add_option("--data-dir", data_dir, "Store directory")->capture_default_str();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Register a family and load a corpus");
  c_ingest->add_option("--family", ingest.family)->required();
  c_ingest->add_option("--registry", ingest.registry);
  c_ingest->add_option("--corpus", ingest.corpus);
  c_ingest->add_option("--divisions", ingest.divisions);

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train (optionally autotune) on the 80% split");
  c_train->add_option("--family", train_args.family)->required();
  c_train->add_flag("--autotune", train_args.autotune);
  c_train->add_option("--budget", train_args.budget, "Autotune seconds")->capture_default_str();
  c_train->add_option("--candidates", train_args.candidates, "Autotune candidate count (overrides --budget)");
  c_train->add_option("--max-bytes", train_args.max_bytes)->capture_default_str();
  c_train->add_option("--seed", train_args.seed)->capture_default_str();
  c_train->add_option("--out", train_args.out, "Model file");

  EvalArgs eval_args;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model on the 20% split or a held-out file");
  c_eval->add_option("--family", eval_args.family)->required();
  c_eval->add_option("--seed", eval_args.seed)->capture_default_str();
  c_eval->add_option("--model", eval_args.model);
  c_eval->add_option("--heldout", eval_args.heldout);
  c_eval->add_flag("--json", eval_args.json_out);

  RescoreArgs rescore;
  auto* c_rescore = app.add_subcommand("rescore", "Write the per-group difficulty report");
  c_rescore->add_option("--family", rescore.family)->required();
  c_rescore->add_option("--model", rescore.model);
  c_rescore->add_option("--out", rescore.out);

  std::string config_path;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP API");
  c_serve->add_option("--config", config_path);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Play Quiz rounds with simulated speakers");
  c_sim->add_option("--family", sim.family)->required();
  c_sim->add_option("--rounds", sim.rounds)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_sim->add_option("--seed", sim.seed)->capture_default_str();
  c_sim->add_option("--confirm-accuracy", sim.confirm_accuracy)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c_sim->add_option("--server", sim.server, "Base URL of a running server (default: in-process)");
  c_sim->add_option("--source", sim.source, "Directory with the family's synthetic files");
  c_sim->add_option("--session-rounds", sim.session_rounds)->capture_default_str()->check(CLI::PositiveNumber);
  c_sim->add_option("--retrain-threshold", sim.retrain_threshold)->capture_default_str();

  std::string synth_out = std::string(DIALINGLE_DATA_DIR) + "/synthetic";
  std::string synth_family;
  auto* c_synth = app.add_subcommand("synth", "Regenerate the bundled synthetic families");
  c_synth->add_option("--out", synth_out)->capture_default_str();
  c_synth->add_option("--family", synth_family);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_ingest) return cmd_ingest(data_dir, ingest);
    if (*c_train) return cmd_train(data_dir, train_args);
    if (*c_eval) return cmd_eval(data_dir, eval_args);
    if (*c_rescore) return cmd_rescore(data_dir, rescore);
    if (*c_serve) return cmd_serve(config_path);
    if (*c_sim) return cmd_simulate(sim);
    if (*c_synth) return cmd_synth(synth_out, synth_family);
  } catch (const ServerFailure& e) {
    std::cerr << "server error: " << e.what() << "\n";
    return kExitServer;
  } catch (const Error& e) {
    std::cerr << error_name(e.code()) << ": " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? kExitIo : kExitValidation;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}
