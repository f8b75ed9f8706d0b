#include "dialingle/server.hpp"

#include <condition_variable>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "dialingle/error.hpp"
#include "dialingle/text.hpp"

namespace dialingle {
namespace fs = std::filesystem;
using nlohmann::json;

ServerConfig ServerConfig::from_json(const json& j, const fs::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  try {
    ServerConfig c;
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("data_dir")) c.data_dir = resolve(j.at("data_dir").get<std::string>());
    if (j.contains("model_dir")) c.model_dir = resolve(j.at("model_dir").get<std::string>());
    c.tau = j.value("tau", c.tau);
    c.retrain_threshold = j.value("retrain_threshold", c.retrain_threshold);
    c.session_idle_timeout_ms = j.value("session_idle_timeout_ms", c.session_idle_timeout_ms);
    if (j.contains("autotune") && !j.at("autotune").is_null()) {
      AutotuneBudget b;
      b.seconds = j.at("autotune").value("seconds", 0.0);
      b.candidates = j.at("autotune").value("candidates", std::size_t{0});
      c.autotune = b;
    }
    c.max_model_bytes = j.value("max_model_bytes", c.max_model_bytes);
    if (j.contains("model")) c.model_config = ModelConfig::from_json(j.at("model"));
    const auto mode = j.value("retrain_mode", std::string("deferred"));
    if (mode == "inline") {
      c.retrain_mode = RetrainMode::Inline;
    } else if (mode == "deferred") {
      c.retrain_mode = RetrainMode::Deferred;
    } else if (mode == "manual") {
      c.retrain_mode = RetrainMode::Manual;
    } else {
      fail(ErrorCode::InvalidConfig, "retrain_mode must be inline, deferred or manual");
    }
    c.seed = j.value("seed", c.seed);
    c.cors_origin = j.value("cors_origin", c.cors_origin);
    c.fsync_events = j.value("fsync_events", c.fsync_events);
    if (j.contains("heldout")) {
      for (const auto& [family, path] : j.at("heldout").items()) c.heldout[family] = resolve(path.get<std::string>());
    }
    if (!(c.tau > 0.0 && c.tau <= 1.0)) fail(ErrorCode::InvalidConfig, "tau must be in (0, 1]");
    if (c.retrain_threshold == 0) fail(ErrorCode::InvalidConfig, "retrain_threshold must be positive");
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("server config: ") + e.what());
  }
}

ServerConfig ServerConfig::load(const fs::path& path) {
  return from_json(read_json_file(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

EngineConfig ServerConfig::engine_config() const {
  EngineConfig e;
  e.tau = tau;
  e.retrain_policy.threshold = retrain_threshold;
  e.retrain_mode = retrain_mode;
  e.session_idle_timeout_ms = session_idle_timeout_ms;
  e.seed = seed;
  e.model_config = model_config;
  e.autotune = autotune;
  e.max_model_bytes = max_model_bytes;
  e.model_dir = model_dir.empty() ? data_dir / "models" : model_dir;
  return e;
}

ApiResponse error_response(ErrorCode code, const std::string& message) {
  return {http_status(code), {{"code", std::string(error_name(code))}, {"message", message}}};
}

namespace {

json rings_json(const std::vector<Ring>& rings) {
  auto out = json::array();
  for (const auto& r : rings) out.push_back(ring_to_json(r));
  return out;
}

json session_json(const Session& s) {
  return {{"session_id", s.session_id},
          {"family_id", s.family_id},
          {"path", to_string(s.path)},
          {"stage", to_string(s.stage)},
          {"level", to_string(s.level)},
          {"rounds_played", s.rounds_played},
          {"turn_open", s.turn.has_value()}};
}

json outcome_json(const std::string& family, const RetrainOutcome& o) {
  return {{"family_id", family},
          {"model_version", o.model_version},
          {"micro_f1", o.report.micro_f1},
          {"macro_f1", o.report.macro_f1},
          {"test_size", o.report.test_size},
          {"byte_size", o.byte_size},
          {"config", o.config.to_json()}};
}

CellSet cells_field(const json& j, const char* key) {
  if (!j.contains(key)) return {};
  return parse_region_ids(j.at(key).get<std::vector<std::string>>());
}

Ring lasso_field(const json& j) {
  Ring ring;
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2) fail(ErrorCode::BadRequest, "lasso points are [lon, lat] pairs");
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ring;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

std::size_t index_param(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
    fail(ErrorCode::BadRequest, "item index must be a non-negative integer");
  return std::stoul(text);
}

}  // namespace

struct ApiService::Impl {
  struct Job {
    std::string job_id;
    std::string family_id;
    bool done = false;
    std::optional<json> result;
    std::optional<ApiResponse> error;
  };

  using Params = std::vector<std::string>;
  using Handler = std::function<ApiResponse(const Params&, const ApiRequest&, const json&)>;
  struct Route {
    std::string method;
    std::vector<std::string> pattern;
    Handler handler;
  };

  CorpusStore& store;
  GameEngine& engine;
  const ServerConfig& config;
  std::vector<Route> routes;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::set<std::string> busy;
  std::set<std::string> pending;
  std::vector<std::thread> workers;
  std::uint64_t job_counter = 0;

  std::mutex heldout_mu;
  std::map<std::string, std::vector<Example>> heldout_cache;

  Impl(CorpusStore& s, GameEngine& e, const ServerConfig& c) : store(s), engine(e), config(c) { add_routes(); }

  void route(std::string method, const std::string& pattern, Handler h) {
    routes.push_back({std::move(method), split_path(pattern), std::move(h)});
  }

  ApiResponse dispatch(const ApiRequest& req) {
    const auto parts = split_path(req.path);
    bool path_matched = false;
    for (const auto& r : routes) {
      if (r.pattern.size() != parts.size()) continue;
      Params params;
      bool ok = true;
      for (std::size_t i = 0; i < parts.size() && ok; ++i) {
        if (r.pattern[i] == "{}") {
          params.push_back(parts[i]);
        } else {
          ok = r.pattern[i] == parts[i];
        }
      }
      if (!ok) continue;
      path_matched = true;
      if (r.method != req.method) continue;
      json body = json::object();
      if (!req.body.empty()) {
        try {
          body = json::parse(req.body);
        } catch (const json::exception& e) {
          return error_response(ErrorCode::BadRequest, std::string("request body is not JSON: ") + e.what());
        }
      }
      try {
        return r.handler(params, req, body);
      } catch (const Error& e) {
        return error_response(e.code(), e.what());
      } catch (const json::exception& e) {
        return error_response(ErrorCode::BadRequest, e.what());
      } catch (const std::exception& e) {
        return error_response(ErrorCode::Internal, e.what());
      }
    }
    if (path_matched) return {405, {{"code", "method_not_allowed"}, {"message", req.method + " " + req.path}}};
    return {404, {{"code", "not_found"}, {"message", "no route for " + req.path}}};
  }

  // Starts a retrain for the family unless one is running. Automatic
  // triggers that find the family busy are remembered and rerun afterwards.
  std::shared_ptr<Job> launch(const std::string& family_id, bool automatic) {
    std::lock_guard lock(jobs_mu);
    if (busy.count(family_id)) {
      if (automatic) pending.insert(family_id);
      return nullptr;
    }
    busy.insert(family_id);
    auto job = std::make_shared<Job>();
    job->job_id = "job-" + std::to_string(++job_counter);
    job->family_id = family_id;
    jobs[job->job_id] = job;
    workers.emplace_back([this, job] { run(job); });
    return job;
  }

  void run(const std::shared_ptr<Job>& job) {
    for (bool first = true;; first = false) {
      std::optional<json> result;
      std::optional<ApiResponse> error;
      try {
        result = outcome_json(job->family_id, engine.retrain(job->family_id));
      } catch (const Error& e) {
        error = error_response(e.code(), e.what());
      } catch (const std::exception& e) {
        error = error_response(ErrorCode::Internal, e.what());
      }
      std::lock_guard lock(jobs_mu);
      if (first) {
        job->result = result;
        job->error = error;
        job->done = true;
      }
      const bool again = pending.erase(job->family_id) > 0 && !error && engine.retrain_due(job->family_id);
      if (!again) {
        busy.erase(job->family_id);
        jobs_cv.notify_all();
        return;
      }
      jobs_cv.notify_all();
    }
  }

  json job_json(const Job& job) {
    json j{{"job_id", job.job_id}, {"family_id", job.family_id}, {"state", job.done ? (job.error ? "failed" : "done") : "running"}};
    if (job.result) j["result"] = *job.result;
    if (job.error) j["error"] = job.error->body;
    return j;
  }

  void wait_idle() {
    std::unique_lock lock(jobs_mu);
    jobs_cv.wait(lock, [&] { return busy.empty(); });
  }

  void shutdown() {
    wait_idle();
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(jobs_mu);
      threads.swap(workers);
    }
    for (auto& t : threads) t.join();
  }

  const std::vector<Example>& heldout_examples(const std::string& family_id) {
    std::lock_guard lock(heldout_mu);
    auto it = heldout_cache.find(family_id);
    if (it == heldout_cache.end()) it = heldout_cache.emplace(family_id, load_examples(config.heldout.at(family_id))).first;
    return it->second;
  }

  void require_family(const std::string& family_id) {
    if (!store.has_family(family_id)) fail(ErrorCode::UnknownFamily, "unknown family '" + family_id + "'");
  }

  void add_routes() {
    route("GET", "/api/families", [this](const Params&, const ApiRequest&, const json&) {
      auto out = json::array();
      for (const auto& f : store.families()) {
        const auto pin = f.bounding_box.center();
        out.push_back({{"family_id", f.family_id},
                       {"display_name", f.display_name},
                       {"pin", {pin.lon, pin.lat}},
                       {"writing_direction", to_string(f.writing_direction)}});
      }
      return ApiResponse{200, out};
    });

    route("GET", "/api/families/{}", [this](const Params& p, const ApiRequest&, const json&) {
      require_family(p[0]);
      const auto view = store.snapshot(p[0]);
      auto labels = json::array();
      for (const auto& [id, l] : view->labels) {
        labels.push_back({{"label_id", id},
                          {"name", l.name},
                          {"affiliation", l.affiliation},
                          {"region", region_ids(l.region.cells)},
                          {"rings", rings_json(region_boundary(l.region.cells, view->family))}});
      }
      auto divisions = json::array();
      for (const auto& d : view->divisions) divisions.push_back(to_json_value(d));
      return ApiResponse{200, {{"family", to_json_value(view->family)}, {"labels", labels}, {"divisions", divisions}}};
    });

    route("GET", "/api/families/{}/stats", [this](const Params& p, const ApiRequest&, const json&) {
      require_family(p[0]);
      const auto view = store.snapshot(p[0]);
      return ApiResponse{200,
                         {{"family_id", p[0]},
                          {"groups", view->groups.size()},
                          {"variants", view->variant_count()},
                          {"labels", view->label_set.size()},
                          {"model_version", engine.model_version(p[0])},
                          {"retrain_running", engine.retrain_running(p[0])}}};
    });

    route("GET", "/api/families/{}/suggest", [this](const Params& p, const ApiRequest& req, const json&) {
      const auto it = req.query.find("prefix");
      const auto words = engine.suggest_words(p[0], it == req.query.end() ? "" : it->second);
      return ApiResponse{200, {{"words", words}}};
    });

    route("POST", "/api/sessions", [this](const Params&, const ApiRequest&, const json& body) {
      if (!body.contains("family_id") || !body.contains("familiar"))
        fail(ErrorCode::BadRequest, "family_id and familiar are required");
      const auto s = engine.start_session(body.at("family_id").get<std::string>(), body.at("familiar").get<bool>());
      return ApiResponse{201, session_json(s)};
    });

    route("GET", "/api/sessions/{}", [this](const Params& p, const ApiRequest&, const json&) {
      return ApiResponse{200, session_json(engine.session(p[0]))};
    });

    route("DELETE", "/api/sessions/{}", [this](const Params& p, const ApiRequest&, const json&) {
      engine.end_session(p[0]);
      return ApiResponse{200, {{"session_id", p[0]}, {"stage", "DONE"}}};
    });

    route("GET", "/api/sessions/{}/quiz", [this](const Params& p, const ApiRequest&, const json&) {
      const auto prompt = engine.begin_quiz_turn(p[0]);
      const auto family = store.snapshot(engine.session(p[0]).family_id)->family;
      return ApiResponse{200,
                         {{"group_id", prompt.group_id},
                          {"standard_text", prompt.standard_text},
                          {"tier", to_string(prompt.tier)},
                          {"suggestion_seed_words", prompt.suggestion_seed_words},
                          {"writing_direction", to_string(family.writing_direction)}}};
    });

    route("POST", "/api/sessions/{}/quiz/submit", [this](const Params& p, const ApiRequest&, const json& body) {
      if (!body.contains("text") || !body.at("text").is_string()) fail(ErrorCode::BadRequest, "text is required");
      const auto r = engine.submit_rewrite(p[0], body.at("text").get<std::string>());
      auto regions = json::array();
      for (const auto& region : r.regions) {
        regions.push_back({{"label_id", region.label_id},
                           {"name", region.name},
                           {"probability", region.probability},
                           {"rings", rings_json(region.rings)}});
      }
      return ApiResponse{200,
                         {{"prediction", r.prediction.as_map()},
                          {"predicted_labels", r.predicted_labels},
                          {"regions", regions}}};
    });

    route("POST", "/api/sessions/{}/review", [this](const Params& p, const ApiRequest&, const json& body) {
      if (!body.contains("decision")) fail(ErrorCode::BadRequest, "decision is required");
      const auto& decision = body.at("decision");
      if (decision.is_string()) {
        if (decision.get<std::string>() != "confirm") fail(ErrorCode::BadRequest, "decision must be \"confirm\" or an object");
        if (body.contains("geo_edit")) fail(ErrorCode::BadRequest, "geo edits come with corrections only");
        const auto r = engine.review_confirm(p[0]);
        return ApiResponse{200,
                           {{"decision", "confirm"},
                            {"level", to_string(r.new_level)},
                            {"variant_added", r.variant_added},
                            {"event_id", r.event_id}}};
      }
      if (!decision.is_object()) fail(ErrorCode::BadRequest, "decision must be \"confirm\" or an object");
      Correction c;
      if (decision.contains("label")) c.label = decision.at("label").get<std::string>();
      if (decision.contains("new_dialect")) c.new_dialect = decision.at("new_dialect").get<std::string>();
      if (c.new_dialect && normalize_text(*c.new_dialect).empty()) fail(ErrorCode::EmptyText, "dialect name is empty");
      if (body.contains("geo_edit") && !body.at("geo_edit").is_null()) {
        const auto& g = body.at("geo_edit");
        const auto view = store.snapshot(engine.session(p[0]).family_id);
        GeoEdit edit{cells_field(g, "add"), cells_field(g, "remove")};
        if (g.contains("lasso_add")) {
          const auto cells = cells_in_lasso(lasso_field(g.at("lasso_add")), view->family);
          edit.add.insert(cells.begin(), cells.end());
        }
        if (g.contains("lasso_remove")) {
          const auto cells = cells_in_lasso(lasso_field(g.at("lasso_remove")), view->family);
          edit.remove.insert(cells.begin(), cells.end());
        }
        c.geo_edit = edit;
      }
      const auto r = engine.review_correct(p[0], c);
      json out{{"decision", "correct"},
               {"label_id", r.label_id},
               {"level", to_string(engine.session(p[0]).level)},
               {"variant_added", r.variant_added}};
      if (r.region) {
        const auto view = store.snapshot(r.region->family_id);
        out["region"] = {{"cells", region_ids(r.region->cells)},
                         {"rings", rings_json(region_boundary(r.region->cells, view->family))}};
      }
      return ApiResponse{200, out};
    });

    route("POST", "/api/sessions/{}/difficulty", [this](const Params& p, const ApiRequest&, const json& body) {
      if (!body.contains("tier")) fail(ErrorCode::BadRequest, "tier is required");
      return ApiResponse{200, session_json(engine.set_difficulty(p[0], parse_tier(body.at("tier").get<std::string>())))};
    });

    route("GET", "/api/sessions/{}/match", [this](const Params& p, const ApiRequest&, const json&) {
      auto items = json::array();
      for (const auto& i : engine.begin_match_round(p[0]))
        items.push_back({{"index", i.index}, {"variant_id", i.variant_id}, {"text", i.text}});
      return ApiResponse{200, {{"items", items}}};
    });

    route("POST", "/api/sessions/{}/match/{}", [this](const Params& p, const ApiRequest&, const json& body) {
      DivisionQuery q;
      if (body.contains("lasso")) {
        q.lasso = lasso_field(body.at("lasso"));
        q.use_lasso = true;
      } else if (body.contains("divisions")) {
        q.ids = body.at("divisions").get<std::vector<std::string>>();
      } else {
        fail(ErrorCode::BadRequest, "divisions or lasso is required");
      }
      const auto r = engine.submit_match_answer(p[0], index_param(p[1]), q);
      const auto session = engine.session(p[0]);
      return ApiResponse{200,
                         {{"reference_divisions", r.reference_divisions},
                          {"score", r.score},
                          {"rounds_played", session.rounds_played}}};
    });

    route("POST", "/api/sessions/{}/match/{}/correction", [this](const Params& p, const ApiRequest&, const json& body) {
      if (!body.contains("divisions")) fail(ErrorCode::BadRequest, "divisions is required");
      const auto id = engine.record_match_correction(p[0], index_param(p[1]),
                                                     body.at("divisions").get<std::vector<std::string>>());
      return ApiResponse{201, {{"event_id", id}}};
    });

    route("POST", "/api/admin/retrain", [this](const Params&, const ApiRequest& req, const json& body) {
      if (!body.contains("family_id")) fail(ErrorCode::BadRequest, "family_id is required");
      const auto family = body.at("family_id").get<std::string>();
      require_family(family);
      auto job = launch(family, false);
      if (!job) fail(ErrorCode::RetrainInProgress, "a retrain is already running for " + family);
      const auto async = req.query.find("async");
      if (async != req.query.end() && async->second != "0") return ApiResponse{202, job_json(*job)};
      std::unique_lock lock(jobs_mu);
      jobs_cv.wait(lock, [&] { return job->done; });
      if (job->error) return *job->error;
      return ApiResponse{200, *job->result};
    });

    route("GET", "/api/admin/jobs/{}", [this](const Params& p, const ApiRequest&, const json&) {
      std::lock_guard lock(jobs_mu);
      const auto it = jobs.find(p[0]);
      if (it == jobs.end()) fail(ErrorCode::UnknownJob, "unknown job '" + p[0] + "'");
      return ApiResponse{200, job_json(*it->second)};
    });

    route("GET", "/api/admin/difficulty/{}", [this](const Params& p, const ApiRequest&, const json&) {
      require_family(p[0]);
      const auto table = engine.tiers(p[0]);
      auto records = json::array();
      std::map<std::string, std::size_t> counts{{"EASY", 0}, {"NORMAL", 0}, {"HARD", 0}};
      for (const auto& r : table->records()) {
        ++counts[std::string(to_string(r.tier))];
        records.push_back({{"group_id", r.group_id}, {"score", r.score}, {"tier", to_string(r.tier)}});
      }
      const auto view = store.snapshot(p[0]);
      auto labels = json::array();
      for (const auto& [id, l] : view->labels)
        labels.push_back({{"label_id", id}, {"name", l.name}, {"region", region_ids(l.region.cells)}});
      return ApiResponse{200,
                         {{"family_id", p[0]},
                          {"model_version", table->model_version()},
                          {"tier_counts", counts},
                          {"records", records},
                          {"labels", labels}}};
    });

    route("GET", "/api/admin/evaluate/{}", [this](const Params& p, const ApiRequest&, const json&) {
      require_family(p[0]);
      const auto model = engine.model(p[0]);
      if (!model) fail(ErrorCode::InsufficientData, "no trained model for " + p[0]);
      json out;
      if (config.heldout.count(p[0])) {
        out = evaluate(*model, heldout_examples(p[0])).to_json();
        out["source"] = "heldout";
      } else {
        const auto split = split_train_test(*store.snapshot(p[0]), 0.8, engine.config().split_seed);
        out = evaluate(*model, split.test.empty() ? split.train : split.test, engine.config().split_seed).to_json();
        out["source"] = "split";
      }
      out["model_version"] = engine.model_version(p[0]);
      return ApiResponse{200, out};
    });
  }
};

ApiService::ApiService(CorpusStore& store, GameEngine& engine, ServerConfig config)
    : impl_(), config_(std::move(config)) {
  impl_ = std::make_unique<Impl>(store, engine, config_);
  engine.set_retrain_hook([impl = impl_.get()](const std::string& family) { impl->launch(family, true); });
}

ApiService::~ApiService() {
  impl_->engine.set_retrain_hook(nullptr);
  impl_->shutdown();
}

ApiResponse ApiService::handle(const ApiRequest& request) { return impl_->dispatch(request); }

void ApiService::wait_idle() { impl_->wait_idle(); }

struct Application::Impl {
  ServerConfig config;
  SystemClock system_clock;
  CorpusStore store;
  GameEngine engine;
  ApiService api;
  httplib::Server http;
  std::thread thread;
  int port = -1;

  Impl(ServerConfig c, const Clock* clock)
      : config(std::move(c)),
        store(clock ? *clock : system_clock, config.data_dir, config.fsync_events),
        engine(store, clock ? *clock : system_clock, config.engine_config()),
        api(store, engine, config) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      ApiRequest r{req.method, req.path, {}, req.body};
      for (const auto& [k, v] : req.params) r.query.emplace(k, v);
      const auto out = api.handle(r);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    };
    http.Get(R"(/.*)", handler);
    http.Post(R"(/.*)", handler);
    http.Delete(R"(/.*)", handler);
    http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    http.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  }
};

Application::Application(ServerConfig config, const Clock* clock)
    : impl_(std::make_unique<Impl>(std::move(config), clock)) {}

Application::~Application() { stop(); }

int Application::bind() {
  if (impl_->port >= 0) return impl_->port;
  const auto& c = impl_->config;
  if (c.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(c.host);
  } else if (impl_->http.bind_to_port(c.host, c.port)) {
    impl_->port = c.port;
  }
  if (impl_->port < 0) fail(ErrorCode::Io, "cannot listen on " + c.host + ":" + std::to_string(c.port));
  return impl_->port;
}

void Application::run() {
  bind();
  impl_->http.listen_after_bind();
}

int Application::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void Application::stop() {
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

CorpusStore& Application::store() { return impl_->store; }
GameEngine& Application::engine() { return impl_->engine; }
ApiService& Application::api() { return impl_->api; }

}  // namespace dialingle
