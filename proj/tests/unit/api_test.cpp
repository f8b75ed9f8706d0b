#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>
#include <httplib.h>

#include "dialingle/server.hpp"
#include "fixtures.hpp"

using namespace dialingle;
using namespace dialingle::testing;
using nlohmann::json;

namespace {

std::vector<std::string> api_corpus() {
  std::vector<std::string> lines;
  for (int i = 1; i <= 12; ++i) {
    const auto n = std::to_string(i);
    lines.push_back(corpus_line("g" + n, "standard " + n,
                                {{"aaa grüezi " + n, {"a"}}, {"bbb moin " + n, {"b"}}, {"ccc servus " + n, {"c"}}}));
  }
  return lines;
}

ServerConfig api_config(const std::filesystem::path& dir) {
  ServerConfig c;
  c.port = 0;
  c.data_dir = dir;
  c.model_dir = dir / "models";
  c.retrain_mode = RetrainMode::Manual;
  c.fsync_events = false;
  c.model_config.hash_buckets = 1u << 12;
  c.model_config.embedding_dim = 4;
  c.model_config.epochs = 5;
  return c;
}

class ApiTest : public ::testing::Test {
 protected:
  void SetUp() override {
    app = std::make_unique<Application>(api_config(dir.path()));
    app->store().register_family(make_registry());
    app->store().set_divisions("fam", make_divisions());
    ingest_lines(app->store(), "fam", api_corpus());
  }

  ApiResponse call(const std::string& method, const std::string& path, const json& body = nullptr,
                   std::map<std::string, std::string> query = {}) {
    return app->api().handle({method, path, std::move(query), body.is_null() ? "" : body.dump()});
  }

  std::string new_session(bool familiar) {
    const auto r = call("POST", "/api/sessions", {{"family_id", "fam"}, {"familiar", familiar}});
    EXPECT_EQ(r.status, 201);
    return r.body.at("session_id").get<std::string>();
  }

  TempDir dir;
  std::unique_ptr<Application> app;
};

}  // namespace

TEST_F(ApiTest, FamiliesList) {
  const auto r = call("GET", "/api/families");
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body.size(), 1u);
  EXPECT_EQ(r.body[0]["family_id"], "fam");
  EXPECT_EQ(r.body[0]["pin"], json({1.0, 1.0}));
  EXPECT_EQ(r.body[0]["writing_direction"], "LTR");
}

TEST_F(ApiTest, FamilyDetailAndStats) {
  auto r = call("GET", "/api/families/fam");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["labels"].size(), 3u);
  EXPECT_EQ(r.body["divisions"].size(), 4u);
  EXPECT_EQ(r.body["labels"][0]["region"], json({"2:2", "3:2"}));
  r = call("GET", "/api/families/fam/stats");
  EXPECT_EQ(r.body["groups"], 12);
  EXPECT_EQ(r.body["variants"], 36);
  EXPECT_EQ(r.body["model_version"], 0);
  EXPECT_EQ(call("GET", "/api/families/none").status, 404);
  EXPECT_EQ(call("GET", "/api/families/none").body["code"], "unknown_family");
}

TEST_F(ApiTest, RoutingErrors) {
  EXPECT_EQ(call("GET", "/api/nothing").status, 404);
  EXPECT_EQ(call("DELETE", "/api/families").status, 405);
  const auto bad = app->api().handle({"POST", "/api/sessions", {}, "{not json"});
  EXPECT_EQ(bad.status, 400);
  EXPECT_EQ(bad.body["code"], "bad_request");
  EXPECT_EQ(call("POST", "/api/sessions", {{"family_id", "fam"}}).status, 400);
  EXPECT_EQ(call("POST", "/api/sessions", {{"family_id", "fam"}, {"familiar", "yes"}}).status, 400);
  EXPECT_EQ(call("POST", "/api/sessions", {{"family_id", "zz"}, {"familiar", true}}).status, 404);
  EXPECT_EQ(call("GET", "/api/sessions/unknown").status, 404);
}

TEST_F(ApiTest, QuizFlow) {
  const auto sid = new_session(true);
  const std::string base = "/api/sessions/" + sid;
  auto r = call("GET", base);
  EXPECT_EQ(r.body["path"], "QUIZ");
  EXPECT_EQ(r.body["stage"], "QUIZ");

  EXPECT_EQ(call("POST", base + "/quiz/submit", {{"text", "x"}}).body["code"], "no_open_turn");
  r = call("GET", base + "/quiz");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["tier"], "EASY");
  EXPECT_EQ(call("GET", base + "/quiz").status, 409);
  EXPECT_EQ(call("POST", base + "/quiz/submit", {{"text", "  "}}).body["code"], "empty_text");
  EXPECT_EQ(call("POST", base + "/quiz/submit", json::object()).status, 400);

  r = call("POST", base + "/quiz/submit", {{"text", "aaa neu"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["prediction"].size(), 3u);
  EXPECT_GE(r.body["predicted_labels"].size(), 1u);
  EXPECT_EQ(r.body["regions"].size(), r.body["predicted_labels"].size());

  EXPECT_EQ(call("POST", base + "/review", {{"decision", "maybe"}}).status, 400);
  r = call("POST", base + "/review", {{"decision", "confirm"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["level"], "NORMAL");
  EXPECT_EQ(r.body["variant_added"], true);
  EXPECT_EQ(call("POST", base + "/review", {{"decision", "confirm"}}).status, 409);

  EXPECT_EQ(call("POST", base + "/difficulty", {{"tier", "HARD"}}).body["level"], "HARD");
  EXPECT_EQ(call("POST", base + "/difficulty", {{"tier", "MEDIUM"}}).status, 400);

  call("GET", base + "/quiz");
  call("POST", base + "/quiz/submit", {{"text", "eppis"}});
  r = call("POST", base + "/review",
           {{"decision", {{"new_dialect", "Upper Valley"}}},
            {"geo_edit", {{"add", {"1:1"}}, {"lasso_add", {{0.4, 0.4}, {0.6, 0.4}, {0.6, 0.6}, {0.4, 0.6}}}}}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["label_id"], "upper-valley");
  EXPECT_EQ(r.body["level"], "HARD");
  EXPECT_GE(r.body["region"]["cells"].size(), 2u);

  EXPECT_EQ(call("DELETE", base).status, 200);
  EXPECT_EQ(call("GET", base).status, 404);
}

TEST_F(ApiTest, CorrectionErrorsMapToStatus) {
  const auto base = "/api/sessions/" + new_session(true);
  call("GET", base + "/quiz");
  call("POST", base + "/quiz/submit", {{"text", "x"}});
  EXPECT_EQ(call("POST", base + "/review", {{"decision", {{"label", "zz"}}}}).status, 404);
  EXPECT_EQ(call("POST", base + "/review", {{"decision", {{"new_dialect", "Alpha"}}}}).body["code"],
            "duplicate_dialect_name");
  EXPECT_EQ(call("POST", base + "/review", {{"decision", {{"label", "a"}}}, {"geo_edit", {{"add", {"900:900"}}}}})
                .body["code"],
            "out_of_bounds");
  EXPECT_EQ(call("POST", base + "/review", {{"decision", {{"label", "a"}}}}).status, 200);
}

TEST_F(ApiTest, SuggestEndpoint) {
  const auto r = call("GET", "/api/families/fam/suggest", nullptr, {{"prefix", "gr"}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["words"], json({"grüezi"}));
  EXPECT_EQ(call("GET", "/api/families/fam/suggest").status, 400);
}

TEST_F(ApiTest, MatchFlow) {
  const auto base = "/api/sessions/" + new_session(false);
  EXPECT_EQ(call("GET", base + "/quiz").status, 409);
  auto r = call("GET", base + "/match");
  ASSERT_EQ(r.status, 200);
  ASSERT_EQ(r.body["items"].size(), 3u);
  EXPECT_EQ(call("POST", base + "/match/0", json::object()).status, 400);
  EXPECT_EQ(call("POST", base + "/match/x", {{"divisions", {"sw"}}}).status, 400);
  r = call("POST", base + "/match/0", {{"divisions", {"sw"}}});
  ASSERT_EQ(r.status, 200);
  EXPECT_TRUE(r.body["score"] == 1.0 || r.body["score"] == 0.0);
  EXPECT_EQ(call("POST", base + "/match/0", {{"divisions", {"sw"}}}).status, 409);
  r = call("POST", base + "/match/1", {{"lasso", {{0.1, 0.1}, {1.9, 0.1}, {1.9, 0.9}, {0.1, 0.9}}}});
  ASSERT_EQ(r.status, 200);
  EXPECT_DOUBLE_EQ(r.body["score"].get<double>(), 0.5);  // sw and se against a single reference division
  r = call("POST", base + "/match/2", {{"divisions", json::array()}});
  EXPECT_EQ(r.body["rounds_played"], 1);
  r = call("POST", base + "/match/2/correction", {{"divisions", {"ne"}}});
  EXPECT_EQ(r.status, 201);
  EXPECT_GT(r.body["event_id"].get<int>(), 0);
}

TEST_F(ApiTest, RetrainAndAdmin) {
  EXPECT_EQ(call("GET", "/api/admin/evaluate/fam").status, 409);
  auto r = call("GET", "/api/admin/difficulty/fam");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["model_version"], 0);
  EXPECT_EQ(r.body["tier_counts"], json({{"EASY", 2}, {"HARD", 3}, {"NORMAL", 7}}));

  r = call("POST", "/api/admin/retrain", {{"family_id", "fam"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["model_version"], 1);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "models" / "fam.dlg"));
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "models" / "fam.dlg"), r.body["byte_size"].get<std::size_t>());

  r = call("POST", "/api/admin/retrain", {{"family_id", "fam"}}, {{"async", "1"}});
  ASSERT_EQ(r.status, 202);
  const auto job = r.body["job_id"].get<std::string>();
  app->api().wait_idle();
  r = call("GET", "/api/admin/jobs/" + job);
  EXPECT_EQ(r.body["state"], "done");
  EXPECT_EQ(r.body["result"]["model_version"], 2);
  EXPECT_EQ(call("GET", "/api/admin/jobs/job-99").status, 404);
  EXPECT_EQ(call("POST", "/api/admin/retrain", {{"family_id", "zz"}}).status, 404);

  r = call("GET", "/api/admin/evaluate/fam");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["source"], "split");
  EXPECT_EQ(r.body["model_version"], 2);
  EXPECT_EQ(call("GET", "/api/admin/difficulty/fam").body["model_version"], 2);
}

TEST_F(ApiTest, DeferredRetrainRunsInBackground) {
  app.reset();
  auto cfg = api_config(dir.path());
  cfg.retrain_mode = RetrainMode::Deferred;
  cfg.retrain_threshold = 1;
  app = std::make_unique<Application>(cfg);
  const auto base = "/api/sessions/" + new_session(true);
  call("GET", base + "/quiz");
  call("POST", base + "/quiz/submit", {{"text", "x"}});
  call("POST", base + "/review", {{"decision", "confirm"}});
  app->api().wait_idle();
  EXPECT_GE(call("GET", "/api/families/fam/stats").body["model_version"].get<int>(), 1);
}

// Drives every endpoint over real HTTP. When DIALINGLE_API_DUMP names a
// directory, each response body is written there for schema validation.
TEST_F(ApiTest, HttpEndToEnd) {
  const char* dump_env = std::getenv("DIALINGLE_API_DUMP");
  const std::filesystem::path dump_dir = dump_env ? dump_env : "";
  if (!dump_dir.empty()) std::filesystem::create_directories(dump_dir);

  const int port = app->start();
  httplib::Client client("127.0.0.1", port);
  auto check = [&](const httplib::Result& res, int status, const std::string& name) {
    EXPECT_TRUE(res) << name;
    if (!res) return json();
    EXPECT_EQ(res->status, status) << name << ": " << res->body;
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
    auto body = json::parse(res->body);
    if (!dump_dir.empty()) std::ofstream(dump_dir / (name + ".json")) << body.dump(2);
    return body;
  };
  auto post = [&](const std::string& path, const json& body) {
    return client.Post(path, body.dump(), "application/json");
  };

  check(client.Get("/api/families"), 200, "families");
  check(client.Get("/api/families/fam"), 200, "family");
  check(client.Get("/api/families/fam/stats"), 200, "stats");
  check(client.Get("/api/families/fam/suggest?prefix=gr"), 200, "suggest");
  check(client.Get("/api/families/nope"), 404, "error");

  const auto session = check(post("/api/sessions", {{"family_id", "fam"}, {"familiar", true}}), 201, "session");
  const auto base = "/api/sessions/" + session["session_id"].get<std::string>();
  check(client.Get(base), 200, "session_get");
  check(client.Get(base + "/quiz"), 200, "quiz");
  check(post(base + "/quiz/submit", {{"text", "aaa grüezi neu"}}), 200, "submit");
  check(post(base + "/review", {{"decision", "confirm"}}), 200, "review_confirm");
  check(post(base + "/difficulty", {{"tier", "HARD"}}), 200, "difficulty");
  check(client.Get(base + "/quiz"), 200, "quiz_2");
  check(post(base + "/quiz/submit", {{"text", "öppis anders"}}), 200, "submit_2");
  check(post(base + "/review", {{"decision", {{"label", "c"}}}, {"geo_edit", {{"add", {"1:1"}}, {"remove", {"8:2"}}}}}),
        200, "review_correct");
  check(client.Delete(base), 200, "session_end");

  const auto match = check(post("/api/sessions", {{"family_id", "fam"}, {"familiar", false}}), 201, "session_match");
  const auto mbase = "/api/sessions/" + match["session_id"].get<std::string>();
  check(client.Get(mbase + "/match"), 200, "match");
  check(post(mbase + "/match/0", {{"divisions", {"sw"}}}), 200, "match_answer");
  check(post(mbase + "/match/0/correction", {{"divisions", {"se"}}}), 201, "match_correction");

  check(post("/api/admin/retrain", {{"family_id", "fam"}}), 200, "retrain");
  const auto job = check(post("/api/admin/retrain?async=1", {{"family_id", "fam"}}), 202, "retrain_async");
  app->api().wait_idle();
  check(client.Get("/api/admin/jobs/" + job["job_id"].get<std::string>()), 200, "job");
  check(client.Get("/api/admin/difficulty/fam"), 200, "difficulty_report");
  check(client.Get("/api/admin/evaluate/fam"), 200, "evaluate");

  const auto options = client.Options("/api/families");
  ASSERT_TRUE(options);
  EXPECT_EQ(options->status, 204);
  app->stop();
}

TEST(ServerConfigTest, ParsesAndResolvesPaths) {
  const auto c = ServerConfig::from_json(
      {{"port", 0}, {"data_dir", "d"}, {"autotune", {{"candidates", 4}}}, {"retrain_mode", "inline"},
       {"heldout", {{"fam", "h.jsonl"}}}},
      "/base");
  EXPECT_EQ(c.data_dir, std::filesystem::path("/base/d"));
  EXPECT_EQ(c.autotune->candidates, 4u);
  EXPECT_EQ(c.retrain_mode, RetrainMode::Inline);
  EXPECT_EQ(c.heldout.at("fam"), std::filesystem::path("/base/h.jsonl"));
  EXPECT_EQ(c.engine_config().model_dir, std::filesystem::path("/base/d/models"));
  EXPECT_EQ(code_of([] { ServerConfig::from_json({{"retrain_mode", "sometimes"}}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { ServerConfig::from_json({{"tau", 0}}); }), ErrorCode::InvalidConfig);
}
