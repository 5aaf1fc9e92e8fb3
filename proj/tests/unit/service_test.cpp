#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "evload/registry.hpp"
#include "evload/service.hpp"
#include "support.hpp"

using namespace evload;
namespace fs = std::filesystem;

namespace {

/// Shipped registry plus an identity surrogate, copied to a scratch directory.
std::shared_ptr<const ModelRegistry> scratch_registry() {
  static std::shared_ptr<const ModelRegistry> reg = [] {
    const auto dir = fs::temp_directory_path() / "evload_service_test";
    fs::remove_all(dir);
    fs::copy(test::source_path("models"), dir, fs::copy_options::recursive);
    ModelRegistry::save(dir, "surrogates", "identity", to_json(test::identity_surrogate()));
    return std::make_shared<const ModelRegistry>(ModelRegistry::load(dir));
  }();
  return reg;
}

std::string small_config(double drivers = 20000) {
  auto j = to_json(load_scenario_config(test::source_path("configs/base_case.json")));
  j["total_drivers"] = drivers;
  return j.dump();
}

Reply wait_for(ScenarioService& svc, const std::string& token) {
  for (int i = 0; i < 6000; ++i) {
    auto r = svc.poll(token);
    if (r.status != 202) return r;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return error_reply(504, "timeout", "job did not finish");
}

}  // namespace

TEST(Service, HealthModelsRates) {
  ScenarioService svc(scratch_registry());
  EXPECT_EQ(svc.health().status, 200);
  const auto m = svc.models();
  EXPECT_EQ(m.body["mixtures"].size(), 10u);
  bool found = false;
  for (const auto& s : m.body["surrogates"]) found |= s["id"] == "identity";
  EXPECT_TRUE(found);
  EXPECT_GE(svc.rates().body.size(), 6u);
}

TEST(Service, ScenarioBodiesAreDeterministic) {
  ScenarioService svc(scratch_registry());
  const auto a = svc.post_scenario(small_config()), b = svc.post_scenario(small_config());
  ASSERT_EQ(a.status, 200) << a.body.dump();
  EXPECT_EQ(a.body.dump(), b.body.dump());
  EXPECT_LE(a.body["profiles"]["total"].size(), 288u);
  EXPECT_FALSE(a.timing.empty());
}

TEST(Service, InvalidSharesAre422WithField) {
  ScenarioService svc(scratch_registry());
  auto j = nlohmann::json::parse(small_config());
  j["segment_shares"]["workplace"] = 0.05;
  const auto r = svc.post_scenario(j.dump());
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body["field"], "segment_shares");
  EXPECT_EQ(svc.post_scenario("{not json").status, 400);
}

TEST(Service, UnknownSurrogateIs404) {
  ScenarioService svc(scratch_registry());
  auto j = nlohmann::json::parse(small_config());
  j["control_assignment"]["workplace_l2_weekday"] = "missing";
  EXPECT_EQ(svc.post_scenario(j.dump()).status, 404);
  const nlohmann::json body = {{"surrogate", "missing"}, {"profile", {{"dt", 15}, {"values", std::vector<double>(96, 1.0)}}}};
  EXPECT_EQ(svc.post_control_apply(body.dump()).status, 404);
}

TEST(Service, IdentityControlEchoesProfile) {
  ScenarioService svc(scratch_registry());
  std::vector<double> v(96);
  for (int k = 0; k < 96; ++k) v[k] = 10 + 5 * std::sin(k / 7.0);
  const nlohmann::json body = {{"surrogate", "identity"}, {"profile", {{"dt", 15}, {"values", v}}}};
  const auto r = svc.post_control_apply(body.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const auto out = r.body["profile"]["values"].get<std::vector<double>>();
  ASSERT_EQ(out.size(), v.size());
  for (int k = 0; k < 96; ++k) EXPECT_NEAR(out[k], v[k], 1e-6);
  const nlohmann::json wrong = {{"surrogate", "identity"}, {"profile", {{"dt", 15}, {"values", {1, 2}}}}};
  EXPECT_EQ(svc.post_control_apply(wrong.dump()).status, 422);
}

TEST(Service, LargeScenarioGoesAsync) {
  ScenarioService svc(scratch_registry(), 1e-3);
  const auto r = svc.post_scenario(small_config(100000));
  ASSERT_EQ(r.status, 202);
  const auto done = wait_for(svc, r.body["token"]);
  EXPECT_EQ(done.status, 200);
  EXPECT_TRUE(done.body.contains("metrics"));
  EXPECT_EQ(svc.poll("job-999").status, 404);
}

TEST(Service, RateDesignRunsAsJob) {
  ScenarioService svc(scratch_registry());
  const nlohmann::json body = {{"rate", "peak_min"},
                               {"config", nlohmann::json::parse(small_config())},
                               {"n_instances", 20},
                               {"n_vehicles", 40},
                               {"seed", 3}};
  const auto r = svc.post_rate_design(body.dump());
  ASSERT_EQ(r.status, 202) << r.body.dump();
  const auto done = wait_for(svc, r.body["token"]);
  ASSERT_EQ(done.status, 200) << done.body.dump();
  EXPECT_GT(done.body["speedup"].get<double>(), 0);
  EXPECT_EQ(svc.post_rate_design(R"({"rate": "nope"})").status, 404);
}

TEST(Registry, RejectsSurrogateForChangedRate) {
  const auto dir = fs::temp_directory_path() / "evload_registry_test";
  fs::remove_all(dir);
  auto rate = test::flat_rate(0.1, "changing");
  ModelRegistry::save(dir, "rates", "changing", to_json(rate));
  auto s = test::identity_surrogate();
  s.rate_name = "changing";
  s.rate_hash = rate_hash(rate);
  ModelRegistry::save(dir, "surrogates", "s", to_json(s));
  EXPECT_NO_THROW(ModelRegistry::load(dir));
  rate.energy_prices[0].price = 0.2;
  ModelRegistry::save(dir, "rates", "changing", to_json(rate));
  try {
    ModelRegistry::load(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "provenance");
  }
  EXPECT_THROW(ModelRegistry::load(dir / "absent"), Error);
  fs::remove_all(dir);
}

TEST(Http, RoutesServeJson) {
  auto service = std::make_shared<ScenarioService>(scratch_registry());
  httplib::Server svr;
  install_routes(svr, service);
  const int port = svr.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(nlohmann::json::parse(health->body)["status"], "ok");

  auto a = cli.Post("/scenarios", small_config(), "application/json");
  auto b = cli.Post("/scenarios", small_config(), "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  EXPECT_TRUE(a->has_header("Server-Timing"));

  auto bad = cli.Post("/scenarios", R"({"segment_shares": {"residential": 0.5}})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);

  auto missing = cli.Get("/nowhere");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(nlohmann::json::parse(missing->body)["error"], "not_found");

  auto rates = cli.Get("/rates");
  ASSERT_TRUE(rates);
  EXPECT_EQ(rates->status, 200);

  svr.stop();
  th.join();
}
