#pragma once

#include <atomic>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "evload/registry.hpp"
#include "evload/scenario.hpp"
#include "evload/surrogate.hpp"

namespace evload {

struct Reply {
  int status = 200;
  nlohmann::json body;
  std::string timing;  // Server-Timing header, kept out of the body so identical requests give identical bodies
};

inline Reply error_reply(int status, const std::string& code, const std::string& message,
                         const std::string& field = {}) {
  Reply r{status, {{"error", code}, {"message", message}}, {}};
  if (!field.empty()) r.body["field"] = field;
  return r;
}

inline nlohmann::json profile_json(const LoadProfile& p) {
  return {{"dt", p.dt}, {"values", p.values}};
}

/// Scenario result trimmed for display: every profile downsampled to ≤ 288 points.
inline nlohmann::json display_json(const ScenarioResult& r) {
  nlohmann::json j;
  j["metrics"] = metrics_json(r);
  const LoadProfile total = display_profile(r.total);
  j["profiles"]["dt"] = total.dt;
  j["profiles"]["total"] = total.values;
  for (const auto& s : r.segments) {
    j["profiles"]["segments"][s.segment.key()] = resample(s.profile, total.dt).values;
    if (s.uncontrolled)
      j["profiles"]["uncontrolled"][s.segment.key()] = resample(*s.uncontrolled, total.dt).values;
  }
  return j;
}

/// Request handling independent of the transport.
class ScenarioService {
 public:
  explicit ScenarioService(std::shared_ptr<const ModelRegistry> registry, double async_threshold_seconds = 5.0,
                           double seconds_per_session = 2e-7)
      : reg_(std::move(registry)), threshold_(async_threshold_seconds), per_session_(seconds_per_session) {}

  Reply health() const { return {200, {{"status", "ok"}}, {}}; }
  Reply models() const { return {200, reg_->list_models(), {}}; }
  Reply rates() const { return {200, reg_->list_rates(), {}}; }

  Reply post_scenario(const std::string& body) {
    ScenarioConfig cfg;
    try {
      cfg = scenario_config_from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::parse_error& e) {
      return error_reply(400, "parse", e.what());
    } catch (const FieldError& e) {
      return error_reply(422, e.code(), e.what(), e.field());
    } catch (const Error& e) {
      return error_reply(422, e.code(), e.what());
    }
    for (const auto& [key, id] : cfg.control_assignment)
      if (!reg_->surrogates().count(id)) return error_reply(404, "not_found", "unknown surrogate id '" + id + "'");

    double sessions = 0;
    for (const auto& [seg, n] : segment_counts(cfg)) sessions += static_cast<double>(n);
    auto job = [reg = reg_, cfg]() -> Reply {
      try {
        const auto res = run_scenario(cfg, reg->models(), reg->surrogates());
        return {200, display_json(res), "simulate;dur=" + format_double(1000 * res.timings.at("total"))};
      } catch (const FieldError& e) {
        return error_reply(422, e.code(), e.what(), e.field());
      } catch (const Error& e) {
        return error_reply(e.code() == "not_found" ? 404 : 422, e.code(), e.what());
      }
    };
    if (sessions * per_session_ <= threshold_) return job();
    return submit(std::move(job));
  }

  Reply post_control_apply(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      std::string id = j.value("surrogate", j.value("surrogate_id", std::string()));
      if (id.empty()) return error_reply(422, "config", "surrogate: required", "surrogate");
      if (!reg_->surrogates().count(id)) return error_reply(404, "not_found", "unknown surrogate id '" + id + "'");
      if (!j.contains("profile") || !j["profile"].is_object())
        return error_reply(422, "config", "profile: expected {dt, values}", "profile");
      LoadProfile p;
      p.dt = j["profile"].value("dt", 0);
      p.values = j["profile"].value("values", std::vector<double>{});
      try {
        p.validate();
      } catch (const Error& e) {
        return error_reply(422, e.code(), e.what(), "profile");
      }
      Stopwatch clock;
      const auto out = apply(reg_->surrogate(id), p);
      return {200, {{"profile", profile_json(out)}, {"surrogate", id}}, "apply;dur=" + format_double(1000 * clock.seconds())};
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, "parse", e.what());
    } catch (const Error& e) {
      return error_reply(422, e.code(), e.what());
    }
  }

  /// Rate-design runs are always asynchronous.
  Reply post_rate_design(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      RateSchedule rate;
      if (j.contains("rate") && j["rate"].is_string()) {
        if (!reg_->rates().count(j["rate"].get<std::string>()))
          return error_reply(404, "not_found", "unknown rate id '" + j["rate"].get<std::string>() + "'");
        rate = reg_->rate(j["rate"].get<std::string>());
      } else if (j.contains("rate")) {
        try {
          rate = rate_from_json(j["rate"]);
        } catch (const Error& e) {
          return error_reply(422, e.code(), e.what(), "rate");
        }
      } else {
        return error_reply(422, "config", "rate: required", "rate");
      }
      ScenarioConfig cfg;
      try {
        cfg = scenario_config_from_json(j.value("config", nlohmann::json::object()));
      } catch (const FieldError& e) {
        return error_reply(422, e.code(), e.what(), "config." + e.field());
      }
      RateDesignOptions opt;
      opt.n_instances = j.value("n_instances", opt.n_instances);
      opt.n_vehicles = j.value("n_vehicles", opt.n_vehicles);
      const std::uint64_t seed = j.value("seed", std::uint64_t{0});
      if (opt.n_instances < 10) return error_reply(422, "config", "n_instances: must be ≥ 10", "n_instances");
      return submit([reg = reg_, rate, cfg, opt, seed]() -> Reply {
        try {
          const auto rep = rate_design_workflow(rate, reg->models(), cfg, seed, opt);
          auto body = to_json(rep);
          body["before"] = display_json(rep.before);
          body["after"] = display_json(rep.after);
          return {200, body, {}};
        } catch (const Error& e) {
          return error_reply(422, e.code(), e.what());
        }
      });
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, "parse", e.what());
    }
  }

  Reply poll(const std::string& token) {
    std::shared_future<Reply> f;
    {
      std::lock_guard lock(mutex_);
      auto it = jobs_.find(token);
      if (it == jobs_.end()) return error_reply(404, "not_found", "unknown job token '" + token + "'");
      f = it->second;
    }
    if (f.wait_for(std::chrono::seconds(0)) != std::future_status::ready)
      return {202, {{"status", "running"}, {"token", token}}, {}};
    return f.get();
  }

 private:
  Reply submit(std::function<Reply()> job) {
    const std::string token = "job-" + std::to_string(++counter_);
    auto f = std::async(std::launch::async, std::move(job)).share();
    std::lock_guard lock(mutex_);
    jobs_[token] = f;
    return {202, {{"status", "running"}, {"token", token}, {"poll", "/jobs/" + token}}, {}};
  }

  std::shared_ptr<const ModelRegistry> reg_;
  double threshold_;
  double per_session_;
  std::mutex mutex_;
  std::map<std::string, std::shared_future<Reply>> jobs_;
  std::atomic<std::uint64_t> counter_{0};
};

/// Wires a ScenarioService into an httplib server.
inline void install_routes(httplib::Server& svr, std::shared_ptr<ScenarioService> service) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    if (!r.timing.empty()) res.set_header("Server-Timing", r.timing);
    res.set_content(r.body.dump(), "application/json");
  };
  svr.Get("/health", [=](const httplib::Request&, httplib::Response& res) { send(res, service->health()); });
  svr.Get("/models", [=](const httplib::Request&, httplib::Response& res) { send(res, service->models()); });
  svr.Get("/rates", [=](const httplib::Request&, httplib::Response& res) { send(res, service->rates()); });
  svr.Post("/scenarios",
           [=](const httplib::Request& req, httplib::Response& res) { send(res, service->post_scenario(req.body)); });
  svr.Post("/control/apply", [=](const httplib::Request& req, httplib::Response& res) {
    send(res, service->post_control_apply(req.body));
  });
  svr.Post("/rate-design",
           [=](const httplib::Request& req, httplib::Response& res) { send(res, service->post_rate_design(req.body)); });
  svr.Get(R"(/jobs/([A-Za-z0-9-]+))", [=](const httplib::Request& req, httplib::Response& res) {
    send(res, service->poll(req.matches[1]));
  });
  svr.set_error_handler([=](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const auto r = error_reply(res.status, res.status == 404 ? "not_found" : "http",
                               "no route for " + req.method + " " + req.path);
    res.set_content(r.body.dump(), "application/json");
  });
  svr.set_exception_handler([=](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, "internal", msg));
  });
}

}  // namespace evload
