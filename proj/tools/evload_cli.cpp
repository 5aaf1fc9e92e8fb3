#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "evload/chargeopt.hpp"
#include "evload/gmm.hpp"
#include "evload/registry.hpp"
#include "evload/scenario.hpp"
#include "evload/service.hpp"
#include "evload/session.hpp"
#include "evload/surrogate.hpp"

namespace fs = std::filesystem;
using namespace evload;

namespace {

std::vector<Segment> spec_segments(const GroundTruthSpec& spec, const std::string& which) {
  std::vector<Segment> out;
  if (which == "all") {
    for (const auto& [seg, s] : spec.segments) out.push_back(seg);
  } else {
    out.push_back(parse_segment_key(which));
  }
  return out;
}

std::vector<int> g_range(int lo, int hi) {
  if (lo < 1 || hi < lo) throw Error("argument", "G range must satisfy 1 ≤ g-min ≤ g-max");
  std::vector<int> r;
  for (int g = lo; g <= hi; ++g) r.push_back(g);
  return r;
}

nlohmann::json fit_segment(const std::vector<Session>& sessions, const Segment& seg, const std::vector<int>& gs,
                           int restarts, std::uint64_t seed, bool with_duration) {
  if (sessions.empty()) throw Error("argument", "no sessions for segment " + seg.key());
  EmOptions opt;
  opt.restarts = restarts;
  opt.seed = seed;
  const auto pts = to_points(sessions);
  auto sel = select_components(pts, gs, opt);
  SegmentModel sm;
  sm.mixture = sel.chosen();
  sm.mixture.segment = seg.key();
  if (with_duration) sm.duration = DurationModel::fit(sessions);
  auto j = to_json(sm);
  j["selection"] = {{"G_values", sel.G_values}, {"bic", sel.bic_values}, {"chosen_G", sel.chosen_G},
                    {"elbow_G", sel.elbow_G}, {"warnings", sel.warnings}};
  return j;
}

void print_mixture(const nlohmann::json& j) {
  std::cout << "mixture model " << j.value("segment", std::string("?")) << "\n";
  std::cout << "  G = " << j.at("G") << "\n";
  if (j.contains("selection")) {
    const auto& s = j["selection"];
    std::cout << "  BIC curve (chosen G=" << s["chosen_G"] << ", elbow G=" << s["elbow_G"] << "):\n";
    for (std::size_t i = 0; i < s["G_values"].size(); ++i)
      std::cout << "    G=" << s["G_values"][i] << "  BIC=" << std::fixed << std::setprecision(2)
                << s["bic"][i].get<double>() << "\n";
  }
  std::cout << std::defaultfloat << std::setprecision(6);
  std::cout << "  weights / means (start min, energy kWh):\n";
  for (std::size_t g = 0; g < j["weights"].size(); ++g)
    std::cout << "    " << j["weights"][g].get<double>() << "  (" << j["means"][g][0].get<double>() << ", "
              << j["means"][g][1].get<double>() << ")\n";
  if (j.contains("duration"))
    std::cout << "  duration: lognormal(log_mean=" << j["duration"]["log_mean"].get<double>()
              << ", log_std=" << j["duration"]["log_std"].get<double>() << ")\n";
}

void print_surrogate(const nlohmann::json& j) {
  std::cout << "surrogate model (" << j.at("regressor").get<std::string>() << ")\n"
            << "  dt = " << j.at("dt") << ", dimension = " << j.at("dimension") << "\n"
            << "  rate = " << j.value("rate_name", std::string()) << "\n"
            << "  hyperparameters = " << j.at("hyperparameters").dump() << "\n"
            << "  scores = " << j.at("scores").dump() << "\n"
            << "  provenance = " << j.at("provenance").dump() << "\n";
}

void report(const std::string& path) {
  if (fs::is_directory(path)) {
    const auto metrics = fs::path(path) / "metrics.json";
    const auto rd = fs::path(path) / "rate_design.json";
    if (fs::exists(rd)) {
      std::cout << load_json(rd.string()).dump(2) << "\n";
      return;
    }
    if (!fs::exists(metrics)) throw Error("io", path + " holds neither metrics.json nor rate_design.json");
    const auto m = load_json(metrics.string());
    std::cout << "scenario " << m.value("name", std::string()) << " (seed " << m.value("seed", 0ULL) << ")\n"
              << "  peak " << m["peak_kw"].get<double>() / 1000 << " MW at minute " << m["peak_minute"] << "\n"
              << "  energy " << m["energy_kwh"].get<double>() / 1000 << " MWh\n";
    for (auto it = m["segments"].begin(); it != m["segments"].end(); ++it)
      std::cout << "  " << std::left << std::setw(28) << it.key() << std::right << " sessions=" << it.value()["sessions"]
                << " peak_kW=" << it.value()["peak_kw"].get<double>() << "\n";
    return;
  }
  const auto j = load_json(path);
  const auto kind = j.value("kind", std::string());
  if (kind == "mixture_model")
    print_mixture(j);
  else if (kind == "surrogate_model")
    print_surrogate(j);
  else
    std::cout << j.dump(2) << "\n";
}

void write_scenario(const ScenarioResult& res, const fs::path& out) {
  fs::create_directories(out);
  write_profiles_csv(profile_columns(res), (out / "profiles.csv").string());
  for (const auto& s : res.segments)
    if (s.uncontrolled)
      write_profiles_csv({{s.segment.key() + "_uncontrolled", resample(*s.uncontrolled, s.profile.dt)}, {s.segment.key(), s.profile}},
                         (out / (s.segment.key() + "_control.csv")).string());
  save_json(metrics_json(res), (out / "metrics.json").string());
  save_json(timings_json(res), (out / "timings.json").string());
}

std::map<RegressorKind, std::vector<Hyperparameters>> small_grids() {
  std::map<RegressorKind, std::vector<Hyperparameters>> g;
  Hyperparameters rf;
  rf.n_trees = 50;
  rf.max_depth = 8;
  g[RegressorKind::RandomForest] = {rf};
  Hyperparameters mlp;
  mlp.hidden = {64};
  mlp.epochs = 100;
  g[RegressorKind::MLP] = {mlp};
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EV charging scenario engine"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "Sample synthetic sessions from a ground-truth spec");
  std::string spec_path = "data/ground_truth.json", segment = "all", out;
  std::size_t n = 10000;
  gen->add_option("--spec", spec_path, "Ground-truth spec JSON")->check(CLI::ExistingFile);
  gen->add_option("--segment", segment, "Segment key or 'all'");
  gen->add_option("-n,--n", n, "Sessions per segment");
  gen->add_option("--seed", seed);
  gen->add_option("--out", out, "CSV file (one segment) or directory (all)")->required();

  // fit-gmm
  auto* fitg = app.add_subcommand("fit-gmm", "Fit a mixture model with BIC selection");
  std::string sessions_path;
  int g_min = 1, g_max = 8, restarts = 5;
  bool no_duration = false;
  fitg->add_option("--sessions", sessions_path)->required()->check(CLI::ExistingFile);
  fitg->add_option("--segment", segment, "Segment key (default: from the data)");
  fitg->add_option("--g-min", g_min);
  fitg->add_option("--g-max", g_max);
  fitg->add_option("--restarts", restarts);
  fitg->add_flag("--no-duration", no_duration, "Do not fit the plug-in duration model");
  fitg->add_option("--seed", seed);
  fitg->add_option("--out", out)->required();

  // fit-all
  auto* fita = app.add_subcommand("fit-all", "Generate data and fit a mixture for every spec segment into a registry");
  std::string models_dir = "models", rates_dir;
  fita->add_option("--spec", spec_path)->check(CLI::ExistingFile);
  fita->add_option("-n,--n", n);
  fita->add_option("--g-min", g_min);
  fita->add_option("--g-max", g_max);
  fita->add_option("--restarts", restarts);
  fita->add_option("--seed", seed);
  fita->add_option("--models-dir", models_dir);
  fita->add_option("--rates-dir", rates_dir, "Copy these rate files into the registry");

  // train-surrogate
  auto* train = app.add_subcommand("train-surrogate", "Build LP training data and fit a control surrogate");
  std::string rate_path, model_path, kind = "ridge", report_path;
  std::size_t instances = 1000, vehicles = 250;
  int dt = 15;
  std::vector<std::string> compare_kinds;
  train->add_option("--rate", rate_path)->required()->check(CLI::ExistingFile);
  auto* src_s = train->add_option("--sessions", sessions_path, "Session pool CSV to resample");
  auto* src_m = train->add_option("--model", model_path, "Mixture model JSON with duration model");
  src_s->excludes(src_m);
  train->add_option("--instances", instances);
  train->add_option("--vehicles", vehicles);
  train->add_option("--dt", dt);
  train->add_option("--kind", kind, "linear | ridge | random_forest | mlp");
  train->add_option("--compare", compare_kinds, "Also write a model-selection report over these kinds");
  train->add_option("--report", report_path, "Path of the model-selection report");
  train->add_option("--seed", seed);
  train->add_option("--out", out)->required();

  // optimize
  auto* optc = app.add_subcommand("optimize", "Solve one charging-control instance exactly");
  optc->add_option("--sessions", sessions_path)->required()->check(CLI::ExistingFile);
  optc->add_option("--rate", rate_path)->required()->check(CLI::ExistingFile);
  optc->add_option("--dt", dt);
  optc->add_option("--out", out, "Profile CSV (uncontrolled and controlled)")->required();

  // run-scenario
  auto* runs = app.add_subcommand("run-scenario", "Simulate a scenario");
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> dt_override;
  runs->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  runs->add_option("--models-dir", models_dir);
  runs->add_option("--seed", seed_override);
  runs->add_option("--dt", dt_override, "Output resolution in minutes");
  runs->add_option("--out", out)->required();

  // rate-design
  auto* rd = app.add_subcommand("rate-design", "Evaluate a proposed rate through a trained surrogate");
  rd->add_option("--rate", rate_path)->required()->check(CLI::ExistingFile);
  rd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  rd->add_option("--models-dir", models_dir);
  rd->add_option("--instances", instances);
  rd->add_option("--vehicles", vehicles);
  rd->add_option("--dt", dt);
  rd->add_option("--seed", seed);
  rd->add_option("--out", out)->required();

  // report
  auto* rep = app.add_subcommand("report", "Summarize a model file or a result directory");
  std::string target;
  rep->add_option("path", target)->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Serve the HTTP API");
  std::string host = "127.0.0.1";
  int port = 8080;
  srv->add_option("--models-dir", models_dir);
  srv->add_option("--host", host);
  srv->add_option("--port", port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const auto spec = load_ground_truth(spec_path);
      const auto segs = spec_segments(spec, segment);
      if (segment == "all") {
        fs::create_directories(out);
        for (const auto& s : segs) {
          auto r = generate_sessions_detailed(spec, s, n, derive_seed(seed, hash_string(s.key())));
          write_sessions_csv(r.sessions, (fs::path(out) / (s.key() + ".csv")).string());
          std::cout << s.key() << ": " << n << " sessions, zero-energy fraction " << r.zero_energy_fraction() << "\n";
        }
      } else {
        auto r = generate_sessions_detailed(spec, segs.front(), n, seed);
        write_sessions_csv(r.sessions, out);
        std::cout << segs.front().key() << ": " << n << " sessions, zero-energy fraction " << r.zero_energy_fraction()
                  << "\n";
      }
    } else if (*fitg) {
      const auto sessions = read_sessions_csv(sessions_path);
      if (sessions.empty()) throw Error("argument", sessions_path + " holds no sessions");
      const Segment seg = segment == "all" ? sessions.front().segment : parse_segment_key(segment);
      const auto j = fit_segment(sessions, seg, g_range(g_min, g_max), restarts, seed, !no_duration);
      save_json(j, out);
      print_mixture(j);
    } else if (*fita) {
      const auto spec = load_ground_truth(spec_path);
      const auto gs = g_range(g_min, g_max);
      for (const auto& [seg, s] : spec.segments) {
        Stopwatch clock;
        const auto sessions = generate_sessions(spec, seg, n, derive_seed(seed, hash_string(seg.key())));
        const auto j = fit_segment(sessions, seg, gs, restarts, derive_seed(seed, hash_string(seg.key()) + 1), true);
        ModelRegistry::save(models_dir, "mixtures", seg.key(), j);
        std::cout << seg.key() << ": G=" << j["G"] << " (" << clock.seconds() << " s)\n";
      }
      ModelRegistry::save(models_dir, "ground_truth", "ground_truth", to_json(spec));
      if (!rates_dir.empty())
        for (const auto& e : fs::directory_iterator(rates_dir))
          if (e.path().extension() == ".json")
            ModelRegistry::save(models_dir, "rates", e.path().stem().string(), to_json(load_rate(e.path().string())));
    } else if (*train) {
      const auto rate = load_rate(rate_path);
      SessionSource source;
      if (!sessions_path.empty()) {
        source = pool_source(read_sessions_csv(sessions_path));
      } else if (!model_path.empty()) {
        const auto sm = segment_model_from_json(load_json(model_path));
        if (!sm.duration) throw Error("model", model_path + " has no duration model");
        source = mixture_source(sm.mixture, *sm.duration, parse_segment_key(sm.mixture.segment));
      } else {
        throw Error("argument", "one of --sessions or --model is required");
      }
      Stopwatch clock;
      const auto ts = build_training_set(source, rate, instances, vehicles, dt, seed);
      std::cout << "training set: " << ts.size() << " instances in " << clock.seconds() << " s (mean LP "
                << ts.mean_lp_seconds() << " s); clipped " << ts.clips.clipped_sessions << " sessions\n";
      std::vector<RegressorKind> kinds{parse_regressor_kind(kind)};
      for (const auto& k : compare_kinds)
        if (parse_regressor_kind(k) != kinds.front()) kinds.push_back(parse_regressor_kind(k));
      const auto sel = model_selection_report(ts, kinds, seed, small_grids());
      const auto& model = sel.models.front();
      save_json(to_json(model), out);
      if (!report_path.empty()) save_json(to_json(sel), report_path);
      for (const auto& r : sel.rows)
        std::cout << to_string(r.kind) << ": cv_rmse=" << r.cv_rmse << " test_rmse=" << r.test_rmse
                  << " drift=" << r.energy_drift << "\n";
      if (sel.disagreement) std::cout << "note: CV selection (" << to_string(sel.selected)
                                      << ") differs from best test score (" << to_string(sel.best_test) << ")\n";
    } else if (*optc) {
      const auto rate = load_rate(rate_path);
      const auto prepared = prepare_instance(read_sessions_csv(sessions_path), dt);
      const auto sched = optimize(prepared.sessions, rate, dt);
      const auto before = aggregate(std::span<const Session>(prepared.sessions), dt);
      write_profiles_csv({{"uncontrolled", before}, {"controlled", sched.aggregate()}}, out);
      std::cout << "cost " << total_cost(before, rate) << " -> " << sched.cost << " (" << sched.lp_iterations
                << " iterations, " << sched.solve_seconds << " s); clipped " << prepared.report.clipped_sessions
                << " sessions\n";
    } else if (*runs) {
      auto cfg = load_scenario_config(config_path);
      if (seed_override) cfg.seed = *seed_override;
      if (dt_override) cfg.dt_output = *dt_override;
      cfg.validate();
      const auto reg = ModelRegistry::load(models_dir);
      const auto res = run_scenario(cfg, reg.models(), reg.surrogates());
      write_scenario(res, out);
      std::cout << "peak " << res.peak_kw() / 1000 << " MW at minute " << res.peak_minute() << "; "
                << res.timings.at("total") << " s\n";
    } else if (*rd) {
      const auto rate = load_rate(rate_path);
      const auto cfg = load_scenario_config(config_path);
      const auto reg = ModelRegistry::load(models_dir);
      RateDesignOptions opt;
      opt.n_instances = instances;
      opt.n_vehicles = vehicles;
      opt.dt = dt;
      const auto r = rate_design_workflow(rate, reg.models(), cfg, seed, opt);
      fs::create_directories(out);
      save_json(to_json(r), (fs::path(out) / "rate_design.json").string());
      save_json(to_json(r.model), (fs::path(out) / "surrogate.json").string());
      write_scenario(r.before, fs::path(out) / "before");
      write_scenario(r.after, fs::path(out) / "after");
      std::cout << "test RMSE " << r.model.test_rmse << "; peak " << r.before.peak_kw() / 1000 << " -> "
                << r.after.peak_kw() / 1000 << " MW; speedup " << r.speedup() << "x\n";
    } else if (*rep) {
      report(target);
    } else if (*srv) {
      auto reg = std::make_shared<const ModelRegistry>(ModelRegistry::load(models_dir));
      auto service = std::make_shared<ScenarioService>(reg);
      httplib::Server server;
      install_routes(server, service);
      std::cout << "listening on " << host << ":" << port << std::endl;
      if (!server.listen(host, port)) throw Error("io", "cannot bind " + host + ":" + std::to_string(port));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
