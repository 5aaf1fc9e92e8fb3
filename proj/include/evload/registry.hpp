#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "evload/gmm.hpp"
#include "evload/rates.hpp"
#include "evload/scenario.hpp"
#include "evload/session.hpp"
#include "evload/surrogate.hpp"
#include "evload/util.hpp"

namespace evload {

/// Directory-backed store:
///   <root>/mixtures/<segment key>.json
///   <root>/surrogates/<id>.json
///   <root>/rates/<id>.json
///   <root>/ground_truth/<id>.json
/// Everything is validated when loaded; the in-memory registry is read-only.
class ModelRegistry {
 public:
  ModelRegistry() = default;

  static ModelRegistry load(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw Error("io", "models directory " + root.string() + " does not exist");
    ModelRegistry reg;
    reg.root_ = root;
    for_each_json(root / "rates", [&](const std::string& id, const nlohmann::json& j) {
      auto rate = rate_from_json(j);
      reg.rate_hashes_[id] = rate_hash(rate);
      reg.rates_.emplace(id, std::move(rate));
    });
    for_each_json(root / "mixtures", [&](const std::string& id, const nlohmann::json& j) {
      auto m = segment_model_from_json(j);
      const auto seg = parse_segment_key(m.mixture.segment.empty() ? id : m.mixture.segment);
      if (seg.key() != id) throw Error("schema", "mixture file " + id + ".json holds segment " + seg.key());
      reg.models_.emplace(seg, std::move(m));
    });
    for_each_json(root / "surrogates", [&](const std::string& id, const nlohmann::json& j) {
      auto s = surrogate_from_json(j);
      for (const auto& [rid, rate] : reg.rates_)
        if (rate.name == s.rate_name && !s.rate_hash.empty() && reg.rate_hashes_.at(rid) != s.rate_hash)
          throw Error("provenance", "surrogate " + id + " was trained on a different version of rate '" + rate.name +
                                        "' (hash mismatch)");
      reg.surrogates_.emplace(id, std::move(s));
    });
    for_each_json(root / "ground_truth", [&](const std::string& id, const nlohmann::json& j) {
      reg.ground_truth_.emplace(id, ground_truth_from_json(j));
    });
    return reg;
  }

  const std::filesystem::path& root() const { return root_; }
  const ModelSet& models() const { return models_; }
  const SurrogateSet& surrogates() const { return surrogates_; }
  const std::map<std::string, RateSchedule>& rates() const { return rates_; }
  const std::map<std::string, GroundTruthSpec>& ground_truth() const { return ground_truth_; }

  const SurrogateModel& surrogate(const std::string& id) const {
    auto it = surrogates_.find(id);
    if (it == surrogates_.end()) throw Error("not_found", "unknown surrogate id '" + id + "'");
    return it->second;
  }
  const RateSchedule& rate(const std::string& id) const {
    auto it = rates_.find(id);
    if (it == rates_.end()) throw Error("not_found", "unknown rate id '" + id + "'");
    return it->second;
  }

  nlohmann::json list_models() const {
    nlohmann::json j;
    j["mixtures"] = nlohmann::json::array();
    for (const auto& [seg, m] : models_)
      j["mixtures"].push_back({{"id", seg.key()},
                               {"G", m.mixture.size()},
                               {"bic", m.mixture.fit.bic},
                               {"n", m.mixture.fit.n},
                               {"duration_model", m.duration.has_value()}});
    j["surrogates"] = nlohmann::json::array();
    for (const auto& [id, s] : surrogates_) {
      auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
      j["surrogates"].push_back({{"id", id},
                                 {"regressor", to_string(s.kind)},
                                 {"dt", s.dt},
                                 {"rate_name", s.rate_name},
                                 {"rate_hash", s.rate_hash},
                                 {"seed", s.seed},
                                 {"test_rmse", num(s.test_rmse)}});
    }
    return j;
  }

  nlohmann::json list_rates() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [id, r] : rates_) {
      auto rj = to_json(r);
      rj["id"] = id;
      rj["hash"] = rate_hashes_.at(id);
      j.push_back(std::move(rj));
    }
    return j;
  }

  static void save(const std::filesystem::path& root, const std::string& sub, const std::string& id,
                   const nlohmann::json& j) {
    std::filesystem::create_directories(root / sub);
    save_json(j, (root / sub / (id + ".json")).string());
  }

 private:
  template <class Fn>
  static void for_each_json(const std::filesystem::path& dir, Fn&& fn) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) return;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        fn(f.stem().string(), load_json(f.string()));
      } catch (const Error& e) {
        throw Error(e.code(), f.string() + ": " + e.what());
      }
    }
  }

  std::filesystem::path root_;
  ModelSet models_;
  SurrogateSet surrogates_;
  std::map<std::string, RateSchedule> rates_;
  std::map<std::string, std::string> rate_hashes_;
  std::map<std::string, GroundTruthSpec> ground_truth_;
};

}  // namespace evload
