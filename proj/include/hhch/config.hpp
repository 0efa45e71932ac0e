#pragma once

// Run configuration (JSON) and metrics-log records.

#include "hhch/core.hpp"
#include "hhch/objective.hpp"
#include "hhch/trainer.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <optional>
#include <set>
#include <string>

namespace hhch {

struct RunConfig {
  std::string train_features;
  std::optional<std::string> train_labels;
  std::optional<std::string> query_features;
  std::optional<std::string> query_labels;
  std::string output_dir;
  TrainConfig train;
};

inline std::string to_string(Metric m) { return m == Metric::hyperbolic ? "hyperbolic" : "cosine"; }

inline Metric parse_metric(const std::string& s) {
  if (s == "hyperbolic") return Metric::hyperbolic;
  if (s == "cosine") return Metric::cosine;
  throw UsageError("metric: expected hyperbolic or cosine, got '" + s + "'");
}

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::ic: return "ic";
    case Objective::pc: return "pc";
    case Objective::hic: return "hic";
    case Objective::hpc: return "hpc";
    case Objective::full: return "full";
  }
  return "full";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "ic") return Objective::ic;
  if (s == "pc") return Objective::pc;
  if (s == "hic") return Objective::hic;
  if (s == "hpc") return Objective::hpc;
  if (s == "full") return Objective::full;
  throw UsageError("objective: expected one of ic, pc, hic, hpc, full, got '" + s + "'");
}

namespace detail {

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string prefix, std::set<std::string> allowed)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw UsageError(where("") + "expected an object");
    for (const auto& [key, _] : j_.items()) {
      if (!allowed.count(key)) throw UsageError(where(key) + "unknown key");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  void get(const std::string& key, T& out) const {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw UsageError(where(key) + "wrong type");
    }
  }

  template <typename T>
  void get(const std::string& key, std::optional<T>& out) const {
    if (!has(key)) return;
    T v{};
    get(key, v);
    out = v;
  }

  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }
  std::string where(const std::string& key) const { return "config: " + prefix_ + key + ": "; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  const detail::ConfigReader r(
      j, "",
      {"train_features", "train_labels", "query_features", "query_labels", "output_dir", "seed", "epochs",
       "batch_size", "lr", "curvature", "hidden_dim", "code_bits", "embed_dim", "tau", "lambda", "metric",
       "objective", "num_layers", "cluster", "augment", "eval_top_k", "log_timing"});
  RunConfig rc;
  if (!r.has("train_features")) throw UsageError(r.where("train_features") + "required");
  if (!r.has("output_dir")) throw UsageError(r.where("output_dir") + "required");
  r.get("train_features", rc.train_features);
  r.get("train_labels", rc.train_labels);
  r.get("query_features", rc.query_features);
  r.get("query_labels", rc.query_labels);
  r.get("output_dir", rc.output_dir);

  TrainConfig& t = rc.train;
  r.get("seed", t.seed);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.lr);
  r.get("curvature", t.curvature);
  r.get("hidden_dim", t.shape.hidden_dim);
  r.get("code_bits", t.shape.code_bits);
  r.get("embed_dim", t.shape.embed_dim);
  r.get("tau", t.loss.tau);
  r.get("lambda", t.loss.lambda);
  r.get("num_layers", t.loss.num_layers);
  r.get("eval_top_k", t.eval_top_k);
  r.get("log_timing", t.log_timing);
  if (r.has("metric")) {
    std::string s;
    r.get("metric", s);
    t.loss.metric = parse_metric(s);
  }
  if (r.has("objective")) {
    std::string s;
    r.get("objective", s);
    t.loss.objective = parse_objective(s);
  }
  if (r.has("cluster")) {
    const detail::ConfigReader c(r.at("cluster"), "cluster.", {"counts", "max_iters", "tol"});
    c.get("counts", t.cluster.counts);
    c.get("max_iters", t.cluster.max_iters);
    c.get("tol", t.cluster.tol);
  }
  if (r.has("augment")) {
    const detail::ConfigReader a(r.at("augment"), "augment.", {"noise_sigma", "mask_fraction"});
    a.get("noise_sigma", t.augmentation.noise_sigma);
    a.get("mask_fraction", t.augmentation.mask_fraction);
  }

  // Value checks that do not depend on the dataset.
  auto check = [&](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) throw UsageError(r.where(key) + msg);
  };
  check(t.epochs >= 1, "epochs", "must be >= 1");
  check(t.batch_size >= 2, "batch_size", "must be >= 2");
  check(t.lr >= 0.0, "lr", "must be >= 0");
  check(t.curvature > 0.0, "curvature", "must be > 0");
  check(t.shape.hidden_dim >= 1, "hidden_dim", "must be >= 1");
  check(t.shape.code_bits >= 1, "code_bits", "must be >= 1");
  check(t.shape.embed_dim >= 1, "embed_dim", "must be >= 1");
  check(t.loss.tau > 0.0, "tau", "must be > 0");
  check(t.loss.lambda >= 0.0, "lambda", "must be >= 0");
  check(!t.cluster.counts.empty(), "cluster.counts", "must not be empty");
  for (std::size_t l = 1; l < t.cluster.counts.size(); ++l) {
    check(t.cluster.counts[l] < t.cluster.counts[l - 1], "cluster.counts", "must be strictly decreasing");
  }
  check(t.cluster.counts.back() >= 1, "cluster.counts", "must be positive");
  check(t.cluster.max_iters >= 1, "cluster.max_iters", "must be >= 1");
  check(t.cluster.tol >= 0.0, "cluster.tol", "must be >= 0");
  check(t.augmentation.mask_fraction >= 0.0 && t.augmentation.mask_fraction <= 1.0, "augment.mask_fraction",
        "must be in [0, 1]");
  check(!t.augmentation.noise_sigma || *t.augmentation.noise_sigma >= 0.0, "augment.noise_sigma", "must be >= 0");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config: " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json metrics_record(const EpochMetrics& m) {
  nlohmann::json j;
  j["epoch"] = m.epoch;
  j["h_inst"] = m.h_inst;
  j["h_proto"] = m.h_proto;
  j["quant"] = m.quant;
  j["total"] = m.total;
  if (m.wall_ms) j["wall_ms"] = *m.wall_ms;
  if (m.map) j["map"] = *m.map;
  return j;
}

}  // namespace hhch
