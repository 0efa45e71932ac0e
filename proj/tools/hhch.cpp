// Command-line front end: synth, train, encode, cluster, eval.
//
// Exit codes: 0 success, 2 usage/config error, 3 data-format error,
// 4 numerical failure.

#include "hhch/hhch.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw hhch::UsageError(what + ": no such file '" + path + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  if (!os) throw hhch::DataFormatError("cannot open " + path + " for writing");
  os << body;
}

struct SynthArgs {
  std::vector<std::size_t> branching{8, 4};
  std::vector<double> separations{12.0, 6.0};
  double spread = 1.0;
  std::size_t dim = 64;
  std::size_t train_size = 2000;
  std::size_t query_size = 400;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  hhch::SynthConfig cfg;
  cfg.branching = a.branching;
  cfg.separations = a.separations;
  cfg.spread = a.spread;
  cfg.dim = a.dim;
  cfg.train_size = a.train_size;
  cfg.query_size = a.query_size;
  cfg.seed = a.seed;
  const auto data = hhch::make_synthetic(cfg);
  hhch::write_features(a.out + ".train.feat", data.train.features);
  hhch::write_labels(a.out + ".train.labels", data.train.labels);
  if (a.query_size > 0) {
    hhch::write_features(a.out + ".query.feat", data.query.features);
    hhch::write_labels(a.out + ".query.labels", data.query.labels);
  }
  std::cout << "wrote " << data.train.features.rows() << " train rows and " << data.query.features.rows()
            << " query rows (" << cfg.num_leaves() << " classes, dim " << cfg.dim << ") to " << a.out << ".*\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string metric;
  std::string objective;
  std::optional<std::uint64_t> seed;
  bool no_timing = false;
};

int run_train(const TrainArgs& a) {
  hhch::RunConfig rc = hhch::load_run_config(a.config);
  if (!a.metric.empty()) rc.train.loss.metric = hhch::parse_metric(a.metric);
  if (!a.objective.empty()) rc.train.loss.objective = hhch::parse_objective(a.objective);
  if (a.seed) rc.train.seed = *a.seed;
  if (a.no_timing) rc.train.log_timing = false;

  require_file(rc.train_features, "train_features");
  hhch::FeatureDataset dataset{hhch::read_features(rc.train_features), std::nullopt};
  if (rc.train_labels) {
    require_file(*rc.train_labels, "train_labels");
    dataset.labels = hhch::read_labels(*rc.train_labels);
    if (dataset.labels->size() != dataset.size()) throw hhch::DataFormatError("train_labels: row count mismatch");
  }
  std::optional<hhch::EvalSplit> eval;
  if (rc.query_features && rc.query_labels && dataset.labels) {
    require_file(*rc.query_features, "query_features");
    require_file(*rc.query_labels, "query_labels");
    eval = hhch::EvalSplit{hhch::read_features(*rc.query_features), hhch::read_labels(*rc.query_labels)};
    if (eval->labels.size() != static_cast<std::size_t>(eval->features.rows())) {
      throw hhch::DataFormatError("query_labels: row count mismatch");
    }
  }

  fs::create_directories(rc.output_dir);
  const std::string log_path = (fs::path(rc.output_dir) / "metrics.jsonl").string();
  std::ofstream log(log_path);
  if (!log) throw hhch::DataFormatError("cannot open " + log_path);
  hhch::TrainHooks hooks;
  hooks.on_epoch = [&](const hhch::EpochMetrics& m) {
    log << hhch::metrics_record(m).dump() << '\n';
    log.flush();
    std::cout << "epoch " << m.epoch << " total " << fmt(m.total) << " h_inst " << fmt(m.h_inst) << " h_proto "
              << fmt(m.h_proto) << " quant " << fmt(m.quant);
    if (m.map) std::cout << " mAP@" << rc.train.eval_top_k << " " << fmt(*m.map);
    std::cout << '\n';
  };
  const auto result = hhch::train(dataset, rc.train, eval, hooks);
  hhch::save_model(result.model, (fs::path(rc.output_dir) / "model.bin").string());
  if (result.hierarchy) hhch::write_hierarchy((fs::path(rc.output_dir) / "hierarchy.json").string(), *result.hierarchy);
  std::cout << "wrote model, hierarchy and metrics to " << rc.output_dir << '\n';
  return 0;
}

struct EncodeArgs {
  std::string model;
  std::string features;
  std::string out;
  std::uint64_t seed = 0;
};

int run_encode(const EncodeArgs& a) {
  require_file(a.model, "--model");
  require_file(a.features, "--features");
  const auto model = hhch::load_model(a.model);
  const auto codes = hhch::encode(model, hhch::read_features(a.features));
  hhch::write_features(a.out + ".codes.feat", codes);
  hhch::write_codes(a.out + ".codes.bin", hhch::binarize_rows(codes), static_cast<std::size_t>(codes.cols()));
  std::cout << "encoded " << codes.rows() << " rows to " << codes.cols() << "-bit codes\n";
  return 0;
}

struct ClusterArgs {
  std::string model;
  std::string features;
  std::vector<std::size_t> counts;
  std::size_t max_iters = 30;
  double tol = 1e-4;
  std::string metric = "hyperbolic";
  std::uint64_t seed = 0;
  std::string out;
};

int run_cluster(const ClusterArgs& a) {
  hhch::ClusterConfig cc{a.counts, a.max_iters, a.tol, a.seed};
  require_file(a.model, "--model");
  require_file(a.features, "--features");
  const auto model = hhch::load_model(a.model);
  const auto features = hhch::read_features(a.features);
  cc.validate(static_cast<std::size_t>(features.rows()));
  const auto codes = hhch::encode(model, features);
  const hhch::Hierarchy h = hhch::parse_metric(a.metric) == hhch::Metric::cosine
                                ? hhch::hierarchical_spherical_kmeans(codes, cc)
                                : hhch::hierarchical_kmeans(hhch::project_codes(model, codes),
                                                            hhch::Curvature(model.curvature), cc);
  hhch::write_hierarchy(a.out, h);
  std::cout << "wrote " << h.num_layers() << "-layer hierarchy to " << a.out << '\n';
  return 0;
}

struct EvalArgs {
  std::string query_codes, query_labels, db_codes, db_labels;
  std::size_t top_k = 1000;
  std::vector<std::size_t> pn{100, 500, 1000};
  std::string curve_dir;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  for (const auto& [p, what] : {std::pair{a.query_codes, "--query-codes"}, {a.query_labels, "--query-labels"},
                                {a.db_codes, "--db-codes"}, {a.db_labels, "--db-labels"}}) {
    require_file(p, what);
  }
  hhch::RetrievalSet set;
  set.query_codes = hhch::read_codes(a.query_codes);
  set.query_labels = hhch::read_labels(a.query_labels);
  set.db_codes = hhch::read_codes(a.db_codes);
  set.db_labels = hhch::read_labels(a.db_labels);
  if (set.query_codes.size() != set.query_labels.size() || set.db_codes.size() != set.db_labels.size()) {
    throw hhch::DataFormatError("code and label files have different row counts");
  }
  if (!set.query_codes.empty() && !set.db_codes.empty() && set.query_codes.front().size() != set.db_codes.front().size()) {
    throw hhch::UsageError("query codes are " + std::to_string(set.query_codes.front().size()) +
                           "-bit but database codes are " + std::to_string(set.db_codes.front().size()) + "-bit");
  }
  const double map = hhch::map_at_k(set, a.top_k);
  const auto pn = hhch::precision_at_n(set, a.pn);
  const double ph2 = hhch::precision_at_radius2(set);
  const auto dist = hhch::intra_inter_distances(set);
  const auto pr = hhch::pr_curve(set);

  std::cout << "mAP@" << a.top_k << " " << fmt(map) << '\n';
  for (std::size_t i = 0; i < a.pn.size(); ++i) std::cout << "P@" << a.pn[i] << " " << fmt(pn[i]) << '\n';
  std::cout << "P@H<=2 " << fmt(ph2) << '\n';
  std::cout << "d_intra " << fmt(dist.intra) << '\n';
  std::cout << "d_inter " << fmt(dist.inter) << '\n';

  if (!a.curve_dir.empty()) {
    fs::create_directories(a.curve_dir);
    std::string pr_body, pn_body;
    char buf[96];
    for (const auto& p : pr) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", p.recall, p.precision);
      pr_body += buf;
    }
    for (std::size_t i = 0; i < a.pn.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu %.17g\n", a.pn[i], pn[i]);
      pn_body += buf;
    }
    write_text((fs::path(a.curve_dir) / "pr_curve.txt").string(), pr_body);
    write_text((fs::path(a.curve_dir) / "p_at_n.txt").string(), pn_body);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic hierarchical contrastive hashing"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted hierarchical Gaussian-mixture feature set");
  s->add_option("--branching", synth.branching, "Children per node, top level first")->delimiter(',');
  s->add_option("--separations", synth.separations, "RMS sibling-center distance per level")->delimiter(',');
  s->add_option("--spread", synth.spread, "RMS distance of samples from their class center");
  s->add_option("--dim", synth.dim, "Feature dimension");
  s->add_option("--train-size", synth.train_size);
  s->add_option("--query-size", synth.query_size);
  s->add_option("--seed", synth.seed);
  s->add_option("--out", synth.out, "Output path prefix")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a hash model from a JSON run config");
  t->add_option("--config", tr.config)->required();
  t->add_option("--metric", tr.metric, "hyperbolic or cosine")->check(CLI::IsMember({"hyperbolic", "cosine"}));
  t->add_option("--objective", tr.objective, "ic, pc, hic, hpc or full")
      ->check(CLI::IsMember({"ic", "pc", "hic", "hpc", "full"}));
  t->add_option("--seed", tr.seed);
  t->add_flag("--no-timing", tr.no_timing, "Omit wall_ms from the metrics log");

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Encode features into continuous and packed binary codes");
  e->add_option("--model", enc.model)->required();
  e->add_option("--features", enc.features)->required();
  e->add_option("--out", enc.out, "Output path prefix")->required();
  e->add_option("--seed", enc.seed);

  ClusterArgs cl;
  auto* c = app.add_subcommand("cluster", "Build a hierarchy over model embeddings");
  c->add_option("--model", cl.model)->required();
  c->add_option("--features", cl.features)->required();
  c->add_option("--counts", cl.counts, "Prototype counts per layer, strictly decreasing")->delimiter(',')->required();
  c->add_option("--max-iters", cl.max_iters);
  c->add_option("--tol", cl.tol);
  c->add_option("--metric", cl.metric)->check(CLI::IsMember({"hyperbolic", "cosine"}));
  c->add_option("--seed", cl.seed);
  c->add_option("--out", cl.out)->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Evaluate Hamming ranking of query codes against database codes");
  v->add_option("--query-codes", ev.query_codes)->required();
  v->add_option("--query-labels", ev.query_labels)->required();
  v->add_option("--db-codes", ev.db_codes)->required();
  v->add_option("--db-labels", ev.db_labels)->required();
  v->add_option("--top-k", ev.top_k);
  v->add_option("--pn", ev.pn, "Cutoffs for P@N")->delimiter(',');
  v->add_option("--curve-dir", ev.curve_dir, "Directory for pr_curve.txt and p_at_n.txt");
  v->add_option("--seed", ev.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(tr);
    if (*e) return run_encode(enc);
    if (*c) return run_cluster(cl);
    if (*v) return run_eval(ev);
  } catch (const hhch::UsageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const hhch::DataFormatError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitData;
  } catch (const hhch::NumericalError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitNumerical;
  } catch (const fs::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
