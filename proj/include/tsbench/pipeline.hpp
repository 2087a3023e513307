#pragma once

// End-to-end stages (fit, extract, generate, validate, evaluate) driven by one
// INI config. Stages exchange data only through files under the output root:
//
//   fit/        model/, flows/, gaussian/, norm.json, fit_report.json
//   extract/    hcg.csv, importance.csv, importance_se.csv, hcg.json
//   generate/   <variant>/ bundles, fit_masked.checkpoint/
//   validate/   <variant>/report.json, <variant>/pca.csv, summary.json
//   evaluate/   <variant>/<method>.json, <variant>/<method>_graph.csv
//
// Every stage writes the resolved config it ran with to <stage>/config.ini.

#include "tsbench/cdnn.hpp"
#include "tsbench/data.hpp"
#include "tsbench/fidelity.hpp"
#include "tsbench/flow.hpp"
#include "tsbench/generator.hpp"
#include "tsbench/graph.hpp"
#include "tsbench/harness.hpp"
#include "tsbench/io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <iostream>
#include <set>
#include <sstream>

namespace tsbench {

struct PipelineConfig {
  // [run]
  std::uint64_t seed = 0;
  std::string out = "out";
  // [data]
  std::string data;
  bool normalize = true;
  SplitSpec split;
  // [model], [train], [flow]
  CdnnConfig model;
  TrainConfig train;
  FlowConfig flow;
  // [extract]
  double sparsity = kDefaultSparsity;
  std::string prior_distances;
  double sigma_dist = 1.0;
  ShapleyConfig shapley;
  // [generate]
  GeneratorConfig generator;
  std::vector<Variant> variants{Variant::full};
  // [validate]
  FidelityConfig fidelity;
  // [evaluate]
  std::string baseline = "granger";
  std::size_t max_lag = 2;
  bool exclude_diagonal = false;
  bool include_residual = false;
  std::string candidate;

  // Relative paths in the file resolve against this directory.
  io::fs::path base_dir = ".";

  io::fs::path resolve(const std::string& p) const {
    io::fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  io::fs::path root() const { return resolve(out); }

  /// Per-stage seeds, all derived from the run seed.
  void derive_seeds() {
    model.seed = derive_seed(seed, 0x10);
    train.seed = derive_seed(seed, 0x11);
    train.plan.seed = derive_seed(seed, 0x12);
    flow.seed = derive_seed(seed, 0x13);
    shapley.seed = derive_seed(seed, 0x14);
    generator.seed = derive_seed(seed, 0x15);
    fidelity.seed = derive_seed(seed, 0x16);
    fidelity.discriminator.seed = fidelity.seed;
  }

  std::string to_ini() const;
  static PipelineConfig parse(std::istream& in, const io::fs::path& base_dir);
  static PipelineConfig load(const io::fs::path& path);
};

namespace detail {

namespace pt = boost::property_tree;

inline std::string variants_string(const std::vector<Variant>& vs) {
  std::string s;
  for (std::size_t k = 0; k < vs.size(); ++k) s += (k ? "," : "") + to_string(vs[k]);
  return s;
}

inline std::vector<Variant> parse_variants(const std::string& s) {
  if (s == "all") return all_variants();
  std::vector<Variant> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(parse_variant(item));
  }
  require(!out.empty(), "generate.variants is empty");
  return out;
}

inline std::string bool_string(bool b) { return b ? "true" : "false"; }

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw UsageError(key + ": expected true or false, got '" + v + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  std::istringstream in(v);
  in >> out;
  if (!in || !in.eof()) {
    if constexpr (std::is_floating_point_v<T>) throw UsageError(key + ": expected a number, got '" + v + "'");
    else throw UsageError(key + ": expected an integer, got '" + v + "'");
  }
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.empty() && v.front() == '-') throw UsageError(key + ": must be non-negative");
  }
  return out;
}

/// Ordered (section, key, value) triples; the single source for both
/// serialization and the set of accepted keys.
struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
};

inline std::string show_value(double v) { return io::format_double(v); }
inline std::string show_value(std::size_t v) { return std::to_string(v); }

inline const std::vector<Field>& fields() {
  using C = PipelineConfig;
#define TSB_NUM(section, key, expr)                                                        \
  Field {                                                                                  \
    section, key, [](const C& c) { return show_value(expr); },                             \
        [](C& c, const std::string& k, const std::string& v) {                             \
          expr = parse_number<std::decay_t<decltype(expr)>>(k, v);                          \
        }                                                                                  \
  }
#define TSB_BOOL(section, key, expr)                                                        \
  Field {                                                                                   \
    section, key, [](const C& c) { return bool_string(expr); },                             \
        [](C& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); } \
  }
#define TSB_STR(section, key, expr) \
  Field { section, key, [](const C& c) { return expr; }, [](C& c, const std::string&, const std::string& v) { expr = v; } }

  static const std::vector<Field> f{
      TSB_NUM("run", "seed", c.seed),
      TSB_STR("run", "out", c.out),
      TSB_STR("data", "path", c.data),
      TSB_BOOL("data", "normalize", c.normalize),
      TSB_NUM("data", "train", c.split.train),
      TSB_NUM("data", "val", c.split.val),
      TSB_NUM("data", "test", c.split.test),
      TSB_NUM("model", "window", c.model.window),
      Field{"model", "backbone", [](const C& c) { return to_string(c.model.backbone); },
            [](C& c, const std::string&, const std::string& v) { c.model.backbone = parse_backbone(v); }},
      Field{"model", "sharing", [](const C& c) { return to_string(c.model.sharing); },
            [](C& c, const std::string&, const std::string& v) { c.model.sharing = parse_sharing(v); }},
      TSB_NUM("model", "enc_layers", c.model.enc_layers),
      TSB_NUM("model", "enc_hidden", c.model.enc_hidden),
      TSB_NUM("model", "dec_layers", c.model.dec_layers),
      TSB_NUM("model", "dec_hidden", c.model.dec_hidden),
      TSB_NUM("train", "epochs", c.train.epochs),
      TSB_NUM("train", "batch", c.train.batch),
      TSB_NUM("train", "lr", c.train.lr),
      TSB_NUM("train", "clip", c.train.clip),
      TSB_BOOL("train", "scheduled_sampling", c.train.plan.enabled),
      TSB_NUM("train", "rollout", c.train.plan.rollout),
      TSB_NUM("train", "p_min", c.train.plan.p_min),
      TSB_NUM("flow", "layers", c.flow.layers),
      TSB_NUM("flow", "hidden", c.flow.hidden),
      TSB_NUM("flow", "iterations", c.flow.iterations),
      TSB_NUM("flow", "lr", c.flow.lr),
      TSB_NUM("flow", "holdout", c.flow.holdout),
      TSB_NUM("flow", "min_samples", c.flow.min_samples),
      TSB_NUM("extract", "sparsity", c.sparsity),
      TSB_STR("extract", "prior_distances", c.prior_distances),
      TSB_NUM("extract", "sigma_dist", c.sigma_dist),
      TSB_NUM("extract", "explained", c.shapley.explained),
      TSB_NUM("extract", "background", c.shapley.background),
      TSB_NUM("extract", "mc_samples", c.shapley.mc_samples),
      TSB_NUM("generate", "samples", c.generator.samples),
      TSB_NUM("generate", "length", c.generator.length),
      Field{"generate", "variants", [](const C& c) { return variants_string(c.variants); },
            [](C& c, const std::string&, const std::string& v) { c.variants = parse_variants(v); }},
      TSB_NUM("validate", "window", c.fidelity.window),
      TSB_NUM("validate", "mmd_max_points", c.fidelity.mmd_max_points),
      TSB_NUM("validate", "disc_hidden", c.fidelity.discriminator.hidden),
      TSB_NUM("validate", "disc_layers", c.fidelity.discriminator.layers),
      TSB_NUM("validate", "disc_epochs", c.fidelity.discriminator.epochs),
      TSB_NUM("validate", "disc_batch", c.fidelity.discriminator.batch),
      TSB_NUM("validate", "disc_lr", c.fidelity.discriminator.lr),
      TSB_NUM("validate", "disc_repeats", c.fidelity.discriminator.repeats),
      TSB_NUM("validate", "test_fraction", c.fidelity.discriminator.test_fraction),
      TSB_STR("evaluate", "baseline", c.baseline),
      TSB_NUM("evaluate", "max_lag", c.max_lag),
      TSB_BOOL("evaluate", "exclude_diagonal", c.exclude_diagonal),
      TSB_BOOL("evaluate", "include_residual", c.include_residual),
      TSB_STR("evaluate", "candidate", c.candidate),
  };
#undef TSB_NUM
#undef TSB_BOOL
#undef TSB_STR
  return f;
}

}  // namespace detail

inline std::string PipelineConfig::to_ini() const {
  detail::pt::ptree tree;
  for (const auto& f : detail::fields()) tree.put(detail::pt::ptree::path_type(std::string(f.section) + "/" + f.key, '/'), f.get(*this));
  std::ostringstream out;
  detail::pt::write_ini(out, tree);
  return out.str();
}

inline PipelineConfig PipelineConfig::parse(std::istream& in, const io::fs::path& base_dir) {
  detail::pt::ptree tree;
  try {
    detail::pt::read_ini(in, tree);
  } catch (const detail::pt::ini_parser_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  std::set<std::pair<std::string, std::string>> known;
  for (const auto& f : detail::fields()) known.emplace(f.section, f.key);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw UsageError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      if (!known.count({section, key})) throw UsageError("config: unknown key " + section + "." + key);
    }
  }
  for (const auto& f : detail::fields()) {
    auto v = tree.get_optional<std::string>(detail::pt::ptree::path_type(std::string(f.section) + "/" + f.key, '/'));
    if (v) f.set(cfg, std::string(f.section) + "." + f.key, *v);
  }
  cfg.derive_seeds();
  return cfg;
}

inline PipelineConfig PipelineConfig::load(const io::fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  return parse(in, path.has_parent_path() ? path.parent_path() : io::fs::path("."));
}

// ---- shared helpers ----------------------------------------------------------

/// Process exit code for an error escaping a command: 2 for usage, shape and
/// parse errors, 1 for everything else (including an undefined metric).
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const ParseError*>(&e))
    return 2;
  return 1;
}

inline void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

/// Four significant digits, for log lines only.
inline std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct PreparedData {
  TimeSeriesDataset raw;
  TimeSeriesDataset ds;  // normalized when configured
  SplitRanges split;
  NormStats stats;
};

/// Loads, imputes and (optionally) normalizes with training-split statistics.
inline PreparedData prepare_data(const PipelineConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("config: data.path is not set");
  const auto path = cfg.resolve(cfg.data);
  if (!io::fs::exists(path)) throw UsageError("dataset not found: " + path.string());
  PreparedData p;
  p.raw = impute_nearest(load_csv(path));
  p.split = split_ranges(p.raw, cfg.split);
  if (cfg.normalize) {
    p.ds = normalize(p.raw, p.split.train);
    p.stats = *p.ds.norm;
  } else {
    p.ds = p.raw;
    p.stats = {Vector::Zero(static_cast<Eigen::Index>(p.raw.n_vars())),
               Vector::Ones(static_cast<Eigen::Index>(p.raw.n_vars()))};
  }
  return p;
}

inline Matrix apply_norm(const Matrix& values, const NormStats& s) {
  return (values.rowwise() - s.mean.transpose()).array().rowwise() / s.std.transpose().array();
}

inline io::json norm_json(const NormStats& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"std", std::vector<double>(s.std.data(), s.std.data() + s.std.size())}};
}

inline NormStats norm_from_json(const io::json& j) {
  auto m = j.at("mean").get<std::vector<double>>(), s = j.at("std").get<std::vector<double>>();
  return {Eigen::Map<Vector>(m.data(), static_cast<Eigen::Index>(m.size())),
          Eigen::Map<Vector>(s.data(), static_cast<Eigen::Index>(s.size()))};
}

inline void write_text_file(const io::fs::path& path, const std::string& text) {
  io::fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

inline void require_file(const io::fs::path& p, const std::string& hint) {
  if (!io::fs::exists(p)) throw UsageError(p.string() + " is missing; " + hint);
}

inline CdnnConfig model_config(const PipelineConfig& cfg, std::size_t n_vars) {
  CdnnConfig m = cfg.model;
  m.n_vars = n_vars;
  return m;
}

/// Trains a CDNN (full history or H-masked) and fits noise flows to its
/// one-step training residuals. Residuals of a masked model come from masked
/// predictions.
struct FittedModel {
  CdnnModel model;
  FitResult fit;
  Matrix residuals;
  NoiseFlowSet flows;
};

inline Matrix masked_residuals(const CdnnModel& model, const Matrix& series, const std::vector<IndexRange>& ranges,
                               const AdjacencyMask& mask) {
  auto targets = window_targets(ranges, model.window());
  Matrix x = gather_windows(series, targets, model.window());
  Matrix y = gather_rows(series, targets);
  return (y - model.forward(x, mask)).transpose();
}

inline FittedModel fit_model_and_flows(const PipelineConfig& cfg, const PreparedData& data,
                                       const AdjacencyMask* mask = nullptr) {
  FittedModel f{CdnnModel(model_config(cfg, data.ds.n_vars())), {}, {}, {}};
  f.fit = fit_prediction_model(f.model, data.ds.values, data.split.train, data.split.val, cfg.train, mask);
  f.residuals = mask ? masked_residuals(f.model, data.ds.values, data.split.train, *mask)
                     : residuals(f.model, data.ds.values, data.split.train);
  f.flows = fit_flows(f.residuals, cfg.flow);
  return f;
}

// ---- stages ------------------------------------------------------------------

inline io::json cmd_fit(const PipelineConfig& cfg) {
  const auto dir = cfg.root() / "fit";
  auto data = prepare_data(cfg);
  log_line("fit: " + std::to_string(data.ds.length()) + " rows x " + std::to_string(data.ds.n_vars()) + " series");
  auto f = fit_model_and_flows(cfg, data);
  io::fs::remove_all(dir);
  f.model.save(dir / "model");
  f.flows.save(dir / "flows");
  moment_matched_gaussian(f.residuals).save(dir / "gaussian");
  io::write_json(dir / "norm.json", norm_json(data.stats));

  io::json flows = io::json::array();
  for (std::size_t i = 0; i < f.flows.size(); ++i) {
    flows.push_back({{"name", data.ds.names[i]},
                     {"heldout_nll", f.flows.flows[i].heldout_nll},
                     {"gaussian_fallback", f.flows.flows[i].gaussian_fallback}});
  }
  io::json report{{"val_mse", f.fit.best_val},
                  {"best_epoch", f.fit.best_epoch},
                  {"epochs_run", f.fit.val_mse.size()},
                  {"diverged", f.fit.diverged},
                  {"test_mse", data.split.test.empty() ? 0.0 : one_step_mse(f.model, data.ds.values, data.split.test)},
                  {"flows", flows},
                  {"model_sha256", io::sha256_tree(dir / "model")},
                  {"flows_sha256", io::sha256_tree(dir / "flows")}};
  io::write_json(dir / "fit_report.json", report);
  write_text_file(dir / "config.ini", cfg.to_ini());
  log_line("fit: val MSE " + short_num(f.fit.best_val) + " (epoch " + std::to_string(f.fit.best_epoch) + ")");
  return report;
}

inline io::json cmd_extract(const PipelineConfig& cfg) {
  const auto dir = cfg.root() / "extract";
  auto data = prepare_data(cfg);
  const auto& names = data.ds.names;
  Hcg hcg;
  io::json meta;
  if (!cfg.prior_distances.empty()) {
    auto dist = io::read_labeled_matrix(cfg.resolve(cfg.prior_distances));
    require_shape(dist.names == names, "prior distance labels do not match the dataset names");
    hcg = prior_graph(dist.values, cfg.sigma_dist);
    io::fs::remove_all(dir);
    meta = hcg.metadata();
    meta["sigma_dist"] = cfg.sigma_dist;
  } else {
    require_file(cfg.root() / "fit" / "model" / "cdnn.json", "run the fit command first");
    auto model = CdnnModel::load(cfg.root() / "fit" / "model");
    require_shape(model.n_vars() == data.ds.n_vars(), "checkpoint does not match the dataset width");
    auto imp = shapley_importance(model, data.ds.values, data.split.train,
                                  data.split.val.empty() ? data.split.train : data.split.val, cfg.shapley);
    hcg = threshold_by_sparsity(imp.phi, cfg.sparsity);
    io::fs::remove_all(dir);
    io::write_labeled_matrix(dir / "importance.csv", names, imp.phi);
    io::write_labeled_matrix(dir / "importance_se.csv", names, imp.se);
    meta = hcg.metadata();
    meta["explained_windows"] = imp.windows;
    meta["mc_samples"] = imp.mc_samples;
    meta["model_sha256"] = io::sha256_tree(cfg.root() / "fit" / "model");
  }
  io::write_labeled_matrix(dir / "hcg.csv", names, hcg.h.cast<double>());
  meta["edges"] = hcg.h.count();
  io::write_json(dir / "hcg.json", meta);
  write_text_file(dir / "config.ini", cfg.to_ini());
  log_line("extract: " + std::to_string(hcg.h.count()) + " edges (" + hcg.source + ", density " +
           short_num(hcg.sigma_achieved) + ")");
  return meta;
}

inline AdjacencyMask load_hcg(const PipelineConfig& cfg, const std::vector<std::string>& names) {
  const auto path = cfg.root() / "extract" / "hcg.csv";
  require_file(path, "run the extract command first");
  auto m = io::read_labeled_matrix(path);
  require_shape(m.names == names, "hcg.csv labels do not match the dataset names");
  return to_mask(m.values, "hcg.csv");
}

inline io::json cmd_generate(const PipelineConfig& cfg) {
  const auto root = cfg.root();
  const auto fit_dir = root / "fit";
  require_file(fit_dir / "model" / "cdnn.json", "run the fit command first");
  auto data = prepare_data(cfg);
  auto model = CdnnModel::load(fit_dir / "model");
  require_shape(model.n_vars() == data.ds.n_vars(), "checkpoint does not match the dataset width");
  auto flows = NoiseFlowSet::load(fit_dir / "flows");
  auto gaussian = NoiseFlowSet::load(fit_dir / "gaussian");
  const auto h = load_hcg(cfg, data.ds.names);
  const auto stats = norm_from_json(io::read_json(fit_dir / "norm.json"));

  io::json common{{"seed", cfg.seed},
                  {"generator_seed", cfg.generator.seed},
                  {"data_file", io::fs::path(cfg.data).filename().string()},
                  {"data_sha256", io::sha256_file(cfg.resolve(cfg.data))},
                  {"hcg_sha256", io::sha256_file(root / "extract" / "hcg.csv")},
                  {"checkpoints",
                   {{"model", io::sha256_tree(fit_dir / "model")},
                    {"flows", io::sha256_tree(fit_dir / "flows")},
                    {"gaussian", io::sha256_tree(fit_dir / "gaussian")}}}};
  io::json summary = io::json::object();
  for (auto v : cfg.variants) {
    const auto out = root / "generate" / to_string(v);
    io::json prov = common;
    GeneratedBenchmark b;
    if (v == Variant::fit_masked) {
      const auto ck = root / "generate" / "fit_masked.checkpoint";
      log_line("generate: refitting with the HCG mask for fit_masked");
      auto masked = fit_model_and_flows(cfg, data, &h);
      io::fs::remove_all(ck);
      masked.model.save(ck / "model");
      masked.flows.save(ck / "flows");
      prov["checkpoints"]["masked_model"] = io::sha256_tree(ck / "model");
      prov["checkpoints"]["masked_flows"] = io::sha256_tree(ck / "flows");
      b = generate_variant(v, model, flows, h, data.ds, cfg.generator, &gaussian, &masked.model, &masked.flows);
    } else {
      b = generate_variant(v, model, flows, h, data.ds, cfg.generator, &gaussian);
    }
    b = denormalize(std::move(b), stats);
    b.provenance = prov;
    io::fs::remove_all(out);
    write_bundle(out, b);
    summary[to_string(v)] = io::sha256_tree(out);
    log_line("generate: " + to_string(v) + " -> " + std::to_string(b.samples.size()) + " samples");
  }
  write_text_file(root / "generate" / "config.ini", cfg.to_ini());
  return summary;
}

/// Dataset view of a bundle with the real data's normalization applied.
inline TimeSeriesDataset normalized_bundle(const GeneratedBenchmark& b, const NormStats& stats) {
  auto ds = b.series_dataset(false);
  ds.values = apply_norm(ds.values, stats);
  return ds;
}

inline io::json cmd_validate(const PipelineConfig& cfg) {
  const auto root = cfg.root();
  auto data = prepare_data(cfg);
  io::json summary = io::json::object();
  std::string best;
  double best_score = std::numeric_limits<double>::infinity();
  for (auto v : cfg.variants) {
    const auto bundle_dir = root / "generate" / to_string(v);
    auto b = read_bundle(bundle_dir);
    require_shape(b.names == data.raw.names, "bundle names do not match the dataset");
    auto gen = normalized_bundle(b, data.stats);
    auto real = data.raw;
    real.values = apply_norm(real.values, data.stats);
    auto rep = fidelity_report(real, gen, cfg.fidelity);
    auto j = rep.to_json();
    j["variant"] = to_string(v);
    j["bundle_sha256"] = io::sha256_tree(bundle_dir);
    j["cross_correlation_shuffled"] =
        cross_correlation_score(real.values, shuffle_channels(gen.values, derive_seed(cfg.fidelity.seed, 4)), real.names);
    const auto N = real.n_vars();
    auto pca = pca_project(feature_windows(real, N, cfg.fidelity.window), feature_windows(gen, N, cfg.fidelity.window));
    j["pca_explained_ratio"] = std::vector<double>(pca.explained_ratio.data(), pca.explained_ratio.data() + 2);
    const auto out = root / "validate" / to_string(v);
    io::fs::remove_all(out);
    io::write_json(out / "report.json", j);
    Matrix pts(pca.real.rows() + pca.gen.rows(), 3);
    pts << Matrix::Zero(pca.real.rows(), 1), pca.real, Matrix::Ones(pca.gen.rows(), 1), pca.gen;
    io::write_csv(out / "pca.csv", {"generated", "pc1", "pc2"}, pts);
    summary[to_string(v)] = {{"discriminative_score", rep.discriminative},
                             {"mmd2", rep.mmd2},
                             {"cross_correlation_score", rep.cross_correlation}};
    if (rep.discriminative < best_score) {
      best_score = rep.discriminative;
      best = to_string(v);
    }
    log_line("validate: " + to_string(v) + " discriminative " + short_num(rep.discriminative) + ", MMD^2 " +
             short_num(rep.mmd2) + ", cross-corr " + short_num(rep.cross_correlation));
  }
  io::json out{{"variants", summary}, {"best_discriminative", best}};
  io::write_json(root / "validate" / "summary.json", out);
  write_text_file(root / "validate" / "config.ini", cfg.to_ini());
  return out;
}

/// Scores a candidate graph (CSV) or a built-in baseline against the HCG of
/// the bundle for `variant`.
inline ScoreReport cmd_evaluate(const PipelineConfig& cfg, Variant variant = Variant::full) {
  const auto root = cfg.root();
  const auto bundle_dir = root / "generate" / to_string(variant);
  auto b = read_bundle(bundle_dir);
  const Matrix truth = b.hcg.cast<double>();
  CandidateGraph cand;
  if (!cfg.candidate.empty()) {
    auto m = io::read_labeled_matrix(cfg.resolve(cfg.candidate));
    require_shape(m.values.rows() == truth.rows(),
                  "candidate has " + std::to_string(m.values.rows()) + " variables, benchmark has " +
                      std::to_string(truth.rows()));
    cand = {m.values, io::fs::path(cfg.candidate).stem().string(), false};
  } else {
    const auto N = b.n_vars();
    auto ds = b.series_dataset(cfg.include_residual);
    BaselineOptions opt{cfg.max_lag, N, cfg.include_residual};
    if (cfg.baseline == "granger") cand = baseline_granger(ds, opt);
    else if (cfg.baseline == "crosscorr") cand = baseline_crosscorr(ds, opt);
    else throw UsageError("unknown baseline '" + cfg.baseline + "' (expected granger or crosscorr)");
  }
  auto rep = evaluate(cand.scores, truth, cfg.exclude_diagonal, cand.method);
  auto j = rep.to_json();
  j["variant"] = to_string(variant);
  j["bundle_sha256"] = io::sha256_tree(bundle_dir);
  j["ridge_fallback"] = cand.ridge_fallback;
  if (cfg.candidate.empty()) {
    j["max_lag"] = cfg.max_lag;
    j["include_residual"] = cfg.include_residual;
  }
  const auto out = root / "evaluate" / to_string(variant);
  io::write_json(out / (cand.method + ".json"), j);
  io::write_labeled_matrix(out / (cand.method + "_graph.csv"), b.names, cand.scores);
  write_text_file(root / "evaluate" / "config.ini", cfg.to_ini());
  log_line("evaluate: " + cand.method + " on " + to_string(variant) + " AUROC " + short_num(rep.auroc) +
           ", AUPRC " + short_num(rep.auprc));
  return rep;
}

inline void cmd_all(const PipelineConfig& cfg) {
  cmd_fit(cfg);
  cmd_extract(cfg);
  cmd_generate(cfg);
  cmd_validate(cfg);
  for (auto v : cfg.variants) cmd_evaluate(cfg, v);
}

}  // namespace tsbench
