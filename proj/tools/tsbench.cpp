// Command-line front end: fit | extract | generate | validate | evaluate | all,
// plus synth for writing a synthetic dataset with a known graph.
//
// Exit codes: 0 success, 1 metric undefined or other runtime failure,
// 2 usage, shape or parse error.

#include "tsbench/pipeline.hpp"
#include "tsbench/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace tsbench;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string variant;
  std::string baseline;
  std::string candidate;
  std::optional<std::size_t> max_lag;
  bool exclude_diagonal = false;
  bool include_residual = false;
};

/// Path given on the command line, expressed relative to the config directory.
std::string relative_to(const io::fs::path& base, const std::string& p) {
  return io::fs::absolute(p).lexically_normal().lexically_relative(io::fs::absolute(base).lexically_normal()).string();
}

PipelineConfig resolve_config(const Overrides& o) {
  PipelineConfig cfg;
  if (!o.config.empty()) cfg = PipelineConfig::load(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = relative_to(cfg.base_dir, o.out);
  if (!o.variant.empty()) cfg.variants = o.variant == "all" ? all_variants() : std::vector<Variant>{parse_variant(o.variant)};
  if (!o.baseline.empty()) cfg.baseline = o.baseline;
  if (!o.candidate.empty()) cfg.candidate = relative_to(cfg.base_dir, o.candidate);
  if (o.max_lag) cfg.max_lag = *o.max_lag;
  if (o.exclude_diagonal) cfg.exclude_diagonal = true;
  if (o.include_residual) cfg.include_residual = true;
  cfg.derive_seeds();
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI config file");
  cmd->add_option("--seed", o.seed, "run seed (overrides run.seed)");
  cmd->add_option("--out", o.out, "output root (overrides run.out)");
  cmd->add_option("--variant", o.variant, "full, gaussian_noise, no_noise, fit_masked, hcg_only or all");
}

void add_evaluate_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--baseline", o.baseline, "built-in baseline: granger or crosscorr");
  cmd->add_option("--candidate", o.candidate, "candidate graph CSV (N x N with header names)");
  cmd->add_option("--max-lag", o.max_lag, "baseline lag order");
  cmd->add_flag("--exclude-diagonal", o.exclude_diagonal, "score off-diagonal entries only");
  cmd->add_flag("--include-residual", o.include_residual, "let baselines condition on residual channels");
}

struct SynthOptions {
  std::string out;
  std::size_t n_vars = 10;
  std::size_t length = 1000;
  std::size_t samples = 1;
  std::size_t edges = 8;
  double noise_scale = 0.3;
  double self_min = 0.3, self_max = 0.6;
  std::string noise = "bimodal";
  bool linear = false;
  std::uint64_t seed = 0;
};

NoiseKind parse_noise(const std::string& s) {
  if (s == "bimodal") return NoiseKind::bimodal;
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "none") return NoiseKind::none;
  throw UsageError("unknown noise kind '" + s + "'");
}

void run_synth(const SynthOptions& o) {
  SyntheticVarSpec spec;
  spec.n_vars = o.n_vars;
  spec.length = o.length;
  spec.n_samples = o.samples;
  spec.cross_edges = o.edges;
  spec.noise_scale = o.noise_scale;
  spec.self_min = o.self_min;
  spec.self_max = o.self_max;
  spec.noise = parse_noise(o.noise);
  spec.linear = o.linear;
  spec.seed = o.seed;
  auto syn = make_synthetic_var(spec);
  io::fs::path csv(o.out);
  save_dataset(csv, syn.data);
  auto graph = csv;
  graph.replace_filename(csv.stem().string() + "_graph.csv");
  io::write_labeled_matrix(graph, syn.data.names, syn.graph.cast<double>());
  std::cerr << "synth: wrote " << csv.string() << " and " << graph.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal time-series benchmark generator"};
  app.require_subcommand(1);
  Overrides o;
  SynthOptions synth;

  auto* fit = app.add_subcommand("fit", "train the prediction model and noise flows");
  auto* extract = app.add_subcommand("extract", "derive the hypothesized causal graph");
  auto* generate = app.add_subcommand("generate", "generate benchmark bundles");
  auto* validate = app.add_subcommand("validate", "fidelity report of generated bundles");
  auto* evaluate = app.add_subcommand("evaluate", "score a candidate graph or baseline against the HCG");
  auto* all = app.add_subcommand("all", "run every stage");
  for (auto* c : {fit, extract, generate, validate, evaluate, all}) add_common(c, o);
  add_evaluate_flags(evaluate, o);
  add_evaluate_flags(all, o);

  auto* syn = app.add_subcommand("synth", "write a synthetic nonlinear VAR dataset and its graph");
  syn->add_option("--out", synth.out, "output CSV")->required();
  syn->add_option("--n-vars", synth.n_vars);
  syn->add_option("--length", synth.length, "rows per sample");
  syn->add_option("--samples", synth.samples);
  syn->add_option("--edges", synth.edges, "cross edges");
  syn->add_option("--noise", synth.noise, "bimodal, gaussian or none");
  syn->add_option("--noise-scale", synth.noise_scale);
  syn->add_option("--self-min", synth.self_min);
  syn->add_option("--self-max", synth.self_max);
  syn->add_flag("--linear", synth.linear);
  syn->add_option("--seed", synth.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (syn->parsed()) {
      run_synth(synth);
      return 0;
    }
    const auto cfg = resolve_config(o);
    if (fit->parsed()) cmd_fit(cfg);
    if (extract->parsed()) cmd_extract(cfg);
    if (generate->parsed()) cmd_generate(cfg);
    if (validate->parsed()) cmd_validate(cfg);
    if (evaluate->parsed()) {
      const auto v = o.variant.empty() || o.variant == "all" ? Variant::full : parse_variant(o.variant);
      auto rep = cmd_evaluate(cfg, v);
      std::cout << "AUROC " << short_num(rep.auroc) << " AUPRC " << short_num(rep.auprc) << '\n';
    }
    if (all->parsed()) cmd_all(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  }
  return 0;
}
