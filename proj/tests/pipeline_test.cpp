#include "tsbench/pipeline.hpp"
#include "tsbench/synthetic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

namespace tsbench {
namespace {

const char* kTinyConfig = R"(
[run]
seed = 3
out = out

[data]
path = data.csv

[model]
window = 2
backbone = mlp
sharing = no_sharing
enc_layers = 1
enc_hidden = 8
dec_layers = 1
dec_hidden = 8

[train]
epochs = 3
batch = 32
lr = 0.01
rollout = 2

[flow]
iterations = 30

[extract]
sparsity = 0.3
explained = 8
background = 32
mc_samples = 8

[generate]
samples = 20
length = 10
variants = all

[validate]
disc_epochs = 2
mmd_max_points = 100
)";

PipelineConfig tiny(const io::fs::path& dir, const std::string& extra = "") {
  std::istringstream in(std::string(kTinyConfig) + extra);
  return PipelineConfig::parse(in, dir);
}

io::fs::path tiny_workspace(const std::string& name) {
  auto dir = testing::scratch_dir(name);
  SyntheticVarSpec spec;
  spec.n_vars = 3;
  spec.cross_edges = 2;
  spec.length = 300;
  spec.n_samples = 3;
  spec.seed = 4;
  save_dataset(dir / "data.csv", make_synthetic_var(spec).data);
  return dir;
}

TEST(Config, ParsesAndRoundTrips) {
  auto cfg = tiny(".");
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.model.backbone, Backbone::mlp);
  EXPECT_EQ(cfg.model.sharing, Sharing::no_sharing);
  EXPECT_EQ(cfg.train.plan.rollout, 2u);
  EXPECT_EQ(cfg.variants, all_variants());
  EXPECT_EQ(cfg.fidelity.discriminator.epochs, 2u);
  EXPECT_EQ(cfg.train.lr, 0.01);
  std::istringstream again(cfg.to_ini());
  auto back = PipelineConfig::parse(again, ".");
  EXPECT_EQ(back.to_ini(), cfg.to_ini());
}

TEST(Config, DefaultsMatchReferenceSettings) {
  std::istringstream empty("");
  auto cfg = PipelineConfig::parse(empty, ".");
  EXPECT_EQ(cfg.sparsity, 0.15);
  EXPECT_EQ(cfg.generator.samples, 500u);
  EXPECT_EQ(cfg.generator.length, 40u);
  EXPECT_EQ(cfg.fidelity.discriminator.hidden, 8u);
  EXPECT_EQ(cfg.fidelity.discriminator.layers, 2u);
  EXPECT_EQ(cfg.fidelity.discriminator.epochs, 30u);
  EXPECT_EQ(cfg.fidelity.discriminator.lr, 1e-4);
  EXPECT_EQ(cfg.variants, std::vector<Variant>{Variant::full});
}

TEST(Config, SeedsDeriveFromRunSeed) {
  auto a = tiny("."), b = tiny(".", "");
  EXPECT_EQ(a.model.seed, b.model.seed);
  EXPECT_NE(a.model.seed, a.generator.seed);
  a.seed = 4;
  a.derive_seeds();
  EXPECT_NE(a.model.seed, b.model.seed);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return PipelineConfig::parse(in, ".");
  };
  EXPECT_THROW(parse("[model]\nwindw = 3\n"), UsageError);
  EXPECT_THROW(parse("[modle]\nwindow = 3\n"), UsageError);
  EXPECT_THROW(parse("[model]\nwindow = three\n"), UsageError);
  EXPECT_THROW(parse("[model]\nwindow = -3\n"), UsageError);
  EXPECT_THROW(parse("[model]\nbackbone = transformer\n"), UsageError);
  EXPECT_THROW(parse("[train]\nscheduled_sampling = maybe\n"), UsageError);
  EXPECT_THROW(parse("[generate]\nvariants = full,bogus\n"), UsageError);
  EXPECT_THROW(parse("[model\nwindow = 3\n"), ParseError);
  EXPECT_EQ(parse("[train]\nscheduled_sampling = false\n").train.plan.enabled, false);
  EXPECT_EQ(parse("[generate]\nvariants = full, no_noise\n").variants,
            (std::vector<Variant>{Variant::full, Variant::no_noise}));
}

TEST(Config, ExitCodes) {
  EXPECT_EQ(exit_code(UsageError("x")), 2);
  EXPECT_EQ(exit_code(ShapeError("x")), 2);
  EXPECT_EQ(exit_code(ParseError("x")), 2);
  EXPECT_EQ(exit_code(MetricUndefined("x")), 1);
  EXPECT_EQ(exit_code(DegenerateError("x")), 1);
  EXPECT_EQ(exit_code(NumericError("x")), 1);
}

TEST(Pipeline, StagesRequireTheirInputs) {
  auto dir = tiny_workspace("stages");
  auto cfg = tiny(dir);
  EXPECT_THROW(cmd_extract(cfg), UsageError);
  EXPECT_THROW(cmd_generate(cfg), UsageError);
  EXPECT_THROW(cmd_evaluate(cfg), UsageError);
  cfg.data = "missing.csv";
  try {
    cmd_fit(cfg);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.csv"), std::string::npos);
  }
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new io::fs::path(tiny_workspace("tiny_run"));
    warnings_enabled() = false;
    cmd_all(tiny(*dir_));
    warnings_enabled() = true;
  }
  static void TearDownTestSuite() { delete dir_; }
  static io::fs::path root() { return *dir_ / "out"; }
  static io::fs::path* dir_;
};
io::fs::path* TinyRun::dir_ = nullptr;

TEST_F(TinyRun, WritesEveryDeclaredArtifact) {
  for (auto rel : {"fit/model/cdnn.json", "fit/flows/flows.json", "fit/gaussian/flows.json", "fit/norm.json",
                   "fit/fit_report.json", "fit/config.ini", "extract/hcg.csv", "extract/importance.csv",
                   "extract/importance_se.csv", "extract/hcg.json", "validate/summary.json",
                   "validate/full/report.json", "validate/full/pca.csv", "evaluate/full/granger.json",
                   "generate/fit_masked.checkpoint/model/cdnn.json"})
    EXPECT_TRUE(io::fs::exists(root() / rel)) << rel;
  for (auto v : all_variants()) {
    EXPECT_TRUE(io::fs::exists(root() / "generate" / to_string(v) / "manifest.json")) << to_string(v);
    EXPECT_TRUE(io::fs::exists(root() / "generate" / to_string(v) / sample_file_name(19)));
  }
}

TEST_F(TinyRun, LabelsMatchDatasetNames) {
  auto names = load_csv(*dir_ / "data.csv").names;
  EXPECT_EQ(io::read_labeled_matrix(root() / "extract" / "hcg.csv").names, names);
  EXPECT_EQ(io::read_labeled_matrix(root() / "extract" / "importance.csv").names, names);
  auto meta = io::read_json(root() / "extract" / "hcg.json");
  EXPECT_EQ(meta.at("source"), "shap");
  EXPECT_EQ(meta.at("edges").get<int>(), 3);  // round(0.3 * 9)
}

TEST_F(TinyRun, ManifestHashLinksCheckpoints) {
  auto m = io::read_json(root() / "generate" / "full" / "manifest.json");
  EXPECT_EQ(m.at("checkpoints").at("model"), io::sha256_tree(root() / "fit" / "model"));
  EXPECT_EQ(m.at("checkpoints").at("flows"), io::sha256_tree(root() / "fit" / "flows"));
  EXPECT_EQ(m.at("hcg_sha256"), io::sha256_file(root() / "extract" / "hcg.csv"));
  auto masked = io::read_json(root() / "generate" / "fit_masked" / "manifest.json");
  EXPECT_EQ(masked.at("checkpoints").at("masked_model"),
            io::sha256_tree(root() / "generate" / "fit_masked.checkpoint" / "model"));
  const auto text = m.dump();
  EXPECT_EQ(text.find(dir_->string()), std::string::npos);  // no absolute paths
  EXPECT_EQ(text.find("time"), std::string::npos);
}

TEST_F(TinyRun, ResolvedConfigReproducesRun) {
  std::ifstream in(root() / "fit" / "config.ini");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), tiny(*dir_).to_ini());
}

TEST_F(TinyRun, RerunIsByteIdentical) {
  auto cfg = tiny(*dir_, "");
  cfg.out = "out_again";
  warnings_enabled() = false;
  cmd_fit(cfg);
  cmd_extract(cfg);
  cmd_generate(cfg);
  warnings_enabled() = true;
  EXPECT_EQ(io::sha256_tree(*dir_ / "out_again" / "fit" / "model"), io::sha256_tree(root() / "fit" / "model"));
  EXPECT_EQ(io::sha256_tree(*dir_ / "out_again" / "fit" / "flows"), io::sha256_tree(root() / "fit" / "flows"));
  for (auto v : all_variants())
    EXPECT_EQ(io::sha256_tree(*dir_ / "out_again" / "generate" / to_string(v)),
              io::sha256_tree(root() / "generate" / to_string(v)))
        << to_string(v);
}

TEST_F(TinyRun, CandidateScoring) {
  auto cfg = tiny(*dir_);
  auto b = read_bundle(root() / "generate" / "full");
  io::write_labeled_matrix(*dir_ / "truth.csv", b.names, b.hcg.cast<double>());
  cfg.candidate = "truth.csv";
  auto rep = cmd_evaluate(cfg);
  EXPECT_EQ(rep.auroc, 1.0);
  EXPECT_EQ(rep.auprc, 1.0);
  EXPECT_TRUE(io::fs::exists(root() / "evaluate" / "full" / "truth.json"));

  io::write_labeled_matrix(*dir_ / "small.csv", {"a", "b"}, Matrix::Ones(2, 2));
  cfg.candidate = "small.csv";
  EXPECT_THROW(cmd_evaluate(cfg), ShapeError);

  cfg.candidate.clear();
  cfg.baseline = "crosscorr";
  auto cc = cmd_evaluate(cfg);
  EXPECT_GE(cc.auroc, 0.0);
  EXPECT_LE(cc.auroc, 1.0);
  cfg.baseline = "pcmci";
  EXPECT_THROW(cmd_evaluate(cfg), UsageError);
}

TEST_F(TinyRun, ValidateReportsEveryVariant) {
  auto s = io::read_json(root() / "validate" / "summary.json");
  for (auto v : all_variants()) EXPECT_TRUE(s.at("variants").contains(to_string(v))) << to_string(v);
  auto r = io::read_json(root() / "validate" / "full" / "report.json");
  for (auto key : {"discriminative_score", "mmd2", "cross_correlation_score", "cross_correlation_shuffled", "seed",
                   "bundle_sha256"})
    EXPECT_TRUE(r.contains(key)) << key;
  EXPECT_EQ(s.at("variants").at("no_noise").at("discriminative_score").get<double>() >= 0.0, true);
}

TEST(Pipeline, PriorGraphNeedsNoCheckpoint) {
  auto dir = tiny_workspace("prior");
  auto names = load_csv(dir / "data.csv").names;
  Matrix d(3, 3);
  d << 0, 1, 5, 1, 0, 5, 5, 5, 0;
  io::write_labeled_matrix(dir / "dist.csv", names, d);
  auto cfg = tiny(dir);
  cfg.prior_distances = "dist.csv";
  cfg.sigma_dist = 1.0;
  auto meta = cmd_extract(cfg);
  EXPECT_EQ(meta.at("source"), "prior");
  auto h = io::read_labeled_matrix(dir / "out" / "extract" / "hcg.csv").values;
  EXPECT_EQ(h(0, 1), 1.0);
  EXPECT_EQ(h(0, 2), 0.0);
  EXPECT_FALSE(io::fs::exists(dir / "out" / "fit"));
}

}  // namespace
}  // namespace tsbench
