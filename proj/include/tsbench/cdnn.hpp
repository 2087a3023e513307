#pragma once

// Causally disentangled network: N scalar heads, head j sees the input
// window with every series i where A(i, j) == 0 zeroed out. Encoders and
// decoders are either per-head or one physically shared ParamStore.

#include "tsbench/data.hpp"
#include "tsbench/nn.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>

namespace tsbench {

using AdjacencyMask = Eigen::MatrixXi;

inline void validate_binary(const AdjacencyMask& a, Eigen::Index n, const std::string& what) {
  if (a.rows() != n || a.cols() != n) {
    throw ShapeError(what + " must be " + std::to_string(n) + "x" + std::to_string(n) + ", got " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
  if (((a.array() != 0) && (a.array() != 1)).any()) throw ShapeError(what + " entries must be 0 or 1");
}

inline AdjacencyMask full_mask(Eigen::Index n) { return AdjacencyMask::Ones(n, n); }

enum class Backbone { mlp, lstm };
enum class Sharing { no_sharing, shared_encoder, shared_decoder };

inline std::string to_string(Backbone b) { return b == Backbone::mlp ? "mlp" : "lstm"; }
inline std::string to_string(Sharing s) {
  switch (s) {
    case Sharing::no_sharing: return "no_sharing";
    case Sharing::shared_encoder: return "shared_encoder";
    case Sharing::shared_decoder: return "shared_decoder";
  }
  return "?";
}
inline Backbone parse_backbone(const std::string& s) {
  if (s == "mlp") return Backbone::mlp;
  if (s == "lstm") return Backbone::lstm;
  throw UsageError("unknown backbone '" + s + "' (expected mlp or lstm)");
}
inline Sharing parse_sharing(const std::string& s) {
  if (s == "no_sharing") return Sharing::no_sharing;
  if (s == "shared_encoder") return Sharing::shared_encoder;
  if (s == "shared_decoder") return Sharing::shared_decoder;
  throw UsageError("unknown sharing mode '" + s + "'");
}

struct CdnnConfig {
  std::size_t n_vars = 2;
  std::size_t window = 20;
  Backbone backbone = Backbone::lstm;
  Sharing sharing = Sharing::shared_decoder;
  std::size_t enc_layers = 2;
  std::size_t enc_hidden = 128;
  std::size_t dec_layers = 3;
  std::size_t dec_hidden = 128;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_vars >= 1 && window >= 1, "CDNN needs n_vars >= 1 and window >= 1");
    require(enc_layers >= 1 && dec_layers >= 1 && enc_hidden >= 1 && dec_hidden >= 1,
            "CDNN layer counts and widths must be >= 1");
  }

  io::json to_json() const {
    return {{"n_vars", n_vars},         {"window", window},         {"backbone", to_string(backbone)},
            {"sharing", to_string(sharing)}, {"enc_layers", enc_layers}, {"enc_hidden", enc_hidden},
            {"dec_layers", dec_layers}, {"dec_hidden", dec_hidden}, {"seed", seed}};
  }
  static CdnnConfig from_json(const io::json& j) {
    CdnnConfig c;
    c.n_vars = j.at("n_vars");
    c.window = j.at("window");
    c.backbone = parse_backbone(j.at("backbone"));
    c.sharing = parse_sharing(j.at("sharing"));
    c.enc_layers = j.at("enc_layers");
    c.enc_hidden = j.at("enc_hidden");
    c.dec_layers = j.at("dec_layers");
    c.dec_hidden = j.at("dec_hidden");
    c.seed = j.at("seed");
    return c;
  }
};

/// Copy of `inputs` (window*N x B, time-major) with the rows of every series
/// i where column(i) == 0 set to exactly zero.
inline Matrix apply_mask_column(const Matrix& inputs, const Eigen::Ref<const Eigen::VectorXi>& column) {
  const auto N = column.size();
  require_shape(inputs.rows() % N == 0, "masked input rows must be a multiple of N");
  Matrix out = inputs;
  const auto steps = inputs.rows() / N;
  for (Eigen::Index i = 0; i < N; ++i) {
    if (column(i) != 0) continue;
    for (Eigen::Index s = 0; s < steps; ++s) out.row(s * N + i).setZero();
  }
  return out;
}

class CdnnModel {
 public:
  struct HeadCache {
    nn::MLP::Cache mlp_enc;
    nn::LSTM::Cache lstm_enc;
    nn::MLP::Cache dec;
  };

  explicit CdnnModel(const CdnnConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto N = cfg.n_vars;
    const std::size_t n_enc = cfg.sharing == Sharing::shared_encoder ? 1 : N;
    const std::size_t n_dec = cfg.sharing == Sharing::shared_decoder ? 1 : N;
    for (std::size_t k = 0; k < n_enc; ++k) {
      const auto seed = derive_seed(cfg.seed, 1, k);
      enc_stores_.push_back(std::make_unique<nn::ParamStore>(seed));
      Rng rng(seed);
      if (cfg.backbone == Backbone::mlp) {
        mlp_enc_.emplace_back(*enc_stores_.back(), "enc",
                              nn::MLPConfig{cfg.window * N, cfg.enc_hidden, cfg.enc_hidden, cfg.enc_layers, true},
                              rng);
      } else {
        lstm_enc_.emplace_back(*enc_stores_.back(), "enc", nn::LSTMConfig{N, cfg.enc_hidden, cfg.enc_layers}, rng);
      }
    }
    for (std::size_t k = 0; k < n_dec; ++k) {
      const auto seed = derive_seed(cfg.seed, 2, k);
      dec_stores_.push_back(std::make_unique<nn::ParamStore>(seed));
      Rng rng(seed);
      dec_.emplace_back(*dec_stores_.back(), "dec",
                        nn::MLPConfig{cfg.enc_hidden, cfg.dec_hidden, 1, cfg.dec_layers, false}, rng);
    }
  }

  CdnnModel(const CdnnModel&) = delete;
  CdnnModel& operator=(const CdnnModel&) = delete;
  CdnnModel(CdnnModel&&) = default;
  CdnnModel& operator=(CdnnModel&&) = default;

  const CdnnConfig& config() const { return cfg_; }
  std::size_t n_vars() const { return cfg_.n_vars; }
  std::size_t window() const { return cfg_.window; }
  std::size_t input_rows() const { return cfg_.window * cfg_.n_vars; }

  std::size_t encoder_index(std::size_t head) const { return enc_stores_.size() == 1 ? 0 : head; }
  std::size_t decoder_index(std::size_t head) const { return dec_stores_.size() == 1 ? 0 : head; }
  nn::ParamStore& encoder_store(std::size_t head) { return *enc_stores_[encoder_index(head)]; }
  nn::ParamStore& decoder_store(std::size_t head) { return *dec_stores_[decoder_index(head)]; }

  std::vector<nn::Param*> parameters() {
    std::vector<nn::Param*> out;
    for (auto* group : {&enc_stores_, &dec_stores_})
      for (auto& s : *group)
        for (auto* p : s->pointers()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.setZero();
  }

  /// Head j on already-masked inputs (window*N x B) -> 1 x B.
  Matrix head_forward(std::size_t j, const Matrix& masked, HeadCache* cache = nullptr) const {
    require_shape(static_cast<std::size_t>(masked.rows()) == input_rows(),
                  "CDNN input must have window*N = " + std::to_string(input_rows()) + " rows");
    const auto e = encoder_index(j);
    Matrix z;
    if (cfg_.backbone == Backbone::mlp) {
      z = mlp_enc_[e].forward(masked, cache ? &cache->mlp_enc : nullptr);
    } else {
      z = lstm_enc_[e].forward(split_steps(masked), cache ? &cache->lstm_enc : nullptr);
    }
    return dec_[decoder_index(j)].forward(z, cache ? &cache->dec : nullptr);
  }

  /// Accumulates parameter gradients for head j given d(loss)/d(output) (1 x B).
  void head_backward(std::size_t j, const Matrix& dout, HeadCache& cache) {
    Matrix dz = dec_[decoder_index(j)].backward(dout, cache.dec);
    const auto e = encoder_index(j);
    if (cfg_.backbone == Backbone::mlp) {
      mlp_enc_[e].backward(dz, cache.mlp_enc);
    } else {
      lstm_enc_[e].backward(dz, cache.lstm_enc);
    }
  }

  /// f(X, A): N x B predictions, head j fed X masked by column j of A.
  Matrix forward(const Matrix& inputs, const AdjacencyMask& mask) const {
    validate_binary(mask, static_cast<Eigen::Index>(n_vars()), "adjacency mask");
    Matrix out(n_vars(), inputs.cols());
    const bool full = (mask.array() == 1).all();
    for (std::size_t j = 0; j < n_vars(); ++j) {
      out.row(j) = full ? head_forward(j, inputs) : head_forward(j, apply_mask_column(inputs, mask.col(j)));
    }
    return out;
  }

  Matrix forward(const Matrix& inputs) const { return forward(inputs, full_mask(n_vars())); }

  /// Single window (window x N, oldest row first) -> N-vector.
  Vector masked_forward(const Matrix& window, const AdjacencyMask& mask) const {
    require_shape(static_cast<std::size_t>(window.rows()) == cfg_.window &&
                      static_cast<std::size_t>(window.cols()) == cfg_.n_vars,
                  "window must be " + std::to_string(cfg_.window) + "x" + std::to_string(cfg_.n_vars));
    Vector flat(input_rows());
    flatten_window(window, 0, cfg_.window, flat);
    return forward(flat, mask).col(0);
  }

  /// Parameter values snapshot, in parameters() order.
  std::vector<Matrix> snapshot() {
    std::vector<Matrix> out;
    for (auto* p : parameters()) out.push_back(p->value);
    return out;
  }
  void restore(const std::vector<Matrix>& snap) {
    auto ps = parameters();
    require(ps.size() == snap.size(), "snapshot does not match model");
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = snap[k];
  }

  void save(const io::fs::path& dir) const {
    io::fs::create_directories(dir);
    io::json desc = cfg_.to_json();
    desc["encoders"] = enc_stores_.size();
    desc["decoders"] = dec_stores_.size();
    io::write_json(dir / "cdnn.json", desc);
    for (std::size_t k = 0; k < enc_stores_.size(); ++k)
      nn::save_params(dir, "encoder_" + std::to_string(k), *enc_stores_[k], cfg_.to_json());
    for (std::size_t k = 0; k < dec_stores_.size(); ++k)
      nn::save_params(dir, "decoder_" + std::to_string(k), *dec_stores_[k], cfg_.to_json());
  }

  static CdnnModel load(const io::fs::path& dir) {
    auto desc = io::read_json(dir / "cdnn.json");
    CdnnModel m(CdnnConfig::from_json(desc));
    for (std::size_t k = 0; k < m.enc_stores_.size(); ++k)
      nn::load_params(dir, "encoder_" + std::to_string(k), *m.enc_stores_[k]);
    for (std::size_t k = 0; k < m.dec_stores_.size(); ++k)
      nn::load_params(dir, "decoder_" + std::to_string(k), *m.dec_stores_[k]);
    return m;
  }

 private:
  std::vector<Matrix> split_steps(const Matrix& flat) const {
    const auto N = static_cast<Eigen::Index>(cfg_.n_vars);
    std::vector<Matrix> seq(cfg_.window);
    for (std::size_t s = 0; s < cfg_.window; ++s) seq[s] = flat.middleRows(static_cast<Eigen::Index>(s) * N, N);
    return seq;
  }

  CdnnConfig cfg_;
  std::vector<std::unique_ptr<nn::ParamStore>> enc_stores_, dec_stores_;
  std::vector<nn::MLP> mlp_enc_;
  std::vector<nn::LSTM> lstm_enc_;
  std::vector<nn::MLP> dec_;
};

// ---- training -------------------------------------------------------------

/// Teacher forcing probability decays linearly from 1 to p_min over the
/// epochs. Each training example is rolled out `rollout` steps; after the
/// first step the newest window row is the model's own (detached) prediction
/// with probability 1 - p(epoch).
struct ScheduledSamplingPlan {
  bool enabled = true;
  std::size_t rollout = 5;
  double p_min = 0.5;
  std::uint64_t seed = 0;

  double teacher_forcing(std::size_t epoch, std::size_t epochs) const {
    if (!enabled) return 1.0;
    if (epochs <= 1) return 1.0;
    const double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return std::clamp(1.0 - (1.0 - p_min) * frac, 0.0, 1.0);
  }
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 40;
  double lr = 1e-3;
  double clip = 5.0;
  std::uint64_t seed = 0;
  ScheduledSamplingPlan plan;
};

struct FitResult {
  std::vector<double> train_loss;
  std::vector<double> val_mse;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool diverged = false;
};

inline Matrix gather_windows(const Matrix& series, const std::vector<std::size_t>& targets, std::size_t window) {
  Matrix x(static_cast<Eigen::Index>(window) * series.cols(), static_cast<Eigen::Index>(targets.size()));
  for (std::size_t b = 0; b < targets.size(); ++b) flatten_window(series, targets[b] - window, window, x.col(b));
  return x;
}

inline Matrix gather_rows(const Matrix& series, const std::vector<std::size_t>& rows, std::size_t offset = 0) {
  Matrix y(series.cols(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t b = 0; b < rows.size(); ++b) y.col(b) = series.row(rows[b] + offset).transpose();
  return y;
}

/// Slides every window one step: drops the oldest row and appends `next` (N x B).
inline void slide_windows(Matrix& inputs, const Matrix& next) {
  const auto N = next.rows();
  const auto keep = inputs.rows() - N;
  inputs.topRows(keep) = inputs.bottomRows(keep).eval();
  inputs.bottomRows(N) = next;
}

/// One-step MSE on every admissible window of `ranges` (all-ones mask).
inline double one_step_mse(const CdnnModel& model, const Matrix& series, const std::vector<IndexRange>& ranges,
                           const AdjacencyMask* mask = nullptr) {
  auto targets = window_targets(ranges, model.window());
  require_shape(!targets.empty(), "no admissible windows for evaluation");
  const AdjacencyMask m = mask ? *mask : full_mask(model.n_vars());
  double sse = 0.0;
  constexpr std::size_t chunk = 512;
  for (std::size_t a = 0; a < targets.size(); a += chunk) {
    std::vector<std::size_t> part(targets.begin() + a, targets.begin() + std::min(targets.size(), a + chunk));
    Matrix pred = model.forward(gather_windows(series, part, model.window()), m);
    sse += (pred - gather_rows(series, part)).squaredNorm();
  }
  return sse / static_cast<double>(targets.size() * model.n_vars());
}

/// Mean squared error of free-running n-step prediction (averaged over the n
/// steps). n = 1 reduces to one_step_mse.
inline double multistep_mse(const CdnnModel& model, const Matrix& series, const std::vector<IndexRange>& ranges,
                            std::size_t n, const AdjacencyMask* mask = nullptr) {
  require(n >= 1, "multistep_mse needs n >= 1");
  auto targets = window_targets(ranges, model.window(), n);
  if (targets.empty()) throw ShapeError("no window admits " + std::to_string(n) + " prediction steps");
  const AdjacencyMask m = mask ? *mask : full_mask(model.n_vars());
  double sse = 0.0;
  constexpr std::size_t chunk = 512;
  for (std::size_t a = 0; a < targets.size(); a += chunk) {
    std::vector<std::size_t> part(targets.begin() + a, targets.begin() + std::min(targets.size(), a + chunk));
    Matrix x = gather_windows(series, part, model.window());
    for (std::size_t k = 0; k < n; ++k) {
      Matrix pred = model.forward(x, m);
      sse += (pred - gather_rows(series, part, k)).squaredNorm();
      if (k + 1 < n) slide_windows(x, pred);
    }
  }
  return sse / static_cast<double>(targets.size() * model.n_vars() * n);
}

/// Trains with full-history (all-ones) mask unless `mask` is given, keeping the
/// best-validation parameters. Divergence restores the best checkpoint and stops.
inline FitResult fit_prediction_model(CdnnModel& model, const Matrix& series, const std::vector<IndexRange>& train,
                                      const std::vector<IndexRange>& val, const TrainConfig& cfg,
                                      const AdjacencyMask* mask = nullptr) {
  require(cfg.batch >= 1 && cfg.epochs >= 1, "epochs and batch must be >= 1");
  require_shape(static_cast<std::size_t>(series.cols()) == model.n_vars(), "series width must equal model N");
  const auto N = model.n_vars();
  const AdjacencyMask m = mask ? *mask : full_mask(static_cast<Eigen::Index>(N));
  validate_binary(m, static_cast<Eigen::Index>(N), "training mask");
  const bool full = (m.array() == 1).all();
  const std::size_t horizon = std::max<std::size_t>(1, cfg.plan.rollout);
  auto targets = window_targets(train, model.window(), horizon);
  if (targets.empty()) throw ShapeError("training split has no admissible windows");

  auto params = model.parameters();
  nn::AdamState adam(params, {cfg.lr});
  FitResult result;
  auto best = model.snapshot();
  Rng rng(derive_seed(cfg.seed, 0xF17));
  Rng coin(derive_seed(cfg.plan.seed, 0x55));

  std::vector<CdnnModel::HeadCache> caches(N);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(targets.begin(), targets.end(), rng);
    const double p = cfg.plan.teacher_forcing(epoch, cfg.epochs);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    bool bad = false;
    for (std::size_t a = 0; a < targets.size() && !bad; a += cfg.batch) {
      std::vector<std::size_t> part(targets.begin() + a, targets.begin() + std::min(targets.size(), a + cfg.batch));
      const auto B = static_cast<Eigen::Index>(part.size());
      Matrix x = gather_windows(series, part, model.window());
      model.zero_grad();
      double loss = 0.0;
      const double scale = 1.0 / static_cast<double>(N * part.size() * horizon);
      for (std::size_t k = 0; k < horizon; ++k) {
        Matrix y = gather_rows(series, part, k);
        Matrix pred(N, B);
        for (std::size_t j = 0; j < N; ++j) {
          pred.row(j) = full ? model.head_forward(j, x, &caches[j])
                             : model.head_forward(j, apply_mask_column(x, m.col(j)), &caches[j]);
        }
        Matrix diff = pred - y;
        loss += diff.squaredNorm() * scale;
        for (std::size_t j = 0; j < N; ++j) model.head_backward(j, 2.0 * scale * diff.row(j), caches[j]);
        if (k + 1 < horizon) {
          Matrix next = y;
          for (Eigen::Index b = 0; b < B; ++b) {
            if (uniform01(coin) >= p) next.col(b) = pred.col(b);
          }
          slide_windows(x, next);
        }
      }
      if (!std::isfinite(loss)) {
        bad = true;
        break;
      }
      nn::clip_grad_norm(params, cfg.clip);
      try {
        adam.step();
      } catch (const NumericError&) {
        bad = true;
        break;
      }
      epoch_loss += loss;
      ++batches;
    }
    const double val_mse = bad ? std::numeric_limits<double>::quiet_NaN()
                               : (val.empty() ? epoch_loss / std::max<std::size_t>(1, batches)
                                              : one_step_mse(model, series, val, &m));
    if (bad || !std::isfinite(val_mse)) {
      result.diverged = true;
      warn("training diverged at epoch " + std::to_string(epoch) + "; restoring best checkpoint");
      break;
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, batches)));
    result.val_mse.push_back(val_mse);
    if (val_mse < result.best_val) {
      result.best_val = val_mse;
      result.best_epoch = epoch;
      best = model.snapshot();
    }
  }
  model.restore(best);
  return result;
}

/// Free-running generation from `initial` (window x N). `noise(step)` returns
/// an N-vector added to each prediction; pass an empty function for none.
inline Matrix rollout(const CdnnModel& model, const AdjacencyMask& mask, const Matrix& initial, std::size_t steps,
                      const std::function<Vector(std::size_t)>& noise = {}) {
  require(steps >= 1, "rollout needs steps >= 1");
  require_shape(static_cast<std::size_t>(initial.rows()) == model.window() &&
                    static_cast<std::size_t>(initial.cols()) == model.n_vars(),
                "initial window has wrong shape");
  Matrix out(steps, model.n_vars());
  Vector x(model.input_rows());
  flatten_window(initial, 0, model.window(), x);
  Matrix xm = x;
  for (std::size_t s = 0; s < steps; ++s) {
    Vector pred = model.forward(xm, mask).col(0);
    if (noise) pred += noise(s);
    out.row(s) = pred.transpose();
    slide_windows(xm, pred);
  }
  return out;
}

}  // namespace tsbench
