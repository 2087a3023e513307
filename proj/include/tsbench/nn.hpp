#pragma once

// Minimal differentiable building blocks: dense layers, MLP, multi-layer
// LSTM, Adam, and the parameter checkpoint format.
//
// Activations are laid out features x batch (one column per example).
// Every forward pass can record a Cache; backward consumes it, accumulates
// parameter gradients into Param::grad and returns the input gradient.

#include "tsbench/common.hpp"
#include "tsbench/io.hpp"

#include <bit>
#include <map>

namespace tsbench::nn {

struct Param {
  Matrix value;
  Matrix grad;
};

/// Named parameter arrays. Addresses of stored Params are stable for the
/// lifetime of the store, so layers keep raw pointers into it.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw UsageError("duplicate parameter '" + name + "'");
    it->second.value = Matrix::Zero(rows, cols);
    it->second.grad = Matrix::Zero(rows, cols);
    return it->second;
  }

  Param& add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, double bound,
                     Rng& rng) {
    auto& p = add(name, rows, cols);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) p.value(r, c) = dist(rng);
    return p;
  }

  Param& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::map<std::string, Param>& items() { return params_; }
  const std::map<std::string, Param>& items() const { return params_; }

  std::vector<Param*> pointers() {
    std::vector<Param*> out;
    for (auto& [_, p] : params_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.setZero();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::map<std::string, Param> params_;
};

inline double init_bound(Eigen::Index fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

inline Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

class Dense {
 public:
  Dense() = default;
  Dense(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out, Rng& rng)
      : w_(&store.add_uniform(prefix + ".w", out, in, init_bound(in), rng)),
        b_(&store.add_uniform(prefix + ".b", out, 1, init_bound(in), rng)) {}

  Eigen::Index in() const { return w_->value.cols(); }
  Eigen::Index out() const { return w_->value.rows(); }

  Matrix forward(const Matrix& x) const {
    if (x.rows() != in()) {
      throw ShapeError("dense layer expects " + std::to_string(in()) + " inputs, got " +
                       std::to_string(x.rows()));
    }
    Matrix y = w_->value * x;
    y.colwise() += b_->value.col(0);
    return y;
  }

  Matrix backward(const Matrix& dy, const Matrix& x) {
    w_->grad.noalias() += dy * x.transpose();
    b_->grad += dy.rowwise().sum();
    return w_->value.transpose() * dy;
  }

  Param& weight() { return *w_; }
  Param& bias() { return *b_; }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
};

struct MLPConfig {
  std::size_t in = 1;
  std::size_t hidden = 1;
  std::size_t out = 1;
  std::size_t layers = 1;
  // tanh after the last layer as well (encoders); decoders stay linear.
  bool activate_output = false;

  void validate() const {
    require(layers >= 1, "MLP needs at least one layer");
    require(hidden >= 1 && in >= 1 && out >= 1, "MLP widths must be >= 1");
  }
};

/// Fully connected stack with tanh hidden activations.
class MLP {
 public:
  struct Cache {
    std::vector<Matrix> inputs;   // input of each layer
    std::vector<Matrix> outputs;  // post-activation output of each layer
    bool ready = false;
  };

  MLP() = default;
  MLP(ParamStore& store, const std::string& prefix, const MLPConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      auto in = static_cast<Eigen::Index>(l == 0 ? cfg.in : cfg.hidden);
      auto out = static_cast<Eigen::Index>(l + 1 == cfg.layers ? cfg.out : cfg.hidden);
      layers_.emplace_back(store, prefix + ".l" + std::to_string(l), in, out, rng);
    }
  }

  const MLPConfig& config() const { return cfg_; }

  Matrix forward(const Matrix& x, Cache* cache = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != cfg_.in) {
      throw ShapeError("MLP layer 0 expects " + std::to_string(cfg_.in) + " inputs, got " +
                       std::to_string(x.rows()));
    }
    if (cache) {
      cache->inputs.clear();
      cache->outputs.clear();
    }
    Matrix h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (cache) cache->inputs.push_back(h);
      h = layers_[l].forward(h);
      if (activated(l)) h = h.array().tanh().matrix();
      if (cache) cache->outputs.push_back(h);
    }
    if (cache) cache->ready = true;
    return h;
  }

  Matrix backward(const Matrix& dy, Cache& cache) {
    if (!cache.ready) throw UsageError("MLP backward called before forward");
    Matrix d = dy;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (activated(l)) d = (d.array() * (1.0 - cache.outputs[l].array().square())).matrix();
      d = layers_[l].backward(d, cache.inputs[l]);
    }
    cache.ready = false;
    return d;
  }

  std::vector<Dense>& layers() { return layers_; }

 private:
  bool activated(std::size_t l) const { return l + 1 < layers_.size() || cfg_.activate_output; }

  MLPConfig cfg_;
  std::vector<Dense> layers_;
};

struct LSTMConfig {
  std::size_t input = 1;
  std::size_t hidden = 1;
  std::size_t layers = 1;

  void validate() const {
    require(layers >= 1, "LSTM needs at least one layer");
    require(hidden >= 1 && input >= 1, "LSTM widths must be >= 1");
  }
};

/// Stacked LSTM (gate order i, f, g, o) returning the top layer's final
/// hidden state. Initial hidden and cell states are zero.
class LSTM {
 public:
  struct StepCache {
    Matrix x, h_prev, c_prev, i, f, g, o, tanh_c;
  };
  struct Cache {
    std::vector<std::vector<StepCache>> steps;  // [layer][time]
    bool ready = false;
  };

  LSTM() = default;
  LSTM(ParamStore& store, const std::string& prefix, const LSTMConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const auto H = static_cast<Eigen::Index>(cfg.hidden);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto D = static_cast<Eigen::Index>(l == 0 ? cfg.input : cfg.hidden);
      const double a = init_bound(H);
      auto p = prefix + ".l" + std::to_string(l);
      wx_.push_back(&store.add_uniform(p + ".wx", 4 * H, D, a, rng));
      wh_.push_back(&store.add_uniform(p + ".wh", 4 * H, H, a, rng));
      b_.push_back(&store.add_uniform(p + ".b", 4 * H, 1, a, rng));
    }
  }

  const LSTMConfig& config() const { return cfg_; }

  Matrix forward(const std::vector<Matrix>& seq, Cache* cache = nullptr) const {
    if (seq.empty()) throw ShapeError("LSTM input sequence is empty");
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    const auto B = seq.front().cols();
    if (cache) {
      cache->steps.assign(cfg_.layers, {});
      cache->ready = false;
    }
    std::vector<Matrix> layer_in = seq;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      Matrix h = Matrix::Zero(H, B), c = Matrix::Zero(H, B);
      for (std::size_t t = 0; t < layer_in.size(); ++t) {
        const Matrix& x = layer_in[t];
        if (x.rows() != wx_[l]->value.cols() || x.cols() != B) {
          throw ShapeError("LSTM layer " + std::to_string(l) + " expects " +
                           std::to_string(wx_[l]->value.cols()) + " inputs at step " + std::to_string(t));
        }
        Matrix z = wx_[l]->value * x;
        z.noalias() += wh_[l]->value * h;
        z.colwise() += b_[l]->value.col(0);
        Matrix i = sigmoid(z.topRows(H));
        Matrix f = sigmoid(z.middleRows(H, H));
        Matrix g = z.middleRows(2 * H, H).array().tanh().matrix();
        Matrix o = sigmoid(z.bottomRows(H));
        Matrix c_new = (f.array() * c.array() + i.array() * g.array()).matrix();
        Matrix tc = c_new.array().tanh().matrix();
        Matrix h_new = (o.array() * tc.array()).matrix();
        if (cache) cache->steps[l].push_back({x, h, c, i, f, g, o, tc});
        h = std::move(h_new);
        c = std::move(c_new);
        layer_in[t] = h;
      }
    }
    if (cache) cache->ready = true;
    return layer_in.back();
  }

  /// Gradient w.r.t. each input step, given the gradient of the final hidden state.
  std::vector<Matrix> backward(const Matrix& dh_final, Cache& cache) {
    if (!cache.ready) throw UsageError("LSTM backward called before forward");
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    const std::size_t T = cache.steps.front().size();
    const auto B = dh_final.cols();
    std::vector<Matrix> dh_out(T, Matrix::Zero(H, B));
    dh_out.back() = dh_final;
    std::vector<Matrix> dx_steps(T);
    for (std::size_t l = cfg_.layers; l-- > 0;) {
      Matrix dh_next = Matrix::Zero(H, B), dc_next = Matrix::Zero(H, B);
      Matrix dz(4 * H, B);
      for (std::size_t t = T; t-- > 0;) {
        const auto& s = cache.steps[l][t];
        Matrix dh = dh_out[t] + dh_next;
        auto tc = s.tanh_c.array();
        auto dc = (dc_next.array() + dh.array() * s.o.array() * (1.0 - tc.square())).eval();
        dz.topRows(H) = (dc * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
        dz.middleRows(H, H) = (dc * s.c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
        dz.middleRows(2 * H, H) = (dc * s.i.array() * (1.0 - s.g.array().square())).matrix();
        dz.bottomRows(H) = (dh.array() * tc * s.o.array() * (1.0 - s.o.array())).matrix();
        wx_[l]->grad.noalias() += dz * s.x.transpose();
        wh_[l]->grad.noalias() += dz * s.h_prev.transpose();
        b_[l]->grad += dz.rowwise().sum();
        dx_steps[t] = wx_[l]->value.transpose() * dz;
        dh_next = wh_[l]->value.transpose() * dz;
        dc_next = (dc * s.f.array()).matrix();
      }
      dh_out = dx_steps;
    }
    cache.ready = false;
    return dx_steps;
  }

 private:
  LSTMConfig cfg_;
  std::vector<Param*> wx_, wh_, b_;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0) {
    const double s = max_norm / norm;
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  /// One bias-corrected Adam update from the gradients currently stored in the params.
  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const auto* p = params_[k];
      if (p->grad.rows() != m_[k].rows() || p->grad.cols() != m_[k].cols()) {
        throw ShapeError("Adam: gradient shape does not match parameter");
      }
      if (!p->grad.allFinite()) throw NumericError("Adam: non-finite gradient");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * p->grad;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
      p->value.array() -= cfg_.lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + cfg_.eps);
    }
  }

  std::uint64_t steps() const { return step_; }
  AdamConfig& config() { return cfg_; }
  const Matrix& first_moment(std::size_t k) const { return m_[k]; }
  const Matrix& second_moment(std::size_t k) const { return v_[k]; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::uint64_t step_ = 0;
};

// ---- checkpoints --------------------------------------------------------
//
// <dir>/<name>.json lists every array (name, shape, blob file) plus the seed
// and an arbitrary config object; each array is a raw little-endian float64
// blob in column-major order.

inline void write_blob(const io::fs::path& path, const Matrix& m) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume little-endian hosts");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline Matrix read_blob(const io::fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw UsageError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
    throw ShapeError(path.string() + ": blob size does not match manifest shape");
  }
  in.seekg(0);
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
  return m;
}

inline std::string blob_file_name(const std::string& store, const std::string& param) {
  std::string s = store + "." + param + ".bin";
  for (auto& c : s)
    if (c == '/' || c == '\\') c = '_';
  return s;
}

inline void save_params(const io::fs::path& dir, const std::string& name, const ParamStore& store,
                        const io::json& config = io::json::object()) {
  io::fs::create_directories(dir);
  io::json manifest;
  manifest["name"] = name;
  manifest["seed"] = store.seed();
  manifest["config"] = config;
  manifest["params"] = io::json::array();
  for (const auto& [pname, p] : store.items()) {
    if (!p.value.allFinite()) throw NumericError("refusing to checkpoint non-finite parameter " + pname);
    auto file = blob_file_name(name, pname);
    write_blob(dir / file, p.value);
    manifest["params"].push_back({{"name", pname}, {"shape", {p.value.rows(), p.value.cols()}}, {"file", file}});
  }
  io::write_json(dir / (name + ".json"), manifest);
}

inline io::json read_manifest(const io::fs::path& dir, const std::string& name) {
  return io::read_json(dir / (name + ".json"));
}

/// Loads array values into an already-constructed store of matching layout.
inline void load_params(const io::fs::path& dir, const std::string& name, ParamStore& store) {
  auto manifest = read_manifest(dir, name);
  std::size_t loaded = 0;
  for (const auto& e : manifest.at("params")) {
    auto pname = e.at("name").get<std::string>();
    auto rows = e.at("shape").at(0).get<Eigen::Index>();
    auto cols = e.at("shape").at(1).get<Eigen::Index>();
    auto& p = store.at(pname);
    if (p.value.rows() != rows || p.value.cols() != cols) {
      throw ShapeError("checkpoint shape mismatch for " + pname);
    }
    p.value = read_blob(dir / e.at("file").get<std::string>(), rows, cols);
    ++loaded;
  }
  if (loaded != store.items().size()) throw ShapeError("checkpoint " + name + " is missing parameters");
}

}  // namespace tsbench::nn
