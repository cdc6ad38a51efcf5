#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "fhsync/common.hpp"

namespace fhsync {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  static Tensor from(const Mat& m) {
    Tensor t;
    t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    return t;
  }
  Mat to_mat() const {
    if (shape.size() != 2 || data.size() != numel()) throw ArgumentError("tensor is not a matrix");
    Mat m(static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1]));
    std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
    return m;
  }
};

struct TemporalGraph {
  int n_nodes = 0;
  int window = 1;
  Mat adjacency;  // D^-1/2 (A + I) D^-1/2
};

inline TemporalGraph build_temporal_graph(int n, int w) {
  if (n < 1 || w < 1) throw ArgumentError("temporal graph needs n >= 1 and w >= 1");
  Mat a = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = std::max(0, i - w); j <= std::min(n - 1, i + w); ++j) a(i, j) = 1.0;
  Eigen::VectorXd dinv = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  TemporalGraph g;
  g.n_nodes = n;
  g.window = w;
  g.adjacency = dinv.asDiagonal() * a * dinv.asDiagonal();
  return g;
}

enum class Activation : std::uint32_t { Linear = 0, Relu = 1, Tanh = 2 };

inline Mat activate(const Mat& p, Activation a) {
  switch (a) {
    case Activation::Linear: return p;
    case Activation::Relu: return p.cwiseMax(0.0);
    case Activation::Tanh: return p.array().tanh().matrix();
  }
  throw ArgumentError("unknown activation");
}

// dL/dp from dL/dy, with y = act(p)
inline Mat activation_grad(const Mat& p, const Mat& y, const Mat& dy, Activation a) {
  switch (a) {
    case Activation::Linear: return dy;
    case Activation::Relu: return (p.array() > 0.0).select(dy, 0.0);
    case Activation::Tanh: return (dy.array() * (1.0 - y.array().square())).matrix();
  }
  throw ArgumentError("unknown activation");
}

inline Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
  return m;
}

struct Param {
  std::string name;
  Mat* value;
  Mat* grad;
  bool frozen;
};

enum class LayerKind : std::uint32_t { Gcn = 0, BiLstm = 1, Dense = 2 };

// Inputs and outputs are batched: a sequence layer sees (B*T) x d with rows
// ordered b*T + t; a flat layer sees B x d.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::uint32_t attr() const = 0;
  virtual Mat forward(const Mat& x, int batch) = 0;
  virtual Mat backward(const Mat& dy) = 0;
  virtual std::vector<Param> params() = 0;
  virtual int out_features() const = 0;
  bool frozen = false;

  void zero_grad() {
    for (auto& p : params()) p.grad->setZero();
  }

 protected:
  void require_cache(bool ok) const {
    if (!ok) throw ContractError("backward() called before forward()");
  }
};

inline Mat gcn_forward(const Mat& h, const TemporalGraph& g, const Mat& w) {
  if (h.rows() != g.n_nodes || h.cols() != w.rows()) throw ArgumentError("gcn shape mismatch");
  return (g.adjacency * h * w).cwiseMax(0.0);
}

class GcnLayer : public Layer {
 public:
  GcnLayer(int d_in, int d_out, TemporalGraph g, Rng& rng) : g_(std::move(g)) {
    w_ = glorot(d_in, d_out, rng);
    dw_ = Mat::Zero(d_in, d_out);
  }
  LayerKind kind() const override { return LayerKind::Gcn; }
  std::uint32_t attr() const override { return static_cast<std::uint32_t>(g_.window); }
  int out_features() const override { return static_cast<int>(w_.cols()); }

  Mat forward(const Mat& x, int batch) override {
    const int T = g_.n_nodes;
    if (x.rows() != static_cast<Eigen::Index>(batch) * T || x.cols() != w_.rows())
      throw ArgumentError("gcn input shape mismatch");
    y_.resize(x.rows(), x.cols());
    for (int b = 0; b < batch; ++b) y_.middleRows(b * T, T).noalias() = g_.adjacency * x.middleRows(b * T, T);
    p_.noalias() = y_ * w_;
    batch_ = batch;
    return p_.cwiseMax(0.0);
  }

  Mat backward(const Mat& dy) override {
    require_cache(batch_ > 0);
    const Mat dp = (p_.array() > 0.0).select(dy, 0.0);
    dw_.noalias() += y_.transpose() * dp;
    const Mat dyy = dp * w_.transpose();
    Mat dx(dyy.rows(), dyy.cols());
    const int T = g_.n_nodes;
    for (int b = 0; b < batch_; ++b) dx.middleRows(b * T, T).noalias() = g_.adjacency * dyy.middleRows(b * T, T);
    return dx;
  }

  std::vector<Param> params() override { return {{"gcn.w", &w_, &dw_, frozen}}; }
  const TemporalGraph& graph() const { return g_; }

 private:
  TemporalGraph g_;
  Mat w_, dw_;
  Mat y_, p_;
  int batch_ = 0;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One direction of an LSTM over a batch; gate columns are [i f g o].
struct LstmDirection {
  Mat wx, wh, b;
  Mat dwx, dwh, db;

  LstmDirection() = default;
  LstmDirection(int d_in, int h, Rng& rng) {
    wx = glorot(d_in, 4 * h, rng);
    wh = glorot(h, 4 * h, rng);
    b = Mat::Zero(1, 4 * h);
    b.block(0, h, 1, h).setConstant(1.0);  // forget gate
    dwx = Mat::Zero(d_in, 4 * h);
    dwh = Mat::Zero(h, 4 * h);
    db = Mat::Zero(1, 4 * h);
  }
  int hidden() const { return static_cast<int>(wh.rows()); }

  struct Cache {
    std::vector<Mat> x, gates, c, tc, h_prev, c_prev;
  };

  // xs[t] is B x d_in; returns h[t] (B x h) for each t in time order
  std::vector<Mat> run(const std::vector<Mat>& xs, bool reverse, Cache& k) const {
    const int T = static_cast<int>(xs.size());
    const Eigen::Index B = xs[0].rows();
    const int H = hidden();
    std::vector<Mat> hs(static_cast<std::size_t>(T));
    k = {};
    k.x.resize(T);
    k.gates.resize(T);
    k.c.resize(T);
    k.tc.resize(T);
    k.h_prev.resize(T);
    k.c_prev.resize(T);
    Mat h = Mat::Zero(B, H), c = Mat::Zero(B, H);
    for (int s = 0; s < T; ++s) {
      const int t = reverse ? T - 1 - s : s;
      const auto ts = static_cast<std::size_t>(t);
      Mat a = xs[ts] * wx + h * wh;
      a.rowwise() += b.row(0);
      for (Eigen::Index r = 0; r < B; ++r)
        for (int j = 0; j < H; ++j) {
          a(r, j) = sigmoid(a(r, j));
          a(r, H + j) = sigmoid(a(r, H + j));
          a(r, 2 * H + j) = std::tanh(a(r, 2 * H + j));
          a(r, 3 * H + j) = sigmoid(a(r, 3 * H + j));
        }
      k.h_prev[ts] = h;
      k.c_prev[ts] = c;
      const auto i = a.leftCols(H).array();
      const auto f = a.middleCols(H, H).array();
      const auto g = a.middleCols(2 * H, H).array();
      const auto o = a.rightCols(H).array();
      c = (f * c.array() + i * g).matrix();
      Mat tc = c.array().tanh().matrix();
      h = (o * tc.array()).matrix();
      k.x[ts] = xs[ts];
      k.gates[ts] = std::move(a);
      k.c[ts] = c;
      k.tc[ts] = std::move(tc);
      hs[ts] = h;
    }
    return hs;
  }

  // dhs[t]: gradient w.r.t. h[t]; returns gradient w.r.t. xs[t]
  std::vector<Mat> back(const std::vector<Mat>& dhs, bool reverse, const Cache& k) {
    const int T = static_cast<int>(dhs.size());
    const int H = hidden();
    const Eigen::Index B = dhs[0].rows();
    std::vector<Mat> dxs(static_cast<std::size_t>(T));
    Mat dh_next = Mat::Zero(B, H), dc_next = Mat::Zero(B, H);
    for (int s = T - 1; s >= 0; --s) {
      const int t = reverse ? T - 1 - s : s;
      const auto ts = static_cast<std::size_t>(t);
      const Mat& a = k.gates[ts];
      const auto i = a.leftCols(H).array();
      const auto f = a.middleCols(H, H).array();
      const auto g = a.middleCols(2 * H, H).array();
      const auto o = a.rightCols(H).array();
      const auto tc = k.tc[ts].array();
      const Mat dh = dhs[ts] + dh_next;
      const auto dha = dh.array();
      const Mat dc = (dha * o * (1.0 - tc.square()) + dc_next.array()).matrix();
      Mat da(B, 4 * H);
      da.leftCols(H) = (dc.array() * g * i * (1.0 - i)).matrix();
      da.middleCols(H, H) = (dc.array() * k.c_prev[ts].array() * f * (1.0 - f)).matrix();
      da.middleCols(2 * H, H) = (dc.array() * i * (1.0 - g.square())).matrix();
      da.rightCols(H) = (dha * tc * o * (1.0 - o)).matrix();
      dc_next = (dc.array() * f).matrix();
      dwx.noalias() += k.x[ts].transpose() * da;
      dwh.noalias() += k.h_prev[ts].transpose() * da;
      db += da.colwise().sum();
      dxs[ts] = da * wx.transpose();
      dh_next = da * wh.transpose();
    }
    return dxs;
  }
};

// Bidirectional LSTM. With `sequence_out` the output is (B*T) x 2h (forward
// state then backward state per step); otherwise B x 2h holding the forward
// state after the last step and the backward state after the first.
class BiLstmLayer : public Layer {
 public:
  BiLstmLayer(int d_in, int h, int seq_len, bool sequence_out, Rng& rng)
      : fw_(d_in, h, rng), bw_(d_in, h, rng), T_(seq_len), seq_out_(sequence_out) {}
  LayerKind kind() const override { return LayerKind::BiLstm; }
  std::uint32_t attr() const override { return seq_out_ ? 1u : 0u; }
  int out_features() const override { return 2 * fw_.hidden(); }
  int seq_len() const { return T_; }

  Mat forward(const Mat& x, int batch) override {
    if (x.rows() != static_cast<Eigen::Index>(batch) * T_ || x.cols() != fw_.wx.rows())
      throw ArgumentError("bilstm input shape mismatch");
    batch_ = batch;
    std::vector<Mat> xs(static_cast<std::size_t>(T_), Mat(batch, x.cols()));
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < T_; ++t) xs[static_cast<std::size_t>(t)].row(b) = x.row(b * T_ + t);
    const auto hf = fw_.run(xs, false, kf_);
    const auto hb = bw_.run(xs, true, kb_);
    const int H = fw_.hidden();
    if (!seq_out_) {
      Mat y(batch, 2 * H);
      y.leftCols(H) = hf[static_cast<std::size_t>(T_ - 1)];
      y.rightCols(H) = hb[0];
      return y;
    }
    Mat y(static_cast<Eigen::Index>(batch) * T_, 2 * H);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < T_; ++t) {
        y.block(b * T_ + t, 0, 1, H) = hf[static_cast<std::size_t>(t)].row(b);
        y.block(b * T_ + t, H, 1, H) = hb[static_cast<std::size_t>(t)].row(b);
      }
    return y;
  }

  Mat backward(const Mat& dy) override {
    require_cache(batch_ > 0);
    const int H = fw_.hidden();
    std::vector<Mat> df(static_cast<std::size_t>(T_), Mat::Zero(batch_, H));
    std::vector<Mat> dbw(static_cast<std::size_t>(T_), Mat::Zero(batch_, H));
    if (!seq_out_) {
      df[static_cast<std::size_t>(T_ - 1)] = dy.leftCols(H);
      dbw[0] = dy.rightCols(H);
    } else {
      for (int b = 0; b < batch_; ++b)
        for (int t = 0; t < T_; ++t) {
          df[static_cast<std::size_t>(t)].row(b) = dy.block(b * T_ + t, 0, 1, H);
          dbw[static_cast<std::size_t>(t)].row(b) = dy.block(b * T_ + t, H, 1, H);
        }
    }
    const auto dxf = fw_.back(df, false, kf_);
    const auto dxb = bw_.back(dbw, true, kb_);
    Mat dx(static_cast<Eigen::Index>(batch_) * T_, fw_.wx.rows());
    for (int b = 0; b < batch_; ++b)
      for (int t = 0; t < T_; ++t)
        dx.row(b * T_ + t) = dxf[static_cast<std::size_t>(t)].row(b) + dxb[static_cast<std::size_t>(t)].row(b);
    return dx;
  }

  std::vector<Param> params() override {
    return {{"lstm.fw.wx", &fw_.wx, &fw_.dwx, frozen}, {"lstm.fw.wh", &fw_.wh, &fw_.dwh, frozen},
            {"lstm.fw.b", &fw_.b, &fw_.db, frozen},    {"lstm.bw.wx", &bw_.wx, &bw_.dwx, frozen},
            {"lstm.bw.wh", &bw_.wh, &bw_.dwh, frozen}, {"lstm.bw.b", &bw_.b, &bw_.db, frozen}};
  }

 private:
  LstmDirection fw_, bw_;
  LstmDirection::Cache kf_, kb_;
  int T_;
  bool seq_out_;
  int batch_ = 0;
};

inline Mat dense_forward(const Mat& x, const Mat& w, const Mat& b, Activation act) {
  if (x.cols() != w.rows() || b.cols() != w.cols()) throw ArgumentError("dense shape mismatch");
  Mat p = x * w;
  p.rowwise() += b.row(0);
  return activate(p, act);
}

class DenseLayer : public Layer {
 public:
  DenseLayer(int d_in, int d_out, Activation act, Rng& rng) : act_(act) {
    w_ = glorot(d_in, d_out, rng);
    b_ = Mat::Zero(1, d_out);
    dw_ = Mat::Zero(d_in, d_out);
    db_ = Mat::Zero(1, d_out);
  }
  LayerKind kind() const override { return LayerKind::Dense; }
  std::uint32_t attr() const override { return static_cast<std::uint32_t>(act_); }
  int out_features() const override { return static_cast<int>(w_.cols()); }

  Mat forward(const Mat& x, int batch) override {
    if (x.rows() != batch || x.cols() != w_.rows()) throw ArgumentError("dense input shape mismatch");
    x_ = x;
    p_ = x * w_;
    p_.rowwise() += b_.row(0);
    y_ = activate(p_, act_);
    cached_ = true;
    return y_;
  }

  Mat backward(const Mat& dy) override {
    require_cache(cached_);
    const Mat dp = activation_grad(p_, y_, dy, act_);
    dw_.noalias() += x_.transpose() * dp;
    db_ += dp.colwise().sum();
    return dp * w_.transpose();
  }

  std::vector<Param> params() override { return {{"dense.w", &w_, &dw_, frozen}, {"dense.b", &b_, &db_, frozen}}; }

 private:
  Activation act_;
  Mat w_, b_, dw_, db_;
  Mat x_, p_, y_;
  bool cached_ = false;
};

struct DenseSpec {
  int width = 32;
  Activation act = Activation::Relu;
};

struct NetworkConfig {
  int n_nodes = 50;
  int in_features = 1;
  int graph_window = 1;
  // desk preset; narrower than the paper preset to train on one core
  std::vector<int> gcn{16};
  std::vector<int> lstm{16};
  std::vector<DenseSpec> dense{{32, Activation::Relu}};
  int outputs = 5;  // appended as a linear layer

  static NetworkConfig preset(const std::string& name, int outputs) {
    NetworkConfig c;
    c.outputs = outputs;
    if (name == "desk") return c;
    if (name == "paper") {
      c.gcn = {32, 32};
      c.lstm = {32, 32, 32, 32, 32};
      c.dense = {{64, Activation::Relu}, {32, Activation::Relu}};
      return c;
    }
    throw ConfigError("unknown network preset '" + name + "' (desk|paper)");
  }

  void validate() const {
    if (n_nodes < 1 || in_features < 1 || graph_window < 1 || outputs < 1)
      throw ConfigError("network sizes must be positive");
    if (lstm.empty()) throw ConfigError("network needs at least one Bi-LSTM layer");
    for (int w : gcn)
      if (w < 1) throw ConfigError("gcn width must be positive");
    for (int h : lstm)
      if (h < 1) throw ConfigError("lstm width must be positive");
    for (const auto& d : dense)
      if (d.width < 1) throw ConfigError("dense width must be positive");
  }
};

// GCN stack -> Bi-LSTM stack (last one reads out) -> dense stack.
class Network {
 public:
  Network() = default;
  Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto g = build_temporal_graph(cfg.n_nodes, cfg.graph_window);
    int d = cfg.in_features;
    for (int w : cfg.gcn) {
      layers_.push_back(std::make_unique<GcnLayer>(d, w, g, rng));
      d = w;
    }
    for (std::size_t k = 0; k < cfg.lstm.size(); ++k) {
      const bool last = k + 1 == cfg.lstm.size();
      layers_.push_back(std::make_unique<BiLstmLayer>(d, cfg.lstm[k], cfg.n_nodes, !last, rng));
      d = 2 * cfg.lstm[k];
    }
    for (const auto& s : cfg.dense) {
      layers_.push_back(std::make_unique<DenseLayer>(d, s.width, s.act, rng));
      d = s.width;
    }
    layers_.push_back(std::make_unique<DenseLayer>(d, cfg.outputs, Activation::Linear, rng));
  }

  Network(const Network& o) : Network(o.cfg_, 0) { copy_params_from(o); }
  Network& operator=(const Network& o) {
    if (this != &o) {
      Network tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const NetworkConfig& config() const { return cfg_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }

  // x: (B * n_nodes) x in_features; returns B x outputs
  Mat forward(const Mat& x, int batch) {
    Mat h = x;
    for (auto& l : layers_) h = l->forward(h, batch);
    forwarded_ = true;
    return h;
  }

  Mat forward_states(const std::vector<const std::vector<double>*>& states) {
    const int B = static_cast<int>(states.size());
    Mat x(static_cast<Eigen::Index>(B) * cfg_.n_nodes, 1);
    for (int b = 0; b < B; ++b) {
      if (static_cast<int>(states[static_cast<std::size_t>(b)]->size()) != cfg_.n_nodes)
        throw ArgumentError("state length does not match the network");
      for (int t = 0; t < cfg_.n_nodes; ++t) x(b * cfg_.n_nodes + t, 0) = (*states[static_cast<std::size_t>(b)])[static_cast<std::size_t>(t)];
    }
    return forward(x, B);
  }

  // accumulates parameter gradients; returns dL/dx
  Mat backward(const Mat& dy) {
    if (!forwarded_) throw ContractError("backward() called before forward()");
    Mat g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  std::vector<Param> params() {
    std::vector<Param> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto p : layers_[i]->params()) {
        p.name = "l" + std::to_string(i) + "." + p.name;
        out.push_back(p);
      }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += static_cast<std::size_t>(p.value->size());
    return n;
  }

  void copy_params_from(const Network& o) {
    auto& src = const_cast<Network&>(o);
    auto a = params();
    auto b = src.params();
    if (a.size() != b.size()) throw ArgumentError("network shapes differ");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].value->rows() != b[i].value->rows() || a[i].value->cols() != b[i].value->cols())
        throw ArgumentError("network shapes differ");
      *a[i].value = *b[i].value;
    }
  }

  bool all_finite() {
    for (auto& p : params())
      if (!p.value->allFinite()) return false;
    return true;
  }

 private:
  NetworkConfig cfg_{};
  std::vector<std::unique_ptr<Layer>> layers_;
  bool forwarded_ = false;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Mat> m, v;
};

inline AdamState make_adam(Network& net, double lr) {
  AdamState s;
  s.lr = lr;
  for (auto& p : net.params()) {
    s.m.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
    s.v.push_back(Mat::Zero(p.value->rows(), p.value->cols()));
  }
  return s;
}

// One bias-corrected Adam step over the accumulated gradients. Frozen
// parameters keep their values.
inline void adam_update(AdamState& s, Network& net) {
  auto ps = net.params();
  if (ps.size() != s.m.size()) throw ArgumentError("adam state does not match the network");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Mat& g = *ps[i].grad;
    if (g.rows() != s.m[i].rows() || g.cols() != s.m[i].cols()) throw ArgumentError("adam shape mismatch");
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
    if (ps[i].frozen) continue;
    auto& w = *ps[i].value;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double mh = s.m[i].data()[k] / c1;
      const double vh = s.v[i].data()[k] / c2;
      w.data()[k] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
  }
}

// ---- checkpoints -------------------------------------------------------
//
// "FHNN", u32 layer count, then per layer: u32 kind, u32 attribute, u32
// tensor count, and per tensor u32 rank, u64 dims, f64 row-major data. All
// little-endian. A PPO checkpoint is the actor block followed by the critic.

namespace detail {
template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DomainError("truncated network checkpoint");
  return v;
}
}  // namespace detail

inline void write_network(std::ostream& os, Network& net) {
  os.write("FHNN", 4);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.layer_count()));
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    auto& l = net.layer(i);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(l.kind()));
    detail::put<std::uint32_t>(os, l.attr());
    const auto ps = l.params();
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ps.size()));
    for (const auto& p : ps) {
      detail::put<std::uint32_t>(os, 2);
      detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value->rows()));
      detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value->cols()));
      os.write(reinterpret_cast<const char*>(p.value->data()),
               static_cast<std::streamsize>(p.value->size() * sizeof(double)));
    }
  }
}

struct LayerRecord {
  LayerKind kind;
  std::uint32_t attr;
  std::vector<Tensor> tensors;
};

inline std::vector<LayerRecord> read_layer_records(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FHNN", 4) != 0) throw DomainError("not an FHNN checkpoint");
  const auto n = detail::get<std::uint32_t>(is);
  std::vector<LayerRecord> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerRecord r;
    r.kind = static_cast<LayerKind>(detail::get<std::uint32_t>(is));
    r.attr = detail::get<std::uint32_t>(is);
    const auto nt = detail::get<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < nt; ++k) {
      Tensor t;
      const auto rank = detail::get<std::uint32_t>(is);
      if (rank > 8) throw DomainError("bad tensor rank in checkpoint");
      for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(detail::get<std::uint64_t>(is));
      t.data.resize(t.numel());
      is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
      if (!is) throw DomainError("truncated network checkpoint");
      r.tensors.push_back(std::move(t));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// Rebuilds the network architecture from the stored shapes.
inline Network read_network(std::istream& is, int n_nodes = 50) {
  const auto recs = read_layer_records(is);
  NetworkConfig c;
  c.n_nodes = n_nodes;
  c.gcn.clear();
  c.lstm.clear();
  c.dense.clear();
  bool first = true;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    if (r.tensors.empty() || r.tensors[0].shape.size() != 2) throw DomainError("bad layer record in checkpoint");
    const auto& s0 = r.tensors[0].shape;
    if (first) c.in_features = static_cast<int>(s0[0]);
    first = false;
    switch (r.kind) {
      case LayerKind::Gcn:
        c.graph_window = static_cast<int>(r.attr);
        c.gcn.push_back(static_cast<int>(s0[1]));
        break;
      case LayerKind::BiLstm: c.lstm.push_back(static_cast<int>(s0[1] / 4)); break;
      case LayerKind::Dense:
        if (i + 1 == recs.size())
          c.outputs = static_cast<int>(s0[1]);
        else
          c.dense.push_back({static_cast<int>(s0[1]), static_cast<Activation>(r.attr)});
        break;
      default: throw DomainError("unknown layer kind in checkpoint");
    }
  }
  Network net(c, 0);
  auto ps = net.params();
  std::size_t k = 0;
  for (const auto& r : recs)
    for (const auto& t : r.tensors) {
      if (k >= ps.size()) throw DomainError("checkpoint has extra tensors");
      Mat m = t.to_mat();
      if (m.rows() != ps[k].value->rows() || m.cols() != ps[k].value->cols())
        throw DomainError("checkpoint tensor shape mismatch");
      *ps[k].value = m;
      ++k;
    }
  if (k != ps.size()) throw DomainError("checkpoint is missing tensors");
  return net;
}

}  // namespace fhsync
