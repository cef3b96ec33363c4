#include "cellsynth/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cellsynth {
namespace nn {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

} // namespace

long shape_size(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
  data = Vector::Zero(shape_size(shape));
}

MatMap Tensor::mat() {
  require(ndim() == 2, "Tensor::mat: tensor is not 2-D");
  return MatMap(data.data(), dim(0), dim(1));
}

ConstMatMap Tensor::mat() const {
  require(ndim() == 2, "Tensor::mat: tensor is not 2-D");
  return ConstMatMap(data.data(), dim(0), dim(1));
}

// ---- NetParams ----

Tensor& NetParams::add(const std::string& name, std::vector<int> shape,
                       const std::string& group) {
  require(!entries_.count(name), "NetParams::add: duplicate parameter " + name);
  Entry e;
  e.value = Tensor(shape);
  e.grad = Tensor(shape);
  e.group = group;
  auto [it, ok] = entries_.emplace(name, std::move(e));
  (void)ok;
  return it->second.value;
}

bool NetParams::has(const std::string& name) const { return entries_.count(name) > 0; }

Tensor& NetParams::value(const std::string& name) {
  auto it = entries_.find(name);
  require(it != entries_.end(), "NetParams: unknown parameter " + name);
  return it->second.value;
}

const Tensor& NetParams::value(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "NetParams: unknown parameter " + name);
  return it->second.value;
}

Tensor& NetParams::grad(const std::string& name) {
  auto it = entries_.find(name);
  require(it != entries_.end(), "NetParams: unknown parameter " + name);
  return it->second.grad;
}

const Tensor& NetParams::grad(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "NetParams: unknown parameter " + name);
  return it->second.grad;
}

const std::string& NetParams::group_of(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), "NetParams: unknown parameter " + name);
  return it->second.group;
}

void NetParams::zero_grads() {
  for (auto& [name, e] : entries_) e.grad.data.setZero();
}

std::vector<std::string> NetParams::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

long NetParams::total_size(bool include_frozen) const {
  long n = 0;
  for (const auto& [name, e] : entries_) {
    if (include_frozen || !group_frozen(e.group)) n += e.value.size();
  }
  return n;
}

Vector NetParams::flatten_values() const {
  Vector v(total_size(false));
  long k = 0;
  for (const auto& [name, e] : entries_) {
    if (group_frozen(e.group)) continue;
    v.segment(k, e.value.size()) = e.value.data;
    k += e.value.size();
  }
  return v;
}

void NetParams::set_flattened_values(const Vector& v) {
  require(v.size() == total_size(false), "set_flattened_values: size mismatch");
  long k = 0;
  for (auto& [name, e] : entries_) {
    if (group_frozen(e.group)) continue;
    e.value.data = v.segment(k, e.value.size());
    k += e.value.size();
  }
}

// ---- init ----

void init_uniform_scaled(NetParams& p, const std::string& name, Rng& rng) {
  Tensor& t = p.value(name);
  if (t.ndim() < 2) {
    t.data.setZero();
    return;
  }
  long fan_in = 1;
  for (int i = 1; i < t.ndim(); ++i) fan_in *= t.dim(i);
  double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (long i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-scale, scale);
}

// ---- activations ----

Matrix tanh_forward(const Matrix& x) { return x.array().tanh().matrix(); }

Matrix tanh_backward(const Matrix& dy, const Matrix& y) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

Matrix gelu_forward(const Matrix& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

Matrix gelu_backward(const Matrix& dy, const Matrix& x) {
  Matrix dgelu = x.unaryExpr([](double v) {
    double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    return cdf + v * pdf;
  });
  return dy.cwiseProduct(dgelu);
}

void tensor_tanh_inplace(Tensor& t) { t.data = t.data.array().tanh().matrix(); }

Vector tanh_backward_vec(const Vector& dy, const Vector& y) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

// ---- linear ----

Matrix linear_forward(const Matrix& x, const Tensor& W, const Tensor& b,
                      LinearCache* cache) {
  require(x.cols() == W.dim(1), "linear_forward: input width != fan-in");
  Matrix y = x * W.mat().transpose();
  if (b.size() > 0) y.rowwise() += b.data.transpose();
  if (cache) cache->x = x;
  return y;
}

Matrix linear_backward(const Matrix& dy, const Tensor& W, const LinearCache& cache,
                       Tensor& dW, Tensor& db) {
  dW.mat() += dy.transpose() * cache.x;
  if (db.size() > 0) db.data += dy.colwise().sum().transpose();
  return dy * W.mat();
}

// ---- softmax ----

Matrix softmax_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return y;
}

Matrix softmax_rows_backward(const Matrix& dy, const Matrix& y) {
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    double dot = dy.row(r).dot(y.row(r));
    dx.row(r) = (y.row(r).array() * (dy.row(r).array() - dot)).matrix();
  }
  return dx;
}

// ---- layer norm ----

Matrix layernorm_forward(const Matrix& x, const Tensor& gamma, const Tensor& beta,
                         double eps, LayerNormCache* cache) {
  const Eigen::Index d = x.cols();
  Matrix xc(x.rows(), d);
  Vector inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    xc.row(r) = x.row(r).array() - mu;
    double var = xc.row(r).squaredNorm() / static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
  }
  Matrix xhat = xc.array().colwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gamma.data.transpose().array()).matrix();
  y.rowwise() += beta.data.transpose();
  if (cache) {
    cache->xc = xc;
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return y;
}

Matrix layernorm_backward(const Matrix& dy, const Tensor& gamma,
                          const LayerNormCache& cache, Tensor& dgamma, Tensor& dbeta) {
  const Eigen::Index d = dy.cols();
  dgamma.data += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  dbeta.data += dy.colwise().sum().transpose();
  Matrix dxhat = (dy.array().rowwise() * gamma.data.transpose().array()).matrix();
  Matrix dx(dy.rows(), d);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    double sum_dxhat = dxhat.row(r).sum();
    double sum_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std[r] / static_cast<double>(d)) *
                (static_cast<double>(d) * dxhat.row(r).array() - sum_dxhat -
                 cache.xhat.row(r).array() * sum_dxhat_xhat)
                    .matrix();
  }
  return dx;
}

// ---- attention ----

void init_attention(NetParams& p, const std::string& prefix, int d_model, Rng& rng) {
  for (const char* w : {".Wq", ".Wk", ".Wv", ".Wo"}) {
    p.add(prefix + w, {d_model, d_model});
    init_uniform_scaled(p, prefix + w, rng);
  }
}

Matrix multi_head_attention(const Matrix& Q, const Matrix& K, const Matrix& V,
                            const NetParams& p, int heads, const std::string& prefix,
                            AttentionCache* cache) {
  const int d_model = static_cast<int>(Q.cols());
  require(heads >= 1 && d_model % heads == 0,
          "multi_head_attention: d_model must be divisible by heads");
  require(K.cols() == d_model && V.cols() == d_model,
          "multi_head_attention: K/V width mismatch");
  require(K.rows() == V.rows(), "multi_head_attention: K/V row count mismatch");
  const int dk = d_model / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix Qp = Q * p.value(prefix + ".Wq").mat().transpose();
  Matrix Kp = K * p.value(prefix + ".Wk").mat().transpose();
  Matrix Vp = V * p.value(prefix + ".Wv").mat().transpose();

  Matrix concat(Q.rows(), d_model);
  std::vector<Matrix> probs(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto Qi = Qp.middleCols(h * dk, dk);
    auto Ki = Kp.middleCols(h * dk, dk);
    auto Vi = Vp.middleCols(h * dk, dk);
    Matrix scores = (Qi * Ki.transpose()) * inv_sqrt_dk;
    probs[static_cast<size_t>(h)] = softmax_rows(scores);
    concat.middleCols(h * dk, dk) = probs[static_cast<size_t>(h)] * Vi;
  }
  Matrix out = concat * p.value(prefix + ".Wo").mat().transpose();

  if (cache) {
    cache->Q = Q;
    cache->K = K;
    cache->V = V;
    cache->Qp = Qp;
    cache->Kp = Kp;
    cache->Vp = Vp;
    cache->probs = std::move(probs);
    cache->concat = concat;
  }
  return out;
}

Matrix multi_head_attention_backward(const Matrix& dout, NetParams& p, int heads,
                                     const AttentionCache& cache,
                                     const std::string& prefix, Matrix& dK, Matrix& dV) {
  const int d_model = static_cast<int>(cache.Q.cols());
  const int dk = d_model / heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  p.grad(prefix + ".Wo").mat() += dout.transpose() * cache.concat;
  Matrix dconcat = dout * p.value(prefix + ".Wo").mat();

  Matrix dQp = Matrix::Zero(cache.Q.rows(), d_model);
  Matrix dKp = Matrix::Zero(cache.K.rows(), d_model);
  Matrix dVp = Matrix::Zero(cache.V.rows(), d_model);
  for (int h = 0; h < heads; ++h) {
    const Matrix& P = cache.probs[static_cast<size_t>(h)];
    auto Qi = cache.Qp.middleCols(h * dk, dk);
    auto Ki = cache.Kp.middleCols(h * dk, dk);
    auto Vi = cache.Vp.middleCols(h * dk, dk);
    Matrix dHi = dconcat.middleCols(h * dk, dk);
    Matrix dP = dHi * Vi.transpose();
    dVp.middleCols(h * dk, dk) = P.transpose() * dHi;
    Matrix dS = softmax_rows_backward(dP, P);
    dQp.middleCols(h * dk, dk) = dS * Ki * inv_sqrt_dk;
    dKp.middleCols(h * dk, dk) = dS.transpose() * Qi * inv_sqrt_dk;
  }

  p.grad(prefix + ".Wq").mat() += dQp.transpose() * cache.Q;
  p.grad(prefix + ".Wk").mat() += dKp.transpose() * cache.K;
  p.grad(prefix + ".Wv").mat() += dVp.transpose() * cache.V;

  dK += dKp * p.value(prefix + ".Wk").mat();
  dV += dVp * p.value(prefix + ".Wv").mat();
  return dQp * p.value(prefix + ".Wq").mat();
}

// ---- transformer stack ----

namespace {

std::string block_prefix(const std::string& prefix, int i) {
  return prefix + ".b" + std::to_string(i);
}

} // namespace

void init_layer_stack(NetParams& p, const std::string& prefix, const StackConfig& cfg,
                      Rng& rng, const std::string& group) {
  for (int i = 0; i < cfg.blocks; ++i) {
    std::string bp = block_prefix(prefix, i);
    p.add(bp + ".ln1.gamma", {cfg.d_model}, group).data.setOnes();
    p.add(bp + ".ln1.beta", {cfg.d_model}, group);
    for (const char* w : {".attn.Wq", ".attn.Wk", ".attn.Wv", ".attn.Wo"}) {
      p.add(bp + w, {cfg.d_model, cfg.d_model}, group);
      init_uniform_scaled(p, bp + w, rng);
    }
    p.add(bp + ".ln2.gamma", {cfg.d_model}, group).data.setOnes();
    p.add(bp + ".ln2.beta", {cfg.d_model}, group);
    p.add(bp + ".mlp.W1", {cfg.mlp_hidden, cfg.d_model}, group);
    init_uniform_scaled(p, bp + ".mlp.W1", rng);
    p.add(bp + ".mlp.b1", {cfg.mlp_hidden}, group);
    p.add(bp + ".mlp.W2", {cfg.d_model, cfg.mlp_hidden}, group);
    init_uniform_scaled(p, bp + ".mlp.W2", rng);
    p.add(bp + ".mlp.b2", {cfg.d_model}, group);
  }
}

Matrix layer_stack_forward(const Matrix& tokens, const NetParams& p,
                           const std::string& prefix, const StackConfig& cfg,
                           StackCache* cache, std::vector<Matrix>* hidden) {
  require(tokens.cols() == cfg.d_model, "layer_stack_forward: token width != d_model");
  Matrix x = tokens;
  if (cache) cache->blocks.assign(static_cast<size_t>(cfg.blocks), BlockCache{});
  for (int i = 0; i < cfg.blocks; ++i) {
    std::string bp = block_prefix(prefix, i);
    BlockCache* bc = cache ? &cache->blocks[static_cast<size_t>(i)] : nullptr;
    if (bc) bc->x_in = x;

    LayerNormCache ln1_local;
    Matrix xn1 = layernorm_forward(x, p.value(bp + ".ln1.gamma"), p.value(bp + ".ln1.beta"),
                                   cfg.ln_eps, bc ? &bc->ln1 : &ln1_local);
    Matrix att = multi_head_attention(xn1, xn1, xn1, p, cfg.heads, bp + ".attn",
                                      bc ? &bc->attn : nullptr);
    Matrix x_mid = x + att;
    if (bc) bc->x_mid = x_mid;

    LayerNormCache ln2_local;
    Matrix xn2 = layernorm_forward(x_mid, p.value(bp + ".ln2.gamma"),
                                   p.value(bp + ".ln2.beta"), cfg.ln_eps,
                                   bc ? &bc->ln2 : &ln2_local);
    LinearCache mlp1_local, mlp2_local;
    Matrix h_pre = linear_forward(xn2, p.value(bp + ".mlp.W1"), p.value(bp + ".mlp.b1"),
                                  bc ? &bc->mlp1 : &mlp1_local);
    if (bc) bc->mlp_hidden_in = h_pre;
    Matrix h = gelu_forward(h_pre);
    Matrix m = linear_forward(h, p.value(bp + ".mlp.W2"), p.value(bp + ".mlp.b2"),
                              bc ? &bc->mlp2 : &mlp2_local);
    x = x_mid + m;
    if (hidden) hidden->push_back(x);
  }
  return x;
}

Matrix layer_stack_backward(const Matrix& dout, NetParams& p, const std::string& prefix,
                            const StackConfig& cfg, const StackCache& cache) {
  require(static_cast<int>(cache.blocks.size()) == cfg.blocks,
          "layer_stack_backward: cache does not match config");
  Matrix dx = dout;
  for (int i = cfg.blocks - 1; i >= 0; --i) {
    std::string bp = block_prefix(prefix, i);
    const BlockCache& bc = cache.blocks[static_cast<size_t>(i)];

    // x_out = x_mid + MLP(LN2(x_mid))
    Matrix dh = linear_backward(dx, p.value(bp + ".mlp.W2"), bc.mlp2,
                                p.grad(bp + ".mlp.W2"), p.grad(bp + ".mlp.b2"));
    Matrix dh_pre = gelu_backward(dh, bc.mlp_hidden_in);
    Matrix dxn2 = linear_backward(dh_pre, p.value(bp + ".mlp.W1"), bc.mlp1,
                                  p.grad(bp + ".mlp.W1"), p.grad(bp + ".mlp.b1"));
    Matrix dx_mid = dx + layernorm_backward(dxn2, p.value(bp + ".ln2.gamma"), bc.ln2,
                                            p.grad(bp + ".ln2.gamma"),
                                            p.grad(bp + ".ln2.beta"));

    // x_mid = x_in + MSA(LN1(x_in))
    Matrix dK = Matrix::Zero(bc.attn.K.rows(), bc.attn.K.cols());
    Matrix dV = Matrix::Zero(bc.attn.V.rows(), bc.attn.V.cols());
    Matrix dQ = multi_head_attention_backward(dx_mid, p, cfg.heads, bc.attn,
                                              bp + ".attn", dK, dV);
    Matrix dxn1 = dQ + dK + dV;
    dx = dx_mid + layernorm_backward(dxn1, p.value(bp + ".ln1.gamma"), bc.ln1,
                                     p.grad(bp + ".ln1.gamma"), p.grad(bp + ".ln1.beta"));
  }
  return dx;
}

// ---- conv2d ----

namespace {

inline long t3(const Tensor& t, int c, int y, int x) {
  return (static_cast<long>(c) * t.dim(1) + y) * t.dim(2) + x;
}

} // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& W, const Tensor& b, int stride,
                      int pad, ConvCache* cache) {
  require(x.ndim() == 3 && W.ndim() == 4, "conv2d_forward: expects {C,H,W} and {O,C,k,k}");
  require(x.dim(0) == W.dim(1), "conv2d_forward: channel mismatch");
  const int C = x.dim(0), H = x.dim(1), Wd = x.dim(2);
  const int O = W.dim(0), k = W.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (Wd + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d_forward: output would be empty");

  Tensor y({O, Ho, Wo});
  for (int o = 0; o < O; ++o) {
    const double bias = b.size() > 0 ? b.data[o] : 0.0;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        double acc = bias;
        for (int c = 0; c < C; ++c) {
          for (int u = 0; u < k; ++u) {
            int yy = i * stride + u - pad;
            if (yy < 0 || yy >= H) continue;
            for (int v = 0; v < k; ++v) {
              int xx = j * stride + v - pad;
              if (xx < 0 || xx >= Wd) continue;
              acc += x.data[t3(x, c, yy, xx)] *
                     W.data[((static_cast<long>(o) * C + c) * k + u) * k + v];
            }
          }
        }
        y.data[t3(y, o, i, j)] = acc;
      }
    }
  }
  if (cache) cache->x = x;
  return y;
}

Tensor conv2d_backward(const Tensor& dy, const Tensor& W, const ConvCache& cache,
                       int stride, int pad, Tensor& dW, Tensor& db) {
  const Tensor& x = cache.x;
  const int C = x.dim(0), H = x.dim(1), Wd = x.dim(2);
  const int O = W.dim(0), k = W.dim(2);
  const int Ho = dy.dim(1), Wo = dy.dim(2);

  Tensor dx({C, H, Wd});
  for (int o = 0; o < O; ++o) {
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        double g = dy.data[t3(dy, o, i, j)];
        if (db.size() > 0) db.data[o] += g;
        for (int c = 0; c < C; ++c) {
          for (int u = 0; u < k; ++u) {
            int yy = i * stride + u - pad;
            if (yy < 0 || yy >= H) continue;
            for (int v = 0; v < k; ++v) {
              int xx = j * stride + v - pad;
              if (xx < 0 || xx >= Wd) continue;
              long widx = ((static_cast<long>(o) * C + c) * k + u) * k + v;
              dW.data[widx] += g * x.data[t3(x, c, yy, xx)];
              dx.data[t3(dx, c, yy, xx)] += g * W.data[widx];
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---- gradient checking ----

double grad_check(const std::function<double()>& fn, NetParams& p, double eps) {
  fn(); // populate analytic gradients
  std::map<std::string, Vector> analytic;
  for (const auto& name : p.names()) {
    if (!p.frozen(name)) analytic[name] = p.grad(name).data;
  }
  double max_rel = 0.0;
  for (const auto& [name, g] : analytic) {
    Tensor& t = p.value(name);
    for (long i = 0; i < t.size(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + eps;
      double fp = fn();
      t.data[i] = saved - eps;
      double fm = fn();
      t.data[i] = saved;
      double fd = (fp - fm) / (2.0 * eps);
      double rel = std::abs(fd - g[i]) / std::max({1.0, std::abs(fd), std::abs(g[i])});
      max_rel = std::max(max_rel, rel);
    }
  }
  fn(); // leave gradients consistent with the unperturbed parameters
  return max_rel;
}

// ---- optimizer ----

void Optimizer::step(NetParams& p, double lr) {
  for (const auto& name : p.names()) {
    if (p.frozen(name)) continue;
    Tensor& v = p.value(name);
    const Tensor& g = p.grad(name);
    switch (kind_) {
      case OptimizerKind::Sgd:
        v.data -= lr * g.data;
        break;
      case OptimizerKind::RmsProp: {
        auto it = acc_.find(name);
        if (it == acc_.end()) it = acc_.emplace(name, Vector::Zero(v.size())).first;
        Vector& acc = it->second;
        acc = decay_ * acc + (1.0 - decay_) * g.data.array().square().matrix();
        v.data.array() -= lr * g.data.array() / (acc.array().sqrt() + eps_);
        break;
      }
    }
  }
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[8] = {'C', 'S', 'C', 'K', 'P', 'T', '0', '1'};

} // namespace

void save_checkpoint(const NetParams& p, const std::string& path,
                     const std::string& meta_json) {
  nlohmann::json header;
  header["meta"] = nlohmann::json::parse(meta_json);
  nlohmann::json params = nlohmann::json::array();
  for (const auto& name : p.names()) {
    params.push_back({{"name", name},
                      {"shape", p.value(name).shape},
                      {"group", p.group_of(name)},
                      {"frozen", p.frozen(name)}});
  }
  header["params"] = params;
  std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& name : p.names()) {
    const Tensor& t = p.value(name);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * 8));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(htext);

  Checkpoint ck;
  ck.meta_json = header.at("meta").dump();
  std::set<std::string> frozen_groups;
  for (const auto& pj : header.at("params")) {
    std::string name = pj.at("name").get<std::string>();
    std::vector<int> shape = pj.at("shape").get<std::vector<int>>();
    std::string group = pj.at("group").get<std::string>();
    Tensor& t = ck.params.add(name, shape, group);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * 8));
    if (pj.at("frozen").get<bool>()) frozen_groups.insert(group);
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated data in " + path);
  for (const auto& g : frozen_groups) ck.params.freeze_group(g);
  return ck;
}

} // namespace nn
} // namespace cellsynth
