#pragma once

// Minimal dense/conv layer set with manual backpropagation: linear, tanh,
// gelu, layer norm, row softmax, scaled dot-product multi-head attention,
// pre-norm residual transformer blocks, strided conv2d, finite-difference
// gradient checking, SGD/RMSProp, and a binary parameter checkpoint format.
//
// Everything is double precision. Layer forward passes fill cache structs
// consumed by the matching backward pass; backward passes accumulate (+=)
// into gradient tensors.

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellsynth/rng.hpp"

namespace cellsynth {
namespace nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

struct Tensor {
  std::vector<int> shape;
  Vector data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  long size() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  MatMap mat();            // 2-D view {rows, cols}, row-major
  ConstMatMap mat() const; // 2-D view
};

long shape_size(const std::vector<int>& shape);

class NetParams {
 public:
  Tensor& add(const std::string& name, std::vector<int> shape,
              const std::string& group = "default");
  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  const std::string& group_of(const std::string& name) const;

  void freeze_group(const std::string& group) { frozen_.insert(group); }
  bool group_frozen(const std::string& group) const { return frozen_.count(group) > 0; }
  bool frozen(const std::string& name) const { return group_frozen(group_of(name)); }
  const std::set<std::string>& frozen_groups() const { return frozen_; }

  void zero_grads();
  std::vector<std::string> names() const; // sorted
  long total_size(bool include_frozen = true) const;

  // Flat view over non-frozen parameters in name order (for parameter-space
  // perturbation estimators).
  Vector flatten_values() const;
  void set_flattened_values(const Vector& v);

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    std::string group;
  };
  std::map<std::string, Entry> entries_;
  std::set<std::string> frozen_;
};

// ---- initialization ----

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases and 1-D tensors zero.
void init_uniform_scaled(NetParams& p, const std::string& name, Rng& rng);

// ---- elementwise activations ----

Matrix tanh_forward(const Matrix& x);
Matrix tanh_backward(const Matrix& dy, const Matrix& y); // y = tanh output
Matrix gelu_forward(const Matrix& x);
Matrix gelu_backward(const Matrix& dy, const Matrix& x); // x = gelu input
void tensor_tanh_inplace(Tensor& t);
Vector tanh_backward_vec(const Vector& dy, const Vector& y);

// ---- linear: y = x W^T + b, W is {out, in} ----

struct LinearCache {
  Matrix x;
};
Matrix linear_forward(const Matrix& x, const Tensor& W, const Tensor& b,
                      LinearCache* cache = nullptr);
Matrix linear_backward(const Matrix& dy, const Tensor& W, const LinearCache& cache,
                       Tensor& dW, Tensor& db);

// ---- row softmax ----

Matrix softmax_rows(const Matrix& x);
Matrix softmax_rows_backward(const Matrix& dy, const Matrix& y);

// ---- layer norm over each row ----

struct LayerNormCache {
  Matrix xc;      // x - row mean
  Matrix xhat;    // normalized
  Vector inv_std; // per row
};
Matrix layernorm_forward(const Matrix& x, const Tensor& gamma, const Tensor& beta,
                         double eps, LayerNormCache* cache = nullptr);
Matrix layernorm_backward(const Matrix& dy, const Tensor& gamma,
                          const LayerNormCache& cache, Tensor& dgamma, Tensor& dbeta);

// ---- multi-head attention ----
// Params under prefix: .Wq .Wk .Wv .Wo, all {d_model, d_model}.
// h_i = softmax(Q_i K_i^T / sqrt(d_k)) V_i, output = concat(h_i) Wo^T.

struct AttentionCache {
  Matrix Q, K, V;
  Matrix Qp, Kp, Vp;
  std::vector<Matrix> probs; // per head
  Matrix concat;
  LinearCache qc, kc, vc, oc;
};

void init_attention(NetParams& p, const std::string& prefix, int d_model, Rng& rng);
Matrix multi_head_attention(const Matrix& Q, const Matrix& K, const Matrix& V,
                            const NetParams& p, int heads,
                            const std::string& prefix = "attn",
                            AttentionCache* cache = nullptr);
// Returns dQ; adds dK/dV into the provided matrices (sized like K/V).
Matrix multi_head_attention_backward(const Matrix& dout, NetParams& p, int heads,
                                     const AttentionCache& cache,
                                     const std::string& prefix, Matrix& dK, Matrix& dV);

// ---- pre-norm residual transformer blocks ----
// x <- x + MSA(LN1(x)); x <- x + MLP(LN2(x)), MLP = W2 gelu(W1 x + b1) + b2.

struct StackConfig {
  int blocks = 2;
  int d_model = 32;
  int heads = 4;
  int mlp_hidden = 64;
  double ln_eps = 1e-5;
};

struct BlockCache {
  LayerNormCache ln1, ln2;
  AttentionCache attn;
  LinearCache mlp1, mlp2;
  Matrix mlp_hidden_in; // W1 x + b1 (gelu input)
  Matrix x_in, x_mid;
};

struct StackCache {
  std::vector<BlockCache> blocks;
};

void init_layer_stack(NetParams& p, const std::string& prefix, const StackConfig& cfg,
                      Rng& rng, const std::string& group = "default");
// hidden, when given, receives the token matrix after every block.
Matrix layer_stack_forward(const Matrix& tokens, const NetParams& p,
                           const std::string& prefix, const StackConfig& cfg,
                           StackCache* cache = nullptr,
                           std::vector<Matrix>* hidden = nullptr);
Matrix layer_stack_backward(const Matrix& dout, NetParams& p, const std::string& prefix,
                            const StackConfig& cfg, const StackCache& cache);

// ---- conv2d, NCHW single sample, zero padding ----

struct ConvCache {
  Tensor x;
};
Tensor conv2d_forward(const Tensor& x, const Tensor& W, const Tensor& b, int stride,
                      int pad, ConvCache* cache = nullptr);
Tensor conv2d_backward(const Tensor& dy, const Tensor& W, const ConvCache& cache,
                       int stride, int pad, Tensor& dW, Tensor& db);

// ---- gradient checking ----

// fn must recompute the scalar loss AND refresh p's gradients (zero + backward)
// every call. Central differences with step eps over every non-frozen
// coordinate; returns the max relative error.
double grad_check(const std::function<double()>& fn, NetParams& p, double eps = 1e-5);

// ---- optimizer ----

enum class OptimizerKind { Sgd, RmsProp };

class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind, double decay = 0.9, double eps = 1e-8)
      : kind_(kind), decay_(decay), eps_(eps) {}
  void step(NetParams& p, double lr);

 private:
  OptimizerKind kind_;
  double decay_;
  double eps_;
  std::map<std::string, Vector> acc_;
};

inline void optimizer_step(Optimizer& opt, NetParams& p, double lr) { opt.step(p, lr); }

// ---- checkpoints: JSON header + raw little-endian f64 arrays ----

void save_checkpoint(const NetParams& p, const std::string& path,
                     const std::string& meta_json = "{}");
struct Checkpoint {
  NetParams params;
  std::string meta_json;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace nn
} // namespace cellsynth
