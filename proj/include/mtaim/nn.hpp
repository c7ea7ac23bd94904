#pragma once

// Small reverse-mode autodiff over dense Eigen matrices.
//
// Layout conventions used throughout the models:
//   * a batch of vectors is a B x d matrix;
//   * a batch of sequences is a (B*N) x d matrix in sample-major order,
//     row b*N + n holding step n of sample b ("blocks" of N rows).

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace mtaim::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
};

class ParamSet {
 public:
  int add(std::string name, Mat init);
  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  int size() const noexcept { return static_cast<int>(params_.size()); }
  std::size_t count() const;  // total scalar parameters
  void zero_grad();
  int find(const std::string& name) const;  // -1 when absent

  nlohmann::json to_json() const;
  // Overwrites values of existing parameters by name; throws on mismatch.
  void load_json(const nlohmann::json& j);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Param> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  explicit Tape(ParamSet* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v);
  Var param(int index);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable Param::grad.
  void backward(Var loss);

  // Building blocks for ops.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(Mat value, std::vector<int> inputs, Backward backward);
  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Adds g into the gradient of node id (no-op for nodes without gradient).
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
    int param_index = -1;
  };
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
  ParamSet* params_;
};

// ---- elementwise / algebra ----
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var square(Var a);
Var softplus(Var a);  // log(1 + exp(a)), numerically stable

// ---- reductions and losses (1 x 1 results) ----
Var sum(Var a);
Var mean(Var a);
Var mse(Var a, const Mat& target);
Var cross_entropy(Var logits, const std::vector<int>& labels);  // mean over rows
// Mean over rows of KL(N(mu, exp(logvar)) || N(0, I)), summed over columns.
Var kl_standard_normal(Var mu, Var logvar);

// ---- shape ----
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var select_rows(Var a, const std::vector<Eigen::Index>& rows);
Var flatten_blocks(Var a, Eigen::Index block);    // (B*N) x C -> B x (N*C)
Var unflatten_blocks(Var a, Eigen::Index block);  // B x (N*C) -> (B*N) x C
Var repeat_blocks(Var a, Eigen::Index block);     // B x d -> (B*N) x d
Var mean_blocks(Var a, Eigen::Index block);       // (B*N) x d -> B x d
Var avg_pool_rows(Var a, Eigen::Index factor);    // groups of `factor` consecutive rows
Var im2col_blocks(Var a, Eigen::Index block, Eigen::Index kernel);  // 'same' zero padding per block

// ---- layers as fused ops ----
Var layer_norm(Var a, Var gamma, Var beta);
// Per block of N rows: softmax(q k^T / sqrt(d)) v.
Var attention_blocks(Var q, Var k, Var v, Eigen::Index block);
// LSTM over blocks of N steps; returns every hidden state in the same layout.
Var lstm(Var x, Eigen::Index block, Var wx, Var wh, Var bias);

// ---- parameter initialisation ----
Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double gain = 1.0);
Mat sinusoidal_encoding(Eigen::Index steps, Eigen::Index width);

// ---- modules ----
struct Linear {
  int w = -1, b = -1;
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
         double gain = 1.0);
  Var operator()(Tape& t, Var x) const;
};

struct LayerNorm {
  int gamma = -1, beta = -1;
  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, Eigen::Index width);
  Var operator()(Tape& t, Var x) const;
};

// Post-norm transformer encoder layer, single head.
struct AttentionEncoderLayer {
  Linear q, k, v, o, ff1, ff2;
  LayerNorm ln1, ln2;
  AttentionEncoderLayer() = default;
  AttentionEncoderLayer(ParamSet& ps, const std::string& name, Eigen::Index width, std::mt19937_64& rng);
  Var operator()(Tape& t, Var x, Eigen::Index block) const;
};

struct LstmLayer {
  int wx = -1, wh = -1, b = -1;
  LstmLayer() = default;
  LstmLayer(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, std::mt19937_64& rng);
  Var operator()(Tape& t, Var x, Eigen::Index block) const;
};

struct Conv1d {
  int w = -1, b = -1;
  Eigen::Index kernel = 1;
  Conv1d() = default;
  Conv1d(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Eigen::Index kernel,
         std::mt19937_64& rng);
  Var operator()(Tape& t, Var x, Eigen::Index block) const;
};

// ---- optimisation ----
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm clip; <= 0 disables
  long step_count = 0;

  void step(ParamSet& ps);
  // Updates only the listed parameters; the clip norm is taken over that subset.
  void step(ParamSet& ps, const std::vector<int>& subset);
};

// Gaussian temporal basis (evenly spaced centres) used to decode smooth
// sequences from a handful of coefficients, with a least-squares projector.
class TemporalBasis {
 public:
  TemporalBasis() = default;
  TemporalBasis(Eigen::Index steps, Eigen::Index functions);
  const Mat& basis() const noexcept { return basis_; }  // K x T
  Eigen::Index steps() const noexcept { return basis_.cols(); }
  Eigen::Index functions() const noexcept { return basis_.rows(); }
  // rows x T -> rows x K least-squares coefficients
  Mat project(const Mat& series) const;
  Mat reconstruct(const Mat& coefficients) const { return coefficients * basis_; }

 private:
  Mat basis_;
  Mat projector_;  // T x K
};

// Smallest pooling factor dividing `steps` that leaves at most `max_tokens` tokens.
Eigen::Index patch_factor(Eigen::Index steps, Eigen::Index max_tokens);

}  // namespace mtaim::nn
