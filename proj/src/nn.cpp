#include "mtaim/nn.hpp"

#include "mtaim/errors.hpp"

#include <cmath>
#include <memory>
#include <numeric>

namespace mtaim::nn {

// ---------------------------------------------------------------- ParamSet

int ParamSet::add(std::string name, Mat init) {
  Param p;
  p.name = std::move(name);
  p.grad = Mat::Zero(init.rows(), init.cols());
  p.adam_m = Mat::Zero(init.rows(), init.cols());
  p.adam_v = Mat::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

int ParamSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  return -1;
}

nlohmann::json ParamSet::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& p : params_) {
    std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
    arr.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"data", data}});
  }
  return arr;
}

void ParamSet::load_json(const nlohmann::json& j) {
  for (const auto& e : j) {
    const auto name = e.at("name").get<std::string>();
    const int i = find(name);
    if (i < 0) throw DataError("unknown parameter tensor '" + name + "'");
    auto& p = params_[static_cast<std::size_t>(i)];
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols())
      throw ShapeError("parameter '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", model expects " + std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("parameter '" + name + "' truncated");
    p.value = Eigen::Map<const Mat>(data.data(), rows, cols);
  }
}

// ---------------------------------------------------------------- Tape

const Mat& Var::value() const { return tape->value(id); }

Var Tape::constant(Mat v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(int index) {
  if (!params_) throw Error("tape has no parameter set");
  if (param_nodes_.size() < static_cast<std::size_t>(params_->size()))
    param_nodes_.resize(static_cast<std::size_t>(params_->size()), -1);
  auto& slot = param_nodes_[static_cast<std::size_t>(index)];
  if (slot >= 0) return {this, slot};
  Node n;
  n.value = (*params_)[index].value;
  n.needs_grad = true;
  n.param_index = index;
  nodes_.push_back(std::move(n));
  slot = static_cast<int>(nodes_.size()) - 1;
  return {this, slot};
}

Var Tape::push(Mat value, std::vector<int> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(i)].needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) { accumulate_expr(id, g); }

void Tape::backward(Var loss) {
  auto& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (root.value.size() != 1) throw ShapeError("backward needs a scalar loss");
  if (!root.needs_grad) return;
  root.grad = Mat::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param_index >= 0) (*params_)[n.param_index].grad += n.grad;
  }
}

// ---------------------------------------------------------------- elementwise

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Mat v;
  v.noalias() = a.value() * b.value();
  return a.tape->push(std::move(v), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
    if (t.needs_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same(a, b, "add");
  return a.tape->push(a.value() + b.value(), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    t.accumulate_expr(ia, t.grad(self));
    t.accumulate_expr(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same(a, b, "sub");
  return a.tape->push(a.value() - b.value(), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    t.accumulate_expr(ia, t.grad(self));
    t.accumulate_expr(ib, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  check_same(a, b, "mul");
  return a.tape->push(a.value().cwiseProduct(b.value()), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    if (t.needs_grad(ia)) t.accumulate_expr(ia, t.grad(self).cwiseProduct(t.value(ib)));
    if (t.needs_grad(ib)) t.accumulate_expr(ib, t.grad(self).cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, {a.id}, [ia = a.id, s](Tape& t, int self) { t.accumulate_expr(ia, t.grad(self) * s); });
}

Var add_bias(Var a, Var bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw ShapeError("add_bias: bias must be 1 x cols");
  Mat v = a.value().rowwise() + bias.value().row(0);
  return a.tape->push(std::move(v), {a.id, bias.id}, [ia = a.id, ib = bias.id](Tape& t, int self) {
    t.accumulate_expr(ia, t.grad(self));
    if (t.needs_grad(ib)) t.accumulate_expr(ib, t.grad(self).colwise().sum());
  });
}

Var tanh(Var a) {
  return a.tape->push(a.value().array().tanh().matrix(), {a.id}, [ia = a.id](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(ia, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Mat v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape->push(std::move(v), {a.id}, [ia = a.id](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate_expr(ia, (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var relu(Var a) {
  return a.tape->push(a.value().cwiseMax(0.0), {a.id}, [ia = a.id](Tape& t, int self) {
    t.accumulate_expr(ia, (t.grad(self).array() * (t.value(ia).array() > 0.0).cast<double>()).matrix());
  });
}

Var exp(Var a) {
  return a.tape->push(a.value().array().exp().matrix(), {a.id}, [ia = a.id](Tape& t, int self) {
    t.accumulate_expr(ia, t.grad(self).cwiseProduct(t.value(self)));
  });
}

Var square(Var a) {
  return a.tape->push(a.value().array().square().matrix(), {a.id}, [ia = a.id](Tape& t, int self) {
    t.accumulate_expr(ia, (2.0 * t.grad(self).array() * t.value(ia).array()).matrix());
  });
}

Var softplus(Var a) {
  Mat v = a.value().unaryExpr([](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return a.tape->push(std::move(v), {a.id}, [ia = a.id](Tape& t, int self) {
    const auto sig = (1.0 / (1.0 + (-t.value(ia).array()).exp())).matrix();
    t.accumulate_expr(ia, t.grad(self).cwiseProduct(sig));
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape->push(std::move(v), {a.id}, [ia = a.id](Tape& t, int self) {
    const auto& x = t.value(ia);
    t.accumulate_expr(ia, Mat::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Mat v(1, 1);
  v(0, 0) = a.value().sum() / n;
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, n](Tape& t, int self) {
    const auto& x = t.value(ia);
    t.accumulate_expr(ia, Mat::Constant(x.rows(), x.cols(), t.grad(self)(0, 0) / n));
  });
}

Var mse(Var a, const Mat& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols()) throw ShapeError("mse: target shape mismatch");
  auto diff = std::make_shared<Mat>(a.value() - target);
  const double n = static_cast<double>(diff->size());
  Mat v(1, 1);
  v(0, 0) = diff->squaredNorm() / n;
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, diff, n](Tape& t, int self) {
    t.accumulate_expr(ia, (*diff) * (2.0 * t.grad(self)(0, 0) / n));
  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Mat& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) throw ShapeError("cross_entropy: label count mismatch");
  auto probs = std::make_shared<Mat>(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    const auto e = (z.row(r).array() - m).exp();
    const double s = e.sum();
    probs->row(r) = e / s;
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw ShapeError("cross_entropy: label out of range");
    loss -= (z(r, y) - m) - std::log(s);
  }
  const double n = static_cast<double>(z.rows());
  Mat v(1, 1);
  v(0, 0) = loss / n;
  return logits.tape->push(std::move(v), {logits.id}, [ia = logits.id, probs, labels, n](Tape& t, int self) {
    Mat g = *probs;
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    t.accumulate_expr(ia, g * (t.grad(self)(0, 0) / n));
  });
}

Var kl_standard_normal(Var mu, Var logvar) {
  check_same(mu, logvar, "kl_standard_normal");
  const Mat& m = mu.value();
  const Mat& lv = logvar.value();
  const double n = static_cast<double>(m.rows());
  Mat v(1, 1);
  v(0, 0) = -0.5 * (1.0 + lv.array() - m.array().square() - lv.array().exp()).sum() / n;
  return mu.tape->push(std::move(v), {mu.id, logvar.id}, [im = mu.id, il = logvar.id, n](Tape& t, int self) {
    const double g = t.grad(self)(0, 0) / n;
    if (t.needs_grad(im)) t.accumulate_expr(im, t.value(im) * g);
    if (t.needs_grad(il)) t.accumulate_expr(il, ((t.value(il).array().exp() - 1.0) * (0.5 * g)).matrix());
  });
}

// ---------------------------------------------------------------- shape

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape->push(std::move(v), ids, [ids, widths](Tape& t, int self) {
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.needs_grad(ids[i])) t.accumulate_expr(ids[i], t.grad(self).middleCols(at, widths[i]));
      at += widths[i];
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  return a.tape->push(a.value().middleCols(start, count), {a.id}, [ia = a.id, start, count](Tape& t, int self) {
    const auto& x = t.value(ia);
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = t.grad(self);
    t.accumulate_expr(ia, g);
  });
}

Var select_rows(Var a, const std::vector<Eigen::Index>& rows) {
  Mat v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, rows](Tape& t, int self) {
    const auto& x = t.value(ia);
    Mat g = Mat::Zero(x.rows(), x.cols());
    const auto& gs = t.grad(self);
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += gs.row(static_cast<Eigen::Index>(i));
    t.accumulate_expr(ia, g);
  });
}

Var flatten_blocks(Var a, Eigen::Index block) {
  const Eigen::Index c = a.cols();
  if (a.rows() % block != 0) throw ShapeError("flatten_blocks: rows not divisible by block");
  const Eigen::Index b = a.rows() / block;
  Mat v(b, block * c);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index n = 0; n < block; ++n)
      for (Eigen::Index k = 0; k < c; ++k) v(i, n * c + k) = a.value()(i * block + n, k);
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, block, b, c](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g(b * block, c);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index n = 0; n < block; ++n)
        for (Eigen::Index k = 0; k < c; ++k) g(i * block + n, k) = gs(i, n * c + k);
    t.accumulate_expr(ia, g);
  });
}

Var unflatten_blocks(Var a, Eigen::Index block) {
  if (a.cols() % block != 0) throw ShapeError("unflatten_blocks: cols not divisible by block");
  const Eigen::Index b = a.rows();
  const Eigen::Index c = a.cols() / block;
  Mat v(b * block, c);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index n = 0; n < block; ++n)
      for (Eigen::Index k = 0; k < c; ++k) v(i * block + n, k) = a.value()(i, n * c + k);
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, block, b, c](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g(b, block * c);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index n = 0; n < block; ++n)
        for (Eigen::Index k = 0; k < c; ++k) g(i, n * c + k) = gs(i * block + n, k);
    t.accumulate_expr(ia, g);
  });
}

Var repeat_blocks(Var a, Eigen::Index block) {
  const Eigen::Index b = a.rows();
  Mat v(b * block, a.cols());
  for (Eigen::Index i = 0; i < b; ++i) v.middleRows(i * block, block).rowwise() = a.value().row(i);
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, block, b](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g(b, gs.cols());
    for (Eigen::Index i = 0; i < b; ++i) g.row(i) = gs.middleRows(i * block, block).colwise().sum();
    t.accumulate_expr(ia, g);
  });
}

Var mean_blocks(Var a, Eigen::Index block) {
  if (a.rows() % block != 0) throw ShapeError("mean_blocks: rows not divisible by block");
  const Eigen::Index b = a.rows() / block;
  Mat v(b, a.cols());
  for (Eigen::Index i = 0; i < b; ++i) v.row(i) = a.value().middleRows(i * block, block).colwise().mean();
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, block, b](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g(b * block, gs.cols());
    const double inv = 1.0 / static_cast<double>(block);
    for (Eigen::Index i = 0; i < b; ++i) g.middleRows(i * block, block).rowwise() = gs.row(i) * inv;
    t.accumulate_expr(ia, g);
  });
}

Var avg_pool_rows(Var a, Eigen::Index factor) {
  if (factor == 1) return a;
  if (a.rows() % factor != 0) throw ShapeError("avg_pool_rows: rows not divisible by factor");
  const Eigen::Index out_rows = a.rows() / factor;
  Mat v(out_rows, a.cols());
  for (Eigen::Index i = 0; i < out_rows; ++i) v.row(i) = a.value().middleRows(i * factor, factor).colwise().mean();
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, factor, out_rows](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g(out_rows * factor, gs.cols());
    const double inv = 1.0 / static_cast<double>(factor);
    for (Eigen::Index i = 0; i < out_rows; ++i) g.middleRows(i * factor, factor).rowwise() = gs.row(i) * inv;
    t.accumulate_expr(ia, g);
  });
}

Var im2col_blocks(Var a, Eigen::Index block, Eigen::Index kernel) {
  if (a.rows() % block != 0) throw ShapeError("im2col_blocks: rows not divisible by block");
  const Eigen::Index b = a.rows() / block;
  const Eigen::Index c = a.cols();
  const Eigen::Index pad = kernel / 2;
  Mat v = Mat::Zero(a.rows(), kernel * c);
  const Mat& x = a.value();
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index n = 0; n < block; ++n)
      for (Eigen::Index j = 0; j < kernel; ++j) {
        const Eigen::Index src = n + j - pad;
        if (src < 0 || src >= block) continue;
        v.block(i * block + n, j * c, 1, c) = x.row(i * block + src);
      }
  return a.tape->push(std::move(v), {a.id}, [ia = a.id, block, b, c, kernel, pad](Tape& t, int self) {
    const auto& gs = t.grad(self);
    Mat g = Mat::Zero(b * block, c);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index n = 0; n < block; ++n)
        for (Eigen::Index j = 0; j < kernel; ++j) {
          const Eigen::Index src = n + j - pad;
          if (src < 0 || src >= block) continue;
          g.row(i * block + src) += gs.block(i * block + n, j * c, 1, c);
        }
    t.accumulate_expr(ia, g);
  });
}

// ---------------------------------------------------------------- fused layers

Var layer_norm(Var a, Var gamma, Var beta) {
  constexpr double eps = 1e-5;
  const Mat& x = a.value();
  const Eigen::Index d = x.cols();
  auto xhat = std::make_shared<Mat>(x.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.row(r).array() - mu) * (*inv_std)(r);
  }
  Mat y = (xhat->array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  return a.tape->push(std::move(y), {a.id, gamma.id, beta.id},
                      [ia = a.id, ig = gamma.id, ib = beta.id, xhat, inv_std, d](Tape& t, int self) {
                        const auto& gs = t.grad(self);
                        if (t.needs_grad(ig)) t.accumulate_expr(ig, gs.cwiseProduct(*xhat).colwise().sum());
                        if (t.needs_grad(ib)) t.accumulate_expr(ib, gs.colwise().sum());
                        if (!t.needs_grad(ia)) return;
                        Mat dxhat = (gs.array().rowwise() * t.value(ig).row(0).array()).matrix();
                        Mat g(gs.rows(), d);
                        for (Eigen::Index r = 0; r < gs.rows(); ++r) {
                          const double m1 = dxhat.row(r).mean();
                          const double m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(d);
                          g.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
                        }
                        t.accumulate_expr(ia, g);
                      });
}

Var attention_blocks(Var q, Var k, Var v, Eigen::Index block) {
  check_same(q, k, "attention_blocks");
  if (v.rows() != q.rows()) throw ShapeError("attention_blocks: value rows mismatch");
  if (q.rows() % block != 0) throw ShapeError("attention_blocks: rows not divisible by block");
  const Eigen::Index b = q.rows() / block;
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<std::size_t>(b));
  Mat out(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    Mat scores = (q.value().middleRows(i * block, block) * k.value().middleRows(i * block, block).transpose()) * s;
    for (Eigen::Index r = 0; r < block; ++r) {
      const double m = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - m).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    out.middleRows(i * block, block).noalias() = scores * v.value().middleRows(i * block, block);
    (*probs)[static_cast<std::size_t>(i)] = std::move(scores);
  }
  return q.tape->push(std::move(out), {q.id, k.id, v.id},
                      [iq = q.id, ik = k.id, iv = v.id, probs, block, b, s](Tape& t, int self) {
                        const auto& gs = t.grad(self);
                        const auto& Q = t.value(iq);
                        const auto& K = t.value(ik);
                        const auto& V = t.value(iv);
                        Mat gq = Mat::Zero(Q.rows(), Q.cols());
                        Mat gk = Mat::Zero(K.rows(), K.cols());
                        Mat gv = Mat::Zero(V.rows(), V.cols());
                        for (Eigen::Index i = 0; i < b; ++i) {
                          const Mat& P = (*probs)[static_cast<std::size_t>(i)];
                          const auto dout = gs.middleRows(i * block, block);
                          gv.middleRows(i * block, block).noalias() = P.transpose() * dout;
                          Mat dp = dout * V.middleRows(i * block, block).transpose();
                          Eigen::VectorXd rowdot = dp.cwiseProduct(P).rowwise().sum();
                          Mat ds = (P.array() * (dp.colwise() - rowdot).array()).matrix() * s;
                          gq.middleRows(i * block, block).noalias() = ds * K.middleRows(i * block, block);
                          gk.middleRows(i * block, block).noalias() = ds.transpose() * Q.middleRows(i * block, block);
                        }
                        if (t.needs_grad(iq)) t.accumulate_expr(iq, gq);
                        if (t.needs_grad(ik)) t.accumulate_expr(ik, gk);
                        if (t.needs_grad(iv)) t.accumulate_expr(iv, gv);
                      });
}

namespace {

struct LstmCache {
  Eigen::Index batch = 0, steps = 0, hidden = 0;
  Mat x_tm;                 // inputs, time-major
  std::vector<Mat> gates;   // per step: B x 4H activated gates [i f g o]
  std::vector<Mat> cells;   // per step: B x H cell state
  std::vector<Mat> tanh_c;  // per step
  std::vector<Mat> hiddens; // per step
};

// sample-major row (b*N + n) <-> time-major row (n*B + b)
inline Eigen::Index tm_row(Eigen::Index b, Eigen::Index n, Eigen::Index batch) { return n * batch + b; }

}  // namespace

Var lstm(Var x, Eigen::Index block, Var wx, Var wh, Var bias) {
  const Eigen::Index steps = block;
  if (x.rows() % steps != 0) throw ShapeError("lstm: rows not divisible by sequence length");
  const Eigen::Index batch = x.rows() / steps;
  const Eigen::Index hidden = wh.rows();
  if (wx.rows() != x.cols() || wx.cols() != 4 * hidden || wh.cols() != 4 * hidden || bias.cols() != 4 * hidden)
    throw ShapeError("lstm: weight shapes inconsistent with input/hidden sizes");

  auto cache = std::make_shared<LstmCache>();
  cache->batch = batch;
  cache->steps = steps;
  cache->hidden = hidden;
  cache->x_tm.resize(x.rows(), x.cols());
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index n = 0; n < steps; ++n) cache->x_tm.row(tm_row(b, n, batch)) = x.value().row(b * steps + n);

  Mat xw = cache->x_tm * wx.value();
  xw.rowwise() += bias.value().row(0);
  const Mat& Wh = wh.value();

  Mat h = Mat::Zero(batch, hidden);
  Mat c = Mat::Zero(batch, hidden);
  Mat out(x.rows(), hidden);
  cache->gates.resize(static_cast<std::size_t>(steps));
  cache->cells.resize(static_cast<std::size_t>(steps));
  cache->tanh_c.resize(static_cast<std::size_t>(steps));
  cache->hiddens.resize(static_cast<std::size_t>(steps));
  for (Eigen::Index n = 0; n < steps; ++n) {
    Mat z = xw.middleRows(n * batch, batch);
    z.noalias() += h * Wh;
    auto zi = z.middleCols(0, hidden).array();
    auto zf = z.middleCols(hidden, hidden).array();
    auto zg = z.middleCols(2 * hidden, hidden).array();
    auto zo = z.middleCols(3 * hidden, hidden).array();
    zi = 1.0 / (1.0 + (-zi).exp());
    zf = 1.0 / (1.0 + (-zf).exp());
    zg = zg.tanh();
    zo = 1.0 / (1.0 + (-zo).exp());
    c = (zf * c.array() + zi * zg).matrix();
    Mat tc = c.array().tanh().matrix();
    h = (zo * tc.array()).matrix();
    for (Eigen::Index b = 0; b < batch; ++b) out.row(b * steps + n) = h.row(b);
    const auto si = static_cast<std::size_t>(n);
    cache->gates[si] = std::move(z);
    cache->cells[si] = c;
    cache->tanh_c[si] = std::move(tc);
    cache->hiddens[si] = h;
  }

  return x.tape->push(std::move(out), {x.id, wx.id, wh.id, bias.id},
                      [ix = x.id, iwx = wx.id, iwh = wh.id, ib = bias.id, cache](Tape& t, int self) {
                        const auto& gs = t.grad(self);
                        const Eigen::Index B = cache->batch, N = cache->steps, H = cache->hidden;
                        const Mat& Wh = t.value(iwh);
                        Mat dz_all(B * N, 4 * H);
                        Mat dwh = Mat::Zero(H, 4 * H);
                        Mat dh_next = Mat::Zero(B, H);
                        Mat dc_next = Mat::Zero(B, H);
                        Mat dh(B, H);
                        for (Eigen::Index n = N - 1; n >= 0; --n) {
                          const auto si = static_cast<std::size_t>(n);
                          for (Eigen::Index b = 0; b < B; ++b) dh.row(b) = gs.row(b * N + n);
                          dh += dh_next;
                          const Mat& g = cache->gates[si];
                          const auto gi = g.middleCols(0, H).array();
                          const auto gf = g.middleCols(H, H).array();
                          const auto gg = g.middleCols(2 * H, H).array();
                          const auto go = g.middleCols(3 * H, H).array();
                          const auto tc = cache->tanh_c[si].array();
                          Mat c_prev = n > 0 ? cache->cells[si - 1] : Mat::Zero(B, H);
                          Mat dc = (dc_next.array() + dh.array() * go * (1.0 - tc.square())).matrix();
                          auto dz = dz_all.middleRows(n * B, B);
                          dz.middleCols(0, H) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
                          dz.middleCols(H, H) = (dc.array() * c_prev.array() * gf * (1.0 - gf)).matrix();
                          dz.middleCols(2 * H, H) = (dc.array() * gi * (1.0 - gg.square())).matrix();
                          dz.middleCols(3 * H, H) = (dh.array() * tc * go * (1.0 - go)).matrix();
                          dc_next = (dc.array() * gf).matrix();
                          if (n > 0) {
                            dwh.noalias() += cache->hiddens[si - 1].transpose() * dz;
                          }
                          dh_next.noalias() = dz * Wh.transpose();
                        }
                        if (t.needs_grad(iwh)) t.accumulate_expr(iwh, dwh);
                        if (t.needs_grad(iwx)) t.accumulate_expr(iwx, cache->x_tm.transpose() * dz_all);
                        if (t.needs_grad(ib)) t.accumulate_expr(ib, dz_all.colwise().sum());
                        if (t.needs_grad(ix)) {
                          Mat dx_tm = dz_all * t.value(iwx).transpose();
                          Mat dx(B * N, dx_tm.cols());
                          for (Eigen::Index b = 0; b < B; ++b)
                            for (Eigen::Index n = 0; n < N; ++n) dx.row(b * N + n) = dx_tm.row(tm_row(b, n, B));
                          t.accumulate_expr(ix, dx);
                        }
                      });
}

// ---------------------------------------------------------------- init

Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  return m;
}

Mat sinusoidal_encoding(Eigen::Index steps, Eigen::Index width) {
  Mat pe(steps, width);
  for (Eigen::Index p = 0; p < steps; ++p)
    for (Eigen::Index i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(p, i) = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

// ---------------------------------------------------------------- modules

Linear::Linear(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
               double gain)
    : w(ps.add(name + ".w", glorot(in, out, rng, gain))), b(ps.add(name + ".b", Mat::Zero(1, out))) {}

Var Linear::operator()(Tape& t, Var x) const { return add_bias(matmul(x, t.param(w)), t.param(b)); }

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, Eigen::Index width)
    : gamma(ps.add(name + ".gamma", Mat::Ones(1, width))), beta(ps.add(name + ".beta", Mat::Zero(1, width))) {}

Var LayerNorm::operator()(Tape& t, Var x) const { return layer_norm(x, t.param(gamma), t.param(beta)); }

AttentionEncoderLayer::AttentionEncoderLayer(ParamSet& ps, const std::string& name, Eigen::Index width,
                                             std::mt19937_64& rng)
    : q(ps, name + ".q", width, width, rng),
      k(ps, name + ".k", width, width, rng),
      v(ps, name + ".v", width, width, rng),
      o(ps, name + ".o", width, width, rng),
      ff1(ps, name + ".ff1", width, 2 * width, rng),
      ff2(ps, name + ".ff2", 2 * width, width, rng),
      ln1(ps, name + ".ln1", width),
      ln2(ps, name + ".ln2", width) {}

Var AttentionEncoderLayer::operator()(Tape& t, Var x, Eigen::Index block) const {
  Var att = attention_blocks(q(t, x), k(t, x), v(t, x), block);
  Var h = ln1(t, add(x, o(t, att)));
  Var f = ff2(t, relu(ff1(t, h)));
  return ln2(t, add(h, f));
}

LstmLayer::LstmLayer(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden,
                     std::mt19937_64& rng) {
  wx = ps.add(name + ".wx", glorot(in, 4 * hidden, rng));
  wh = ps.add(name + ".wh", glorot(hidden, 4 * hidden, rng));
  Mat bias = Mat::Zero(1, 4 * hidden);
  bias.middleCols(hidden, hidden).setOnes();  // forget gate starts open
  b = ps.add(name + ".b", bias);
}

Var LstmLayer::operator()(Tape& t, Var x, Eigen::Index block) const {
  return lstm(x, block, t.param(wx), t.param(wh), t.param(b));
}

Conv1d::Conv1d(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Eigen::Index kernel_size,
               std::mt19937_64& rng)
    : w(ps.add(name + ".w", glorot(kernel_size * in, out, rng))),
      b(ps.add(name + ".b", Mat::Zero(1, out))),
      kernel(kernel_size) {}

Var Conv1d::operator()(Tape& t, Var x, Eigen::Index block) const {
  return add_bias(matmul(im2col_blocks(x, block, kernel), t.param(w)), t.param(b));
}

// ---------------------------------------------------------------- Adam

void Adam::step(ParamSet& ps) {
  std::vector<int> all(static_cast<std::size_t>(ps.size()));
  std::iota(all.begin(), all.end(), 0);
  step(ps, all);
}

void Adam::step(ParamSet& ps, const std::vector<int>& subset) {
  ++step_count;
  double scale_factor = 1.0;
  if (clip_norm > 0) {
    double sq = 0.0;
    for (int i : subset) sq += ps[i].grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) scale_factor = clip_norm / norm;
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (int i : subset) {
    auto& p = ps[i];
    p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * scale_factor * p.grad;
    p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (scale_factor * p.grad).array().square().matrix();
    p.value.array() -= lr * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------- basis

TemporalBasis::TemporalBasis(Eigen::Index steps, Eigen::Index functions) {
  if (steps < 1 || functions < 1) throw ShapeError("temporal basis needs positive sizes");
  functions = std::min(functions, steps);
  basis_.resize(functions, steps);
  if (functions == 1) {
    basis_.setOnes();
  } else {
    const double spacing = static_cast<double>(steps - 1) / static_cast<double>(functions - 1);
    for (Eigen::Index j = 0; j < functions; ++j) {
      const double centre = static_cast<double>(j) * spacing;
      for (Eigen::Index t = 0; t < steps; ++t) {
        const double u = (static_cast<double>(t) - centre) / (0.75 * spacing);
        basis_(j, t) = std::exp(-0.5 * u * u);
      }
    }
  }
  Mat gram = basis_ * basis_.transpose();
  gram.diagonal().array() += 1e-12 * gram.trace() / static_cast<double>(functions);
  projector_ = gram.ldlt().solve(basis_).transpose();
}

Mat TemporalBasis::project(const Mat& series) const {
  if (series.cols() != basis_.cols()) throw ShapeError("basis projection: length mismatch");
  return series * projector_;
}

Eigen::Index patch_factor(Eigen::Index steps, Eigen::Index max_tokens) {
  for (Eigen::Index p = 1; p <= steps; ++p)
    if (steps % p == 0 && steps / p <= max_tokens) return p;
  return steps;
}

}  // namespace mtaim::nn
