#include "mtaim/classifiers.hpp"

#include "mtaim/errors.hpp"
#include "mtaim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtaim::clf {

using nn::Mat;
using nn::Tape;
using nn::Var;

std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::Gbdt: return "gbdt";
    case Family::Attention: return "attention";
    case Family::ConvRecurrent: return "conv_recurrent";
  }
  return "?";
}

Family parse_family(std::string_view s) {
  if (s == "gbdt") return Family::Gbdt;
  if (s == "attention") return Family::Attention;
  if (s == "conv_recurrent") return Family::ConvRecurrent;
  throw ConfigError("family", "unknown classifier family '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- config

ClassifierConfig ClassifierConfig::defaults_for(Family f) {
  ClassifierConfig c;
  c.family = f;
  if (f == Family::Attention) {
    c.epochs = 60;
    c.learning_rate = 3e-3;
  }
  return c;
}

ClassifierConfig ClassifierConfig::from_config(const Config& cfg, const std::string& section) {
  const auto key = [&](const char* k) { return section + "." + k; };
  ClassifierConfig c = defaults_for(parse_family(cfg.get_string(key("family"), "conv_recurrent")));
  c.gbdt.learning_rate = cfg.get_double(key("gbdt_learning_rate"), c.gbdt.learning_rate);
  c.gbdt.max_depth = cfg.get_int(key("max_depth"), c.gbdt.max_depth);
  c.gbdt.n_rounds = cfg.get_int(key("n_rounds"), c.gbdt.n_rounds);
  c.gbdt.l2 = cfg.get_double(key("l2"), c.gbdt.l2);
  c.attention.encoder_layers = cfg.get_int(key("encoder_layers"), c.attention.encoder_layers);
  c.attention.latent_dim = cfg.get_int(key("latent_dim"), c.attention.latent_dim);
  c.conv_recurrent.hidden_dim = cfg.get_int(key("hidden_dim"), c.conv_recurrent.hidden_dim);
  c.conv_recurrent.recurrent_layers = cfg.get_int(key("recurrent_layers"), c.conv_recurrent.recurrent_layers);
  c.conv_recurrent.conv_kernel = cfg.get_int(key("conv_kernel"), c.conv_recurrent.conv_kernel);
  c.conv_recurrent.conv_channels = cfg.get_int(key("conv_channels"), c.conv_recurrent.conv_channels);
  c.epochs = cfg.get_int(key("epochs"), c.epochs);
  c.batch_size = cfg.get_int(key("batch_size"), c.batch_size);
  c.learning_rate = cfg.get_double(key("learning_rate"), c.learning_rate);
  c.max_tokens = cfg.get_int(key("max_tokens"), c.max_tokens);
  c.seed = std::stoull(cfg.get_string(key("seed"), std::to_string(c.seed)));
  c.validate();
  return c;
}

void ClassifierConfig::validate() const {
  switch (family) {
    case Family::Gbdt:
      if (!(gbdt.learning_rate > 0)) throw ConfigError("gbdt.learning_rate", "must be > 0");
      if (gbdt.max_depth < 0) throw ConfigError("gbdt.max_depth", "must be >= 0");
      if (gbdt.n_rounds < 0) throw ConfigError("gbdt.n_rounds", "must be >= 0");
      if (!(gbdt.l2 >= 0)) throw ConfigError("gbdt.l2", "must be >= 0");
      return;
    case Family::Attention:
      if (attention.encoder_layers < 1) throw ConfigError("attention.encoder_layers", "must be >= 1");
      if (attention.latent_dim < 1) throw ConfigError("attention.latent_dim", "must be >= 1");
      break;
    case Family::ConvRecurrent:
      if (conv_recurrent.hidden_dim < 1) throw ConfigError("conv_recurrent.hidden_dim", "must be >= 1");
      if (conv_recurrent.recurrent_layers < 1) throw ConfigError("conv_recurrent.recurrent_layers", "must be >= 1");
      if (conv_recurrent.conv_kernel < 1 || conv_recurrent.conv_kernel % 2 == 0)
        throw ConfigError("conv_recurrent.conv_kernel", "must be a positive odd number");
      if (conv_recurrent.conv_channels < 1) throw ConfigError("conv_recurrent.conv_channels", "must be >= 1");
      break;
  }
  if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate", "must be > 0");
  if (max_tokens < 1) throw ConfigError("max_tokens", "must be >= 1");
}

nlohmann::json ClassifierConfig::to_json() const {
  nlohmann::json j = {{"family", to_string(family)}, {"seed", seed}};
  switch (family) {
    case Family::Gbdt:
      j["learning_rate"] = gbdt.learning_rate;
      j["max_depth"] = gbdt.max_depth;
      j["n_rounds"] = gbdt.n_rounds;
      j["l2"] = gbdt.l2;
      return j;
    case Family::Attention:
      j["encoder_layers"] = attention.encoder_layers;
      j["latent_dim"] = attention.latent_dim;
      break;
    case Family::ConvRecurrent:
      j["hidden_dim"] = conv_recurrent.hidden_dim;
      j["recurrent_layers"] = conv_recurrent.recurrent_layers;
      j["conv_kernel"] = conv_recurrent.conv_kernel;
      j["conv_channels"] = conv_recurrent.conv_channels;
      break;
  }
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["max_tokens"] = max_tokens;
  return j;
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c = defaults_for(parse_family(j.at("family").get<std::string>()));
  c.seed = j.at("seed");
  if (c.family == Family::Gbdt) {
    c.gbdt.learning_rate = j.at("learning_rate");
    c.gbdt.max_depth = j.at("max_depth");
    c.gbdt.n_rounds = j.at("n_rounds");
    c.gbdt.l2 = j.at("l2");
  } else {
    if (c.family == Family::Attention) {
      c.attention.encoder_layers = j.at("encoder_layers");
      c.attention.latent_dim = j.at("latent_dim");
    } else {
      c.conv_recurrent.hidden_dim = j.at("hidden_dim");
      c.conv_recurrent.recurrent_layers = j.at("recurrent_layers");
      c.conv_recurrent.conv_kernel = j.at("conv_kernel");
      c.conv_recurrent.conv_channels = j.at("conv_channels");
    }
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.max_tokens = j.at("max_tokens");
  }
  c.validate();
  return c;
}

std::string ClassifierConfig::describe() const {
  std::ostringstream os;
  const auto j = to_json();
  bool first = true;
  for (const auto& [k, v] : j.items()) {  // nlohmann objects iterate in key order
    if (k == "seed") continue;
    os << (first ? "" : ";") << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
    first = false;
  }
  return os.str();
}

// ---------------------------------------------------------------- trees

double Tree::evaluate(const Vector& x) const {
  int node = 0;
  while (feature[static_cast<std::size_t>(node)] >= 0) {
    const auto n = static_cast<std::size_t>(node);
    node = x(feature[n]) <= threshold[n] ? left[n] : right[n];
  }
  return value[static_cast<std::size_t>(node)];
}

Vector summary_features(const Matrix& x) {
  const Eigen::Index c = x.rows();
  const double steps = static_cast<double>(x.cols());
  Vector f(6 * c);
  for (Eigen::Index i = 0; i < c; ++i) {
    const auto row = x.row(i);
    Eigen::Index argmax = 0;
    const double mx = row.maxCoeff(&argmax);
    const double mean = row.mean();
    f(6 * i + 0) = row.minCoeff();
    f(6 * i + 1) = mx;
    f(6 * i + 2) = mean;
    f(6 * i + 3) = std::sqrt((row.array() - mean).square().mean());
    f(6 * i + 4) = steps > 1 ? static_cast<double>(argmax) / (steps - 1) : 0.0;
    f(6 * i + 5) = row.array().square().mean();
  }
  return f;
}

namespace {

struct TreeBuilder {
  const Mat& features;                              // n x p
  const std::vector<std::vector<int>>& sorted;      // per feature, sample indices by value
  const Vector& g;
  const Vector& h;
  double l2;
  int max_depth;
  Tree tree;

  int leaf(double gs, double hs) {
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    tree.value.push_back(-gs / (hs + l2));
    return static_cast<int>(tree.value.size()) - 1;
  }

  int build(const std::vector<char>& in_node, int depth) {
    double gs = 0, hs = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < in_node.size(); ++i)
      if (in_node[i]) {
        gs += g(static_cast<Eigen::Index>(i));
        hs += h(static_cast<Eigen::Index>(i));
        ++count;
      }
    if (depth >= max_depth || count < 2) return leaf(gs, hs);

    const double parent = gs * gs / (hs + l2);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (Eigen::Index f = 0; f < features.cols(); ++f) {
      double gl = 0, hl = 0;
      double prev = 0;
      bool have_prev = false;
      for (int idx : sorted[static_cast<std::size_t>(f)]) {
        if (!in_node[static_cast<std::size_t>(idx)]) continue;
        const double v = features(idx, f);
        if (have_prev && v > prev) {
          const double gr = gs - gl, hr = hs - hl;
          const double gain = gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = 0.5 * (prev + v);
          }
        }
        gl += g(idx);
        hl += h(idx);
        prev = v;
        have_prev = true;
      }
    }
    if (best_feature < 0) return leaf(gs, hs);

    const int self = leaf(gs, hs);
    std::vector<char> l(in_node.size(), 0), r(in_node.size(), 0);
    for (std::size_t i = 0; i < in_node.size(); ++i)
      if (in_node[i]) (features(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? l : r)[i] = 1;
    const int li = build(l, depth + 1);
    const int ri = build(r, depth + 1);
    const auto s = static_cast<std::size_t>(self);
    tree.feature[s] = best_feature;
    tree.threshold[s] = best_threshold;
    tree.left[s] = li;
    tree.right[s] = ri;
    return self;
  }
};

void softmax_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

Mat gbdt_logits(const TrainedClassifier& m, const Mat& feats) {
  Mat f(feats.rows(), m.n_classes);
  for (Eigen::Index i = 0; i < feats.rows(); ++i) {
    const Vector x = feats.row(i).transpose();
    for (int k = 0; k < m.n_classes; ++k) {
      double s = m.base_score(k);
      for (const auto& round : m.rounds) s += m.config.gbdt.learning_rate * round[static_cast<std::size_t>(k)].evaluate(x);
      f(i, k) = s;
    }
  }
  return f;
}

Mat standardised_features(const TrainedClassifier& m, const std::vector<Matrix>& x) {
  Mat feats(static_cast<Eigen::Index>(x.size()), 6 * static_cast<Eigen::Index>(m.manifest.channels.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    Matrix z = ((x[i].colwise() - m.channel_mean).array().colwise() / m.channel_std.array()).matrix();
    feats.row(static_cast<Eigen::Index>(i)) = summary_features(z).transpose();
  }
  return feats;
}

void train_gbdt(TrainedClassifier& m, const std::vector<Matrix>& x, const std::vector<int>& y, std::ostream* log) {
  const Mat feats = standardised_features(m, x);
  const auto n = feats.rows();
  const int k = m.n_classes;
  m.base_score = Vector::Zero(k);
  for (int label : y) m.base_score(label) += 1.0;
  for (int c = 0; c < k; ++c)
    m.base_score(c) = m.base_score(c) > 0 ? std::log(m.base_score(c) / static_cast<double>(n)) : std::log(1e-6);

  std::vector<std::vector<int>> sorted(static_cast<std::size_t>(feats.cols()));
  for (Eigen::Index f = 0; f < feats.cols(); ++f) {
    auto& s = sorted[static_cast<std::size_t>(f)];
    s.resize(static_cast<std::size_t>(n));
    std::iota(s.begin(), s.end(), 0);
    std::stable_sort(s.begin(), s.end(), [&](int a, int b) { return feats(a, f) < feats(b, f); });
  }

  Mat logits(n, k);
  for (Eigen::Index i = 0; i < n; ++i) logits.row(i) = m.base_score.transpose();
  const std::vector<char> all(static_cast<std::size_t>(n), 1);
  for (int round = 1; round <= m.config.gbdt.n_rounds; ++round) {
    Mat p = logits;
    softmax_rows(p);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) loss -= std::log(std::max(p(i, y[static_cast<std::size_t>(i)]), 1e-300));
    std::vector<Tree> trees;
    for (int c = 0; c < k; ++c) {
      Vector g(n), h(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        g(i) = p(i, c) - (y[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0);
        h(i) = std::max(p(i, c) * (1.0 - p(i, c)), 1e-12);
      }
      TreeBuilder b{feats, sorted, g, h, m.config.gbdt.l2, m.config.gbdt.max_depth, {}};
      b.build(all, 0);
      trees.push_back(std::move(b.tree));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector xi = feats.row(i).transpose();
      for (int c = 0; c < k; ++c) logits(i, c) += m.config.gbdt.learning_rate * trees[static_cast<std::size_t>(c)].evaluate(xi);
    }
    m.rounds.push_back(std::move(trees));
    m.training_log.push_back(loss / static_cast<double>(n));
    if (log) *log << round << ',' << m.training_log.back() << '\n';
  }
}

// ---- neural families

struct ClfNet {
  Family family;
  Eigen::Index T, C, classes, factor, tokens;
  Mat pe;
  // attention
  nn::Linear in;
  std::vector<nn::AttentionEncoderLayer> layers;
  // conv_recurrent
  nn::Conv1d conv;
  std::vector<nn::LstmLayer> lstm;
  nn::Linear head;

  ClfNet(const ClassifierConfig& c, Eigen::Index channels, Eigen::Index steps, int n_classes, nn::ParamSet& ps)
      : family(c.family), T(steps), C(channels), classes(n_classes) {
    Rng rng(derive_seed(c.seed, "init"));
    factor = nn::patch_factor(T, c.max_tokens);
    tokens = T / factor;
    if (family == Family::Attention) {
      const int d = c.attention.latent_dim;
      in = nn::Linear(ps, "in", C, d, rng);
      for (int i = 0; i < c.attention.encoder_layers; ++i) layers.emplace_back(ps, "enc" + std::to_string(i), d, rng);
      head = nn::Linear(ps, "head", d, classes, rng, 0.01);
      pe = nn::sinusoidal_encoding(tokens, d);
    } else {
      const auto& p = c.conv_recurrent;
      conv = nn::Conv1d(ps, "conv", C, p.conv_channels, p.conv_kernel, rng);
      for (int i = 0; i < p.recurrent_layers; ++i)
        lstm.emplace_back(ps, "lstm" + std::to_string(i), i == 0 ? p.conv_channels : p.hidden_dim, p.hidden_dim, rng);
      head = nn::Linear(ps, "head", p.hidden_dim, classes, rng, 0.01);
    }
  }

  // x: (B*T) x C standardised
  Var forward(Tape& t, const Mat& x) const {
    const Eigen::Index b = x.rows() / T;
    if (family == Family::Attention) {
      Mat pooled(b * tokens, C);
      for (Eigen::Index i = 0; i < b * tokens; ++i) pooled.row(i) = x.middleRows(i * factor, factor).colwise().mean();
      Mat pos(b * tokens, pe.cols());
      for (Eigen::Index i = 0; i < b; ++i) pos.middleRows(i * tokens, tokens) = pe;
      Var h = nn::add(in(t, t.constant(std::move(pooled))), t.constant(std::move(pos)));
      for (const auto& l : layers) h = l(t, h, tokens);
      return head(t, nn::mean_blocks(h, tokens));
    }
    Var h = nn::avg_pool_rows(nn::relu(conv(t, t.constant(x), T)), factor);
    for (const auto& l : lstm) h = l(t, h, tokens);
    std::vector<Eigen::Index> last(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) last[static_cast<std::size_t>(i)] = i * tokens + tokens - 1;
    return head(t, nn::select_rows(h, last));
  }
};

Mat stack_batch(const TrainedClassifier& m, const std::vector<Matrix>& x, const std::vector<std::size_t>& rows) {
  const Eigen::Index T = m.manifest.steps;
  const Eigen::Index C = static_cast<Eigen::Index>(m.manifest.channels.size());
  Mat out(static_cast<Eigen::Index>(rows.size()) * T, C);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Matrix& s = x[rows[i]];
    out.middleRows(static_cast<Eigen::Index>(i) * T, T) =
        ((s.colwise() - m.channel_mean).array().colwise() / m.channel_std.array()).matrix().transpose();
  }
  return out;
}

void train_neural(TrainedClassifier& m, const std::vector<Matrix>& x, const std::vector<int>& y, std::ostream* log) {
  ClfNet net(m.config, static_cast<Eigen::Index>(m.manifest.channels.size()), m.manifest.steps, m.n_classes, m.params);
  nn::Adam opt;
  opt.lr = m.config.learning_rate;
  Rng rng(derive_seed(m.config.seed, "train"));
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(m.config.batch_size), x.size());
  for (int epoch = 1; epoch <= m.config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(start + len));
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(y[r]);
      m.params.zero_grad();
      Tape t(&m.params);
      Var loss = nn::cross_entropy(net.forward(t, stack_batch(m, x, rows)), labels);
      if (!std::isfinite(loss.scalar())) throw TrainingError(epoch, "non-finite classifier loss");
      t.backward(loss);
      opt.step(m.params);
      total += loss.scalar() * static_cast<double>(len);
    }
    m.training_log.push_back(total / static_cast<double>(x.size()));
    if (log) *log << epoch << ',' << m.training_log.back() << '\n';
  }
}

void check_inputs(const TrainedClassifier& m, const std::vector<Matrix>& x) {
  for (const auto& s : x) {
    if (s.rows() != static_cast<Eigen::Index>(m.manifest.channels.size()) || s.cols() != m.manifest.steps)
      throw ShapeError("input is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) + ", model expects " +
                       std::to_string(m.manifest.channels.size()) + "x" + std::to_string(m.manifest.steps));
  }
}

}  // namespace

// ---------------------------------------------------------------- train / predict

TrainedClassifier train_classifier(const ClassifierConfig& cfg, const std::vector<Matrix>& x, const std::vector<int>& y,
                                   int n_classes, const InputManifest& manifest, std::ostream* log) {
  cfg.validate();
  if (x.empty()) throw DegenerateError("empty training set");
  if (x.size() != y.size()) throw ArityError("sample and label counts differ");
  if (n_classes < 2) throw DegenerateError("need at least 2 classes");
  std::vector<int> seen;
  for (int label : y) {
    if (label < 0 || label >= n_classes) throw DataError("label " + std::to_string(label) + " out of range");
    if (std::find(seen.begin(), seen.end(), label) == seen.end()) seen.push_back(label);
  }
  if (seen.size() < 2) throw DegenerateError("training set has a single label");

  TrainedClassifier m;
  m.config = cfg;
  m.manifest = manifest;
  m.n_classes = n_classes;
  check_inputs(m, x);

  const Eigen::Index C = static_cast<Eigen::Index>(manifest.channels.size());
  m.channel_mean = Vector::Zero(C);
  Vector sq = Vector::Zero(C);
  double count = 0;
  for (const auto& s : x) {
    m.channel_mean += s.rowwise().sum();
    sq += s.array().square().matrix().rowwise().sum();
    count += static_cast<double>(s.cols());
  }
  m.channel_mean /= count;
  m.channel_std = (sq / count - m.channel_mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index c = 0; c < C; ++c)
    if (!(m.channel_std(c) > 1e-8)) m.channel_std(c) = 1.0;

  if (cfg.family == Family::Gbdt)
    train_gbdt(m, x, y, log);
  else
    train_neural(m, x, y, log);
  return m;
}

Matrix predict_logits(const TrainedClassifier& m, const std::vector<Matrix>& x) {
  check_inputs(m, x);
  if (x.empty()) return Matrix(0, m.n_classes);
  if (m.config.family == Family::Gbdt) return gbdt_logits(m, standardised_features(m, x));
  nn::ParamSet scratch;
  ClfNet net(m.config, static_cast<Eigen::Index>(m.manifest.channels.size()), m.manifest.steps, m.n_classes, scratch);
  Matrix out(static_cast<Eigen::Index>(x.size()), m.n_classes);
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < x.size(); start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(x.size(), start + chunk); ++i) rows.push_back(i);
    Tape t(&const_cast<nn::ParamSet&>(m.params));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(rows.size())) =
        net.forward(t, stack_batch(m, x, rows)).value();
  }
  return out;
}

std::vector<Prediction> predict_batch(const TrainedClassifier& m, const std::vector<Matrix>& x, double temperature) {
  if (!(temperature > 0)) throw ConfigError("temperature", "must be > 0");
  Mat scores = predict_logits(m, x) / temperature;
  softmax_rows(scores);
  std::vector<Prediction> out;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    Prediction p;
    Eigen::Index arg = 0;
    scores.row(r).maxCoeff(&arg);
    p.label = static_cast<int>(arg);
    p.scores.resize(static_cast<std::size_t>(scores.cols()));
    for (Eigen::Index c = 0; c < scores.cols(); ++c) p.scores[static_cast<std::size_t>(c)] = scores(r, c);
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

InputManifest manifest_of(const std::vector<features::FeatureTensor>& xs) {
  if (xs.empty()) throw DegenerateError("empty training set");
  InputManifest m{xs.front().manifest, xs.front().steps()};
  for (const auto& x : xs)
    if (x.manifest != m.channels || x.steps() != m.steps)
      throw ShapeError("feature tensors differ in channel layout or length");
  return m;
}

void check_manifest(const TrainedClassifier& m, const features::FeatureTensor& x) {
  if (x.manifest != m.manifest.channels || x.steps() != m.manifest.steps) {
    std::string got, want;
    for (const auto& c : x.manifest) got += c + " ";
    for (const auto& c : m.manifest.channels) want += c + " ";
    throw ShapeError("input manifest [" + got + "] T=" + std::to_string(x.steps()) + " does not match model [" + want +
                     "] T=" + std::to_string(m.manifest.steps));
  }
}

}  // namespace

TrainedClassifier train_classifier(const ClassifierConfig& cfg, const std::vector<features::FeatureTensor>& train,
                                   std::ostream* log) {
  const InputManifest manifest = manifest_of(train);
  std::vector<Matrix> x;
  std::vector<int> y;
  for (const auto& f : train) {
    x.push_back(f.values);
    y.push_back(to_index(f.label));
  }
  return train_classifier(cfg, x, y, kNumMovements, manifest, log);
}

std::vector<Prediction> predict(const TrainedClassifier& m, const std::vector<features::FeatureTensor>& xs,
                                double temperature) {
  std::vector<Matrix> x;
  for (const auto& f : xs) {
    check_manifest(m, f);
    x.push_back(f.values);
  }
  return predict_batch(m, x, temperature);
}

Prediction predict(const TrainedClassifier& m, const features::FeatureTensor& x, double temperature) {
  return predict(m, std::vector<features::FeatureTensor>{x}, temperature).front();
}

// ---------------------------------------------------------------- persistence

std::size_t TrainedClassifier::parameter_count() const {
  if (config.family != Family::Gbdt) return params.count();
  std::size_t n = static_cast<std::size_t>(base_score.size());
  for (const auto& r : rounds)
    for (const auto& t : r) n += t.value.size();
  return n;
}

nlohmann::json TrainedClassifier::to_json() const {
  nlohmann::json j = {{"format", "mtaim-classifier"},
                      {"version", version},
                      {"config", config.to_json()},
                      {"manifest", {{"channels", manifest.channels}, {"steps", manifest.steps}}},
                      {"n_classes", n_classes},
                      {"channel_mean", std::vector<double>(channel_mean.data(), channel_mean.data() + channel_mean.size())},
                      {"channel_std", std::vector<double>(channel_std.data(), channel_std.data() + channel_std.size())},
                      {"training_log", training_log}};
  if (config.family == Family::Gbdt) {
    j["base_score"] = std::vector<double>(base_score.data(), base_score.data() + base_score.size());
    auto rs = nlohmann::json::array();
    for (const auto& r : rounds) {
      auto ts = nlohmann::json::array();
      for (const auto& t : r)
        ts.push_back({{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left}, {"right", t.right},
                      {"value", t.value}});
      rs.push_back(ts);
    }
    j["rounds"] = rs;
  } else {
    j["parameters"] = params.to_json();
  }
  return j;
}

TrainedClassifier TrainedClassifier::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mtaim-classifier") throw DataError("not a classifier artifact");
  TrainedClassifier m;
  m.version = j.at("version");
  if (m.version != kSchemaVersion) throw DataError("unsupported classifier artifact version " + std::to_string(m.version));
  m.config = ClassifierConfig::from_json(j.at("config"));
  m.manifest.channels = j.at("manifest").at("channels").get<std::vector<std::string>>();
  m.manifest.steps = j.at("manifest").at("steps");
  m.n_classes = j.at("n_classes");
  const auto mean = j.at("channel_mean").get<std::vector<double>>();
  const auto sd = j.at("channel_std").get<std::vector<double>>();
  m.channel_mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.channel_std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  m.training_log = j.at("training_log").get<std::vector<double>>();
  if (m.config.family == Family::Gbdt) {
    const auto base = j.at("base_score").get<std::vector<double>>();
    m.base_score = Eigen::Map<const Vector>(base.data(), static_cast<Eigen::Index>(base.size()));
    for (const auto& r : j.at("rounds")) {
      std::vector<Tree> ts;
      for (const auto& t : r)
        ts.push_back({t.at("feature"), t.at("threshold"), t.at("left"), t.at("right"), t.at("value")});
      m.rounds.push_back(std::move(ts));
    }
  } else {
    ClfNet net(m.config, static_cast<Eigen::Index>(m.manifest.channels.size()), m.manifest.steps, m.n_classes, m.params);
    m.params.load_json(j.at("parameters"));
  }
  return m;
}

void TrainedClassifier::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

TrainedClassifier TrainedClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- grid search

std::vector<int> stratified_folds(const std::vector<int>& y, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds", "must be >= 2");
  std::vector<int> out(y.size(), 0);
  std::vector<int> labels = y;
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  Rng rng(derive_seed(seed, "folds"));
  int offset = 0;
  for (int label : labels) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    // continue the round-robin across labels so fold sizes stay within one of each other
    for (std::size_t k = 0; k < members.size(); ++k) out[members[k]] = (offset + static_cast<int>(k)) % folds;
    offset = (offset + static_cast<int>(members.size())) % folds;
  }
  return out;
}

GridResult grid_search(const std::vector<ClassifierConfig>& grid, const std::vector<features::FeatureTensor>& data,
                       int folds, std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("grid", "grid has no cells");
  std::vector<int> y;
  for (const auto& f : data) y.push_back(to_index(f.label));
  const auto fold_of = stratified_folds(y, folds, seed);

  GridResult r;
  for (const auto& cfg : grid) {
    GridCell cell;
    cell.config = cfg;
    for (int k = 0; k < folds; ++k) {
      std::vector<features::FeatureTensor> train, test;
      for (std::size_t i = 0; i < data.size(); ++i) (fold_of[i] == k ? test : train).push_back(data[i]);
      if (test.empty()) continue;
      const auto model = train_classifier(cfg, train);
      cell.parameters = model.parameter_count();
      const auto preds = predict(model, test);
      std::size_t hit = 0;
      for (std::size_t i = 0; i < test.size(); ++i) hit += preds[i].label == to_index(test[i].label);
      cell.fold_accuracy.push_back(static_cast<double>(hit) / static_cast<double>(test.size()));
    }
    const double n = static_cast<double>(cell.fold_accuracy.size());
    cell.mean = std::accumulate(cell.fold_accuracy.begin(), cell.fold_accuracy.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : cell.fold_accuracy) ss += (a - cell.mean) * (a - cell.mean);
    cell.std = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    r.cells.push_back(std::move(cell));
  }
  const auto better = [](const GridCell& a, const GridCell& b) {
    if (a.mean != b.mean) return a.mean > b.mean;
    if (a.parameters != b.parameters) return a.parameters < b.parameters;
    return a.config.describe() < b.config.describe();
  };
  r.best = std::min_element(r.cells.begin(), r.cells.end(), better)->config;
  return r;
}

void write_grid_table(std::ostream& out, const GridResult& r) {
  out << "config,parameters,mean,std\n";
  for (const auto& c : r.cells) out << c.config.describe() << ',' << c.parameters << ',' << c.mean << ',' << c.std << '\n';
}

std::vector<ClassifierConfig> attention_grid(const ClassifierConfig& base) {
  std::vector<ClassifierConfig> grid;
  for (int depth = 2; depth <= 5; ++depth)
    for (int width : {6, 12, 24}) {
      ClassifierConfig c = base;
      c.family = Family::Attention;
      c.attention.encoder_layers = depth;
      c.attention.latent_dim = width;
      grid.push_back(c);
    }
  return grid;
}

}  // namespace mtaim::clf
