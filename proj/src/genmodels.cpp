#include "mtaim/genmodels.hpp"

#include "mtaim/errors.hpp"
#include "mtaim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtaim::gen {

using nn::Mat;
using nn::Tape;
using nn::Var;

// ---------------------------------------------------------------- names

std::string_view to_string(Family f) noexcept {
  switch (f) {
    case Family::Cvae: return "cvae";
    case Family::Diffusion: return "diffusion";
    case Family::Gan: return "gan";
  }
  return "?";
}

std::string_view to_string(ConditioningMode m) noexcept {
  return m == ConditioningMode::MovementLabel ? "movement_label" : "mt_sequence";
}

Family parse_family(std::string_view s) {
  if (s == "cvae") return Family::Cvae;
  if (s == "diffusion") return Family::Diffusion;
  if (s == "gan") return Family::Gan;
  throw ConfigError("family", "unknown generator family '" + std::string(s) + "'");
}

ConditioningMode parse_mode(std::string_view s) {
  if (s == "movement_label") return ConditioningMode::MovementLabel;
  if (s == "mt_sequence") return ConditioningMode::MtSequence;
  throw ConfigError("conditioning_mode", "unknown mode '" + std::string(s) + "'");
}

namespace {

NoiseSchedule parse_schedule(std::string_view s) {
  if (s == "cosine") return NoiseSchedule::Cosine;
  if (s == "zero") return NoiseSchedule::Zero;
  throw ConfigError("schedule", "unknown noise schedule '" + std::string(s) + "'");
}

std::string_view schedule_name(NoiseSchedule s) { return s == NoiseSchedule::Cosine ? "cosine" : "zero"; }

}  // namespace

// ---------------------------------------------------------------- config

GeneratorConfig GeneratorConfig::defaults_for(Family f, ConditioningMode m) {
  GeneratorConfig c;
  c.family = f;
  c.mode = m;
  switch (f) {
    case Family::Cvae:
      c.decoder_layers = 4;
      c.hidden_dim = 12;
      c.latent_dim = 12;
      c.epochs = m == ConditioningMode::MtSequence ? 1000 : 300;
      c.learning_rate = 3e-3;
      break;
    case Family::Diffusion:
      c.decoder_layers = 12;
      c.hidden_dim = 64;
      c.latent_dim = 64;
      c.sampling_steps = 500;
      c.epochs = 400;
      c.learning_rate = 1e-3;
      break;
    case Family::Gan:
      c.hidden_dim = 12;
      c.latent_dim = 12;
      c.embedding_layers = 3;
      c.generator_advantage = 2;
      c.epochs = 300;
      c.batch_size = 4;
      c.learning_rate = 5e-3;
      break;
  }
  return c;
}

GeneratorConfig GeneratorConfig::from_config(const Config& cfg, const std::string& section) {
  const auto key = [&](const char* k) { return section + "." + k; };
  GeneratorConfig c = defaults_for(parse_family(cfg.get_string(key("family"), "cvae")),
                                   parse_mode(cfg.get_string(key("conditioning_mode"), "movement_label")));
  c.decoder_layers = cfg.get_int(key("decoder_layers"), c.decoder_layers);
  c.hidden_dim = cfg.get_int(key("hidden_dim"), c.hidden_dim);
  c.latent_dim = cfg.get_int(key("latent_dim"), c.latent_dim);
  c.sampling_steps = cfg.get_int(key("sampling_steps"), c.sampling_steps);
  c.fast_sampling_steps = cfg.get_int(key("fast_sampling_steps"), c.fast_sampling_steps);
  c.schedule = parse_schedule(cfg.get_string(key("schedule"), std::string(schedule_name(c.schedule))));
  c.embedding_layers = cfg.get_int(key("embedding_layers"), c.embedding_layers);
  c.generator_advantage = cfg.get_int(key("generator_advantage"), c.generator_advantage);
  c.kl_weight = cfg.get_double(key("kl_weight"), c.kl_weight);
  c.basis_functions = cfg.get_int(key("basis_functions"), c.basis_functions);
  c.max_tokens = cfg.get_int(key("max_tokens"), c.max_tokens);
  c.residual_noise = cfg.get_bool(key("residual_noise"), c.residual_noise);
  c.epochs = cfg.get_int(key("epochs"), c.epochs);
  c.batch_size = cfg.get_int(key("batch_size"), c.batch_size);
  c.learning_rate = cfg.get_double(key("learning_rate"), c.learning_rate);
  c.seed = std::stoull(cfg.get_string(key("seed"), std::to_string(c.seed)));
  c.validate();
  return c;
}

void GeneratorConfig::validate() const {
  if (decoder_layers < 1) throw ConfigError("decoder_layers", "must be >= 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim", "must be >= 1");
  if (latent_dim < 1) throw ConfigError("latent_dim", "must be >= 1");
  if (family == Family::Diffusion && sampling_steps < 1) throw ConfigError("sampling_steps", "must be >= 1");
  if (fast_sampling_steps < 0) throw ConfigError("fast_sampling_steps", "must be >= 0");
  if (family == Family::Gan && embedding_layers < 1) throw ConfigError("embedding_layers", "must be >= 1");
  if (family == Family::Gan && generator_advantage < 1) throw ConfigError("generator_advantage", "must be >= 1");
  if (!(kl_weight >= 0)) throw ConfigError("kl_weight", "must be >= 0");
  if (basis_functions < 1) throw ConfigError("basis_functions", "must be >= 1");
  if (max_tokens < 1) throw ConfigError("max_tokens", "must be >= 1");
  if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate", "must be > 0");
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"family", to_string(family)},
          {"conditioning_mode", to_string(mode)},
          {"decoder_layers", decoder_layers},
          {"hidden_dim", hidden_dim},
          {"latent_dim", latent_dim},
          {"sampling_steps", sampling_steps},
          {"fast_sampling_steps", fast_sampling_steps},
          {"schedule", schedule_name(schedule)},
          {"embedding_layers", embedding_layers},
          {"generator_advantage", generator_advantage},
          {"kl_weight", kl_weight},
          {"basis_functions", basis_functions},
          {"max_tokens", max_tokens},
          {"residual_noise", residual_noise},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.mode = parse_mode(j.at("conditioning_mode").get<std::string>());
  c.decoder_layers = j.at("decoder_layers");
  c.hidden_dim = j.at("hidden_dim");
  c.latent_dim = j.at("latent_dim");
  c.sampling_steps = j.at("sampling_steps");
  c.fast_sampling_steps = j.at("fast_sampling_steps");
  c.schedule = parse_schedule(j.at("schedule").get<std::string>());
  c.embedding_layers = j.at("embedding_layers");
  c.generator_advantage = j.at("generator_advantage");
  c.kl_weight = j.at("kl_weight");
  c.basis_functions = j.at("basis_functions");
  c.max_tokens = j.at("max_tokens");
  c.residual_noise = j.value("residual_noise", true);
  c.epochs = j.at("epochs");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.seed = j.at("seed");
  c.validate();
  return c;
}

// ---------------------------------------------------------------- network

namespace {

constexpr Eigen::Index kC = kNumChannels;

struct Cond {
  std::vector<int> labels;  // movement_label mode
  Mat tokens;               // mt_sequence mode: (B*N) x 6 pooled strain
};

// Every parameter tensor of one artifact, rebuilt deterministically from the config.
struct Net {
  GeneratorConfig cfg;
  Eigen::Index T = 0, K = 0, D = 0, H = 0, L = 0, factor = 1, tokens = 1;
  nn::TemporalBasis basis;

  nn::Linear label_h, label_l;
  nn::Linear tok_in, tok_flat, cond_h, cond_l;
  nn::AttentionEncoderLayer tok_enc;

  // cvae
  nn::Linear enc_in, enc_hidden, enc_mu, enc_lv, dec_in, dec_out;
  std::vector<nn::Linear> dec;

  // diffusion
  nn::Linear x_in, t_in, out, skip;
  std::vector<nn::LayerNorm> blk_ln;
  std::vector<nn::Linear> blk_a, blk_b;
  nn::LayerNorm out_ln;
  Mat time_table;
  std::vector<double> alpha_bar;

  // gan
  std::vector<nn::LstmLayer> emb, rec, gnr, sup, dis;
  nn::Linear emb_out, rec_out, gen_in, gen_out, sup_out, dis_out, dis_cond;
  std::vector<int> group_er, group_s, group_g, group_d;

  Net(const GeneratorConfig& c, int steps, nn::ParamSet& ps) : cfg(c) {
    Rng rng(derive_seed(c.seed, "init"));
    T = steps;
    basis = nn::TemporalBasis(T, c.basis_functions);
    K = basis.functions();
    D = kC * K;
    H = c.hidden_dim;
    L = c.latent_dim;
    factor = nn::patch_factor(T, c.max_tokens);
    tokens = T / factor;

    const auto mark = [&ps] { return ps.size(); };
    const auto range = [](int from, int to) {
      std::vector<int> v(static_cast<std::size_t>(to - from));
      std::iota(v.begin(), v.end(), from);
      return v;
    };

    const int cond_begin = mark();
    if (c.mode == ConditioningMode::MovementLabel) {
      label_h = nn::Linear(ps, "cond.label_h", kNumMovements, H, rng);
      label_l = nn::Linear(ps, "cond.label_l", kNumMovements, L, rng);
    } else {
      tok_in = nn::Linear(ps, "cond.tok_in", kC, H, rng);
      tok_enc = nn::AttentionEncoderLayer(ps, "cond.enc", H, rng);
      tok_flat = nn::Linear(ps, "cond.flat", tokens * H, H, rng);
      cond_h = nn::Linear(ps, "cond.proj_h", H, H, rng);
      cond_l = nn::Linear(ps, "cond.proj_l", H, L, rng);
    }
    const int cond_end = mark();

    switch (c.family) {
      case Family::Cvae:
        enc_in = nn::Linear(ps, "enc.in", D, H, rng);
        enc_hidden = nn::Linear(ps, "enc.hidden", H, H, rng);
        enc_mu = nn::Linear(ps, "enc.mu", H, L, rng);
        enc_lv = nn::Linear(ps, "enc.logvar", H, L, rng, 0.1);
        dec_in = nn::Linear(ps, "dec.in", L, H, rng);
        for (int i = 1; i < c.decoder_layers; ++i) dec.emplace_back(ps, "dec.h" + std::to_string(i), H, H, rng);
        dec_out = nn::Linear(ps, "dec.out", H, D, rng);
        break;
      case Family::Diffusion: {
        x_in = nn::Linear(ps, "den.x_in", D, H, rng);
        t_in = nn::Linear(ps, "den.t_in", H, H, rng);
        for (int i = 0; i < c.decoder_layers; ++i) {
          const auto n = "den.block" + std::to_string(i);
          blk_ln.emplace_back(ps, n + ".ln", H);
          blk_a.emplace_back(ps, n + ".a", H, H, rng);
          blk_b.emplace_back(ps, n + ".b", H, H, rng, 0.5);
        }
        out_ln = nn::LayerNorm(ps, "den.out_ln", H);
        out = nn::Linear(ps, "den.out", H, D, rng);
        skip = nn::Linear(ps, "den.skip", H, D, rng, 0.01);
        time_table = nn::sinusoidal_encoding(c.sampling_steps + 1, H);
        alpha_bar = alpha_bar_schedule(c.schedule, c.sampling_steps);
        break;
      }
      case Family::Gan: {
        const auto stack = [&](std::vector<nn::LstmLayer>& v, const std::string& n, Eigen::Index in, int layers) {
          for (int i = 0; i < layers; ++i) v.emplace_back(ps, n + ".lstm" + std::to_string(i), i == 0 ? in : H, H, rng);
        };
        const int layers = c.embedding_layers;
        const int er_begin = mark();
        stack(emb, "emb", kC, layers);
        emb_out = nn::Linear(ps, "emb.out", H, H, rng);
        stack(rec, "rec", H, layers);
        rec_out = nn::Linear(ps, "rec.out", H, kC, rng);
        const int s_begin = mark();
        stack(sup, "sup", H, std::max(1, layers - 1));
        sup_out = nn::Linear(ps, "sup.out", H, H, rng);
        const int g_begin = mark();
        gen_in = nn::Linear(ps, "gen.in", L, H, rng);
        stack(gnr, "gen", H, layers);
        gen_out = nn::Linear(ps, "gen.out", H, H, rng);
        const int d_begin = mark();
        dis_cond = nn::Linear(ps, "dis.cond", c.mode == ConditioningMode::MovementLabel ? kNumMovements : H, H, rng);
        stack(dis, "dis", H, layers);
        dis_out = nn::Linear(ps, "dis.out", H, 1, rng);
        const int d_end = mark();
        group_er = range(er_begin, s_begin);
        group_s = range(s_begin, g_begin);
        group_g = range(g_begin, d_begin);
        auto cg = range(cond_begin, cond_end);
        group_g.insert(group_g.end(), cg.begin(), cg.end());
        group_d = range(d_begin, d_end);
        break;
      }
    }
  }

  // ---- conditioning: B x H summary and B x L latent offset
  Var summary(Tape& t, const Cond& c) const {
    if (cfg.mode == ConditioningMode::MovementLabel) {
      Mat onehot = Mat::Zero(static_cast<Eigen::Index>(c.labels.size()), kNumMovements);
      for (std::size_t i = 0; i < c.labels.size(); ++i) onehot(static_cast<Eigen::Index>(i), c.labels[i]) = 1.0;
      return t.constant(std::move(onehot));
    }
    // No positional encoding: the fully connected projection over all token positions
    // already sees the temporal layout, and an added encoding swamps the small pooled
    // strain values after the layer norms (training then stalls at the mean output).
    Var x = tok_in(t, t.constant(c.tokens));
    return tok_flat(t, nn::flatten_blocks(tok_enc(t, x, tokens), tokens));
  }
  Var cond_hidden(Tape& t, Var s) const {
    return cfg.mode == ConditioningMode::MovementLabel ? label_h(t, s) : cond_h(t, s);
  }
  Var cond_latent(Tape& t, Var s) const {
    return cfg.mode == ConditioningMode::MovementLabel ? label_l(t, s) : cond_l(t, s);
  }

  // ---- cvae
  std::pair<Var, Var> encode(Tape& t, const Mat& x, Var ch) const {
    Var h = nn::tanh(nn::add(enc_in(t, t.constant(x)), ch));
    h = nn::tanh(enc_hidden(t, h));
    return {enc_mu(t, h), enc_lv(t, h)};
  }
  Var decode(Tape& t, Var z, Var cl) const {
    Var d = nn::tanh(dec_in(t, nn::add(z, cl)));
    for (const auto& l : dec) d = nn::tanh(l(t, d));
    return dec_out(t, d);
  }
  Var cvae_loss(Tape& t, const Mat& x, const Cond& c, const Mat& eps) const {
    Var s = summary(t, c);
    auto [mu, lv] = encode(t, x, cond_hidden(t, s));
    Var z = nn::add(mu, nn::mul(nn::exp(nn::scale(lv, 0.5)), t.constant(eps)));
    Var xr = decode(t, z, cond_latent(t, s));
    return nn::add(nn::mse(xr, x), nn::scale(nn::kl_standard_normal(mu, lv), cfg.kl_weight));
  }

  // ---- diffusion
  Var denoise(Tape& t, const Mat& xt, const std::vector<int>& steps, const Cond& c) const {
    Mat temb(xt.rows(), H);
    for (Eigen::Index i = 0; i < xt.rows(); ++i) temb.row(i) = time_table.row(steps[static_cast<std::size_t>(i)]);
    Var x = t.constant(xt);
    Var te = t.constant(std::move(temb));
    Var h = nn::add(x_in(t, x), t_in(t, te));
    h = nn::add(h, cond_hidden(t, summary(t, c)));
    for (std::size_t l = 0; l < blk_a.size(); ++l) h = nn::add(h, blk_b[l](t, nn::relu(blk_a[l](t, blk_ln[l](t, h)))));
    // time-dependent elementwise skip: the hidden width is narrower than the coefficient vector
    return nn::add(out(t, out_ln(t, h)), nn::mul(skip(t, te), x));
  }

  // ---- gan
  Var run_stack(Tape& t, const std::vector<nn::LstmLayer>& layers, Var x) const {
    for (const auto& l : layers) x = l(t, x, K);
    return x;
  }
  Var embed(Tape& t, Var xs) const { return nn::sigmoid(emb_out(t, run_stack(t, emb, xs))); }
  Var recover(Tape& t, Var h) const { return rec_out(t, run_stack(t, rec, h)); }
  Var supervise(Tape& t, Var h) const { return nn::sigmoid(sup_out(t, run_stack(t, sup, h))); }
  Var generate(Tape& t, const Mat& z, Var ch) const {
    Var x = nn::add(gen_in(t, t.constant(z)), nn::repeat_blocks(ch, K));
    return nn::sigmoid(gen_out(t, run_stack(t, gnr, x)));
  }
  Var discriminate(Tape& t, Var h, const Mat& summary_value) const {
    Var c = dis_cond(t, t.constant(summary_value));
    return dis_out(t, run_stack(t, dis, nn::add(h, nn::repeat_blocks(c, K))));
  }
  // Mean squared one-step-ahead error of the supervisor on embeddings h.
  Var supervised_loss(Tape& t, Var h) const {
    const Eigen::Index b = h.rows() / K;
    if (K < 2) return t.constant(Mat::Zero(1, 1));
    std::vector<Eigen::Index> cur, next;
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index k = 0; k + 1 < K; ++k) {
        cur.push_back(i * K + k);
        next.push_back(i * K + k + 1);
      }
    Var pred = nn::select_rows(supervise(t, h), cur);
    Var target = nn::select_rows(h, next);
    return nn::mean(nn::square(nn::sub(pred, target)));
  }

  // ---- layout helpers
  // B x (6K) channel-major rows <-> (B*K) x 6 sequences
  Mat to_sequence(const Mat& x) const {
    Mat s(x.rows() * K, kC);
    for (Eigen::Index b = 0; b < x.rows(); ++b)
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index c = 0; c < kC; ++c) s(b * K + k, c) = x(b, c * K + k);
    return s;
  }
  Mat from_sequence(const Mat& s) const {
    const Eigen::Index b = s.rows() / K;
    Mat x(b, D);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index c = 0; c < kC; ++c) x(i, c * K + k) = s(i * K + k, c);
    return x;
  }
};

Mat flatten_coefficients(const Mat& coefs) {  // 6 x K -> 1 x 6K channel-major
  Mat row(1, coefs.size());
  for (Eigen::Index c = 0; c < coefs.rows(); ++c) row.block(0, c * coefs.cols(), 1, coefs.cols()) = coefs.row(c);
  return row;
}

Mat pool_tokens(const Matrix& values, Eigen::Index factor) {  // 6 x T -> N x 6
  const Eigen::Index n = values.cols() / factor;
  Mat tok(n, values.rows());
  for (Eigen::Index i = 0; i < n; ++i) tok.row(i) = values.middleCols(i * factor, factor).rowwise().mean().transpose();
  return tok;
}

struct Encoded {
  Mat x;  // n x 6K standardised targets
  Cond cond;
};

Encoded encode_dataset(const Net& net, const Dataset& d, double scale) {
  Encoded e;
  const auto n = static_cast<Eigen::Index>(d.size());
  e.x.resize(n, net.D);
  const bool seq = net.cfg.mode == ConditioningMode::MtSequence;
  if (seq) e.cond.tokens.resize(n * net.tokens, kC);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = d.samples[static_cast<std::size_t>(i)];
    if (s.steps() != net.T)
      throw ShapeError("sample " + sample_id(s) + " has " + std::to_string(s.steps()) + " steps, model expects " +
                       std::to_string(net.T));
    if (seq) {
      if (!d.has_kinematics() || !d.kinematics[static_cast<std::size_t>(i)])
        throw DataError("sample " + sample_id(s) + " has no paired kinematics (required in mt_sequence mode)");
      e.x.row(i) = flatten_coefficients(net.basis.project(d.kinematics[static_cast<std::size_t>(i)]->values)) / scale;
      e.cond.tokens.middleRows(i * net.tokens, net.tokens) = pool_tokens(s.values, net.factor);
    } else {
      e.x.row(i) = flatten_coefficients(net.basis.project(s.values)) / scale;
      e.cond.labels.push_back(to_index(s.label));
    }
  }
  return e;
}

Cond select_cond(const Net& net, const Cond& c, const std::vector<Eigen::Index>& rows) {
  Cond out;
  if (!c.labels.empty())
    for (auto r : rows) out.labels.push_back(c.labels[static_cast<std::size_t>(r)]);
  if (c.tokens.size() > 0) {
    out.tokens.resize(static_cast<Eigen::Index>(rows.size()) * net.tokens, kC);
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.tokens.middleRows(static_cast<Eigen::Index>(i) * net.tokens, net.tokens) =
          c.tokens.middleRows(rows[i] * net.tokens, net.tokens);
  }
  return out;
}

Mat select(const Mat& m, const std::vector<Eigen::Index>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

std::string fingerprint(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto id = sample_id(d.samples[i]);
    feed(id.data(), id.size());
    const auto& v = d.samples[i].values;
    feed(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
    if (d.has_kinematics() && d.kinematics[i]) {
      const auto& k = d.kinematics[i]->values;
      feed(k.data(), static_cast<std::size_t>(k.size()) * sizeof(double));
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

int dataset_steps(const Dataset& d) {
  if (d.empty()) throw DataError("training set is empty");
  const int t = d.samples.front().steps();
  for (const auto& s : d.samples)
    if (s.steps() != t) throw ShapeError("training samples differ in length");
  return t;
}

// ---- one optimisation step per family; returns the batch loss

struct Trainer {
  const Net& net;
  nn::ParamSet& ps;
  nn::Adam opt, opt_er, opt_s, opt_g, opt_d;
  Rng rng;

  Trainer(const Net& n, nn::ParamSet& p, const GeneratorConfig& c)
      : net(n), ps(p), rng(derive_seed(c.seed, "train")) {
    for (auto* o : {&opt, &opt_er, &opt_s, &opt_g, &opt_d}) o->lr = c.learning_rate;
  }

  double cvae_step(const Mat& x, const Cond& c) {
    ps.zero_grad();
    Tape t(&ps);
    Var loss = net.cvae_loss(t, x, c, gaussian(x.rows(), net.L, rng));
    t.backward(loss);
    opt.step(ps);
    return loss.scalar();
  }

  double diffusion_step(const Mat& x0, const Cond& c) {
    std::uniform_int_distribution<int> pick(1, net.cfg.sampling_steps);
    std::vector<int> steps(static_cast<std::size_t>(x0.rows()));
    for (auto& s : steps) s = pick(rng);
    Mat eps = gaussian(x0.rows(), x0.cols(), rng);
    Mat xt(x0.rows(), x0.cols());
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
      const double ab = net.alpha_bar[static_cast<std::size_t>(steps[static_cast<std::size_t>(i)])];
      xt.row(i) = std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
    }
    ps.zero_grad();
    Tape t(&ps);
    Var loss = nn::mse(net.denoise(t, xt, steps, c), eps);
    t.backward(loss);
    opt.step(ps);
    return loss.scalar();
  }

  // phase 0: embedder/recovery, 1: supervisor, 2: joint adversarial
  double gan_step(const Mat& x, const Cond& c, int phase) {
    const Mat xs = net.to_sequence(x);
    const Eigen::Index b = x.rows();
    double logged = 0.0;
    {
      ps.zero_grad();
      Tape t(&ps);
      Var h = net.embed(t, t.constant(xs));
      Var rec = nn::mse(net.recover(t, h), xs);
      Var sup = net.supervised_loss(t, h);
      logged = rec.scalar() + sup.scalar();
      if (phase == 0) {
        t.backward(rec);
        opt_er.step(ps, net.group_er);
      } else if (phase == 1) {
        t.backward(sup);
        opt_s.step(ps, net.group_s);
      } else {
        t.backward(nn::add(rec, nn::scale(sup, 0.1)));
        opt_er.step(ps, net.group_er);
      }
    }
    if (phase < 2) return logged;

    for (int g = 0; g < net.cfg.generator_advantage; ++g) {
      ps.zero_grad();
      Tape t(&ps);
      Var s = net.summary(t, c);
      Var e_hat = net.generate(t, gaussian(b * net.K, net.L, rng), net.cond_hidden(t, s));
      Var h_hat = net.supervise(t, e_hat);
      Var adv = nn::mean(nn::softplus(nn::scale(net.discriminate(t, h_hat, s.value()), -1.0)));
      Var h_real = net.embed(t, t.constant(xs));
      Var loss = nn::add(adv, nn::scale(net.supervised_loss(t, h_real), 10.0));
      t.backward(loss);
      std::vector<int> gs = net.group_g;
      gs.insert(gs.end(), net.group_s.begin(), net.group_s.end());
      opt_g.step(ps, gs);
    }
    {
      ps.zero_grad();
      Tape t(&ps);
      Var s = net.summary(t, c);
      Var h_real = net.embed(t, t.constant(xs));
      Var h_hat = net.supervise(t, net.generate(t, gaussian(b * net.K, net.L, rng), net.cond_hidden(t, s)));
      Var real_term = nn::mean(nn::softplus(nn::scale(net.discriminate(t, t.constant(h_real.value()), s.value()), -1.0)));
      Var fake_term = nn::mean(nn::softplus(net.discriminate(t, t.constant(h_hat.value()), s.value())));
      t.backward(nn::add(real_term, fake_term));
      opt_d.step(ps, net.group_d);
    }
    return logged;
  }
};

double coefficient_scale(const Net& net, const Dataset& d) {
  double sq = 0.0;
  Eigen::Index count = 0;
  const bool seq = net.cfg.mode == ConditioningMode::MtSequence;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Matrix* v = &d.samples[i].values;
    if (seq) {
      if (!d.has_kinematics() || !d.kinematics[i])
        throw DataError("sample " + sample_id(d.samples[i]) + " has no paired kinematics (required in mt_sequence mode)");
      v = &d.kinematics[i]->values;
    }
    if (v->cols() != net.T) throw ShapeError("training samples differ in length");
    const Mat c = net.basis.project(*v);
    sq += c.squaredNorm();
    count += c.size();
  }
  const double rms = std::sqrt(sq / static_cast<double>(std::max<Eigen::Index>(count, 1)));
  return rms > 1e-8 ? rms : 1.0;
}

void require_mode(const GeneratorArtifact& a, ConditioningMode m) {
  if (a.config.mode != m)
    throw ModeError("artifact was trained in " + std::string(to_string(a.config.mode)) + " mode, operation needs " +
                    std::string(to_string(m)));
}

// Runs the family's sampler for a batch described by `c` (B rows).
Mat generate_coefficients(const GeneratorArtifact& a, const Net& net, const Cond& c, Eigen::Index b, Rng& rng) {
  auto& ps = const_cast<nn::ParamSet&>(a.params);  // forward passes do not touch gradients
  switch (a.config.family) {
    case Family::Cvae: {
      Tape t(&ps);
      Var s = net.summary(t, c);
      return net.decode(t, t.constant(gaussian(b, net.L, rng)), net.cond_latent(t, s)).value();
    }
    case Family::Gan: {
      Tape t(&ps);
      Var s = net.summary(t, c);
      Var h = net.supervise(t, net.generate(t, gaussian(b * net.K, net.L, rng), net.cond_hidden(t, s)));
      return net.from_sequence(net.recover(t, h).value());
    }
    case Family::Diffusion: {
      const int S = a.config.sampling_steps;
      const int m = a.config.fast_sampling_steps > 0 ? std::min(a.config.fast_sampling_steps, S) : S;
      std::vector<int> taus(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        taus[static_cast<std::size_t>(i)] =
            m == 1 ? S : 1 + static_cast<int>(std::lround(static_cast<double>(i) * (S - 1) / (m - 1)));
      Mat x = gaussian(b, net.D, rng);
      for (int i = m - 1; i >= 0; --i) {
        const int t_step = taus[static_cast<std::size_t>(i)];
        const double abt = net.alpha_bar[static_cast<std::size_t>(t_step)];
        const double abp = i > 0 ? net.alpha_bar[static_cast<std::size_t>(taus[static_cast<std::size_t>(i - 1)])] : 1.0;
        Tape t(&ps);
        const Mat eps = net.denoise(t, x, std::vector<int>(static_cast<std::size_t>(b), t_step), c).value();
        const double one_minus = 1.0 - abt;
        Mat x0 = one_minus > 0 ? Mat((x - std::sqrt(one_minus) * eps) / std::sqrt(abt)) : x;
        if (i == 0 || one_minus <= 0) {
          x = std::move(x0);
          continue;
        }
        const double beta = 1.0 - abt / abp;
        const double c1 = std::sqrt(abp) * beta / one_minus;
        const double c2 = std::sqrt(1.0 - beta) * (1.0 - abp) / one_minus;
        const double var = beta * (1.0 - abp) / one_minus;
        x = c1 * x0 + c2 * x + std::sqrt(std::max(var, 0.0)) * gaussian(b, net.D, rng);
      }
      return x;
    }
  }
  return {};
}

}  // namespace

// ---------------------------------------------------------------- schedule

std::vector<double> alpha_bar_schedule(NoiseSchedule s, int steps) {
  if (steps < 1) throw ConfigError("sampling_steps", "must be >= 1");
  std::vector<double> ab(static_cast<std::size_t>(steps) + 1, 1.0);
  if (s == NoiseSchedule::Zero) return ab;
  constexpr double offset = 0.008;
  const auto f = [&](int t) {
    const double u = (static_cast<double>(t) / steps + offset) / (1.0 + offset) * std::numbers::pi / 2.0;
    return std::cos(u) * std::cos(u);
  };
  for (int t = 1; t <= steps; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
    ab[static_cast<std::size_t>(t)] = ab[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
  }
  return ab;
}

Vector residual_std(const Net& net, const Dataset& d) {
  const bool seq = net.cfg.mode == ConditioningMode::MtSequence;
  Vector sq = Vector::Zero(kC);
  double count = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Matrix& v = seq ? d.kinematics[i]->values : d.samples[i].values;
    sq += (v - net.basis.reconstruct(net.basis.project(v))).rowwise().squaredNorm();
    count += static_cast<double>(v.cols());
  }
  return (sq / count).cwiseSqrt();
}

// ---------------------------------------------------------------- artifact

nlohmann::json GeneratorArtifact::to_json() const {
  return {{"format", "mtaim-generator"},
          {"version", version},
          {"config", config.to_json()},
          {"steps", steps},
          {"dt", dt},
          {"scale", scale},
          {"residual_std", std::vector<double>(residual_std.data(), residual_std.data() + residual_std.size())},
          {"data_fingerprint", data_fingerprint},
          {"training_log", training_log},
          {"parameters", params.to_json()}};
}

GeneratorArtifact GeneratorArtifact::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mtaim-generator") throw DataError("not a generator artifact");
  GeneratorArtifact a;
  a.version = j.at("version");
  if (a.version != kSchemaVersion) throw DataError("unsupported generator artifact version " + std::to_string(a.version));
  a.config = GeneratorConfig::from_json(j.at("config"));
  a.steps = j.at("steps");
  a.dt = j.at("dt");
  a.scale = j.at("scale");
  const auto rs = j.at("residual_std").get<std::vector<double>>();
  a.residual_std = Eigen::Map<const Vector>(rs.data(), static_cast<Eigen::Index>(rs.size()));
  a.data_fingerprint = j.at("data_fingerprint");
  a.training_log = j.at("training_log").get<std::vector<double>>();
  Net net(a.config, a.steps, a.params);
  a.params.load_json(j.at("parameters"));
  return a;
}

void GeneratorArtifact::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

GeneratorArtifact GeneratorArtifact::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- training

GeneratorArtifact init_generator(const GeneratorConfig& cfg, const Dataset& train) {
  cfg.validate();
  GeneratorArtifact a;
  a.config = cfg;
  a.steps = dataset_steps(train);
  a.dt = train.samples.front().dt;
  Net net(cfg, a.steps, a.params);
  a.scale = coefficient_scale(net, train);
  a.residual_std = residual_std(net, train);
  a.data_fingerprint = fingerprint(train);
  return a;
}

GeneratorArtifact train_generator(const GeneratorConfig& cfg, const Dataset& train, std::ostream* log) {
  GeneratorArtifact a = init_generator(cfg, train);
  nn::ParamSet scratch;  // same layout as a.params, so parameter indices line up
  Net layout(cfg, a.steps, scratch);
  const Encoded data = encode_dataset(layout, train, a.scale);
  const auto n = data.x.rows();
  const Eigen::Index batch = std::min<Eigen::Index>(cfg.batch_size, n);

  Trainer tr(layout, a.params, cfg);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int phase_len = std::max(1, cfg.epochs / 3);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), tr.rng);
    double total = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + start + len);
      const Mat x = select(data.x, rows);
      const Cond c = select_cond(layout, data.cond, rows);
      double loss = 0.0;
      switch (cfg.family) {
        case Family::Cvae: loss = tr.cvae_step(x, c); break;
        case Family::Diffusion: loss = tr.diffusion_step(x, c); break;
        case Family::Gan: {
          const int phase = epoch <= phase_len ? 0 : (epoch <= 2 * phase_len ? 1 : 2);
          loss = tr.gan_step(x, c, phase);
          break;
        }
      }
      if (!std::isfinite(loss)) throw TrainingError(epoch, "non-finite loss");
      total += loss * static_cast<double>(len);
    }
    const double epoch_loss = total / static_cast<double>(n);
    for (const auto& p : a.params)
      if (!p.value.allFinite()) throw TrainingError(epoch, "parameter '" + p.name + "' diverged");
    a.training_log.push_back(epoch_loss);
    if (log) *log << epoch << ',' << epoch_loss << '\n';
  }
  return a;
}

// ---------------------------------------------------------------- sampling

namespace {

std::vector<Matrix> decode_unclipped(const GeneratorArtifact& a, const Matrix& x) {
  nn::TemporalBasis basis(a.steps, a.config.basis_functions);
  const Eigen::Index k = basis.functions();
  if (x.cols() != kC * k) throw ShapeError("coefficient width mismatch");
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Mat coefs(kC, k);
    for (Eigen::Index c = 0; c < kC; ++c) coefs.row(c) = x.block(i, c * k, 1, k) * a.scale;
    out.push_back(basis.reconstruct(coefs));
  }
  return out;
}

}  // namespace

std::vector<Matrix> decode_coefficients(const GeneratorArtifact& a, const Matrix& x) {
  auto out = decode_unclipped(a, x);
  for (auto& m : out) m = m.cwiseMax(-1.0).cwiseMin(1.0);
  return out;
}

std::vector<MTSample> sample_mt(const GeneratorArtifact& a, MovementLabel label, int n, std::uint64_t seed) {
  require_mode(a, ConditioningMode::MovementLabel);
  if (n < 0) throw ArityError("negative sample count");
  if (n == 0) return {};
  nn::ParamSet scratch;
  Net net(a.config, a.steps, scratch);
  Cond c;
  c.labels.assign(static_cast<std::size_t>(n), to_index(label));
  Rng rng(seed);
  auto series = decode_unclipped(a, generate_coefficients(a, net, c, n, rng));
  if (a.config.residual_noise && a.residual_std.size() == kC) {
    Rng noise(derive_seed(seed, "residual"));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& m : series)
      for (Eigen::Index t = 0; t < m.cols(); ++t)
        for (Eigen::Index ch = 0; ch < kC; ++ch) m(ch, t) += a.residual_std(ch) * normal(noise);
  }
  for (auto& m : series) m = m.cwiseMax(-1.0).cwiseMin(1.0);
  std::vector<MTSample> out;
  for (int i = 0; i < n; ++i) {
    MTSample s;
    s.subject_id = "synthetic";
    s.repetition = 1;
    s.label = label;
    s.values = series[static_cast<std::size_t>(i)];
    s.dt = a.dt;
    s.provenance = Provenance::Synthetic;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<KinematicsSample> translate_batch(const GeneratorArtifact& a, const std::vector<MTSample>& mt,
                                              std::uint64_t seed) {
  require_mode(a, ConditioningMode::MtSequence);
  if (mt.empty()) return {};
  nn::ParamSet scratch;
  Net net(a.config, a.steps, scratch);
  Cond c;
  c.tokens.resize(static_cast<Eigen::Index>(mt.size()) * net.tokens, kC);
  for (std::size_t i = 0; i < mt.size(); ++i) {
    if (mt[i].steps() != a.steps)
      throw ShapeError("sample " + sample_id(mt[i]) + " has " + std::to_string(mt[i].steps()) +
                       " steps, translator was trained on " + std::to_string(a.steps));
    if (mt[i].values.rows() != kC) throw ShapeError("sample " + sample_id(mt[i]) + " must have 6 channels");
    c.tokens.middleRows(static_cast<Eigen::Index>(i) * net.tokens, net.tokens) = pool_tokens(mt[i].values, net.factor);
  }
  Rng rng(seed);
  const auto series = decode_coefficients(a, generate_coefficients(a, net, c, static_cast<Eigen::Index>(mt.size()), rng));
  std::vector<KinematicsSample> out;
  for (const auto& v : series) out.push_back({v, KinematicsProvenance::Generated});
  return out;
}

KinematicsSample translate_kinematics(const GeneratorArtifact& a, const MTSample& mt, std::uint64_t seed) {
  return translate_batch(a, {mt}, seed).front();
}

double detect_mode_collapse(const std::vector<Matrix>& samples, const std::vector<Matrix>& real) {
  if (samples.size() < 2) throw ArityError("mode-collapse score needs at least 2 samples");
  if (real.empty()) throw ArityError("mode-collapse score needs real reference samples");
  double within = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) within += (samples[i] - samples[j]).norm();
  double across = 0.0;
  for (const auto& s : samples)
    for (const auto& r : real) {
      if (r.rows() != s.rows() || r.cols() != s.cols()) throw ShapeError("mode-collapse operands differ in shape");
      across += (s - r).norm();
    }
  within /= static_cast<double>(pairs);
  across /= static_cast<double>(samples.size() * real.size());
  return across > 0 ? within / across : 0.0;
}

// ---------------------------------------------------------------- diagnostics

double reconstruction_error(const GeneratorArtifact& a, const Dataset& d, std::uint64_t seed) {
  nn::ParamSet scratch;
  Net net(a.config, a.steps, scratch);
  const Encoded e = encode_dataset(net, d, a.scale);
  auto& ps = const_cast<nn::ParamSet&>(a.params);
  switch (a.config.family) {
    case Family::Cvae: {
      Tape t(&ps);
      Var s = net.summary(t, e.cond);
      auto [mu, lv] = net.encode(t, e.x, net.cond_hidden(t, s));
      return (net.decode(t, mu, net.cond_latent(t, s)).value() - e.x).squaredNorm() / static_cast<double>(e.x.size());
    }
    case Family::Gan: {
      Tape t(&ps);
      const Mat xs = net.to_sequence(e.x);
      return (net.recover(t, net.embed(t, t.constant(xs))).value() - xs).squaredNorm() / static_cast<double>(xs.size());
    }
    case Family::Diffusion: {
      Rng rng(seed);
      std::uniform_int_distribution<int> pick(1, a.config.sampling_steps);
      constexpr int rounds = 16;
      double err = 0.0;
      for (int r = 0; r < rounds; ++r) {
        std::vector<int> steps(static_cast<std::size_t>(e.x.rows()));
        for (auto& s : steps) s = pick(rng);
        const Mat eps = gaussian(e.x.rows(), e.x.cols(), rng);
        Mat xt(e.x.rows(), e.x.cols());
        for (Eigen::Index i = 0; i < e.x.rows(); ++i) {
          const double ab = net.alpha_bar[static_cast<std::size_t>(steps[static_cast<std::size_t>(i)])];
          xt.row(i) = std::sqrt(ab) * e.x.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
        }
        Tape t(&ps);
        err += (net.denoise(t, xt, steps, e.cond).value() - eps).squaredNorm() / static_cast<double>(eps.size());
      }
      return err / rounds;
    }
  }
  return 0.0;
}

double cvae_objective(GeneratorArtifact& a, const Dataset& batch, const Matrix& eps, bool backward) {
  if (a.config.family != Family::Cvae) throw ModeError("cvae_objective needs a cvae artifact");
  nn::ParamSet scratch;
  Net net(a.config, a.steps, scratch);
  const Encoded e = encode_dataset(net, batch, a.scale);
  if (eps.rows() != e.x.rows() || eps.cols() != net.L) throw ShapeError("noise draw must be batch x latent_dim");
  Tape t(&a.params);
  Var loss = net.cvae_loss(t, e.x, e.cond, eps);
  if (backward) t.backward(loss);
  return loss.scalar();
}

Matrix diffusion_predict_noise(const GeneratorArtifact& a, const Matrix& x_t, int t_step,
                               const std::vector<MovementLabel>& labels) {
  if (a.config.family != Family::Diffusion) throw ModeError("not a diffusion artifact");
  require_mode(a, ConditioningMode::MovementLabel);
  if (t_step < 1 || t_step > a.config.sampling_steps) throw ConfigError("t", "timestep out of range");
  nn::ParamSet scratch;
  Net net(a.config, a.steps, scratch);
  Cond c;
  for (auto l : labels) c.labels.push_back(to_index(l));
  Tape t(&const_cast<nn::ParamSet&>(a.params));
  return net.denoise(t, x_t, std::vector<int>(static_cast<std::size_t>(x_t.rows()), t_step), c).value();
}

Matrix diffusion_initial_noise(const GeneratorArtifact& a, int n, std::uint64_t seed) {
  nn::TemporalBasis basis(a.steps, a.config.basis_functions);
  Rng rng(seed);
  return gaussian(n, kC * basis.functions(), rng);
}

}  // namespace mtaim::gen
