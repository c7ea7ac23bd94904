#include "mtaim/harness.hpp"

#include "mtaim/errors.hpp"
#include "mtaim/features.hpp"
#include "mtaim/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

namespace mtaim::harness {

std::string_view to_string(SplitMode m) noexcept {
  switch (m) {
    case SplitMode::CrossSample: return "cross_sample";
    case SplitMode::Loso: return "loso";
    case SplitMode::Kfold: return "kfold";
  }
  return "?";
}

std::string_view to_string(AugMode m) noexcept {
  switch (m) {
    case AugMode::Base: return "base";
    case AugMode::DataAug: return "data_aug";
    case AugMode::FeatureAug: return "feature_aug";
    case AugMode::Both: return "both";
  }
  return "?";
}

std::string_view to_string(KinematicsSource k) noexcept {
  return k == KinematicsSource::Generated ? "generated" : "groundtruth";
}

SplitMode parse_split_mode(std::string_view s) {
  if (s == "cross_sample") return SplitMode::CrossSample;
  if (s == "loso") return SplitMode::Loso;
  if (s == "kfold") return SplitMode::Kfold;
  throw ConfigError("split.mode", "unknown split mode '" + std::string(s) + "'");
}

AugMode parse_aug_mode(std::string_view s) {
  for (auto m : kAllAugModes)
    if (s == to_string(m)) return m;
  throw ConfigError("experiment.mode", "unknown augmentation mode '" + std::string(s) + "'");
}

KinematicsSource parse_kinematics_source(std::string_view s) {
  if (s == "generated") return KinematicsSource::Generated;
  if (s == "groundtruth") return KinematicsSource::GroundTruth;
  throw ConfigError("experiment.kinematics_source", "unknown kinematics source '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- splits

void SplitSpec::validate() const {
  if (mode == SplitMode::CrossSample && !(test_fraction > 0 && test_fraction < 1))
    throw ConfigError("split.test_fraction", "must be in (0, 1)");
  if (mode == SplitMode::Kfold && folds < 2) throw ConfigError("split.folds", "must be >= 2");
}

nlohmann::json SplitSpec::to_json() const {
  return {{"mode", to_string(mode)}, {"test_fraction", test_fraction}, {"stratified", stratified}, {"folds", folds}};
}

namespace {

std::vector<int> label_indices(const Dataset& d) {
  std::vector<int> y;
  for (const auto& s : d.samples) y.push_back(to_index(s.label));
  return y;
}

Split from_test_mask(const std::vector<char>& is_test) {
  Split s;
  for (std::size_t i = 0; i < is_test.size(); ++i) (is_test[i] ? s.test : s.train).push_back(i);
  return s;
}

Split cross_sample_split(const Dataset& d, const SplitSpec& spec) {
  const std::size_t n = d.size();
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
  Rng rng(derive_seed(spec.seed, "cross-sample"));
  std::vector<char> is_test(n, 0);
  if (!spec.stratified) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
    return from_test_mask(is_test);
  }
  // floor of each label's share first, then the remainder to the largest fractional parts
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[to_index(d.samples[i].label)].push_back(i);
  struct Quota {
    int label;
    std::size_t take;
    double frac;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (auto& [label, members] : by_label) {
    std::shuffle(members.begin(), members.end(), rng);
    const double exact = spec.test_fraction * static_cast<double>(members.size());
    const auto take = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({label, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::shuffle(quotas.begin(), quotas.end(), rng);
  std::stable_sort(quotas.begin(), quotas.end(), [](const Quota& a, const Quota& b) { return a.frac > b.frac; });
  for (std::size_t q = 0; assigned < n_test && q < quotas.size(); ++q, ++assigned) ++quotas[q].take;
  for (const auto& q : quotas) {
    const auto& members = by_label[q.label];
    for (std::size_t i = 0; i < std::min(q.take, members.size()); ++i) is_test[members[i]] = 1;
  }
  return from_test_mask(is_test);
}

}  // namespace

std::vector<Split> make_split(const Dataset& d, const SplitSpec& spec) {
  spec.validate();
  if (d.empty()) throw DegenerateError("cannot split an empty dataset");
  switch (spec.mode) {
    case SplitMode::CrossSample:
      return {cross_sample_split(d, spec)};
    case SplitMode::Loso: {
      const auto subjects = d.subjects();
      if (subjects.size() < 2) throw DegenerateError("leave-one-subject-out needs at least 2 subjects");
      std::vector<Split> out;
      for (const auto& subject : subjects) {
        std::vector<char> is_test(d.size(), 0);
        for (std::size_t i = 0; i < d.size(); ++i) is_test[i] = d.samples[i].subject_id == subject;
        out.push_back(from_test_mask(is_test));
      }
      return out;
    }
    case SplitMode::Kfold: {
      std::vector<int> fold_of;
      if (spec.stratified) {
        fold_of = clf::stratified_folds(label_indices(d), spec.folds, spec.seed);
      } else {
        std::vector<std::size_t> order(d.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(spec.seed, "kfold"));
        std::shuffle(order.begin(), order.end(), rng);
        fold_of.assign(d.size(), 0);
        for (std::size_t k = 0; k < order.size(); ++k) fold_of[order[k]] = static_cast<int>(k % static_cast<std::size_t>(spec.folds));
      }
      std::vector<Split> out;
      for (int k = 0; k < spec.folds; ++k) {
        std::vector<char> is_test(d.size(), 0);
        for (std::size_t i = 0; i < d.size(); ++i) is_test[i] = fold_of[i] == k;
        out.push_back(from_test_mask(is_test));
      }
      return out;
    }
  }
  return {};
}

// ---------------------------------------------------------------- specs

ExperimentSpec::ExperimentSpec()
    : classifier(clf::ClassifierConfig::defaults_for(clf::Family::ConvRecurrent)),
      generator(gen::GeneratorConfig::defaults_for(gen::Family::Cvae)),
      translator(gen::GeneratorConfig::defaults_for(gen::Family::Cvae, gen::ConditioningMode::MtSequence)) {}

KinematicsSource ExperimentSpec::effective_kinematics() const {
  if (kinematics_source) return *kinematics_source;
  return mode == AugMode::FeatureAug ? KinematicsSource::GroundTruth : KinematicsSource::Generated;
}

std::string ExperimentSpec::cell_id() const {
  return std::string(to_string(mode)) + "/" + std::string(clf::to_string(classifier.family));
}

void ExperimentSpec::validate() const {
  classifier.validate();
  split.validate();
  if (trials < 1) throw ConfigError("experiment.trials", "must be >= 1");
  if (synthetic_per_label < 0) throw ConfigError("experiment.synthetic_per_label", "must be >= 0");
  if (translation_folds < 0) throw ConfigError("experiment.translation_folds", "must be >= 0");
  if (uses_synthetic()) {
    generator.validate();
    if (generator.mode != gen::ConditioningMode::MovementLabel)
      throw ConfigError("generator.conditioning_mode", "data augmentation needs a movement_label generator");
  }
  if (uses_features()) {
    translator.validate();
    if (translator.mode != gen::ConditioningMode::MtSequence)
      throw ConfigError("translator.conditioning_mode", "kinematics translation needs an mt_sequence generator");
  }
}

nlohmann::json ExperimentSpec::to_json() const {
  nlohmann::json j = {{"mode", to_string(mode)},
                      {"classifier", classifier.to_json()},
                      {"synthetic_per_label", synthetic_per_label},
                      {"trials", trials},
                      {"split", split.to_json()},
                      {"include_dtft", include_dtft},
                      {"fixed_split", fixed_split},
                      {"master_seed", master_seed}};
  if (uses_synthetic()) j["generator"] = generator.to_json();
  if (uses_features()) {
    j["kinematics_source"] = to_string(effective_kinematics());
    j["translation_folds"] = translation_folds;
    j["translator"] = translator.to_json();
  }
  return j;
}

ExperimentSpec ExperimentSpec::from_config(const Config& c) {
  ExperimentSpec s;
  s.mode = parse_aug_mode(c.get_string("experiment.mode", "base"));
  s.synthetic_per_label = c.get_int("experiment.synthetic_per_label", s.synthetic_per_label);
  s.trials = c.get_int("experiment.trials", s.trials);
  if (c.has("experiment.kinematics_source"))
    s.kinematics_source = parse_kinematics_source(c.get_string("experiment.kinematics_source", ""));
  s.include_dtft = c.get_bool("experiment.include_dtft", s.include_dtft);
  s.translation_folds = c.get_int("experiment.translation_folds", s.translation_folds);
  s.fixed_split = c.get_bool("experiment.fixed_split", s.fixed_split);
  s.master_seed = std::stoull(c.get_string("experiment.seed", std::to_string(s.master_seed)));
  s.split.mode = parse_split_mode(c.get_string("split.mode", "cross_sample"));
  s.split.test_fraction = c.get_double("split.test_fraction", s.split.test_fraction);
  s.split.stratified = c.get_bool("split.stratified", s.split.stratified);
  s.split.folds = c.get_int("split.folds", s.split.folds);
  s.classifier = clf::ClassifierConfig::from_config(c, "classifier");
  s.generator = gen::GeneratorConfig::from_config(c, "generator");
  Config tc = c;
  if (!tc.has("translator.conditioning_mode")) tc.set("translator.conditioning_mode", "mt_sequence");
  s.translator = gen::GeneratorConfig::from_config(tc, "translator");
  s.validate();
  return s;
}

MatrixSpec::MatrixSpec() {
  for (auto f : {clf::Family::Gbdt, clf::Family::Attention, clf::Family::ConvRecurrent})
    classifiers.push_back(clf::ClassifierConfig::defaults_for(f));
}

MatrixSpec MatrixSpec::from_config(const Config& c) {
  MatrixSpec m;
  m.base = ExperimentSpec::from_config(c);
  m.classifiers.clear();
  for (const char* name : {"gbdt", "attention", "conv_recurrent"}) {
    Config cc = c;
    cc.set(std::string(name) + ".family", name);
    m.classifiers.push_back(clf::ClassifierConfig::from_config(cc, name));
  }
  if (c.has("matrix.modes")) {
    m.modes.clear();
    std::stringstream ss(c.get_string("matrix.modes", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
      if (!item.empty()) m.modes.push_back(parse_aug_mode(item));
    }
    if (m.modes.empty()) throw ConfigError("matrix.modes", "no modes listed");
  }
  return m;
}

// ---------------------------------------------------------------- seeds, cache, leakage

std::uint64_t split_seed(std::uint64_t master, int trial) {
  return derive_seed(master, "split", static_cast<std::uint64_t>(trial));
}

std::uint64_t model_seed(std::uint64_t master, const std::string& cell, int trial) {
  return derive_seed(master, {hash_string(cell), static_cast<std::uint64_t>(trial)});
}

std::uint64_t generator_seed(std::uint64_t master, int trial) {
  return derive_seed(master, "generator", static_cast<std::uint64_t>(trial));
}

const gen::GeneratorArtifact& GeneratorCache::get(const std::string& key,
                                                   const std::function<gen::GeneratorArtifact()>& make) {
  auto it = items_.find(key);
  if (it == items_.end()) it = items_.emplace(key, make()).first;
  return it->second;
}

void assert_no_leakage(const std::vector<std::string>& test_ids, const TrialInputs& inputs) {
  const std::set<std::string> test(test_ids.begin(), test_ids.end());
  for (const auto* ids : {&inputs.generator_ids, &inputs.classifier_ids})
    for (const auto& id : *ids)
      if (test.count(id)) throw LeakageError("test sample " + id + " is among the training inputs");
}

std::vector<features::FeatureTensor> build_features(const std::vector<MTSample>& mt,
                                                    const std::vector<const KinematicsSample*>& kin, bool with_dtft,
                                                    bool with_kinematics) {
  if (with_kinematics && kin.size() != mt.size()) throw ArityError("one kinematics entry per sample is required");
  std::vector<features::FeatureTensor> out;
  out.reserve(mt.size());
  for (std::size_t i = 0; i < mt.size(); ++i) {
    Matrix dft;
    if (with_dtft) dft = features::dtft_channels(mt[i].values);
    out.push_back(features::assemble_features(mt[i], with_dtft ? &dft : nullptr, with_kinematics ? kin[i] : nullptr));
  }
  return out;
}

// ---------------------------------------------------------------- experiments

namespace {

std::string trial_key(int trial, const std::string& role, const gen::GeneratorConfig& cfg) {
  return "trial" + std::to_string(trial) + "/" + role + "/" + cfg.to_json().dump();
}

// Out-of-fold translation of the training split: fold f is translated by a model
// trained on the other folds.
std::vector<KinematicsSample> cross_fit_translate(const ExperimentSpec& spec, int trial, const Dataset& train,
                                                  GeneratorCache& cache, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& s : train.samples) labels.push_back(to_index(s.label));
  const int k = std::min<int>(spec.translation_folds, static_cast<int>(train.size()));
  const auto fold = clf::stratified_folds(labels, k, derive_seed(seed, "folds"));
  std::vector<KinematicsSample> out(train.size());
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> fit, held;
    for (std::size_t i = 0; i < train.size(); ++i) (fold[i] == f ? held : fit).push_back(i);
    if (held.empty()) continue;
    gen::GeneratorConfig cfg = spec.translator;
    cfg.seed = derive_seed(generator_seed(spec.master_seed, trial), "fold", static_cast<std::uint64_t>(f));
    const Dataset part = train.subset(fit);
    const auto& model = cache.get(trial_key(trial, "kin/fold" + std::to_string(f), cfg),
                                  [&] { return gen::train_generator(cfg, part); });
    std::vector<MTSample> mt;
    for (auto i : held) mt.push_back(train.samples[i]);
    const auto kin = gen::translate_batch(model, mt, derive_seed(seed, "fold", static_cast<std::uint64_t>(f)));
    for (std::size_t j = 0; j < held.size(); ++j) out[held[j]] = kin[j];
  }
  return out;
}

void aggregate(ExperimentReport& r) {
  r.accuracies.clear();
  for (const auto& t : r.trials) r.accuracies.push_back(t.accuracy);
  const auto ms = metrics::mean_std(r.accuracies);
  r.mean = ms.mean;
  r.std = ms.std;
  r.precision.assign(kNumMovements, 0.0);
  r.recall.assign(kNumMovements, 0.0);
  for (const auto& t : r.trials)
    for (int c = 0; c < kNumMovements; ++c) {
      r.precision[static_cast<std::size_t>(c)] += t.report.precision[static_cast<std::size_t>(c)];
      r.recall[static_cast<std::size_t>(c)] += t.report.recall[static_cast<std::size_t>(c)];
    }
  for (int c = 0; c < kNumMovements; ++c) {
    r.precision[static_cast<std::size_t>(c)] /= static_cast<double>(r.trials.size());
    r.recall[static_cast<std::size_t>(c)] /= static_cast<double>(r.trials.size());
  }
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec, const Dataset& d, GeneratorCache* cache,
                                std::ostream* progress) {
  spec.validate();
  if (d.empty()) throw DegenerateError("empty dataset");
  if (spec.uses_features() && !d.has_kinematics())
    throw DataError("feature augmentation needs paired kinematics in the dataset");
  GeneratorCache local;
  if (!cache) cache = &local;

  ExperimentReport report;
  report.cell = spec.cell_id();
  report.mode = spec.mode;
  report.classifier = spec.classifier.family;
  report.config = spec.to_json();

  // fold modes: each fold is one trial; cross_sample: `trials` redraws
  std::vector<Split> splits;
  std::vector<std::uint64_t> split_seeds;
  if (spec.split.mode == SplitMode::CrossSample) {
    for (int t = 0; t < spec.trials; ++t) {
      SplitSpec s = spec.split;
      s.seed = split_seed(spec.master_seed, spec.fixed_split ? 0 : t);
      splits.push_back(make_split(d, s).front());
      split_seeds.push_back(s.seed);
    }
  } else {
    SplitSpec s = spec.split;
    s.seed = split_seed(spec.master_seed, 0);
    splits = make_split(d, s);
    split_seeds.assign(splits.size(), s.seed);
  }

  const bool with_kin = spec.uses_features();
  const bool translate_real = with_kin && spec.effective_kinematics() == KinematicsSource::Generated;

  for (std::size_t t = 0; t < splits.size(); ++t) {
    const int trial = static_cast<int>(t);
    const Split& split = splits[t];
    const Dataset train = d.subset(split.train);
    const Dataset test = d.subset(split.test);

    TrialInputs inputs;
    std::vector<std::string> test_ids;
    for (const auto& s : test.samples) test_ids.push_back(sample_id(s));
    for (const auto& s : train.samples) inputs.classifier_ids.push_back(sample_id(s));

    std::vector<MTSample> train_mt = train.samples;
    std::vector<MTSample> synthetic;
    if (spec.uses_synthetic() && spec.synthetic_per_label > 0) {
      gen::GeneratorConfig gcfg = spec.generator;
      gcfg.seed = generator_seed(spec.master_seed, trial);
      const auto& artifact = cache->get(trial_key(trial, "mt", gcfg), [&] { return gen::train_generator(gcfg, train); });
      for (const auto& s : train.samples) inputs.generator_ids.push_back(sample_id(s));
      for (auto label : kAllMovements) {
        auto batch = gen::sample_mt(artifact, label, spec.synthetic_per_label,
                                    derive_seed(gcfg.seed, "sample", static_cast<std::uint64_t>(to_index(label))));
        for (std::size_t i = 0; i < batch.size(); ++i)
          inputs.classifier_ids.push_back("synthetic/" + std::string(to_string(label)) + "/" + std::to_string(i));
        synthetic.insert(synthetic.end(), batch.begin(), batch.end());
      }
    }
    assert_no_leakage(test_ids, inputs);

    std::vector<KinematicsSample> train_kin, test_kin, synth_kin;
    if (with_kin) {
      const bool need_translator = translate_real || !synthetic.empty();
      const gen::GeneratorArtifact* translator = nullptr;
      const std::uint64_t tseed = derive_seed(spec.master_seed, "translate", static_cast<std::uint64_t>(trial));
      if (need_translator) {
        gen::GeneratorConfig tcfg = spec.translator;
        tcfg.seed = generator_seed(spec.master_seed, trial);
        translator = &cache->get(trial_key(trial, "kin", tcfg), [&] { return gen::train_generator(tcfg, train); });
      }
      if (translate_real && spec.translation_folds > 1) {
        train_kin = cross_fit_translate(spec, trial, train, *cache, derive_seed(tseed, "train"));
        test_kin = gen::translate_batch(*translator, test.samples, derive_seed(tseed, "test"));
      } else if (translate_real) {
        train_kin = gen::translate_batch(*translator, train.samples, derive_seed(tseed, "train"));
        test_kin = gen::translate_batch(*translator, test.samples, derive_seed(tseed, "test"));
      } else {
        for (std::size_t i = 0; i < train.size(); ++i) train_kin.push_back(train.kin(i));
        for (std::size_t i = 0; i < test.size(); ++i) test_kin.push_back(test.kin(i));
      }
      if (!synthetic.empty()) synth_kin = gen::translate_batch(*translator, synthetic, derive_seed(tseed, "synthetic"));
    }

    std::vector<MTSample> all_train = train_mt;
    all_train.insert(all_train.end(), synthetic.begin(), synthetic.end());
    std::vector<const KinematicsSample*> all_train_kin, test_kin_ptr;
    if (with_kin) {
      for (const auto& k : train_kin) all_train_kin.push_back(&k);
      for (const auto& k : synth_kin) all_train_kin.push_back(&k);
      for (const auto& k : test_kin) test_kin_ptr.push_back(&k);
    }
    const bool dtft = with_kin && spec.include_dtft;
    const auto xtr = build_features(all_train, all_train_kin, dtft, with_kin);
    const auto xte = build_features(test.samples, test_kin_ptr, dtft, with_kin);

    clf::ClassifierConfig ccfg = spec.classifier;
    ccfg.seed = model_seed(spec.master_seed, spec.cell_id(), trial);
    const auto model = clf::train_classifier(ccfg, xtr);
    const auto preds = clf::predict(model, xte);

    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < xte.size(); ++i) {
      truth.push_back(to_index(xte[i].label));
      pred.push_back(preds[i].label);
    }
    TrialRecord rec;
    rec.trial = trial;
    rec.split_seed = split_seeds[t];
    rec.model_seed = ccfg.seed;
    rec.train_real = train.size();
    rec.train_synthetic = synthetic.size();
    rec.test = test.size();
    rec.channels = xtr.front().channels();
    rec.report = metrics::classification_report(truth, pred);
    rec.accuracy = rec.report.accuracy;
    if (progress)
      *progress << report.cell << " trial " << trial << ": accuracy " << rec.accuracy << " (train " << rec.train_real
                << "+" << rec.train_synthetic << ", test " << rec.test << ", channels " << rec.channels << ")\n";
    report.trials.push_back(std::move(rec));
  }
  aggregate(report);
  return report;
}

std::vector<ExperimentReport> run_matrix(const MatrixSpec& spec, const Dataset& d, std::ostream* progress) {
  if (spec.modes.empty() || spec.classifiers.empty()) throw ConfigError("matrix", "no cells");
  GeneratorCache cache;
  std::vector<ExperimentReport> out;
  for (const auto& c : spec.classifiers)
    for (auto m : spec.modes) {
      ExperimentSpec s = spec.base;
      s.mode = m;
      s.classifier = c;
      out.push_back(run_experiment(s, d, &cache, progress));
    }
  return out;
}

std::vector<GeneratorScores> compare_generators(const std::vector<gen::GeneratorConfig>& configs, const Dataset& d,
                                                int repeats, int per_label, std::uint64_t master_seed,
                                                metrics::Pooling pooling, std::ostream* progress) {
  if (repeats < 1) throw ConfigError("repeats", "must be >= 1");
  if (per_label < 1) throw ConfigError("per_label", "must be >= 1");
  if (d.empty()) throw DegenerateError("generator comparison on an empty dataset");
  std::vector<Matrix> real;
  for (const auto& s : d.samples) real.push_back(s.values);

  std::vector<GeneratorScores> out;
  for (const auto& base : configs) {
    GeneratorScores g;
    g.family = base.family;
    for (int r = 0; r < repeats; ++r) {
      gen::GeneratorConfig cfg = base;
      cfg.mode = gen::ConditioningMode::MovementLabel;
      const auto seed = derive_seed(master_seed, {hash_string("compare"), hash_string(gen::to_string(cfg.family)),
                                                  static_cast<std::uint64_t>(r)});
      cfg.seed = seed;
      const auto a = gen::train_generator(cfg, d);
      std::vector<MTSample> generated;
      for (auto m : kAllMovements) {
        auto s = gen::sample_mt(a, m, per_label, derive_seed(seed, "sample", to_index(m)));
        generated.insert(generated.end(), s.begin(), s.end());
      }
      const auto sc = metrics::score_generated(generated, d.samples, pooling);
      std::vector<Matrix> gm;
      for (const auto& s : generated) gm.push_back(s.values);
      g.frechet.push_back(sc.frechet);
      g.wasserstein.push_back(sc.wasserstein);
      g.collapse.push_back(gen::detect_mode_collapse(gm, real));
      if (progress)
        *progress << gen::to_string(cfg.family) << " run " << r << " frechet=" << sc.frechet
                  << " wasserstein=" << sc.wasserstein << " collapse=" << g.collapse.back() << '\n';
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<metrics::MetricRow> generator_metric_rows(const std::vector<GeneratorScores>& scores) {
  std::vector<metrics::MetricRow> rows;
  for (const auto& g : scores) {
    const std::string name(gen::to_string(g.family));
    for (const auto& [metric, xs] : {std::pair{"frechet", &g.frechet}, std::pair{"wasserstein", &g.wasserstein},
                                     std::pair{"collapse", &g.collapse}}) {
      const auto ms = metrics::mean_std(*xs);
      rows.push_back({name, metric, ms.mean, ms.std});
    }
  }
  return rows;
}

// ---------------------------------------------------------------- reports

nlohmann::json ExperimentReport::to_json() const {
  auto trials_json = nlohmann::json::array();
  for (const auto& t : trials)
    trials_json.push_back({{"trial", t.trial},
                           {"split_seed", t.split_seed},
                           {"model_seed", t.model_seed},
                           {"train_real", t.train_real},
                           {"train_synthetic", t.train_synthetic},
                           {"test", t.test},
                           {"channels", t.channels},
                           {"accuracy", t.accuracy},
                           {"precision", t.report.precision},
                           {"recall", t.report.recall},
                           {"confusion", t.report.confusion}});
  return {{"cell", cell},
          {"mode", to_string(mode)},
          {"classifier", clf::to_string(classifier)},
          {"accuracies", accuracies},
          {"mean", mean},
          {"std", std},
          {"precision", precision},
          {"recall", recall},
          {"trials", trials_json},
          {"config", config}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.cell = j.at("cell");
  r.mode = parse_aug_mode(j.at("mode").get<std::string>());
  r.classifier = clf::parse_family(j.at("classifier").get<std::string>());
  r.accuracies = j.at("accuracies").get<std::vector<double>>();
  r.mean = j.at("mean");
  r.std = j.at("std");
  r.precision = j.at("precision").get<std::vector<double>>();
  r.recall = j.at("recall").get<std::vector<double>>();
  r.config = j.value("config", nlohmann::json::object());
  for (const auto& t : j.value("trials", nlohmann::json::array())) {
    TrialRecord rec;
    rec.trial = t.at("trial");
    rec.split_seed = t.at("split_seed");
    rec.model_seed = t.at("model_seed");
    rec.train_real = t.at("train_real");
    rec.train_synthetic = t.at("train_synthetic");
    rec.test = t.at("test");
    rec.channels = t.at("channels");
    rec.accuracy = t.at("accuracy");
    rec.report.precision = t.at("precision").get<std::vector<double>>();
    rec.report.recall = t.at("recall").get<std::vector<double>>();
    rec.report.confusion = t.at("confusion").get<std::vector<std::vector<long>>>();
    rec.report.accuracy = rec.accuracy;
    r.trials.push_back(std::move(rec));
  }
  return r;
}

void write_accuracy_table(std::ostream& out, const std::vector<ExperimentReport>& reports) {
  out << "mode,classifier,mean,std,trials\n" << std::setprecision(17);
  for (const auto& r : reports) {
    out << to_string(r.mode) << ',' << clf::to_string(r.classifier) << ',' << r.mean << ',' << r.std << ',';
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) out << (i ? ";" : "") << r.accuracies[i];
    out << '\n';
  }
}

std::vector<AccuracyRow> read_accuracy_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "mode,classifier,mean,std,trials") throw DataError("accuracy table: bad header");
  std::vector<AccuracyRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    AccuracyRow r;
    std::string mean, sd, trials;
    if (!std::getline(ss, r.mode, ',') || !std::getline(ss, r.classifier, ',') || !std::getline(ss, mean, ',') ||
        !std::getline(ss, sd, ','))
      throw DataError("accuracy table: malformed row '" + line + "'");
    std::getline(ss, trials);
    r.mean = std::stod(mean);
    r.std = std::stod(sd);
    std::stringstream ts(trials);
    std::string item;
    while (std::getline(ts, item, ';'))
      if (!item.empty()) r.trials.push_back(std::stod(item));
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

std::string accuracy_plot_svg(const std::vector<ExperimentReport>& reports, clf::Family classifier) {
  std::vector<const ExperimentReport*> rows;
  for (const auto& r : reports)
    if (r.classifier == classifier) rows.push_back(&r);
  if (rows.empty()) throw ArityError("no reports for classifier " + std::string(clf::to_string(classifier)));

  constexpr double width = 480, height = 320, left = 60, right = 20, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  const auto y_of = [&](double acc) { return top + plot_h * (1.0 - std::clamp(acc, 0.0, 1.0)); };
  const double slot = plot_w / static_cast<double>(rows.size());
  const double bar = slot * 0.6;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\"" << fmt(height)
      << "\" viewBox=\"0 0 " << fmt(width) << ' ' << fmt(height) << "\">\n"
      << "  <title>accuracy by augmentation mode: " << clf::to_string(classifier) << "</title>\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << fmt(width) << "\" height=\"" << fmt(height) << "\" fill=\"white\"/>\n"
      << "  <text x=\"" << fmt(width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << clf::to_string(classifier) << "</text>\n";
  // axes and ticks
  svg << "  <line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left) << "\" y2=\""
      << fmt(top + plot_h) << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top + plot_h) << "\" x2=\"" << fmt(left + plot_w)
      << "\" y2=\"" << fmt(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i * 0.2;
    svg << "  <text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y_of(v) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << fmt(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = *rows[i];
    const double cx = left + slot * (static_cast<double>(i) + 0.5);
    svg << "  <rect x=\"" << fmt(cx - bar / 2) << "\" y=\"" << fmt(y_of(r.mean)) << "\" width=\"" << fmt(bar)
        << "\" height=\"" << fmt(top + plot_h - y_of(r.mean)) << "\" fill=\"#4c72b0\"/>\n";
    const double lo = y_of(r.mean - r.std), hi = y_of(r.mean + r.std);
    svg << "  <line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(lo) << "\" x2=\"" << fmt(cx) << "\" y2=\"" << fmt(hi)
        << "\" stroke=\"black\"/>\n"
        << "  <line x1=\"" << fmt(cx - 6) << "\" y1=\"" << fmt(lo) << "\" x2=\"" << fmt(cx + 6) << "\" y2=\"" << fmt(lo)
        << "\" stroke=\"black\"/>\n"
        << "  <line x1=\"" << fmt(cx - 6) << "\" y1=\"" << fmt(hi) << "\" x2=\"" << fmt(cx + 6) << "\" y2=\"" << fmt(hi)
        << "\" stroke=\"black\"/>\n"
        << "  <text x=\"" << fmt(cx) << "\" y=\"" << fmt(top + plot_h + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << to_string(r.mode) << "</text>\n";
  }
  const auto base = std::find_if(rows.begin(), rows.end(), [](const auto* r) { return r->mode == AugMode::Base; });
  if (base != rows.end())
    svg << "  <line class=\"base\" x1=\"" << fmt(left) << "\" y1=\"" << fmt(y_of((*base)->mean)) << "\" x2=\""
        << fmt(left + plot_w) << "\" y2=\"" << fmt(y_of((*base)->mean))
        << "\" stroke=\"gray\" stroke-dasharray=\"2,3\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::vector<std::filesystem::path> emit_report(const std::vector<ExperimentReport>& reports,
                                               const std::filesystem::path& out_dir) {
  if (reports.empty()) throw ArityError("no reports to emit");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "reports", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "plots", ec);
  if (ec) throw IoError("cannot create output directories under " + out_dir.string() + ": " + ec.message());

  const auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
    if (!f) throw IoError("failed writing " + p.string());
  };
  std::vector<std::filesystem::path> paths;

  std::ostringstream acc;
  write_accuracy_table(acc, reports);
  paths.push_back(out_dir / "reports" / "accuracy.csv");
  write(paths.back(), acc.str());

  std::ostringstream pr;
  pr << "mode,classifier,label,precision,recall\n" << std::setprecision(17);
  for (const auto& r : reports)
    for (int c = 0; c < kNumMovements; ++c)
      pr << to_string(r.mode) << ',' << clf::to_string(r.classifier) << ',' << to_string(label_from_index(c)) << ','
         << r.precision[static_cast<std::size_t>(c)] << ',' << r.recall[static_cast<std::size_t>(c)] << '\n';
  paths.push_back(out_dir / "reports" / "precision_recall.csv");
  write(paths.back(), pr.str());

  std::vector<clf::Family> families;
  for (const auto& r : reports)
    if (std::find(families.begin(), families.end(), r.classifier) == families.end()) families.push_back(r.classifier);
  for (auto f : families) {
    paths.push_back(out_dir / "plots" / ("accuracy_" + std::string(clf::to_string(f)) + ".svg"));
    write(paths.back(), accuracy_plot_svg(reports, f));
  }
  return paths;
}

}  // namespace mtaim::harness
