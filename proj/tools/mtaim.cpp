#include "mtaim/classifiers.hpp"
#include "mtaim/config.hpp"
#include "mtaim/dataset_io.hpp"
#include "mtaim/errors.hpp"
#include "mtaim/features.hpp"
#include "mtaim/genmodels.hpp"
#include "mtaim/harness.hpp"
#include "mtaim/metrics.hpp"
#include "mtaim/preprocess.hpp"
#include "mtaim/random.hpp"
#include "mtaim/synthdata.hpp"
#include "mtaim/validate.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace mtaim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitTraining = 3;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  fs::path out = "out";
};

Config load_config(const Globals& g) {
  Config c = g.config_path.empty() ? Config{} : Config::load(g.config_path);
  if (g.seed) {
    const auto s = std::to_string(*g.seed);
    for (const char* key : {"synth.seed", "experiment.seed", "generator.seed", "translator.seed", "classifier.seed"})
      c.set(key, s);
  }
  return c;
}

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  ensure_dir(p.parent_path());
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  auto f = open_out(p);
  f << j.dump(2) << '\n';
}

fs::path or_default(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

Dataset load_checked(const fs::path& p) {
  Dataset d = read_dataset(p);
  const auto violations = validate_dataset(d);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << p.string() << ": " << violations.size() << " invariant violation(s), first: " << violations.front().rule
        << " (" << violations.front().detail << ")";
    throw DataError(msg.str());
  }
  return d;
}

Dataset synthesize(const Config& c) {
  auto sc = synth::SimulatorConfig::from_config(c);
  sc.validate();
  return synth::generate_dataset(sc);
}

Dataset preprocessed_from_config(const Config& c, std::vector<prep::ExclusionRecord>* excluded = nullptr) {
  auto pc = prep::PreprocessConfig::from_config(c);
  pc.validate();
  auto r = prep::preprocess_dataset(synthesize(c), pc);
  if (excluded) *excluded = r.excluded;
  return std::move(r.data);
}

void write_loss(const fs::path& p, const std::vector<double>& log) {
  auto f = open_out(p);
  f << "epoch,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < log.size(); ++i) f << i << ',' << log[i] << '\n';
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const Globals& g) {
  const Config c = load_config(g);
  const auto path = g.out / "data" / "raw.csv";
  ensure_dir(path.parent_path());
  const auto d = synthesize(c);
  write_dataset(path, d);
  std::cout << "wrote " << d.size() << " samples to " << path.string() << '\n';
  return kExitOk;
}

int cmd_preprocess(const Globals& g, const std::string& input) {
  const Config c = load_config(g);
  auto pc = prep::PreprocessConfig::from_config(c);
  pc.validate();
  const auto raw = read_dataset(or_default(input, g.out / "data" / "raw.csv"));
  const auto r = prep::preprocess_dataset(raw, pc);
  const auto path = g.out / "data" / "dataset.csv";
  ensure_dir(path.parent_path());
  write_dataset(path, r.data);
  auto log = open_out(g.out / "reports" / "exclusions.csv");
  prep::write_exclusion_log(log, r.excluded);
  std::cout << "kept " << r.data.size() << " of " << raw.size() << " samples (" << r.excluded.size()
            << " excluded); wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_train_gen(const Globals& g, const std::string& data, const std::string& role) {
  const Config c = load_config(g);
  auto spec = harness::ExperimentSpec::from_config(c);
  const bool translator = role == "translator";
  gen::GeneratorConfig cfg = translator ? spec.translator : spec.generator;
  cfg.validate();
  const auto d = load_checked(or_default(data, g.out / "data" / "dataset.csv"));
  const auto a = gen::train_generator(cfg, d);
  const auto path = g.out / "artifacts" / (role + ".json");
  ensure_dir(path.parent_path());
  a.save(path);
  write_loss(g.out / "reports" / (role + "_loss.csv"), a.training_log);
  std::cout << "trained " << gen::to_string(cfg.family) << " (" << gen::to_string(cfg.mode) << ") for "
            << a.training_log.size() << " epochs, final loss " << (a.training_log.empty() ? 0.0 : a.training_log.back())
            << "; wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_sample(const Globals& g, const std::string& model, int per_label) {
  const auto a = gen::GeneratorArtifact::load(or_default(model, g.out / "artifacts" / "generator.json"));
  if (per_label < 1) throw ConfigError("per-label", "must be >= 1");
  const std::uint64_t seed = g.seed.value_or(1);
  Dataset out;
  out.seed = seed;
  out.complete = false;
  for (auto m : kAllMovements) {
    auto s = gen::sample_mt(a, m, per_label, derive_seed(seed, "sample", to_index(m)));
    out.samples.insert(out.samples.end(), s.begin(), s.end());
  }
  const auto path = g.out / "data" / "synthetic.csv";
  ensure_dir(path.parent_path());
  write_dataset(path, out);
  std::cout << "wrote " << out.size() << " synthetic samples to " << path.string() << '\n';
  return kExitOk;
}

int cmd_translate(const Globals& g, const std::string& model, const std::string& data) {
  const auto a = gen::GeneratorArtifact::load(or_default(model, g.out / "artifacts" / "translator.json"));
  Dataset d = read_dataset(or_default(data, g.out / "data" / "dataset.csv"));
  const auto kin = gen::translate_batch(a, d.samples, g.seed.value_or(1));
  d.kinematics.assign(kin.begin(), kin.end());
  const auto path = g.out / "data" / "translated.csv";
  ensure_dir(path.parent_path());
  write_dataset(path, d);
  std::cout << "translated " << kin.size() << " samples; wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_train_clf(const Globals& g, const std::string& data, bool dtft, bool kinematics, bool grid, int folds) {
  const Config c = load_config(g);
  auto cfg = clf::ClassifierConfig::from_config(c);
  cfg.validate();
  const auto d = load_checked(or_default(data, g.out / "data" / "dataset.csv"));
  if (kinematics && !d.has_kinematics()) throw DataError("--kinematics needs a dataset with paired kinematics");
  std::vector<const KinematicsSample*> kin;
  for (std::size_t i = 0; i < d.size(); ++i) kin.push_back(kinematics ? &d.kin(i) : nullptr);
  const auto x = harness::build_features(d.samples, kin, dtft, kinematics);

  if (grid) {
    if (cfg.family != clf::Family::Attention) throw ConfigError("classifier.family", "the declared grid is for attention");
    const auto r = clf::grid_search(clf::attention_grid(cfg), x, folds, cfg.seed);
    auto f = open_out(g.out / "reports" / "grid.csv");
    clf::write_grid_table(f, r);
    cfg = r.best;
    std::cout << "grid best: " << cfg.describe() << '\n';
  }
  const auto model = clf::train_classifier(cfg, x);
  const auto path = g.out / "artifacts" / "classifier.json";
  ensure_dir(path.parent_path());
  model.save(path);
  write_loss(g.out / "reports" / "classifier_loss.csv", model.training_log);
  std::cout << "trained " << clf::to_string(cfg.family) << " on " << x.size() << " samples x "
            << model.manifest.channels.size() << " channels; wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_eval_gen(const Globals& g, const std::string& data, const std::vector<std::string>& families, int repeats,
                 int per_label, bool per_channel) {
  const Config c = load_config(g);
  const auto d = load_checked(or_default(data, g.out / "data" / "dataset.csv"));
  std::vector<gen::GeneratorConfig> configs;
  for (const auto& name : families) {
    Config fc = c;
    fc.set("generator.family", name);
    auto cfg = gen::GeneratorConfig::from_config(fc, "generator");
    cfg.mode = gen::ConditioningMode::MovementLabel;
    cfg.validate();
    configs.push_back(cfg);
  }
  const auto scores =
      harness::compare_generators(configs, d, repeats, per_label, g.seed.value_or(1),
                                  per_channel ? metrics::Pooling::PerChannel : metrics::Pooling::Pooled, &std::cout);
  auto f = open_out(g.out / "reports" / "generator_metrics.csv");
  metrics::write_metric_table(f, harness::generator_metric_rows(scores));
  for (const auto& s : scores) {
    const auto cs = metrics::mean_std(s.collapse);
    if (cs.mean < gen::kCollapseWarning)
      std::cerr << "warning: " << gen::to_string(s.family) << " mode-collapse score " << cs.mean << '\n';
  }
  std::cout << "wrote " << (g.out / "reports" / "generator_metrics.csv").string() << '\n';
  return kExitOk;
}

int cmd_run_matrix(const Globals& g, const std::string& data) {
  const Config c = load_config(g);
  const auto spec = harness::MatrixSpec::from_config(c);
  spec.base.validate();
  const Dataset d = data.empty() ? preprocessed_from_config(c) : load_checked(data);
  const auto reports = harness::run_matrix(spec, d, &std::cout);
  auto j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(r.to_json());
  write_json(g.out / "reports" / "experiments.json", j);
  for (const auto& p : harness::emit_report(reports, g.out)) std::cout << "wrote " << p.string() << '\n';
  return kExitOk;
}

int cmd_report(const Globals& g, const std::string& experiments, const std::string& data, int folds) {
  const fs::path src = or_default(experiments, g.out / "reports" / "experiments.json");
  std::ifstream in(src);
  if (!in) throw IoError("cannot read " + src.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<harness::ExperimentReport> reports;
  for (const auto& e : j) reports.push_back(harness::ExperimentReport::from_json(e));
  if (reports.empty()) throw DataError(src.string() + ": no reports");
  for (const auto& p : harness::emit_report(reports, g.out)) std::cout << "wrote " << p.string() << '\n';

  if (!data.empty()) {
    const Config c = load_config(g);
    const auto d = load_checked(data);
    const auto probe = metrics::subject_leakage_probe(d, folds, clf::ClassifierConfig::from_config(c),
                                                      g.seed.value_or(1));
    auto pf = open_out(g.out / "reports" / "subject_probe.csv");
    pf << "fold,accuracy\n" << std::setprecision(17);
    for (std::size_t k = 0; k < probe.fold_accuracy.size(); ++k) pf << k << ',' << probe.fold_accuracy[k] << '\n';
    pf << "mean," << probe.mean << "\nstd," << probe.std << "\nchance," << probe.chance << '\n';

    Matrix x(static_cast<Eigen::Index>(d.size()), d.samples.front().values.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      x.row(static_cast<Eigen::Index>(i)) = d.samples[i].values.reshaped().transpose();
    const auto pca = metrics::pca_project(x, 2);
    auto cf = open_out(g.out / "reports" / "pca.csv");
    cf << "subject_id,movement,repetition,pc1,pc2\n" << std::setprecision(17);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto& s = d.samples[i];
      cf << s.subject_id << ',' << to_string(s.label) << ',' << s.repetition << ','
         << pca.coordinates(static_cast<Eigen::Index>(i), 0) << ',' << pca.coordinates(static_cast<Eigen::Index>(i), 1)
         << '\n';
    }
    std::cout << "subject probe " << probe.mean << " +- " << probe.std << " (chance " << probe.chance
              << "); explained variance " << pca.explained_ratio(0) << ", " << pca.explained_ratio(1) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Movement classification from strain sensors with generative data and feature augmentation"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::string out = "out";
  app.add_option("--config", g.config_path, "key = value config file with [section] headers")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed; overrides every seed in the config");
  app.add_option("--out", out, "output directory (data/, artifacts/, reports/, plots/)");

  std::string input, data, model, role = "generator", experiments;
  int per_label = 20, repeats = 5, folds = 5;
  bool dtft = false, kinematics = false, grid = false, per_channel = false;
  std::vector<std::string> families{"cvae", "diffusion", "gan"};

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  auto* prep = app.add_subcommand("preprocess", "filter, exclude, resample and normalise a dataset");
  prep->add_option("--input", input, "raw dataset (default <out>/data/raw.csv)");
  auto* train_gen = app.add_subcommand("train-gen", "train a generator");
  train_gen->add_option("--data", data, "preprocessed dataset (default <out>/data/dataset.csv)");
  train_gen->add_option("--role", role, "generator (label-conditioned) or translator (MT-conditioned kinematics)")
      ->check(CLI::IsMember({"generator", "translator"}));
  auto* sample = app.add_subcommand("sample", "draw synthetic MT samples from a trained generator");
  sample->add_option("--model", model, "generator artifact (default <out>/artifacts/generator.json)");
  sample->add_option("--per-label", per_label, "samples per movement");
  auto* translate = app.add_subcommand("translate", "generate kinematics for every sample of a dataset");
  translate->add_option("--model", model, "translator artifact (default <out>/artifacts/translator.json)");
  translate->add_option("--data", data, "dataset (default <out>/data/dataset.csv)");
  auto* train_clf = app.add_subcommand("train-clf", "train a movement classifier");
  train_clf->add_option("--data", data, "dataset (default <out>/data/dataset.csv)");
  train_clf->add_flag("--dtft", dtft, "add the DFT magnitude channels");
  train_clf->add_flag("--kinematics", kinematics, "add the paired kinematics channels");
  train_clf->add_flag("--grid", grid, "grid-search the attention classifier first");
  train_clf->add_option("--folds", folds, "cross-validation folds for --grid");
  auto* eval_gen = app.add_subcommand("eval-gen", "compare generator families on Frechet and Wasserstein distance");
  eval_gen->add_option("--data", data, "dataset (default <out>/data/dataset.csv)");
  eval_gen->add_option("--families", families, "families to compare")->delimiter(',');
  eval_gen->add_option("--repeats", repeats, "seeded runs per family");
  eval_gen->add_option("--per-label", per_label, "samples per movement per run");
  eval_gen->add_flag("--per-channel", per_channel, "average per-channel Wasserstein instead of pooling");
  auto* run_matrix = app.add_subcommand("run-matrix", "run the augmentation x classifier experiment matrix");
  run_matrix->add_option("--data", data, "preprocessed dataset (default: synthesise from the config)");
  auto* report = app.add_subcommand("report", "emit tables and plots from saved experiment reports");
  report->add_option("--experiments", experiments, "reports JSON (default <out>/reports/experiments.json)");
  report->add_option("--data", data, "dataset for the subject probe and PCA tables");
  report->add_option("--folds", folds, "subject probe folds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  g.out = out;
  if (seed_opt->count() > 0) g.seed = seed;

  try {
    if (*synth) return cmd_synth(g);
    if (*prep) return cmd_preprocess(g, input);
    if (*train_gen) return cmd_train_gen(g, data, role);
    if (*sample) return cmd_sample(g, model, per_label);
    if (*translate) return cmd_translate(g, model, data);
    if (*train_clf) return cmd_train_clf(g, data, dtft, kinematics, grid, folds);
    if (*eval_gen) return cmd_eval_gen(g, data, families, repeats, per_label, per_channel);
    if (*run_matrix) return cmd_run_matrix(g, data);
    if (*report) return cmd_report(g, experiments, data, folds);
  } catch (const TrainingError& e) {
    std::cerr << e.what() << '\n';
    return kExitTraining;
  } catch (const IoError& e) {
    std::cerr << e.what() << '\n';
    return kExitFailure;
  } catch (const LeakageError& e) {
    std::cerr << e.what() << '\n';
    return kExitFailure;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "malformed JSON: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
