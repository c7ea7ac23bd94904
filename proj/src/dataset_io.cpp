#include "mtaim/dataset_io.hpp"

#include "mtaim/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace mtaim {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw DataError("line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::map<std::string, std::string> parse_meta(std::string_view line) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(line.substr(1))};
  std::string tok;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = d.samples[a];
    const auto& y = d.samples[b];
    return std::make_tuple(x.subject_id, to_index(x.label), x.repetition) <
           std::make_tuple(y.subject_id, to_index(y.label), y.repetition);
  });
  bool any_kin = false;
  for (std::size_t i = 0; i < d.kinematics.size(); ++i) any_kin = any_kin || d.kinematics[i].has_value();

  const double dt = d.empty() ? kNominalDt : d.samples.front().dt;
  const auto prov = d.empty() ? Provenance::Real : d.samples.front().provenance;
  bool generated_kin = false;
  for (const auto& k : d.kinematics)
    if (k && k->provenance == KinematicsProvenance::Generated) generated_kin = true;

  out << "# mtaim-dataset schema=" << d.schema_version << " seed=" << d.seed << " dt=" << format_double(dt)
      << " preprocessed=" << (d.preprocessed ? 1 : 0) << " complete=" << (d.complete ? 1 : 0)
      << " provenance=" << to_string(prov) << " kinematics=" << (generated_kin ? "generated" : "measured") << "\n";
  out << "subject_id,movement,repetition,t_index";
  for (int c = 1; c <= kNumChannels; ++c) out << ",mt" << c;
  if (any_kin)
    for (int c = 1; c <= kNumChannels; ++c) out << ",kin" << c;
  out << "\n";

  for (auto i : order) {
    const auto& s = d.samples[i];
    const KinematicsSample* k = (i < d.kinematics.size() && d.kinematics[i]) ? &*d.kinematics[i] : nullptr;
    for (int t = 0; t < s.steps(); ++t) {
      out << s.subject_id << ',' << to_string(s.label) << ',' << s.repetition << ',' << t;
      for (int c = 0; c < s.values.rows(); ++c) out << ',' << format_double(s.values(c, t));
      if (any_kin) {
        for (int c = 0; c < kNumChannels; ++c) {
          out << ',';
          if (k && t < k->steps()) out << format_double(k->values(c, t));
        }
      }
      out << '\n';
    }
  }
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_dataset(out, d);
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(std::istream& in) {
  Dataset d;
  double dt = kNominalDt;
  Provenance prov = Provenance::Real;
  KinematicsProvenance kin_prov = KinematicsProvenance::Measured;

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool has_kin = false;

  struct Pending {
    std::vector<std::array<double, kNumChannels>> mt;
    std::vector<std::array<double, kNumChannels>> kin;
    bool kin_missing = false;
  };
  std::vector<std::tuple<std::string, MovementLabel, int>> keys;
  std::map<std::tuple<std::string, int, int>, std::size_t> index;
  std::vector<Pending> pending;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      auto kv = parse_meta(line);
      if (kv.count("schema")) d.schema_version = std::stoi(kv["schema"]);
      if (kv.count("seed")) d.seed = std::stoull(kv["seed"]);
      if (kv.count("dt")) dt = parse_double(kv["dt"], line_no);
      if (kv.count("preprocessed")) d.preprocessed = kv["preprocessed"] == "1";
      if (kv.count("complete")) d.complete = kv["complete"] == "1";
      if (kv.count("provenance")) {
        if (kv["provenance"] == "synthetic") prov = Provenance::Synthetic;
        if (kv["provenance"] == "synthetic-groundtruth") prov = Provenance::SyntheticGroundTruth;
      }
      if (kv.count("kinematics") && kv["kinematics"] == "generated") kin_prov = KinematicsProvenance::Generated;
      continue;
    }
    auto cols = split_commas(line);
    if (!header_seen) {
      header_seen = true;
      if (cols.size() != 4 + kNumChannels && cols.size() != 4 + 2 * kNumChannels)
        throw DataError("unexpected header column count " + std::to_string(cols.size()));
      if (cols[0] != "subject_id" || cols[1] != "movement" || cols[2] != "repetition" || cols[3] != "t_index")
        throw DataError("unexpected header: " + line);
      has_kin = cols.size() == 4 + 2 * kNumChannels;
      continue;
    }
    if (cols.size() != (has_kin ? 4 + 2 * kNumChannels : 4 + kNumChannels))
      throw DataError("line " + std::to_string(line_no) + ": wrong column count");
    auto label = parse_label(cols[1]);
    if (!label) throw DataError("line " + std::to_string(line_no) + ": unknown movement '" + std::string(cols[1]) + "'");
    int rep = static_cast<int>(parse_double(cols[2], line_no));
    int t = static_cast<int>(parse_double(cols[3], line_no));
    std::string subject(cols[0]);
    auto key = std::make_tuple(subject, to_index(*label), rep);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, pending.size()).first;
      pending.emplace_back();
      keys.emplace_back(subject, *label, rep);
    }
    auto& p = pending[it->second];
    if (t != static_cast<int>(p.mt.size()))
      throw DataError("line " + std::to_string(line_no) + ": t_index out of sequence");
    std::array<double, kNumChannels> mt{};
    for (int c = 0; c < kNumChannels; ++c) mt[c] = parse_double(cols[4 + c], line_no);
    p.mt.push_back(mt);
    if (has_kin) {
      if (cols[4 + kNumChannels].empty()) {
        p.kin_missing = true;
      } else {
        std::array<double, kNumChannels> k{};
        for (int c = 0; c < kNumChannels; ++c) k[c] = parse_double(cols[4 + kNumChannels + c], line_no);
        p.kin.push_back(k);
      }
    }
  }
  if (!header_seen && line_no > 0 && !pending.empty()) throw DataError("missing header row");

  for (std::size_t i = 0; i < pending.size(); ++i) {
    const auto& p = pending[i];
    MTSample s;
    std::tie(s.subject_id, s.label, s.repetition) = keys[i];
    s.dt = dt;
    s.provenance = prov;
    s.values.resize(kNumChannels, static_cast<Eigen::Index>(p.mt.size()));
    for (std::size_t t = 0; t < p.mt.size(); ++t)
      for (int c = 0; c < kNumChannels; ++c) s.values(c, static_cast<Eigen::Index>(t)) = p.mt[t][c];
    d.samples.push_back(std::move(s));
    if (has_kin) {
      if (p.kin_missing || p.kin.empty()) {
        d.kinematics.emplace_back(std::nullopt);
      } else {
        KinematicsSample k;
        k.provenance = kin_prov;
        k.values.resize(kNumChannels, static_cast<Eigen::Index>(p.kin.size()));
        for (std::size_t t = 0; t < p.kin.size(); ++t)
          for (int c = 0; c < kNumChannels; ++c) k.values(c, static_cast<Eigen::Index>(t)) = p.kin[t][c];
        d.kinematics.emplace_back(std::move(k));
      }
    }
  }
  return d;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_dataset(in);
}

}  // namespace mtaim
