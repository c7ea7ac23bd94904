#pragma once

#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace mtaim {

// key = value text config with [section] headers, e.g.
//
//   [synth]
//   n_subjects = 10
//
// Keys are addressed as "section.key".
class Config {
 public:
  Config() = default;
  static Config load(const std::filesystem::path& path);
  static Config parse(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);

 private:
  boost::property_tree::ptree tree_;
};

}  // namespace mtaim
