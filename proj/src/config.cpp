#include "mtaim/config.hpp"

#include "mtaim/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>

#include <algorithm>
#include <sstream>

namespace mtaim {

namespace pt = boost::property_tree;

Config Config::load(const std::filesystem::path& path) {
  Config c;
  try {
    pt::read_ini(path.string(), c.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(path.string(), e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return c;
}

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  try {
    pt::read_ini(in, c.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("<string>", e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return c;
}

bool Config::has(const std::string& key) const { return tree_.get_optional<std::string>(key).has_value(); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return tree_.get<std::string>(key, fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  auto v = tree_.get_optional<std::string>(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    double d = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + *v + "'");
  }
}

int Config::get_int(const std::string& key, int fallback) const {
  auto v = tree_.get_optional<std::string>(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    int i = std::stoi(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + *v + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto v = tree_.get_optional<std::string>(key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + *v + "'");
}

void Config::set(const std::string& key, const std::string& value) { tree_.put(key, value); }

}  // namespace mtaim
