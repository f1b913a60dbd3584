#include "sfod/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace sfod {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_float(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + *v + "'");
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + *v + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + *v + "'");
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::vector<std::string> Config::unknown_keys(const std::vector<std::string>& known) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
  }
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

namespace {

const char* kDomainFields[] = {"image_size", "noise_scale", "base_color_min", "base_color_max", "min_objects",
                               "max_objects", "min_size",   "max_size",       "shift",          "fog_strength",
                               "fog_blur",   "sensor_noise", "scale_factor"};

Rgb parse_rgb(const std::string& key, const std::string& text) {
  Rgb c{};
  std::istringstream in(text);
  for (float& v : c) {
    if (!(in >> v)) throw ConfigError("config key '" + key + "': expected three numbers");
    if (in.peek() == ',') in.get();
  }
  return c;
}

DomainSpec domain_from(const Config& c, const std::string& prefix, DomainSpec d) {
  const auto k = [&prefix](const char* f) { return prefix + "." + f; };
  d.image_size = static_cast<int>(c.get_int(k("image_size"), d.image_size));
  d.noise_scale = static_cast<float>(c.get_double(k("noise_scale"), d.noise_scale));
  d.base_color_min = static_cast<float>(c.get_double(k("base_color_min"), d.base_color_min));
  d.base_color_max = static_cast<float>(c.get_double(k("base_color_max"), d.base_color_max));
  d.min_objects = static_cast<int>(c.get_int(k("min_objects"), d.min_objects));
  d.max_objects = static_cast<int>(c.get_int(k("max_objects"), d.max_objects));
  d.min_size = static_cast<float>(c.get_double(k("min_size"), d.min_size));
  d.max_size = static_cast<float>(c.get_double(k("max_size"), d.max_size));
  if (const auto s = c.get(k("shift"))) d.shift = shift_kind_from_name(*s);
  d.fog_strength = static_cast<float>(c.get_double(k("fog_strength"), d.fog_strength));
  d.fog_blur = static_cast<float>(c.get_double(k("fog_blur"), d.fog_blur));
  d.sensor_noise = static_cast<float>(c.get_double(k("sensor_noise"), d.sensor_noise));
  d.scale_factor = static_cast<float>(c.get_double(k("scale_factor"), d.scale_factor));
  if (const auto s = c.get(k("haze_color"))) d.haze_color = parse_rgb(k("haze_color"), *s);
  if (const auto s = c.get(k("color_cast"))) d.color_cast = parse_rgb(k("color_cast"), *s);
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(prefix + ": " + e.what());
  }
  return d;
}

void domain_to(Config& c, const std::string& prefix, const DomainSpec& d) {
  const auto k = [&prefix](const char* f) { return prefix + "." + f; };
  c.set(k("image_size"), std::to_string(d.image_size));
  c.set(k("noise_scale"), format_float(d.noise_scale));
  c.set(k("base_color_min"), format_float(d.base_color_min));
  c.set(k("base_color_max"), format_float(d.base_color_max));
  c.set(k("min_objects"), std::to_string(d.min_objects));
  c.set(k("max_objects"), std::to_string(d.max_objects));
  c.set(k("min_size"), format_float(d.min_size));
  c.set(k("max_size"), format_float(d.max_size));
  c.set(k("shift"), shift_kind_name(d.shift));
  c.set(k("fog_strength"), format_float(d.fog_strength));
  c.set(k("fog_blur"), format_float(d.fog_blur));
  c.set(k("sensor_noise"), format_float(d.sensor_noise));
  c.set(k("scale_factor"), format_float(d.scale_factor));
  const auto rgb = [](const Rgb& v) { return format_float(v[0]) + "," + format_float(v[1]) + "," + format_float(v[2]); };
  c.set(k("haze_color"), rgb(d.haze_color));
  c.set(k("color_cast"), rgb(d.color_cast));
}

}  // namespace

BenchmarkSpec benchmark_from_config(const Config& config) {
  std::vector<std::string> known{"splits.source_train", "splits.source_test", "splits.target_train", "splits.target_test"};
  for (const char* prefix : {"source", "target"}) {
    for (const char* f : kDomainFields) known.push_back(std::string(prefix) + "." + f);
    known.push_back(std::string(prefix) + ".haze_color");
    known.push_back(std::string(prefix) + ".color_cast");
  }
  if (const auto unknown = config.unknown_keys(known); !unknown.empty()) {
    throw ConfigError("unknown benchmark config key '" + unknown.front() + "'");
  }
  BenchmarkSpec b = BenchmarkSpec::defaults();
  b.source = domain_from(config, "source", b.source);
  b.target = domain_from(config, "target", b.target);
  b.source_train = static_cast<int>(config.get_int("splits.source_train", b.source_train));
  b.source_test = static_cast<int>(config.get_int("splits.source_test", b.source_test));
  b.target_train = static_cast<int>(config.get_int("splits.target_train", b.target_train));
  b.target_test = static_cast<int>(config.get_int("splits.target_test", b.target_test));
  for (int n : {b.source_train, b.source_test, b.target_train, b.target_test}) {
    if (n < 0) throw ConfigError("split sizes must be non-negative");
  }
  return b;
}

Config benchmark_to_config(const BenchmarkSpec& spec) {
  Config c;
  domain_to(c, "source", spec.source);
  domain_to(c, "target", spec.target);
  c.set("splits.source_train", std::to_string(spec.source_train));
  c.set("splits.source_test", std::to_string(spec.source_test));
  c.set("splits.target_train", std::to_string(spec.target_train));
  c.set("splits.target_test", std::to_string(spec.target_test));
  return c;
}

}  // namespace sfod
