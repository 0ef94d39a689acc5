#include "twoscale/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "twoscale/errors.hpp"

namespace twoscale {
namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

double parse_plain(const std::string& s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError("'" + s + "' is not a number");
  }
  return v;
}

int parse_int(const std::string& s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("'" + s + "' is not an integer");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError("'" + s + "' is not a boolean");
}

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"problem",
       {"preset", "T", "bounds", "points", "initial_center", "initial_width", "initial_amplitude",
        "flow", "substeps"}},
      {"fields", {}},
      {"expansion", {"K", "tau_points", "checkpoints"}},
      {"reference", {"N_fast", "memory_limit_gb"}},
      {"sweep", {"eps", "norm", "trace"}},
      {"output", {"directory", "record_timings"}},
  };
  return keys;
}

// Key names used in validate() messages, mapped to config keys.
const std::map<std::string, std::string>& validation_keys() {
  static const std::map<std::string, std::string> keys{
      {"eps", "sweep.eps"},           {"K", "expansion.K"},
      {"T", "problem.T"},             {"tau_points", "expansion.tau_points"},
      {"checkpoints", "expansion.checkpoints"}, {"n_fast", "reference.N_fast"},
      {"points", "problem.points"},   {"substeps", "problem.substeps"},
      {"bounds", "problem.bounds"},
  };
  return keys;
}

struct Entry {
  std::string value;
  int line = 0;
};

}  // namespace

double parse_number(const std::string& text) {
  std::string s = trim(text);
  auto slash = s.find('/');
  if (slash == std::string::npos) return parse_plain(s);
  double num = parse_plain(trim(s.substr(0, slash)));
  double den = parse_plain(trim(s.substr(slash + 1)));
  if (den == 0.0) throw ConfigError("'" + s + "' divides by zero");
  return num / den;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  auto fail = [&](int line, const std::string& what) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line) + ": " + what);
  };

  std::map<std::string, Entry> entries;  // "section.key"
  std::set<std::string> sections;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int n = 0;
  while (std::getline(in, raw)) {
    ++n;
    std::string line = raw;
    auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail(n, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!known_keys().count(section)) throw fail(n, "unknown section [" + section + "]");
      if (!sections.insert(section).second) throw fail(n, "duplicate section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw fail(n, "expected key = value");
    if (section.empty()) throw fail(n, "key outside of a section");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw fail(n, "empty key");
    if (value.empty()) throw fail(n, "empty value for '" + key + "'");
    bool field_key = section == "fields" && (key == "v_parallel" || key.rfind("order", 0) == 0);
    if (section != "fields" && !known_keys().at(section).count(key)) {
      throw fail(n, "unknown key '" + key + "' in [" + section + "]");
    }
    if (section == "fields" && !field_key) {
      throw fail(n, "unknown key '" + key + "' in [fields]");
    }
    std::string full = section + "." + key;
    if (entries.count(full)) throw fail(n, "duplicate key '" + key + "' in [" + section + "]");
    entries[full] = Entry{value, n};
  }
  for (const auto& [name, keys] : known_keys()) {
    if (!sections.count(name)) throw ConfigError(source + ": missing section [" + name + "]");
  }

  RunConfig cfg;
  cfg.source = source;
  for (const auto& [k, e] : entries) cfg.lines[k] = e.line;
  SweepConfig& sw = cfg.sweep;

  auto has = [&](const std::string& k) { return entries.count(k) > 0; };
  auto require = [&](const std::string& k) -> const Entry& {
    auto it = entries.find(k);
    if (it == entries.end()) throw ConfigError(source + ": missing required key '" + k + "'");
    return it->second;
  };
  // Runs `f` on the value and prefixes any ConfigError with the line and key.
  auto with = [&](const std::string& k, auto f) {
    const Entry& e = require(k);
    try {
      f(e.value);
    } catch (const ConfigError& err) {
      throw fail(e.line, k.substr(k.find('.') + 1) + ": " + err.what());
    }
  };

  with("problem.preset",
       [&](const std::string& v) { sw.preset = parse_preset(v); });
  const PresetInfo& info = preset_info(sw.preset);
  with("problem.T",
       [&](const std::string& v) { sw.horizon = parse_number(v); });
  if (has("problem.points")) {
    with("problem.points", [&](const std::string& v) { sw.points = parse_int(v); });
  }
  if (has("problem.bounds")) {
    with("problem.bounds", [&](const std::string& v) {
      auto pairs = split_list(v, ',');
      if (static_cast<int>(pairs.size()) != info.dims) {
        throw ConfigError("expected " + std::to_string(info.dims) + " 'lower upper' pairs");
      }
      int points = sw.points > 0 ? sw.points : (sw.preset == PresetId::kBeam ? 128 : 24);
      for (const auto& p : pairs) {
        std::istringstream ps(p);
        std::string lo, hi, extra;
        if (!(ps >> lo >> hi) || (ps >> extra)) throw ConfigError("bad pair '" + p + "'");
        Axis a{parse_number(lo), parse_number(hi), points};
        if (!(a.upper > a.lower)) throw ConfigError("upper must exceed lower in '" + p + "'");
        sw.axes.push_back(a);
      }
    });
  }
  if (has("problem.initial_center")) {
    with("problem.initial_center", [&](const std::string& v) {
      for (const auto& c : split_list(v, ',')) sw.initial.center.push_back(parse_number(c));
      if (static_cast<int>(sw.initial.center.size()) != info.dims) {
        throw ConfigError("expected " + std::to_string(info.dims) + " coordinates");
      }
    });
  }
  if (has("problem.initial_width")) {
    with("problem.initial_width", [&](const std::string& v) {
      sw.initial.width = parse_number(v);
      if (!(sw.initial.width > 0.0)) throw ConfigError("must be positive");
    });
  }
  if (has("problem.initial_amplitude")) {
    with("problem.initial_amplitude",
         [&](const std::string& v) { sw.initial.amplitude = parse_number(v); });
  }
  if (has("problem.flow")) {
    with("problem.flow", [&](const std::string& v) {
      if (v == "analytic") {
        sw.flow_kind = FlowKind::kAnalytic;
      } else if (v == "numeric") {
        sw.flow_kind = FlowKind::kNumeric;
      } else {
        throw ConfigError("expected analytic or numeric, got '" + v + "'");
      }
    });
  }
  if (has("problem.substeps")) {
    with("problem.substeps", [&](const std::string& v) { sw.substeps_per_unit = parse_int(v); });
  }

  // [fields]
  int highest = -1;
  for (const auto& [k, e] : entries) {
    if (k.rfind("fields.order", 0) != 0) continue;
    std::string rest = k.substr(std::string("fields.order").size());
    auto dot = rest.find('.');
    int order = -1;
    std::string comp;
    if (dot != std::string::npos) {
      try {
        order = parse_int(rest.substr(0, dot));
      } catch (const ConfigError&) {
        order = -1;
      }
      comp = rest.substr(dot + 1);
    }
    if (order < 0 || order > 3) {
      throw fail(e.line, "field key '" + k.substr(7) + "' must read order<0..3>.<component>");
    }
    if (std::find(info.components.begin(), info.components.end(), comp) == info.components.end()) {
      throw fail(e.line, "preset " + info.name + " has no field component '" + comp + "'");
    }
    highest = std::max(highest, order);
  }
  if (highest < 0) throw ConfigError(source + ": [fields] needs at least the order0 components");
  for (int i = 0; i <= highest; ++i) {
    std::vector<FieldForm> comps;
    for (const auto& c : info.components) {
      std::string key = "fields.order" + std::to_string(i) + "." + c;
      if (!has(key)) {
        throw ConfigError(source + ": missing field '" + key.substr(7) + "'");
      }
      with(key, [&](const std::string& v) {
        comps.push_back(parse_field_form(v, sw.preset == PresetId::kBeam ? 1 : 2));
      });
    }
    sw.fields.orders.push_back(comps);
  }
  if (has("fields.v_parallel")) {
    with("fields.v_parallel", [&](const std::string& v) { sw.fields.v_parallel = parse_number(v); });
  }

  with("expansion.K", [&](const std::string& v) { sw.order = parse_int(v); });
  if (has("expansion.tau_points")) {
    with("expansion.tau_points", [&](const std::string& v) { sw.tau_points = parse_int(v); });
  }
  if (has("expansion.checkpoints")) {
    with("expansion.checkpoints", [&](const std::string& v) { sw.checkpoints = parse_int(v); });
  }
  if (has("reference.N_fast")) {
    with("reference.N_fast", [&](const std::string& v) { sw.n_fast = parse_int(v); });
  }
  if (has("reference.memory_limit_gb")) {
    with("reference.memory_limit_gb", [&](const std::string& v) {
      double gb = parse_number(v);
      if (!(gb > 0.0)) throw ConfigError("must be positive");
      sw.memory_limit_bytes = gb * 1e9;
    });
  }
  with("sweep.eps", [&](const std::string& v) {
    sw.eps.clear();
    for (const auto& item : split_list(v, ',')) sw.eps.push_back(parse_number(item));
  });
  if (has("sweep.norm")) {
    with("sweep.norm", [&](const std::string& v) {
      try {
        sw.norm = parse_norm(v);
      } catch (const InputError& e) {
        throw ConfigError(e.what());
      }
    });
  }
  if (has("sweep.trace")) {
    with("sweep.trace", [&](const std::string& v) { sw.trace = parse_bool(v); });
  }
  if (has("output.directory")) cfg.output_directory = entries.at("output.directory").value;
  if (has("output.record_timings")) {
    with("output.record_timings", [&](const std::string& v) { sw.record_timings = parse_bool(v); });
  }

  try {
    validate(sw);
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    auto colon = msg.find(':');
    auto it = colon == std::string::npos ? validation_keys().end()
                                         : validation_keys().find(msg.substr(0, colon));
    if (it != validation_keys().end() && has(it->second)) throw fail(entries.at(it->second).line, msg);
    throw ConfigError(source + ": " + msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

}  // namespace twoscale
