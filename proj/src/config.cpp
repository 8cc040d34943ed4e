#include "prunelab/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace prunelab {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_real(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + raw + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + raw + "'");
  }
  return v;
}

bool to_bool(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + raw + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T, class F>
std::string join(const std::vector<T>& values, F f) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += f(values[i]);
  }
  return out;
}

}  // namespace

Activation ModelConfig::make_activation() const {
  if (activation == "relu") return Activation::relu();
  if (activation == "poly") return Activation::poly(q);
  throw ConfigError("config: model.activation must be poly or relu");
}

void ExperimentConfig::validate() const {
  data.validate();
  if (n_eval == 0) throw ConfigError("config: data.n_eval must be positive");
  if (model.m == 0) throw ConfigError("config: model.m must be positive");
  if (!(model.sigma0 > 0.0)) throw ConfigError("config: model.sigma0 must be positive");
  (void)model.make_activation();
  if (!(pruning.p >= 0.0 && pruning.p <= 1.0)) throw ConfigError("config: pruning.p must lie in [0, 1]");
  train.validate();
  for (double p : sweep.p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("config: sweep.p_values must lie in [0, 1]");
  }
  for (double s : sweep.sigma_n_values) {
    if (!(s >= 0.0)) throw ConfigError("config: sweep.sigma_n_values must be non-negative");
  }
  if (diagnostics.n_mc < 1000) throw ConfigError("config: diagnostics.n_mc must be at least 1000");
}

std::vector<double> parse_real_list(const std::string& text) {
  const std::string s = trim(text);
  std::vector<double> out;
  if (s.empty()) return out;
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 3) throw ConfigError("range '" + text + "' must be start:stop:step");
    const double a = to_real(parts[0], "range"), b = to_real(parts[1], "range"), step = to_real(parts[2], "range");
    if (!(step > 0.0) || b < a) throw ConfigError("range '" + text + "' needs start <= stop and step > 0");
    const auto count = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
    for (std::size_t k = 0; k < count; ++k) {
      // Snap to 12 decimals so 0.1 * 3 prints as 0.3.
      out.push_back(std::round((a + static_cast<double>(k) * step) * 1e12) / 1e12);
    }
    return out;
  }
  for (const auto& part : split(s, ',')) out.push_back(to_real(part, "list"));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const std::string s = trim(text);
  std::vector<std::uint64_t> out;
  if (s.empty()) return out;
  if (s.find(':') != std::string::npos) {
    const auto parts = split(s, ':');
    if (parts.size() != 2) throw ConfigError("seed range '" + text + "' must be first:last");
    const std::uint64_t a = to_uint(parts[0], "seeds"), b = to_uint(parts[1], "seeds");
    if (b < a) throw ConfigError("seed range '" + text + "' is empty");
    for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  for (const auto& part : split(s, ',')) out.push_back(to_uint(part, "seeds"));
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  ExperimentConfig cfg;
  using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"data",
       {{"K", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.K = to_uint(v, k); }},
        {"d", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.d = to_uint(v, k); }},
        {"n", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.n = to_uint(v, k); }},
        {"mu", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.mu = to_real(v, k); }},
        {"sigma_n",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.sigma_n = to_real(v, k); }},
        {"seed", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.data.seed = to_uint(v, k); }},
        {"n_eval", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.n_eval = to_uint(v, k); }},
        {"preset", [](ExperimentConfig& c, const std::string& v, const std::string&) { c.preset = trim(v); }}}},
      {"model",
       {{"m", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.model.m = to_uint(v, k); }},
        {"sigma0",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.model.sigma0 = to_real(v, k); }},
        {"activation",
         [](ExperimentConfig& c, const std::string& v, const std::string&) { c.model.activation = trim(v); }},
        {"q",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.model.q = static_cast<int>(to_uint(v, k));
         }}}},
      {"pruning",
       {{"p", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.pruning.p = to_real(v, k); }},
        {"reject_signal",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.pruning.reject_signal = to_bool(v, k);
         }},
        {"max_attempts",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.pruning.max_attempts = to_uint(v, k);
         }}}},
      {"train",
       {{"eta", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.train.eta = to_real(v, k); }},
        {"epsilon",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.train.epsilon = to_real(v, k); }},
        {"t_max", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.train.t_max = to_uint(v, k); }},
        {"log_every",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.train.log_every = to_uint(v, k); }},
        {"track_decomposition",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.train.track_decomposition = to_bool(v, k);
         }},
        {"phase_threshold",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           if (trim(v) == "default") {
             c.train.phase_threshold.reset();
           } else {
             c.train.phase_threshold = to_real(v, k);
           }
         }},
        {"phase_mode",
         [](ExperimentConfig& c, const std::string& v, const std::string&) {
           c.train.phase_mode = parse_phase_mode(trim(v));
         }},
        {"check_invariants",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.train.check_invariants = to_bool(v, k);
         }}}},
      {"sweep",
       {{"p_values",
         [](ExperimentConfig& c, const std::string& v, const std::string&) { c.sweep.p_values = parse_real_list(v); }},
        {"sigma_n_values",
         [](ExperimentConfig& c, const std::string& v, const std::string&) {
           c.sweep.sigma_n_values = parse_real_list(v);
         }},
        {"seeds",
         [](ExperimentConfig& c, const std::string& v, const std::string&) { c.sweep.seeds = parse_seed_list(v); }},
        {"pruned_fraction_axis",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.sweep.pruned_fraction_axis = to_bool(v, k);
         }}}},
      {"diagnostics",
       {{"enabled",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.diagnostics.enabled = to_bool(v, k);
         }},
        {"n_mc",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.diagnostics.n_mc = to_uint(v, k); }},
        {"C", [](ExperimentConfig& c, const std::string& v, const std::string& k) { c.diagnostics.C = to_real(v, k); }},
        {"alpha_multiplier",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.diagnostics.alpha_multiplier = to_real(v, k);
         }},
        {"noise_samples",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.diagnostics.noise_samples = to_uint(v, k);
         }},
        {"grad_ceiling",
         [](ExperimentConfig& c, const std::string& v, const std::string& k) {
           c.diagnostics.grad_ceiling = to_real(v, k);
         }}}},
  };

  for (const auto& [section, body] : tree) {
    const auto sec = table.find(section);
    if (sec == table.end()) {
      if (body.empty()) throw ConfigError(origin + ": key '" + section + "' outside any section");
      throw ConfigError(origin + ": unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      const auto setter = sec->second.find(key);
      if (setter == sec->second.end()) throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
      setter->second(cfg, value.data(), section + "." + key);
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream out;
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "[data]\n"
      << "preset = " << cfg.preset << "\n"
      << "K = " << cfg.data.K << "\n"
      << "d = " << cfg.data.d << "\n"
      << "n = " << cfg.data.n << "\n"
      << "mu = " << fmt(cfg.data.mu) << "\n"
      << "sigma_n = " << fmt(cfg.data.sigma_n) << "\n"
      << "seed = " << cfg.data.seed << "\n"
      << "n_eval = " << cfg.n_eval << "\n\n";
  out << "[model]\n"
      << "m = " << cfg.model.m << "\n"
      << "sigma0 = " << fmt(cfg.model.sigma0) << "\n"
      << "activation = " << cfg.model.activation << "\n"
      << "q = " << cfg.model.q << "\n\n";
  out << "[pruning]\n"
      << "p = " << fmt(cfg.pruning.p) << "\n"
      << "reject_signal = " << b(cfg.pruning.reject_signal) << "\n"
      << "max_attempts = " << cfg.pruning.max_attempts << "\n\n";
  out << "[train]\n"
      << "eta = " << fmt(cfg.train.eta) << "\n"
      << "epsilon = " << fmt(cfg.train.epsilon) << "\n"
      << "t_max = " << cfg.train.t_max << "\n"
      << "log_every = " << cfg.train.log_every << "\n"
      << "track_decomposition = " << b(cfg.train.track_decomposition) << "\n"
      << "phase_threshold = " << (cfg.train.phase_threshold ? fmt(*cfg.train.phase_threshold) : "default") << "\n"
      << "phase_mode = " << phase_mode_name(cfg.train.phase_mode) << "\n"
      << "check_invariants = " << b(cfg.train.check_invariants) << "\n\n";
  out << "[sweep]\n"
      << "p_values = " << join(cfg.sweep.p_values, fmt) << "\n"
      << "sigma_n_values = " << join(cfg.sweep.sigma_n_values, fmt) << "\n"
      << "seeds = " << join(cfg.sweep.seeds, [](std::uint64_t s) { return std::to_string(s); }) << "\n"
      << "pruned_fraction_axis = " << b(cfg.sweep.pruned_fraction_axis) << "\n\n";
  out << "[diagnostics]\n"
      << "enabled = " << b(cfg.diagnostics.enabled) << "\n"
      << "n_mc = " << cfg.diagnostics.n_mc << "\n"
      << "C = " << fmt(cfg.diagnostics.C) << "\n"
      << "alpha_multiplier = " << fmt(cfg.diagnostics.alpha_multiplier) << "\n"
      << "noise_samples = " << cfg.diagnostics.noise_samples << "\n"
      << "grad_ceiling = " << fmt(cfg.diagnostics.grad_ceiling) << "\n";
  return out.str();
}

}  // namespace prunelab
