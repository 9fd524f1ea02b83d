#include "vmt/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "vmt/errors.hpp"

namespace vmt {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

LossTermMask mask_from_string(const std::string& s) {
  LossTermMask mask;
  mask.use_lc = mask.use_lv = mask.use_lm = false;
  if (s.empty() || s == "none") return mask;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "Lc" || tok == "lc") {
      mask.use_lc = true;
    } else if (tok == "Lv" || tok == "lv") {
      mask.use_lv = true;
    } else if (tok == "Lm" || tok == "lm") {
      mask.use_lm = true;
    } else {
      throw ConfigError("mask: unknown term '" + tok + "' (accepted: Lc, Lv, Lm)");
    }
  }
  return mask;
}

std::string mask_to_string(const LossTermMask& mask) {
  std::string out;
  for (const auto& [on, name] : {std::pair{mask.use_lc, "Lc"}, {mask.use_lv, "Lv"},
                                 {mask.use_lm, "Lm"}}) {
    if (!on) continue;
    if (!out.empty()) out += ',';
    out += name;
  }
  return out.empty() ? "none" : out;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_f64(const std::string& where, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ConfigError("config: " + where + " expects a number, got '" + v + "'");
  }
  return out;
}

int64_t to_i64(const std::string& where, const std::string& v) {
  char* end = nullptr;
  const long long out = std::strtoll(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ConfigError("config: " + where + " expects an integer, got '" + v + "'");
  }
  return out;
}

uint64_t to_u64(const std::string& where, const std::string& v) {
  char* end = nullptr;
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (end != v.c_str() + v.size() || v.empty() || v[0] == '-') {
    throw ConfigError("config: " + where + " expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + where + " expects true or false, got '" + v + "'");
}

std::vector<int64_t> to_widths(const std::string& where, const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_i64(where, trim(tok)));
  if (out.empty()) throw ConfigError("config: " + where + " expects a width list");
  return out;
}

std::string widths_to_string(const std::vector<int64_t>& w) {
  std::string out;
  for (int64_t v : w) {
    if (!out.empty()) out += ',';
    out += std::to_string(v);
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& where,
                                  const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"task",
       {
           {"generator", [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.task.generator = generator_from_string(v);
            }},
           {"n", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.n = to_i64(w, v);
            }},
           {"classes", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.classes = to_i64(w, v);
            }},
           {"noise", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.noise = to_f64(w, v);
            }},
           {"rotation", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.shift.rotation_deg = to_f64(w, v);
            }},
           {"translate_x", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.shift.translate_x = to_f64(w, v);
            }},
           {"translate_y", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.shift.translate_y = to_f64(w, v);
            }},
           {"scale", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.task.shift.scale = to_f64(w, v);
            }},
           {"normalization", [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.task.normalization = standardize_from_string(v);
            }},
       }},
      {"model",
       {
           {"g_widths", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.model.g_widths = to_widths(w, v);
            }},
           {"d_widths", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.model.d_widths = to_widths(w, v);
            }},
           {"hidden", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              if (v == "relu") {
                c.model.hidden_act = Activation::relu;
              } else if (v == "identity") {
                c.model.hidden_act = Activation::identity;
              } else {
                throw ConfigError("config: " + w + " must be relu or identity, got '" + v + "'");
              }
            }},
       }},
      {"loss",
       {
           {"lambda_d", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.weights.lambda_d = to_f64(w, v);
            }},
           {"lambda_s", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.weights.lambda_s = to_f64(w, v);
            }},
           {"lambda_t", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.weights.lambda_t = to_f64(w, v);
            }},
           {"beta", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.weights.beta = to_f64(w, v);
            }},
           {"alpha", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.mix.alpha = to_f64(w, v);
            }},
           {"epsilon", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.vat.epsilon = to_f64(w, v);
            }},
           {"xi", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.vat.xi = to_f64(w, v);
            }},
           {"power_iters", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.vat.power_iters = static_cast<int>(to_i64(w, v));
            }},
           {"site", [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.mask.site = mix_site_from_string(v);
            }},
           {"mask", [](ExperimentConfig& c, const std::string&, const std::string& v) {
              const MixSite site = c.mask.site;
              c.mask = mask_from_string(v);
              c.mask.site = site;
            }},
           {"per_sample_lambda", [](ExperimentConfig& c, const std::string& w,
                                    const std::string& v) {
              c.mix.per_sample_lambda = to_bool(w, v);
            }},
           {"sever_virtual", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.mix.sever_virtual = to_bool(w, v);
            }},
       }},
      {"optim",
       {
           {"lr", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.adam.lr = to_f64(w, v);
            }},
           {"beta1", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.adam.beta1 = to_f64(w, v);
            }},
           {"beta2", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.adam.beta2 = to_f64(w, v);
            }},
           {"eps", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.adam.eps = to_f64(w, v);
            }},
           {"ema", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.ema_momentum = to_f64(w, v);
            }},
       }},
      {"train",
       {
           {"batch", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.batch = to_i64(w, v);
            }},
           {"iters", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.iters = to_i64(w, v);
            }},
           {"disc_steps", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.disc_steps = to_i64(w, v);
            }},
           {"refine_iters", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.refine_iters = to_i64(w, v);
            }},
           {"refine_interval", [](ExperimentConfig& c, const std::string& w,
                                  const std::string& v) {
              c.refine_interval = to_i64(w, v);
            }},
           {"seed", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.seed = to_u64(w, v);
            }},
           {"debug_checks", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.debug_checks = to_bool(w, v);
            }},
       }},
      {"eval",
       {
           {"interval", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.eval_interval = to_i64(w, v);
            }},
           {"probe_pairs", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.probe_pairs = to_i64(w, v);
            }},
           {"probe_lambdas", [](ExperimentConfig& c, const std::string& w, const std::string& v) {
              c.probe_lambdas = to_i64(w, v);
            }},
           {"probe_full_jacobian", [](ExperimentConfig& c, const std::string& w,
                                      const std::string& v) {
              c.probe_full_jacobian = to_bool(w, v);
            }},
       }},
  };
  return s;
}

std::string keys_of(const std::map<std::string, Setter>& m) {
  std::string out;
  for (const auto& [k, _] : m) {
    if (!out.empty()) out += ", ";
    out += k;
  }
  return out;
}

std::string sections_of() {
  std::string out;
  for (const auto& [k, _] : schema()) {
    if (!out.empty()) out += ", ";
    out += "[" + k + "]";
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line;
  std::string section;
  std::map<std::string, std::map<std::string, bool>> seen;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        throw ConfigError("config: malformed section header at line " + std::to_string(lineno));
      }
      section = t.substr(1, t.size() - 2);
      if (schema().find(section) == schema().end()) {
        throw ConfigError("config: unknown section [" + section + "]; accepted sections: " +
                          sections_of());
      }
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno) +
                        ", got '" + t + "'");
    }
    if (section.empty()) {
      throw ConfigError("config: key outside any section at line " + std::to_string(lineno));
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto& keys = schema().at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) {
      throw ConfigError("config: unknown key '" + key + "' in [" + section +
                        "]; accepted keys: " + keys_of(keys));
    }
    if (seen[section][key]) {
      throw ConfigError("config: duplicate key '" + key + "' in [" + section + "]");
    }
    seen[section][key] = true;
    it->second(cfg, section + "." + key, value);
  }
  // The model sees whatever the task produces.
  cfg.model.input_dim = 2;
  cfg.model.classes = cfg.task.classes;
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open '" + path + "'");
  return parse_config(is);
}

void ExperimentConfig::validate() const {
  task.validate();
  model.validate();
  weights.validate();
  vat.validate();
  mix.validate();
  if (model.input_dim != 2) throw ValueError("model: input_dim must be 2 for the planar tasks");
  if (model.classes != task.classes) {
    throw ValueError("model: classes must match task classes");
  }
  if (!(adam.lr > 0)) throw ValueError("optim: lr must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ValueError("optim: beta1 and beta2 must lie in [0, 1)");
  }
  if (!(adam.eps > 0)) throw ValueError("optim: eps must be positive");
  if (!(ema_momentum >= 0 && ema_momentum < 1)) {
    throw ValueError("optim: ema must lie in [0, 1)");
  }
  if (batch < 2) throw ValueError("train: batch must be at least 2");
  if (iters < 0) throw ValueError("train: iters must be nonnegative");
  if (disc_steps < 1) throw ValueError("train: disc_steps must be at least 1");
  if (refine_iters < 0) throw ValueError("train: refine_iters must be nonnegative");
  if (refine_interval < 1) throw ValueError("train: refine_interval must be at least 1");
  if (eval_interval < 1) throw ValueError("eval: interval must be at least 1");
  if (probe_pairs < 1) throw ValueError("eval: probe_pairs must be at least 1");
  if (probe_lambdas < 2) throw ValueError("eval: probe_lambdas must be at least 2");
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[task]\n"
     << "generator = " << generator_name(c.task.generator) << '\n'
     << "n = " << c.task.n << '\n'
     << "classes = " << c.task.classes << '\n'
     << "noise = " << fmt_double(c.task.noise) << '\n'
     << "rotation = " << fmt_double(c.task.shift.rotation_deg) << '\n'
     << "translate_x = " << fmt_double(c.task.shift.translate_x) << '\n'
     << "translate_y = " << fmt_double(c.task.shift.translate_y) << '\n'
     << "scale = " << fmt_double(c.task.shift.scale) << '\n'
     << "normalization = " << standardize_name(c.task.normalization) << '\n'
     << '\n'
     << "[model]\n"
     << "g_widths = " << widths_to_string(c.model.g_widths) << '\n'
     << "d_widths = " << widths_to_string(c.model.d_widths) << '\n'
     << "hidden = " << (c.model.hidden_act == Activation::relu ? "relu" : "identity") << '\n'
     << '\n'
     << "[loss]\n"
     << "lambda_d = " << fmt_double(c.weights.lambda_d) << '\n'
     << "lambda_s = " << fmt_double(c.weights.lambda_s) << '\n'
     << "lambda_t = " << fmt_double(c.weights.lambda_t) << '\n'
     << "beta = " << fmt_double(c.weights.beta) << '\n'
     << "alpha = " << fmt_double(c.mix.alpha) << '\n'
     << "epsilon = " << fmt_double(c.vat.epsilon) << '\n'
     << "xi = " << fmt_double(c.vat.xi) << '\n'
     << "power_iters = " << c.vat.power_iters << '\n'
     << "site = " << mix_site_name(c.mask.site) << '\n'
     << "mask = " << mask_to_string(c.mask) << '\n'
     << "per_sample_lambda = " << (c.mix.per_sample_lambda ? "true" : "false") << '\n'
     << "sever_virtual = " << (c.mix.sever_virtual ? "true" : "false") << '\n'
     << '\n'
     << "[optim]\n"
     << "lr = " << fmt_double(c.adam.lr) << '\n'
     << "beta1 = " << fmt_double(c.adam.beta1) << '\n'
     << "beta2 = " << fmt_double(c.adam.beta2) << '\n'
     << "eps = " << fmt_double(c.adam.eps) << '\n'
     << "ema = " << fmt_double(c.ema_momentum) << '\n'
     << '\n'
     << "[train]\n"
     << "batch = " << c.batch << '\n'
     << "iters = " << c.iters << '\n'
     << "disc_steps = " << c.disc_steps << '\n'
     << "refine_iters = " << c.refine_iters << '\n'
     << "refine_interval = " << c.refine_interval << '\n'
     << "seed = " << c.seed << '\n'
     << "debug_checks = " << (c.debug_checks ? "true" : "false") << '\n'
     << '\n'
     << "[eval]\n"
     << "interval = " << c.eval_interval << '\n'
     << "probe_pairs = " << c.probe_pairs << '\n'
     << "probe_lambdas = " << c.probe_lambdas << '\n'
     << "probe_full_jacobian = " << (c.probe_full_jacobian ? "true" : "false") << '\n';
  return os.str();
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string text = serialize_config(cfg);
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

}  // namespace vmt
