#pragma once

// Flat key=value training configuration.  Lines are `key = value`; blank
// lines and lines starting with '#' are ignored.  Unknown keys are an error
// so typos fail loudly instead of silently training with defaults.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "adam.hpp"
#include "networks.hpp"

namespace dmgan {

struct TrainConfig {
  NetConfig net;
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::size_t dataset_size = 4800;
  std::size_t epochs = 20;
  std::size_t batch_size = 10;
  double lambda_ca = 1.0;     // weight of the conditioning KL term
  double lambda_match = 5.0;  // weight of the image-text matching term
  double match_gamma = 10.0;  // sharpness of the matching softmax
  std::size_t checkpoint_every = 200;  // steps between checkpoints
  std::size_t log_every = 10;          // steps between JSONL log records
  double divergence_limit = 1e4;       // abort if any loss exceeds this
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  }
}

}  // namespace detail

inline void apply_config_line(TrainConfig& cfg, const std::string& key,
                              const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_size;
  if (key == "seed")
    cfg.seed = parse_size(value, key);
  else if (key == "dataset_size")
    cfg.dataset_size = parse_size(value, key);
  else if (key == "epochs")
    cfg.epochs = parse_size(value, key);
  else if (key == "batch_size")
    cfg.batch_size = parse_size(value, key);
  else if (key == "lr")
    cfg.adam.lr = parse_double(value, key);
  else if (key == "beta1")
    cfg.adam.beta1 = parse_double(value, key);
  else if (key == "beta2")
    cfg.adam.beta2 = parse_double(value, key);
  else if (key == "adam_eps")
    cfg.adam.eps = parse_double(value, key);
  else if (key == "lambda_ca")
    cfg.lambda_ca = parse_double(value, key);
  else if (key == "lambda_match")
    cfg.lambda_match = parse_double(value, key);
  else if (key == "match_gamma")
    cfg.match_gamma = parse_double(value, key);
  else if (key == "checkpoint_every")
    cfg.checkpoint_every = parse_size(value, key);
  else if (key == "log_every")
    cfg.log_every = parse_size(value, key);
  else if (key == "divergence_limit")
    cfg.divergence_limit = parse_double(value, key);
  else if (key == "z_dim")
    cfg.net.z_dim = parse_size(value, key);
  else if (key == "n_w")
    cfg.net.n_w = parse_size(value, key);
  else if (key == "n_r")
    cfg.net.n_r = parse_size(value, key);
  else if (key == "n_m")
    cfg.net.n_m = parse_size(value, key);
  else if (key == "base_res")
    cfg.net.base_res = parse_size(value, key);
  else if (key == "stages")
    cfg.net.stages = parse_size(value, key);
  else if (key == "g_channels")
    cfg.net.g_channels = parse_size(value, key);
  else if (key == "d_channels")
    cfg.net.d_channels = parse_size(value, key);
  else if (key == "t_max")
    cfg.net.t_max = parse_size(value, key);
  else if (key == "memory")
    cfg.net.flags.memory = parse_bool(value, key);
  else if (key == "write_gate")
    cfg.net.flags.write_gate = parse_bool(value, key);
  else if (key == "response_gate")
    cfg.net.flags.response_gate = parse_bool(value, key);
  else
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key=value: " + t);
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key on line " +
                                  std::to_string(line_no));
    apply_config_line(cfg, key, value);
  }
  if (cfg.batch_size < 2)
    throw std::invalid_argument(
        "config: batch_size must be at least 2 (matching loss needs "
        "contrastive pairs)");
  if (cfg.dataset_size < cfg.batch_size)
    throw std::invalid_argument("config: dataset smaller than one batch");
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace dmgan
