#include "dynanav/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dynanav {

namespace {

constexpr int kConfigVersion = 1;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    unsigned long long r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: bad real for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.image_size = to_int(k, v); }},
      {"feat_h", [](RunConfig& c, const std::string& k, const std::string& v) { c.feat_h = to_int(k, v); }},
      {"feat_w", [](RunConfig& c, const std::string& k, const std::string& v) { c.feat_w = to_int(k, v); }},
      {"feat_c", [](RunConfig& c, const std::string& k, const std::string& v) { c.feat_c = to_int(k, v); }},
      {"enc_c1", [](RunConfig& c, const std::string& k, const std::string& v) { c.enc_c1 = to_int(k, v); }},
      {"enc_c2", [](RunConfig& c, const std::string& k, const std::string& v) { c.enc_c2 = to_int(k, v); }},
      {"past_frames", [](RunConfig& c, const std::string& k, const std::string& v) { c.past_frames = to_int(k, v); }},
      {"num_waypoints", [](RunConfig& c, const std::string& k, const std::string& v) { c.num_waypoints = to_int(k, v); }},
      {"decoder_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.decoder_layers = to_int(k, v); }},
      {"attn_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.attn_heads = to_int(k, v); }},
      {"ffn_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.ffn_hidden = to_int(k, v); }},
      {"head_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.head_hidden = to_int(k, v); }},
      {"selector_hidden", [](RunConfig& c, const std::string& k, const std::string& v) { c.selector_hidden = to_int(k, v); }},
      {"tau_start", [](RunConfig& c, const std::string& k, const std::string& v) { c.tau_start = to_double(k, v); }},
      {"tau_end", [](RunConfig& c, const std::string& k, const std::string& v) { c.tau_end = to_double(k, v); }},
      {"selector_enabled", [](RunConfig& c, const std::string& k, const std::string& v) { c.selector_enabled = to_bool(k, v); }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = to_int(k, v); }},
      {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = to_int(k, v); }},
      {"learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.learning_rate = to_double(k, v); }},
      {"warmup_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.warmup_epochs = to_int(k, v); }},
      {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.weight_decay = to_double(k, v); }},
      {"lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.lambda = to_double(k, v); }},
      {"val_fraction", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_fraction = to_double(k, v); }},
      {"train_seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train_seed = to_u64(k, v); }},
      {"joint_exit_loss", [](RunConfig& c, const std::string& k, const std::string& v) { c.joint_exit_loss = to_bool(k, v); }},
      {"train_exits", [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train_exits.clear();
         for (double d : to_list(k, v)) {
           int e = static_cast<int>(d);
           if (d != e || e < 0) throw ConfigError("config: bad exit layer in " + k);
           c.train_exits.push_back(e);
         }
       }},
      {"map_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.map_size = to_double(k, v); }},
      {"step_m", [](RunConfig& c, const std::string& k, const std::string& v) { c.step_m = to_double(k, v); }},
      {"agent_radius", [](RunConfig& c, const std::string& k, const std::string& v) { c.agent_radius = to_double(k, v); }},
      {"goal_min_dist", [](RunConfig& c, const std::string& k, const std::string& v) { c.goal_min_dist = to_double(k, v); }},
      {"min_goal_dist_m", [](RunConfig& c, const std::string& k, const std::string& v) { c.min_goal_dist_m = to_double(k, v); }},
      {"max_goal_dist_m", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_goal_dist_m = to_double(k, v); }},
      {"samples_per_episode", [](RunConfig& c, const std::string& k, const std::string& v) { c.samples_per_episode = to_int(k, v); }},
      {"bo_budget", [](RunConfig& c, const std::string& k, const std::string& v) { c.bo_budget = to_int(k, v); }},
      {"eta_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.eta_max = to_double(k, v); }},
      {"gate_dist_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.gate_dist_max = to_double(k, v); }},
      {"max_masked_obs", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_masked_obs = to_int(k, v); }},
      {"max_masked_goal", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_masked_goal = to_int(k, v); }},
      {"flops_budget_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.flops_budget_ratio = to_double(k, v); }},
      {"time_budget_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.time_budget_ratio = to_double(k, v); }},
      {"mem_budget_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.mem_budget_ratio = to_double(k, v); }},
      {"sim_a_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim_a_min = to_double(k, v); }},
      {"sim_w_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.sim_w_min = to_double(k, v); }},
      {"xi", [](RunConfig& c, const std::string& k, const std::string& v) { c.xi = to_list(k, v); }},
      {"bo_seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.bo_seed = to_u64(k, v); }},
  };
  return table;
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second(cfg, key, value);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  bool saw_version = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (!saw_version) {
      if (key != "config_version")
        throw ConfigError("config: first entry must be config_version");
      if (to_int(key, value) != kConfigVersion)
        throw ConfigError("config: unsupported config_version " + value);
      saw_version = true;
      continue;
    }
    apply_config_entry(cfg, key, value);
  }
  if (!saw_version) throw ConfigError("config: missing config_version");
  return cfg;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

}  // namespace

std::string default_config_text() {
  RunConfig c;
  std::ostringstream os;
  os << "config_version = 1\n"
     << "# encoder / feature map\n"
     << "image_size = " << c.image_size << "\n"
     << "feat_h = " << c.feat_h << "\n"
     << "feat_w = " << c.feat_w << "\n"
     << "feat_c = " << c.feat_c << "\n"
     << "enc_c1 = " << c.enc_c1 << "\n"
     << "enc_c2 = " << c.enc_c2 << "\n"
     << "# sequence / decoder\n"
     << "past_frames = " << c.past_frames << "\n"
     << "num_waypoints = " << c.num_waypoints << "\n"
     << "decoder_layers = " << c.decoder_layers << "\n"
     << "attn_heads = " << c.attn_heads << "\n"
     << "ffn_hidden = " << c.ffn_hidden << "\n"
     << "head_hidden = " << c.head_hidden << "\n"
     << "# feature selector\n"
     << "selector_hidden = " << c.selector_hidden << "\n"
     << "tau_start = " << c.tau_start << "\n"
     << "tau_end = " << c.tau_end << "\n"
     << "selector_enabled = " << (c.selector_enabled ? "true" : "false") << "\n"
     << "# trainer\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "warmup_epochs = " << c.warmup_epochs << "\n"
     << "weight_decay = " << c.weight_decay << "\n"
     << "lambda = " << c.lambda << "\n"
     << "val_fraction = " << c.val_fraction << "\n"
     << "train_seed = " << c.train_seed << "\n"
     << "joint_exit_loss = " << (c.joint_exit_loss ? "true" : "false") << "\n"
     << "train_exits = " << join_ints(c.train_exits) << "\n"
     << "# simulator / dataset\n"
     << "map_size = " << c.map_size << "\n"
     << "step_m = " << c.step_m << "\n"
     << "agent_radius = " << c.agent_radius << "\n"
     << "goal_min_dist = " << c.goal_min_dist << "\n"
     << "min_goal_dist_m = " << c.min_goal_dist_m << "\n"
     << "max_goal_dist_m = " << c.max_goal_dist_m << "\n"
     << "samples_per_episode = " << c.samples_per_episode << "\n"
     << "# threshold optimization\n"
     << "bo_budget = " << c.bo_budget << "\n"
     << "eta_max = " << c.eta_max << "\n"
     << "gate_dist_max = " << c.gate_dist_max << "\n"
     << "max_masked_obs = " << c.max_masked_obs << "\n"
     << "max_masked_goal = " << c.max_masked_goal << "\n"
     << "flops_budget_ratio = " << c.flops_budget_ratio << "\n"
     << "time_budget_ratio = " << c.time_budget_ratio << "\n"
     << "mem_budget_ratio = " << c.mem_budget_ratio << "\n"
     << "sim_a_min = " << c.sim_a_min << "\n"
     << "sim_w_min = " << c.sim_w_min << "\n"
     << "xi = 0.8, 0.5, 1.0\n"
     << "bo_seed = " << c.bo_seed << "\n";
  return os.str();
}

}  // namespace dynanav
