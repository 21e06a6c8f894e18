#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vclab/dynamics.hpp"
#include "vclab/env.hpp"
#include "vclab/neural.hpp"
#include "vclab/ppo.hpp"

namespace vclab::harness {

/// Everything one run needs, serializable to a flat sectioned text file.
/// CLI flags mirror the keys one-to-one (--axis.omega_n and so on).
struct RunConfig {
    dynamics::AxisParams axis;
    env::EpisodeConfig episode;
    env::RewardConfig reward;
    ppo::PpoConfig ppo;
    int net_dense1 = 64;
    int net_dense2 = 64;
    int net_lstm = 64;
    double net_policy_gain = 0.5;      ///< policy-head init scale (exploratory mean field)
    double net_sigma_init_scale = 0.2; ///< initial sigma = 0.5 * v_max * this
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    int checkpoint_interval = 50; ///< updates between checkpoints

    neural::LayerSpec layer_spec() const {
        neural::LayerSpec s;
        s.obs_dim = neural::ObsEncoder::dim;
        s.dense1 = net_dense1;
        s.dense2 = net_dense2;
        s.lstm = net_lstm;
        s.act_dim = 1;
        s.action_bound = axis.v_max;
        return s;
    }

    void validate() const {
        axis.validate();
        episode.validate(axis);
        reward.validate();
        // total_steps = 0 is a valid no-training run; otherwise defer to ppo.
        if (ppo.total_steps != 0) {
            ppo.validate();
        } else {
            ppo::PpoConfig probe = ppo;
            probe.total_steps = static_cast<long long>(ppo.n_envs) * ppo.n_steps;
            probe.validate();
        }
        if (net_dense1 < 1 || net_dense2 < 1 || net_lstm < 1) {
            throw std::invalid_argument("net: layer sizes must be >= 1");
        }
        if (checkpoint_interval < 1) {
            throw std::invalid_argument("run: checkpoint_interval must be >= 1");
        }
        if (out_dir.empty()) throw std::invalid_argument("run: out_dir must not be empty");
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') {
        throw std::invalid_argument("expected a number, got '" + s + "'");
    }
    return v;
}

inline long long parse_int(const std::string& s) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') {
        throw std::invalid_argument("expected an integer, got '" + s + "'");
    }
    return v;
}

inline std::uint64_t parse_u64(const std::string& s) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') {
        throw std::invalid_argument("expected an unsigned integer, got '" + s + "'");
    }
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("expected true/false, got '" + s + "'");
}

} // namespace detail

struct ConfigKey {
    std::string name; ///< "section.key"
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::format_double;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        const auto fwd = [&k](const char* name, auto get, auto set) {
            k.push_back({name, get, set});
        };

        fwd("axis.omega_n",
            [](const RunConfig& c) { return format_double(c.axis.omega_n); },
            [](RunConfig& c, const std::string& v) { c.axis.omega_n = detail::parse_double(v); });
        fwd("axis.xi", [](const RunConfig& c) { return format_double(c.axis.xi); },
            [](RunConfig& c, const std::string& v) { c.axis.xi = detail::parse_double(v); });
        fwd("axis.coupling_k",
            [](const RunConfig& c) { return format_double(c.axis.coupling_k); },
            [](RunConfig& c, const std::string& v) {
                c.axis.coupling_k = detail::parse_double(v);
            });
        fwd("axis.tau_v", [](const RunConfig& c) { return format_double(c.axis.tau_v); },
            [](RunConfig& c, const std::string& v) { c.axis.tau_v = detail::parse_double(v); });
        fwd("axis.v_max", [](const RunConfig& c) { return format_double(c.axis.v_max); },
            [](RunConfig& c, const std::string& v) { c.axis.v_max = detail::parse_double(v); });
        fwd("axis.x_min", [](const RunConfig& c) { return format_double(c.axis.x_min); },
            [](RunConfig& c, const std::string& v) { c.axis.x_min = detail::parse_double(v); });
        fwd("axis.x_max", [](const RunConfig& c) { return format_double(c.axis.x_max); },
            [](RunConfig& c, const std::string& v) { c.axis.x_max = detail::parse_double(v); });
        fwd("axis.dt_physics",
            [](const RunConfig& c) { return format_double(c.axis.dt_physics); },
            [](RunConfig& c, const std::string& v) {
                c.axis.dt_physics = detail::parse_double(v);
            });
        fwd("axis.dt_control",
            [](const RunConfig& c) { return format_double(c.axis.dt_control); },
            [](RunConfig& c, const std::string& v) {
                c.axis.dt_control = detail::parse_double(v);
            });

        fwd("episode.horizon",
            [](const RunConfig& c) { return std::to_string(c.episode.horizon); },
            [](RunConfig& c, const std::string& v) {
                c.episode.horizon = static_cast<int>(detail::parse_int(v));
            });
        fwd("episode.start_min",
            [](const RunConfig& c) { return format_double(c.episode.start_min); },
            [](RunConfig& c, const std::string& v) {
                c.episode.start_min = detail::parse_double(v);
            });
        fwd("episode.start_max",
            [](const RunConfig& c) { return format_double(c.episode.start_max); },
            [](RunConfig& c, const std::string& v) {
                c.episode.start_max = detail::parse_double(v);
            });
        fwd("episode.goal_min",
            [](const RunConfig& c) { return format_double(c.episode.goal_min); },
            [](RunConfig& c, const std::string& v) {
                c.episode.goal_min = detail::parse_double(v);
            });
        fwd("episode.goal_max",
            [](const RunConfig& c) { return format_double(c.episode.goal_max); },
            [](RunConfig& c, const std::string& v) {
                c.episode.goal_max = detail::parse_double(v);
            });
        fwd("episode.start_near_goal_prob",
            [](const RunConfig& c) { return format_double(c.episode.start_near_goal_prob); },
            [](RunConfig& c, const std::string& v) {
                c.episode.start_near_goal_prob = detail::parse_double(v);
            });
        fwd("episode.start_near_goal_radius",
            [](const RunConfig& c) { return format_double(c.episode.start_near_goal_radius); },
            [](RunConfig& c, const std::string& v) {
                c.episode.start_near_goal_radius = detail::parse_double(v);
            });
        fwd("episode.start_near_goal_radius_final",
            [](const RunConfig& c) {
                return format_double(c.episode.start_near_goal_radius_final);
            },
            [](RunConfig& c, const std::string& v) {
                c.episode.start_near_goal_radius_final = detail::parse_double(v);
            });

        fwd("reward.threshold",
            [](const RunConfig& c) { return format_double(c.reward.threshold); },
            [](RunConfig& c, const std::string& v) {
                c.reward.threshold = detail::parse_double(v);
            });
        fwd("reward.y_ref", [](const RunConfig& c) { return format_double(c.reward.y_ref); },
            [](RunConfig& c, const std::string& v) { c.reward.y_ref = detail::parse_double(v); });
        fwd("reward.in_band_reward",
            [](const RunConfig& c) { return format_double(c.reward.in_band_reward); },
            [](RunConfig& c, const std::string& v) {
                c.reward.in_band_reward = detail::parse_double(v);
            });
        fwd("reward.out_of_band_reward",
            [](const RunConfig& c) { return format_double(c.reward.out_of_band_reward); },
            [](RunConfig& c, const std::string& v) {
                c.reward.out_of_band_reward = detail::parse_double(v);
            });
        fwd("reward.relative_position",
            [](const RunConfig& c) { return std::string(c.reward.relative_position ? "true" : "false"); },
            [](RunConfig& c, const std::string& v) {
                c.reward.relative_position = detail::parse_bool(v);
            });
        fwd("reward.pos_ref", [](const RunConfig& c) { return format_double(c.reward.pos_ref); },
            [](RunConfig& c, const std::string& v) {
                c.reward.pos_ref = detail::parse_double(v);
            });

        fwd("net.dense1", [](const RunConfig& c) { return std::to_string(c.net_dense1); },
            [](RunConfig& c, const std::string& v) {
                c.net_dense1 = static_cast<int>(detail::parse_int(v));
            });
        fwd("net.dense2", [](const RunConfig& c) { return std::to_string(c.net_dense2); },
            [](RunConfig& c, const std::string& v) {
                c.net_dense2 = static_cast<int>(detail::parse_int(v));
            });
        fwd("net.lstm", [](const RunConfig& c) { return std::to_string(c.net_lstm); },
            [](RunConfig& c, const std::string& v) {
                c.net_lstm = static_cast<int>(detail::parse_int(v));
            });
        fwd("net.policy_gain",
            [](const RunConfig& c) { return format_double(c.net_policy_gain); },
            [](RunConfig& c, const std::string& v) {
                c.net_policy_gain = detail::parse_double(v);
            });
        fwd("net.sigma_init_scale",
            [](const RunConfig& c) { return format_double(c.net_sigma_init_scale); },
            [](RunConfig& c, const std::string& v) {
                c.net_sigma_init_scale = detail::parse_double(v);
            });

        fwd("ppo.gamma", [](const RunConfig& c) { return format_double(c.ppo.gamma); },
            [](RunConfig& c, const std::string& v) { c.ppo.gamma = detail::parse_double(v); });
        fwd("ppo.lambda_gae", [](const RunConfig& c) { return format_double(c.ppo.lambda_gae); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.lambda_gae = detail::parse_double(v);
            });
        fwd("ppo.clip_eps", [](const RunConfig& c) { return format_double(c.ppo.clip_eps); },
            [](RunConfig& c, const std::string& v) { c.ppo.clip_eps = detail::parse_double(v); });
        fwd("ppo.entropy_coef",
            [](const RunConfig& c) { return format_double(c.ppo.entropy_coef); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.entropy_coef = detail::parse_double(v);
            });
        fwd("ppo.entropy_coef_final",
            [](const RunConfig& c) { return format_double(c.ppo.entropy_coef_final); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.entropy_coef_final = detail::parse_double(v);
            });
        fwd("ppo.value_coef", [](const RunConfig& c) { return format_double(c.ppo.value_coef); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.value_coef = detail::parse_double(v);
            });
        fwd("ppo.learning_rate",
            [](const RunConfig& c) { return format_double(c.ppo.learning_rate); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.learning_rate = detail::parse_double(v);
            });
        fwd("ppo.epochs", [](const RunConfig& c) { return std::to_string(c.ppo.epochs); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.epochs = static_cast<int>(detail::parse_int(v));
            });
        fwd("ppo.seq_len", [](const RunConfig& c) { return std::to_string(c.ppo.seq_len); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.seq_len = static_cast<int>(detail::parse_int(v));
            });
        fwd("ppo.minibatches",
            [](const RunConfig& c) { return std::to_string(c.ppo.minibatches); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.minibatches = static_cast<int>(detail::parse_int(v));
            });
        fwd("ppo.n_envs", [](const RunConfig& c) { return std::to_string(c.ppo.n_envs); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.n_envs = static_cast<int>(detail::parse_int(v));
            });
        fwd("ppo.n_steps", [](const RunConfig& c) { return std::to_string(c.ppo.n_steps); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.n_steps = static_cast<int>(detail::parse_int(v));
            });
        fwd("ppo.total_steps",
            [](const RunConfig& c) { return std::to_string(c.ppo.total_steps); },
            [](RunConfig& c, const std::string& v) { c.ppo.total_steps = detail::parse_int(v); });
        fwd("ppo.optimizer", [](const RunConfig& c) { return c.ppo.optimizer; },
            [](RunConfig& c, const std::string& v) { c.ppo.optimizer = v; });
        fwd("ppo.adam_beta1", [](const RunConfig& c) { return format_double(c.ppo.adam_beta1); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.adam_beta1 = detail::parse_double(v);
            });
        fwd("ppo.adam_beta2", [](const RunConfig& c) { return format_double(c.ppo.adam_beta2); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.adam_beta2 = detail::parse_double(v);
            });
        fwd("ppo.adam_eps", [](const RunConfig& c) { return format_double(c.ppo.adam_eps); },
            [](RunConfig& c, const std::string& v) { c.ppo.adam_eps = detail::parse_double(v); });
        fwd("ppo.max_grad_norm",
            [](const RunConfig& c) { return format_double(c.ppo.max_grad_norm); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.max_grad_norm = detail::parse_double(v);
            });
        fwd("ppo.kl_ceiling", [](const RunConfig& c) { return format_double(c.ppo.kl_ceiling); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.kl_ceiling = detail::parse_double(v);
            });
        fwd("ppo.sigma_floor",
            [](const RunConfig& c) { return format_double(c.ppo.sigma_floor); },
            [](RunConfig& c, const std::string& v) {
                c.ppo.sigma_floor = detail::parse_double(v);
            });

        fwd("run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = detail::parse_u64(v); });
        fwd("run.out_dir", [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, const std::string& v) { c.out_dir = v; });
        fwd("run.checkpoint_interval",
            [](const RunConfig& c) { return std::to_string(c.checkpoint_interval); },
            [](RunConfig& c, const std::string& v) {
                c.checkpoint_interval = static_cast<int>(detail::parse_int(v));
            });
        return k;
    }();
    return keys;
}

inline void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const ConfigKey& k : config_keys()) {
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

/// "section.key=value" override, as accepted by the CLI --set flag.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("override '" + assignment + "' is not key=value");
    }
    apply_config_value(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void save_config(const RunConfig& cfg, std::ostream& out) {
    std::string section;
    for (const ConfigKey& k : config_keys()) {
        const std::size_t dot = k.name.find('.');
        const std::string sec = k.name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << '\n';
            out << '[' << sec << "]\n";
            section = sec;
        }
        out << k.name.substr(dot + 1) << " = " << k.get(cfg) << '\n';
    }
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file " + path);
    save_config(cfg, out);
}

inline RunConfig load_config(std::istream& in, const std::string& origin = "<config>") {
    RunConfig cfg;
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments and surrounding whitespace
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto notspace = [](unsigned char c) { return !std::isspace(c); };
        line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
        line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                         ": malformed section header");
            }
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(std::find_if(key.rbegin(), key.rend(), notspace).base(), key.end());
        value.erase(value.begin(), std::find_if(value.begin(), value.end(), notspace));
        if (section.empty()) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": key outside any [section]");
        }
        try {
            apply_config_value(cfg, section + "." + key, value);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    return load_config(in, path);
}

} // namespace vclab::harness
