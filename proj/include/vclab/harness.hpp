#pragma once

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vclab/config.hpp"
#include "vclab/shapers.hpp"

namespace vclab::harness {

/// CSV number formatting: locale-independent, enough digits to identify runs.
inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

namespace detail {

// Named substreams of the run seed.
inline constexpr std::uint64_t stream_env_base = 0x1000;
inline constexpr std::uint64_t stream_trainer = 0x7261696e;
inline constexpr std::uint64_t stream_eval = 0x6576616c;
inline constexpr std::uint64_t stream_probe = 0x70726f62;

inline std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header << '\n';
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
    std::string run_dir;
    long long steps = 0;
    int updates = 0;
    long long episodes = 0;
    std::string final_checkpoint;
    double last_mean_return = 0.0; ///< 50-episode moving average at the end
};

/// Deterministic probe episode for the deflection/action traces: fixed goal
/// at 60% of travel, start at the travel origin, actions = policy mean.
inline void write_probe_traces(const RunConfig& cfg, const neural::PolicyValueNet& net,
                               const std::filesystem::path& dir) {
    env::EpisodeConfig ec = cfg.episode;
    const double goal = cfg.axis.x_min + 0.6 * cfg.axis.travel_span();
    ec.goal_min = ec.goal_max = goal;
    ec.start_min = ec.start_max = cfg.axis.x_min;
    ec.seed = mix_seed(cfg.seed, detail::stream_probe);
    env::AxisEnv probe(cfg.axis, ec, cfg.reward);
    const neural::ObsEncoder encoder(cfg.axis, cfg.reward);

    std::ofstream deflection = detail::open_csv(dir / "probe_deflection.csv", "step,t,y");
    std::ofstream action_trace = detail::open_csv(dir / "probe_action.csv", "step,t,action");

    env::Observation obs = probe.reset(0);
    neural::RecurrentState rec = neural::RecurrentState::zeros(net.spec().lstm);
    std::vector<double> features(neural::ObsEncoder::dim);
    for (int t = 0; t < ec.horizon; ++t) {
        encoder.encode(obs, features);
        const auto out = net.step_forward(features, rec);
        const double u = vclab::clamp(out.mean[0], -cfg.axis.v_max, cfg.axis.v_max);
        const auto sr = probe.step(u);
        obs = sr.obs;
        const double time = probe.state().t;
        deflection << t << ',' << csv_num(time) << ',' << csv_num(probe.state().y) << '\n';
        action_trace << t << ',' << csv_num(time) << ',' << csv_num(u) << '\n';
    }
}

inline TrainResult cmd_train(const RunConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    save_config(cfg, (dir / "config.ini").string());

    const neural::LayerSpec spec = cfg.layer_spec();
    neural::PolicyValueNet net(spec, cfg.seed, cfg.net_policy_gain, cfg.net_sigma_init_scale);
    const neural::ObsEncoder encoder(cfg.axis, cfg.reward);

    std::vector<ppo::EnvSlot> slots;
    for (int e = 0; e < cfg.ppo.n_envs; ++e) {
        env::EpisodeConfig ec = cfg.episode;
        ec.seed = mix_seed(cfg.seed, detail::stream_env_base + static_cast<std::uint64_t>(e));
        slots.emplace_back(env::AxisEnv(cfg.axis, ec, cfg.reward), spec.lstm);
    }
    Rng rng = Rng::substream(cfg.seed, detail::stream_trainer);
    ppo::Optimizer opt(cfg.ppo, net.params());

    std::ofstream metrics = detail::open_csv(
        dir / "metrics.csv",
        "step,episodes,mean_episode_reward,entropy,clip_fraction,approx_kl,policy_loss,"
        "value_loss,total_loss,entropy_coef,lr,kl_stopped");
    std::ofstream episode_csv =
        detail::open_csv(dir / "episode_reward.csv", "episode,step,episode_return");
    std::ofstream entropy_csv = detail::open_csv(dir / "entropy.csv", "step,entropy");

    const auto checkpoint_name = [&](long long step) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "checkpoint_%09lld.txt", step);
        return (dir / buf).string();
    };

    TrainResult result;
    result.run_dir = dir.string();

    std::deque<double> recent_returns; // last 50 completed episodes
    ppo::Trajectory traj;
    std::vector<ppo::EpisodeRecord> completed;
    long long steps = 0;

    const long long rollout_size = static_cast<long long>(cfg.ppo.n_envs) * cfg.ppo.n_steps;
    while (steps + rollout_size <= cfg.ppo.total_steps) {
        if (cfg.episode.start_near_goal_radius_final > 0.0) {
            // Reverse curriculum: the near-goal start band widens over training.
            const double progress =
                vclab::clamp(static_cast<double>(steps) /
                                 static_cast<double>(cfg.ppo.total_steps),
                             0.0, 1.0);
            const double radius =
                cfg.episode.start_near_goal_radius +
                (cfg.episode.start_near_goal_radius_final -
                 cfg.episode.start_near_goal_radius) *
                    progress;
            for (ppo::EnvSlot& slot : slots) {
                slot.env.set_near_goal_starts(cfg.episode.start_near_goal_prob, radius);
            }
        }
        completed.clear();
        ppo::collect_rollout(slots, net, encoder, cfg.ppo.n_steps, cfg.ppo.seq_len, rng, traj,
                             &completed);
        for (const ppo::EpisodeRecord& rec : completed) {
            ++result.episodes;
            const long long at =
                steps + static_cast<long long>(rec.step) * cfg.ppo.n_envs + rec.env + 1;
            episode_csv << result.episodes << ',' << at << ',' << csv_num(rec.episode_return)
                        << '\n';
            recent_returns.push_back(rec.episode_return);
            if (recent_returns.size() > 50) recent_returns.pop_front();
        }

        const ppo::UpdateResult res = ppo::update(net, opt, traj, cfg.ppo, steps, rng);
        steps += static_cast<long long>(cfg.ppo.n_envs) * cfg.ppo.n_steps;
        ++result.updates;

        double ma = std::numeric_limits<double>::quiet_NaN();
        if (!recent_returns.empty()) {
            ma = 0.0;
            for (double r : recent_returns) ma += r;
            ma /= static_cast<double>(recent_returns.size());
            result.last_mean_return = ma;
        }

        metrics << steps << ',' << result.episodes << ',' << csv_num(ma) << ','
                << csv_num(res.stats.entropy) << ',' << csv_num(res.stats.clip_fraction) << ','
                << csv_num(res.stats.approx_kl) << ',' << csv_num(res.stats.policy) << ','
                << csv_num(res.stats.value) << ',' << csv_num(res.stats.total) << ','
                << csv_num(res.entropy_coef) << ',' << csv_num(res.lr) << ','
                << (res.kl_stopped ? 1 : 0) << '\n';
        entropy_csv << steps << ',' << csv_num(res.stats.entropy) << '\n';

        if (result.updates % cfg.checkpoint_interval == 0) {
            neural::save_checkpoint(checkpoint_name(steps), net, {spec, cfg.seed, steps});
        }
        if (log != nullptr) {
            *log << "step " << steps << " episodes " << result.episodes << " mean_return "
                 << csv_num(ma) << " entropy " << csv_num(res.stats.entropy) << " lr "
                 << csv_num(res.lr) << '\n';
        }
    }

    result.steps = steps;
    result.final_checkpoint = (dir / "checkpoint_final.txt").string();
    neural::save_checkpoint(result.final_checkpoint, net, {spec, cfg.seed, steps});
    write_probe_traces(cfg, net, dir);
    return result;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalEpisode {
    int episode = 0;
    double goal = 0.0;
    double final_pos_error = 0.0;    ///< |x_T - x_g|, mm
    double residual_envelope = 0.0;  ///< envelope estimate at the end, mm
    int settling_step = 0;           ///< first step with reward 0 through the end
    double episode_return = 0.0;
    double trajectory_loss = 0.0;    ///< summed squared goal distance, mm^2
    double in_band_last100 = 0.0;    ///< fraction of the last 100 steps in band
};

struct EvalReport {
    std::vector<EvalEpisode> episodes;
    int horizon = 0;
    double mean_final_pos_error = 0.0;
    double mean_residual_envelope = 0.0;
    double mean_return = 0.0;
    double mean_in_band_last100 = 0.0;
    double fraction_episodes_in_band60 = 0.0; ///< share with >= 60% of last 100 steps in band
};

/// Deterministic evaluation: actions are the policy mean, goals drawn from the
/// evaluation stream of the run seed.
inline EvalReport cmd_eval(const std::string& checkpoint_path, const RunConfig& cfg,
                           int n_episodes, const std::string& out_dir) {
    cfg.validate();
    if (n_episodes < 0) throw std::invalid_argument("eval: n_episodes must be >= 0");
    auto [net, meta] = neural::load_checkpoint(checkpoint_path);
    const neural::LayerSpec expected = cfg.layer_spec();
    if (!(meta.spec == expected)) {
        throw std::runtime_error("eval: checkpoint architecture (" + meta.spec.describe() +
                                 ") does not match configuration (" + expected.describe() + ")");
    }

    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    std::ofstream csv = detail::open_csv(
        dir / "eval.csv",
        "episode,goal,final_pos_error,residual_envelope,settling_step,episode_return,"
        "trajectory_loss,in_band_last100");

    env::EpisodeConfig ec = cfg.episode;
    ec.seed = mix_seed(cfg.seed, detail::stream_eval);
    ec.start_near_goal_prob = 0.0; // evaluation always runs full approaches
    env::AxisEnv environment(cfg.axis, ec, cfg.reward);
    const neural::ObsEncoder encoder(cfg.axis, cfg.reward);

    EvalReport report;
    report.horizon = ec.horizon;
    std::vector<double> features(neural::ObsEncoder::dim);
    for (int episode = 0; episode < n_episodes; ++episode) {
        env::Observation obs = environment.reset(static_cast<std::uint64_t>(episode));
        neural::RecurrentState rec = neural::RecurrentState::zeros(net.spec().lstm);

        std::vector<double> rewards;
        std::vector<dynamics::SystemState> states;
        rewards.reserve(ec.horizon);
        states.reserve(ec.horizon);
        for (int t = 0; t < ec.horizon; ++t) {
            encoder.encode(obs, features);
            const auto out = net.step_forward(features, rec);
            const auto sr =
                environment.step(vclab::clamp(out.mean[0], -cfg.axis.v_max, cfg.axis.v_max));
            obs = sr.obs;
            rewards.push_back(sr.reward);
            states.push_back(environment.state());
        }

        EvalEpisode e;
        e.episode = episode;
        e.goal = environment.goal().x_g;
        e.final_pos_error = std::abs(environment.state().x - e.goal);
        e.residual_envelope = environment.envelope_estimate();
        e.settling_step = ec.horizon;
        for (int t = ec.horizon - 1; t >= 0; --t) {
            if (rewards[t] == cfg.reward.in_band_reward) {
                e.settling_step = t;
            } else {
                break;
            }
        }
        for (double r : rewards) e.episode_return += r;
        e.trajectory_loss = env::trajectory_loss(states, environment.goal());
        const int tail = std::min(100, ec.horizon);
        int in_band = 0;
        for (int t = ec.horizon - tail; t < ec.horizon; ++t) {
            if (rewards[t] == cfg.reward.in_band_reward) ++in_band;
        }
        e.in_band_last100 = static_cast<double>(in_band) / tail;

        csv << e.episode << ',' << csv_num(e.goal) << ',' << csv_num(e.final_pos_error) << ','
            << csv_num(e.residual_envelope) << ',' << e.settling_step << ','
            << csv_num(e.episode_return) << ',' << csv_num(e.trajectory_loss) << ','
            << csv_num(e.in_band_last100) << '\n';
        report.episodes.push_back(e);
    }

    if (!report.episodes.empty()) {
        const double n = static_cast<double>(report.episodes.size());
        int hit = 0;
        for (const EvalEpisode& e : report.episodes) {
            report.mean_final_pos_error += e.final_pos_error / n;
            report.mean_residual_envelope += e.residual_envelope / n;
            report.mean_return += e.episode_return / n;
            report.mean_in_band_last100 += e.in_band_last100 / n;
            if (e.in_band_last100 >= 0.6) ++hit;
        }
        report.fraction_episodes_in_band60 = hit / n;
    }

    nlohmann::json summary;
    summary["checkpoint"] = checkpoint_path;
    summary["checkpoint_step"] = meta.step;
    summary["n_episodes"] = n_episodes;
    summary["horizon"] = report.horizon;
    summary["seed"] = cfg.seed;
    summary["mean_final_pos_error_mm"] = report.mean_final_pos_error;
    summary["mean_residual_envelope_mm"] = report.mean_residual_envelope;
    summary["mean_episode_return"] = report.mean_return;
    summary["mean_in_band_last100"] = report.mean_in_band_last100;
    summary["fraction_episodes_in_band60"] = report.fraction_episodes_in_band60;
    std::ofstream js(dir / "summary.json");
    if (!js) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
    js << summary.dump(2) << '\n';

    return report;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

struct MoveSpec {
    double distance = 200.0; ///< mm
    double v_cruise = 300.0; ///< mm/s
    double accel = 4000.0;   ///< mm/s^2
};

struct BaselineRow {
    std::string scheme;
    double duration_s = 0.0;
    double residual_envelope_mm = 0.0;
    double trajectory_loss_mm2 = 0.0;
};

/// Trapezoidal point-to-point velocity command sampled at dt. Commands are
/// finite differences of the analytic position profile, so the sampled move
/// covers the distance exactly.
inline std::vector<double> trapezoid_command(const MoveSpec& move, double v_max, double dt) {
    require_finite(move.distance, "move distance");
    if (!(move.distance > 0.0)) throw std::invalid_argument("baseline: distance must be > 0");
    if (!(move.accel > 0.0)) throw std::invalid_argument("baseline: accel must be > 0");
    if (!(move.v_cruise > 0.0)) throw std::invalid_argument("baseline: velocity must be > 0");
    if (move.v_cruise > v_max) {
        throw std::invalid_argument("baseline: infeasible move, cruise velocity exceeds v_max");
    }

    const double v_peak = std::min(move.v_cruise, std::sqrt(move.distance * move.accel));
    const double t_a = v_peak / move.accel;
    const double d_a = 0.5 * v_peak * t_a;
    const double t_c = (move.distance - 2.0 * d_a) / v_peak;
    const double total = 2.0 * t_a + t_c;

    const auto position = [&](double t) {
        if (t <= 0.0) return 0.0;
        if (t >= total) return move.distance;
        if (t < t_a) return 0.5 * move.accel * t * t;
        if (t < t_a + t_c) return d_a + v_peak * (t - t_a);
        const double r = total - t;
        return move.distance - 0.5 * move.accel * r * r;
    };

    const int n = static_cast<int>(std::ceil(total / dt - 1e-12));
    std::vector<double> cmd(n);
    for (int k = 0; k < n; ++k) {
        cmd[k] = (position((k + 1) * dt) - position(k * dt)) / dt;
    }
    return cmd;
}

/// Simulate the same point-to-point move unshaped and through the selected
/// shapers, and compare settled residual vibration, move duration, and
/// trajectory loss. design_omega_scale detunes the shaper design frequency
/// from the true modal frequency.
inline std::vector<BaselineRow> cmd_baseline(const RunConfig& cfg, const MoveSpec& move,
                                             const std::string& schemes = "none,zv,zvd",
                                             double design_omega_scale = 1.0,
                                             const std::string& out_csv = "") {
    cfg.axis.validate();
    if (move.distance > cfg.axis.travel_span()) {
        throw std::invalid_argument("baseline: infeasible move, distance exceeds travel");
    }
    if (!(design_omega_scale > 0.0)) {
        throw std::invalid_argument("baseline: design_omega_scale must be > 0");
    }

    std::vector<std::string> names;
    {
        std::stringstream ss(schemes);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.empty()) continue;
            if (tok != "none" && tok != "zv" && tok != "zvd") {
                throw std::invalid_argument("baseline: unknown scheme '" + tok +
                                            "' (valid: none, zv, zvd)");
            }
            names.push_back(tok);
        }
    }
    if (names.empty()) throw std::invalid_argument("baseline: no schemes selected");

    const double dt = cfg.axis.dt_control;
    const std::vector<double> cmd = trapezoid_command(move, cfg.axis.v_max, dt);
    const double design_omega = cfg.axis.omega_n * design_omega_scale;

    std::vector<std::vector<double>> shaped;
    std::size_t longest = 0;
    for (const std::string& name : names) {
        shapers::ImpulseSequence seq = name == "none"
                                           ? shapers::identity_sequence()
                                           : (name == "zv"
                                                  ? shapers::make_zv(design_omega, cfg.axis.xi)
                                                  : shapers::make_zvd(design_omega, cfg.axis.xi));
        shaped.push_back(shapers::shape_command(seq, cmd, dt));
        longest = std::max(longest, shaped.back().size());
    }

    // Shared absolute measurement window: all commands done, servo lag
    // settled, then one damped period of samples.
    const std::size_t settle = longest + static_cast<std::size_t>(std::lround(0.15 / dt));
    const std::size_t window =
        static_cast<std::size_t>(std::ceil(2.0 * pi / cfg.axis.omega_d() / dt)) + 1;
    const std::size_t total = settle + window;

    const env::GoalSpec goal{cfg.axis.x_min + move.distance, 0.0};
    std::vector<BaselineRow> rows;
    for (std::size_t i = 0; i < names.size(); ++i) {
        dynamics::SystemState s;
        s.x = cfg.axis.x_min;
        std::vector<double> y_series;
        std::vector<dynamics::SystemState> states;
        y_series.reserve(total);
        states.reserve(total);
        for (std::size_t k = 0; k < total; ++k) {
            const double u = k < shaped[i].size() ? shaped[i][k] : 0.0;
            s = dynamics::step(s, u, cfg.axis);
            y_series.push_back(s.y);
            states.push_back(s);
        }
        BaselineRow row;
        row.scheme = names[i];
        row.duration_s = static_cast<double>(shaped[i].size()) * dt;
        row.residual_envelope_mm = dynamics::envelope(
            std::span<const double>(y_series).subspan(settle, window), dt, cfg.axis);
        row.trajectory_loss_mm2 = env::trajectory_loss(states, goal);
        rows.push_back(row);
    }

    if (!out_csv.empty()) {
        const std::filesystem::path path(out_csv);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out = detail::open_csv(
            path, "scheme,duration_s,residual_envelope_mm,trajectory_loss_mm2");
        for (const BaselineRow& r : rows) {
            out << r.scheme << ',' << csv_num(r.duration_s) << ','
                << csv_num(r.residual_envelope_mm) << ',' << csv_num(r.trajectory_loss_mm2)
                << '\n';
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Open-loop trace of a command file: one velocity command per control step,
/// one trace row per step.
inline void cmd_simulate(const RunConfig& cfg, const std::string& command_file,
                         const std::string& out_csv) {
    cfg.axis.validate();
    std::ifstream in(command_file);
    if (!in) throw std::runtime_error("cannot open command file " + command_file);

    std::vector<double> commands;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = line;
        const auto notspace = [](unsigned char c) { return !std::isspace(c); };
        t.erase(t.begin(), std::find_if(t.begin(), t.end(), notspace));
        t.erase(std::find_if(t.rbegin(), t.rend(), notspace).base(), t.end());
        if (t.empty()) continue;
        char* end = nullptr;
        const double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0') {
            throw std::runtime_error(command_file + ":" + std::to_string(lineno) +
                                     ": not a velocity command: '" + t + "'");
        }
        commands.push_back(v);
    }

    const std::filesystem::path path(out_csv);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out = detail::open_csv(path, "t,x,v,y");
    dynamics::SystemState s;
    s.x = cfg.episode.start_min;
    for (double u : commands) {
        s = dynamics::step(s, u, cfg.axis);
        out << csv_num(s.t) << ',' << csv_num(s.x) << ',' << csv_num(s.v) << ','
            << csv_num(s.y) << '\n';
    }
}

} // namespace vclab::harness
