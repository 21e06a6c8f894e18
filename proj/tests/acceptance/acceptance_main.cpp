// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned here in code.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vclab/harness.hpp"

using namespace vclab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

class Criterion {
public:
    Criterion(int number, std::string title)
        : number_(number), title_(std::move(title)),
          start_(std::chrono::steady_clock::now()) {}

    void check(bool ok, const std::string& detail) {
        if (!ok) {
            all_ok_ = false;
            if (first_failure_.empty()) first_failure_ = detail;
        }
    }

    ~Criterion() {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (all_ok_) {
            std::printf("[PASS] criterion %2d: %s (%.2f s)\n", number_, title_.c_str(), secs);
        } else {
            ++failures;
            std::printf("[FAIL] criterion %2d: %s (%.2f s)\n        %s\n", number_,
                        title_.c_str(), secs, first_failure_.c_str());
        }
        std::fflush(stdout);
    }

private:
    int number_;
    std::string title_;
    std::chrono::steady_clock::time_point start_;
    bool all_ok_ = true;
    std::string first_failure_;
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

const std::vector<double> omega_grid{2.0 * pi * 2.0, 2.0 * pi * 14.0, 2.0 * pi * 26.0,
                                     2.0 * pi * 38.0, 2.0 * pi * 50.0};
const std::vector<double> xi_grid{0.0, 0.05, 0.10, 0.15, 0.19};

// ---------------------------------------------------------------------------

void criterion1_shaper_correctness() {
    Criterion c(1, "ZV/ZVD cancel residual vibration and ZVD zeroes its frequency slope");
    for (double omega : omega_grid) {
        for (double xi : xi_grid) {
            const auto zv = shapers::make_zv(omega, xi);
            const auto zvd = shapers::make_zvd(omega, xi);
            const double v_zv = shapers::residual_vibration(zv, omega, xi);
            const double v_zvd = shapers::residual_vibration(zvd, omega, xi);
            c.check(v_zv <= 1e-12, "V_zv = " + fmt(v_zv) + " at omega " + fmt(omega));
            c.check(v_zvd <= 1e-12, "V_zvd = " + fmt(v_zvd) + " at omega " + fmt(omega));

            const double h = 1e-4 * omega;
            const double dv = (shapers::residual_vibration(zvd, omega + h, xi) -
                               shapers::residual_vibration(zvd, omega - h, xi)) /
                              (2.0 * h);
            const double unshaped =
                shapers::residual_vibration(shapers::identity_sequence(), omega, xi);
            c.check(std::abs(dv) <= 1e-6 * unshaped,
                    "dV/domega = " + fmt(dv) + " at omega " + fmt(omega) + ", xi " + fmt(xi));
        }
    }
}

void criterion2_shaper_robustness() {
    Criterion c(2, "ZVD dominates ZV across the 0.7..1.3 frequency band");
    for (double omega : omega_grid) {
        for (double xi : xi_grid) {
            const auto zv = shapers::make_zv(omega, xi);
            const auto zvd = shapers::make_zvd(omega, xi);
            for (int i = 0; i < 50; ++i) {
                const double w = omega * (0.7 + 0.6 * i / 49.0);
                const double v_zv = shapers::residual_vibration(zv, w, xi);
                const double v_zvd = shapers::residual_vibration(zvd, w, xi);
                c.check(v_zvd <= v_zv + 1e-12, "V_zvd " + fmt(v_zvd) + " > V_zv " + fmt(v_zv) +
                                                   " at detune " + fmt(w / omega));
            }
        }
    }
}

double simulated_residual_ratio(const shapers::ImpulseSequence& seq, double plant_omega) {
    dynamics::AxisParams p;
    p.omega_n = plant_omega;
    p.xi = 0.0;
    p.dt_physics = 0.001;
    p.dt_control = 0.001;
    p.x_min = -1e6;
    p.x_max = 1e6;
    const double dt = p.dt_control;
    std::vector<double> cmd(500, 100.0);
    const std::vector<double> shaped = shapers::shape_command(seq, cmd, dt);
    const auto run = [&](const std::vector<double>& u) {
        std::vector<double> y;
        dynamics::SystemState s;
        for (double v : u) {
            s = dynamics::step(s, v, p);
            y.push_back(s.y);
        }
        return y;
    };
    const std::vector<double> y_unshaped = run(cmd);
    const std::vector<double> y_shaped = run(shaped);
    const int window = static_cast<int>(std::ceil(2.0 * pi / p.omega_d() / dt)) + 1;
    const int start = static_cast<int>(std::lround(0.3 / dt));
    const auto peak = [&](const std::vector<double>& y) {
        return dynamics::envelope(std::span<const double>(y).subspan(start, window), dt, p);
    };
    return peak(y_shaped) / peak(y_unshaped);
}

void criterion3_simulation_cross_check() {
    Criterion c(3, "closed-form V matches the simulated settled-envelope ratio within 2%");
    const double omega = 2.0 * pi * 10.0;
    const auto zv = shapers::make_zv(omega, 0.0);
    for (double scale : {0.8, 1.0, 1.2}) {
        const double closed = shapers::residual_vibration(zv, scale * omega, 0.0);
        const double simulated = simulated_residual_ratio(zv, scale * omega);
        c.check(std::abs(closed - simulated) < 0.02,
                "closed " + fmt(closed) + " vs simulated " + fmt(simulated) + " at detune " +
                    fmt(scale));
    }
}

double damped_response_error(double dt_physics) {
    dynamics::AxisParams p;
    p.xi = 0.02;
    p.dt_physics = dt_physics;
    p.dt_control = 0.001;
    p.x_min = -100.0;
    p.x_max = 100.0;
    dynamics::SystemState s;
    s.y = 1.0;
    const double wd = p.omega_d();
    double worst = 0.0;
    while (s.t < 2.0) {
        s = dynamics::step(s, 0.0, p);
        const double decay = std::exp(-p.xi * p.omega_n * s.t);
        const double exact =
            decay * (std::cos(wd * s.t) + p.xi * p.omega_n / wd * std::sin(wd * s.t));
        worst = std::max(worst, std::abs(s.y - exact) / decay);
    }
    return worst;
}

void criterion4_dynamics_fidelity() {
    Criterion c(4, "free damped response is analytic to 1e-6 and converges at 4th order");
    const double err = damped_response_error(0.0002);
    c.check(err < 1e-6, "relative error " + fmt(err) + " at dt_physics = 0.2 ms");
    const double coarse = damped_response_error(0.001);
    const double fine = damped_response_error(0.0005);
    c.check(coarse / fine >= 8.0,
            "halving dt shrank the error only " + fmt(coarse / fine) + "x");
}

void criterion5_gradient_exactness() {
    Criterion c(5, "PPO loss gradients match finite differences for every parameter");
    // Default tiny network for the gradient audit.
    neural::LayerSpec spec;
    spec.obs_dim = neural::ObsEncoder::dim;
    spec.dense1 = 6;
    spec.dense2 = 5;
    spec.lstm = 4;
    spec.act_dim = 1;
    spec.action_bound = 400.0;
    neural::PolicyValueNet net(spec, 12345);

    // Fixed batch: three 7-step episodes collected from the real environment.
    ppo::PpoConfig cfg;
    cfg.n_envs = 1;
    cfg.n_steps = 21;
    cfg.seq_len = 21;
    cfg.minibatches = 1;
    cfg.total_steps = 21;
    env::EpisodeConfig ec;
    ec.horizon = 7;
    ec.seed = 99;
    std::vector<ppo::EnvSlot> slots;
    slots.emplace_back(env::AxisEnv(dynamics::AxisParams{}, ec, env::RewardConfig{}), spec.lstm);
    Rng rng(7);
    ppo::Trajectory traj;
    ppo::collect_rollout(slots, net, neural::ObsEncoder{}, cfg.n_steps, cfg.seq_len, rng, traj);

    std::vector<double> adv, ret;
    ppo::prepare_targets(traj, cfg, adv, ret);
    const std::vector<ppo::SeqRef> batch{{0, 0}};
    const double ecoef = 0.01;

    net.params().zero_grad();
    ppo::ppo_loss(net, traj, batch, adv, ret, cfg, ecoef, true);

    int checked = 0;
    int ok = 0;
    std::string first;
    for (neural::Param& p : net.params().params) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double w = p.value[i];
            const double h = 1e-5 * std::max(1.0, std::abs(w));
            p.value[i] = w + h;
            const double lp =
                ppo::ppo_loss(net, traj, batch, adv, ret, cfg, ecoef, false).total;
            p.value[i] = w - h;
            const double lm =
                ppo::ppo_loss(net, traj, batch, adv, ret, cfg, ecoef, false).total;
            p.value[i] = w;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = p.grad[i];
            ++checked;
            if (std::abs(fd - an) <= 1e-4 * std::max(std::abs(fd), std::abs(an)) + 1e-9) {
                ++ok;
            } else if (first.empty()) {
                first = p.name + "[" + std::to_string(i) + "]: fd " + fmt(fd) +
                        " vs analytic " + fmt(an);
            }
        }
    }
    c.check(ok == checked, std::to_string(checked - ok) + " of " + std::to_string(checked) +
                               " parameters mismatched; first: " + first);
}

void criterion6_gae_oracle() {
    Criterion c(6, "GAE(lambda=1, V=0) equals brute-force discounted returns");
    Rng rng(2024);
    const double gamma = 0.99;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 100;
        ppo::Trajectory traj;
        traj.resize(1, n, 1, 1, n, 1);
        for (int t = 0; t < n; ++t) {
            traj.rewards[t] = rng.uniform(-1.0, 1.0);
            traj.done[t] = (rng.uniform() < 0.05) ? 1 : 0;
        }
        std::vector<double> adv, ret;
        ppo::gae(traj, gamma, 1.0, traj.bootstrap_value, adv, ret);
        for (int s = 0; s < n; ++s) {
            double acc = 0.0;
            double g = 1.0;
            for (int k = s; k < n; ++k) {
                acc += g * traj.rewards[k];
                if (traj.done[k]) break;
                g *= gamma;
            }
            if (std::abs(adv[s] - acc) > 1e-10) {
                c.check(false, "trial " + std::to_string(trial) + " step " + std::to_string(s) +
                                   ": gae " + fmt(adv[s]) + " vs brute " + fmt(acc));
                return;
            }
        }
    }
}

void criterion7_reward_semantics() {
    Criterion c(7, "sparse reward matches the band definition and stays two-valued");
    const env::RewardConfig rc;
    dynamics::SystemState s;
    const env::GoalSpec goal{100.0, 0.0};

    s.x = 100.0;
    c.check(env::reward(s, 0.0, goal, rc) == 0.0, "exact goal should be in band");
    s.x = 99.5;
    c.check(env::reward(s, 0.004 * rc.y_ref, goal, rc) == 0.0,
            "0.005 + 0.004 = 0.009 < 0.01 should be in band");
    s.x = 98.0;
    c.check(env::reward(s, 0.0, goal, rc) == -1.0, "0.02 >= 0.01 should be out of band");

    Rng rng(5150);
    for (int i = 0; i < 100000; ++i) {
        dynamics::SystemState state;
        state.x = rng.uniform(0.0, 500.0);
        state.y = rng.uniform(-2.0, 2.0);
        const env::GoalSpec g{rng.uniform(1.0, 500.0), 0.0};
        const double r = env::reward(state, rng.uniform(0.0, 2.0), g, rc);
        if (!(r == 0.0 || r == -1.0)) {
            c.check(false, "reward " + fmt(r) + " outside {0, -1}");
            return;
        }
    }
}

/// 50-episode moving-average series of episode returns from a run directory.
std::vector<double> moving_average_series(const std::string& run_dir) {
    std::ifstream in(fs::path(run_dir) / "episode_reward.csv");
    std::string line;
    std::getline(in, line); // header
    std::vector<double> returns;
    while (std::getline(in, line)) {
        const std::size_t last = line.rfind(',');
        returns.push_back(std::strtod(line.c_str() + last + 1, nullptr));
    }
    std::vector<double> ma;
    double acc = 0.0;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        acc += returns[i];
        if (i >= 50) acc -= returns[i - 50];
        if (i >= 49) ma.push_back(acc / 50.0);
    }
    return ma;
}

void criterion8_end_to_end_learning() {
    Criterion c(8, "PPO learns in-band goal reaching within 300k steps (desk scale)");
    // Documented as seed-sensitive; seed 0 with two fallback seeds.
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    std::string trail;
    for (std::uint64_t seed : seeds) {
        harness::RunConfig cfg;
        cfg.seed = seed;
        cfg.out_dir = "acceptance_out/train_seed" + std::to_string(seed);
        fs::remove_all(cfg.out_dir);
        const harness::TrainResult res = harness::cmd_train(cfg);

        const std::vector<double> ma = moving_average_series(res.run_dir);
        if (ma.empty()) {
            trail += "seed " + std::to_string(seed) + ": no completed episodes; ";
            continue;
        }
        const double initial = ma.front();
        const double final_ma = ma.back();
        const double improvement = (final_ma - initial) / std::max(1e-9, std::abs(initial));

        const harness::EvalReport report =
            harness::cmd_eval(res.final_checkpoint, cfg, 50, cfg.out_dir + "/eval");

        const bool ok = improvement >= 0.60 && report.fraction_episodes_in_band60 >= 0.80;
        std::printf("        seed %llu: steps %lld, MA50 %0.1f -> %0.1f (%.0f%%), "
                    "eval in-band episodes %.0f%%\n",
                    static_cast<unsigned long long>(seed), res.steps, initial, final_ma,
                    improvement * 100.0, report.fraction_episodes_in_band60 * 100.0);
        std::fflush(stdout);
        if (ok) return; // criterion met
        trail += "seed " + std::to_string(seed) + ": improvement " + fmt(improvement) +
                 ", in-band episodes " + fmt(report.fraction_episodes_in_band60) + "; ";
    }
    c.check(false, trail);
}

void criterion9_baseline_comparison() {
    Criterion c(9, "ZVD baseline removes at least 95% of the unshaped residual");
    harness::RunConfig cfg;
    cfg.out_dir = "acceptance_out/baseline";
    const auto rows = harness::cmd_baseline(cfg, harness::MoveSpec{}, "none,zvd", 1.0,
                                            cfg.out_dir + "/baseline.csv");
    const double unshaped = rows[0].residual_envelope_mm;
    const double zvd = rows[1].residual_envelope_mm;
    c.check(unshaped > 0.0, "unshaped residual is zero, nothing to compare");
    c.check(zvd <= 0.05 * unshaped,
            "zvd residual " + fmt(zvd) + " vs unshaped " + fmt(unshaped));
}

void criterion10_reproducibility() {
    Criterion c(10, "identical config and seed give byte-identical metrics");
    harness::RunConfig cfg;
    cfg.ppo.total_steps = 16384;
    cfg.seed = 3;
    cfg.out_dir = "acceptance_out/repro_a";
    fs::remove_all(cfg.out_dir);
    harness::cmd_train(cfg);
    cfg.out_dir = "acceptance_out/repro_b";
    fs::remove_all(cfg.out_dir);
    harness::cmd_train(cfg);

    const auto slurp = [](const std::string& p) {
        std::ifstream in(p);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    };
    const std::string a = slurp("acceptance_out/repro_a/metrics.csv");
    const std::string b = slurp("acceptance_out/repro_b/metrics.csv");
    c.check(!a.empty() && a == b, "metrics.csv differs between identical runs");
}

} // namespace

int main() {
    std::printf("vclab acceptance suite\n");
    criterion1_shaper_correctness();
    criterion2_shaper_robustness();
    criterion3_simulation_cross_check();
    criterion4_dynamics_fidelity();
    criterion5_gradient_exactness();
    criterion6_gae_oracle();
    criterion7_reward_semantics();
    criterion8_end_to_end_learning();
    criterion9_baseline_comparison();
    criterion10_reproducibility();
    if (failures == 0) {
        std::printf("all criteria passed\n");
    } else {
        std::printf("%d criteria failed\n", failures);
    }
    return failures == 0 ? 0 : 1;
}
