#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "vclab/dynamics.hpp"
#include "vclab/util.hpp"

namespace vclab::env {

inline constexpr int deflection_history = 5;

/// Agent-visible state. The agent sees raw deflection samples and the goal
/// position, never the modal parameters or the deflection rate.
struct Observation {
    double x = 0.0;                                  ///< position, mm
    double v = 0.0;                                  ///< velocity, mm/s
    std::array<double, deflection_history> y_hist{}; ///< deflection samples, oldest first
    double x_g = 0.0;                                ///< goal position, mm
};

struct GoalSpec {
    double x_g = 0.0;     ///< target position, mm
    double y_hat_g = 0.0; ///< desired vibration amplitude, mm (0 for compensation)
};

/// Sparse in-band/out-of-band reward parameters.
struct RewardConfig {
    double threshold = 0.01;
    double y_ref = 1.0; ///< vibration normalization amplitude, mm
    double in_band_reward = 0.0;
    double out_of_band_reward = -1.0;
    bool relative_position = true; ///< position error relative to |x_g|; else to pos_ref
    double pos_ref = 100.0;        ///< mm, used when relative_position is false

    void validate() const {
        if (!(threshold > 0.0)) throw std::invalid_argument("reward: threshold must be > 0");
        if (!(y_ref > 0.0)) throw std::invalid_argument("reward: y_ref must be > 0");
        if (!relative_position && !(pos_ref > 0.0)) {
            throw std::invalid_argument("reward: pos_ref must be > 0");
        }
    }
};

struct EpisodeConfig {
    int horizon = 500;        ///< steps per episode (fixed, no early termination)
    double start_min = 0.0;   ///< initial position range, mm (rest state)
    double start_max = 500.0;
    double goal_min = 100.0;  ///< goal sampling range, mm
    double goal_max = 400.0;
    /// Share of episodes that start at a goal-relative distance instead of a
    /// uniform travel position. The distance is log-uniform in
    /// [start_dist_min, start_dist_max], sign random: every approach length
    /// scale stays equally represented during training.
    double start_near_goal_prob = 0.0;
    double start_dist_min = 1.0;   ///< mm
    double start_dist_max = 300.0; ///< mm
    std::uint64_t seed = 0;

    void validate(const dynamics::AxisParams& axis) const {
        if (horizon < 1) throw std::invalid_argument("episode: horizon must be >= 1");
        if (!(goal_min <= goal_max) || goal_min < axis.x_min || goal_max > axis.x_max) {
            throw std::invalid_argument("episode: goal range must lie within travel");
        }
        if (!(start_min <= start_max) || start_min < axis.x_min || start_max > axis.x_max) {
            throw std::invalid_argument("episode: start range must lie within travel");
        }
        if (start_near_goal_prob < 0.0 || start_near_goal_prob > 1.0 ||
            start_near_goal_radius < 0.0) {
            throw std::invalid_argument("episode: invalid near-goal start mixture");
        }
    }
};

/// Sparse reward: 0 when the combined relative position and vibration error
/// is inside the band, else -1.
inline double reward(const dynamics::SystemState& state, double y_hat, const GoalSpec& goal,
                     const RewardConfig& cfg) {
    cfg.validate();
    if (!state.finite()) throw std::invalid_argument("reward: non-finite state");
    require_finite(y_hat, "reward: y_hat");
    require_finite(goal.x_g, "reward: goal position");
    require_finite(goal.y_hat_g, "reward: goal vibration");

    double pos_term = 0.0;
    if (cfg.relative_position) {
        if (goal.x_g == 0.0) {
            throw std::invalid_argument("reward: relative position error undefined for x_g = 0");
        }
        pos_term = std::abs(state.x - goal.x_g) / std::abs(goal.x_g);
    } else {
        pos_term = std::abs(state.x - goal.x_g) / cfg.pos_ref;
    }
    const double vib_term = std::abs(y_hat - goal.y_hat_g) / cfg.y_ref;
    return (pos_term + vib_term < cfg.threshold) ? cfg.in_band_reward : cfg.out_of_band_reward;
}

/// Summed squared distance of the (position, deflection) trajectory from the
/// goal state, mm^2.
inline double trajectory_loss(std::span<const dynamics::SystemState> states,
                              const GoalSpec& goal) {
    if (states.empty()) throw std::invalid_argument("trajectory_loss: empty trajectory");
    double loss = 0.0;
    for (const dynamics::SystemState& s : states) {
        const double dx = s.x - goal.x_g;
        const double dy = s.y - goal.y_hat_g;
        loss += dx * dx + dy * dy;
    }
    return loss;
}

/// Fixed-horizon episodic environment: randomized goal, clamped continuous
/// velocity action, deflection-history observation, sparse reward.
class AxisEnv {
public:
    struct StepResult {
        Observation obs;
        double reward = 0.0;
        bool done = false;
    };

    AxisEnv(dynamics::AxisParams axis, EpisodeConfig episode, RewardConfig reward_cfg)
        : axis_(axis), episode_(episode), reward_(reward_cfg) {
        axis_.validate();
        episode_.validate(axis_);
        reward_.validate();
        // Envelope window spans at least one damped period of control samples.
        window_len_ = static_cast<std::size_t>(
                          std::ceil(2.0 * pi / axis_.omega_d() / axis_.dt_control)) +
                      1;
    }

    /// Start the next episode in this environment's seeded stream.
    Observation reset() { return reset(next_episode_++); }

    /// Start a specific episode: the goal depends only on (seed, index).
    Observation reset(std::uint64_t episode_index) {
        next_episode_ = episode_index + 1;
        Rng rng = Rng::substream(episode_.seed, episode_index);

        goal_.x_g = rng.uniform(episode_.goal_min, episode_.goal_max);
        if (reward_.relative_position) {
            for (int tries = 0; goal_.x_g == 0.0 && tries < 100; ++tries) {
                goal_.x_g = rng.uniform(episode_.goal_min, episode_.goal_max);
            }
            if (goal_.x_g == 0.0) {
                throw std::invalid_argument("reset: goal range admits only x_g = 0");
            }
        }
        goal_.y_hat_g = 0.0;

        state_ = dynamics::SystemState{};
        state_.x = rng.uniform(episode_.start_min, episode_.start_max);
        if (episode_.start_near_goal_prob > 0.0 &&
            rng.uniform() < episode_.start_near_goal_prob) {
            const double r = episode_.start_near_goal_radius;
            state_.x = clamp(goal_.x_g + rng.uniform(-r, r), axis_.x_min, axis_.x_max);
        }

        y_hist_.fill(0.0);
        y_window_.assign(window_len_, state_.y);
        step_count_ = 0;
        active_ = true;
        return observation();
    }

    StepResult step(double action) {
        if (!active_) throw std::logic_error("env: step after episode end");
        require_finite(action, "env: action");

        const double u = clamp(action, -axis_.v_max, axis_.v_max);
        state_ = dynamics::step(state_, u, axis_);

        for (std::size_t i = 0; i + 1 < y_hist_.size(); ++i) y_hist_[i] = y_hist_[i + 1];
        y_hist_.back() = state_.y;
        y_window_.erase(y_window_.begin());
        y_window_.push_back(state_.y);

        StepResult result;
        result.reward = reward(state_, envelope_estimate(), goal_, reward_);
        ++step_count_;
        result.done = step_count_ >= episode_.horizon;
        active_ = !result.done;
        result.obs = observation();
        return result;
    }

    Observation observation() const {
        Observation obs;
        obs.x = state_.x;
        obs.v = state_.v;
        obs.y_hist = y_hist_;
        obs.x_g = goal_.x_g;
        return obs;
    }

    /// Current vibration amplitude estimate over the trailing window.
    double envelope_estimate() const {
        return dynamics::envelope(y_window_, axis_.dt_control, axis_);
    }

    /// Retune the near-goal start mixture; applies from the next reset.
    void set_near_goal_starts(double prob, double radius) {
        episode_.start_near_goal_prob = prob;
        episode_.start_near_goal_radius = radius;
        episode_.validate(axis_);
    }

    const GoalSpec& goal() const { return goal_; }
    const dynamics::SystemState& state() const { return state_; }
    const dynamics::AxisParams& axis() const { return axis_; }
    const EpisodeConfig& episode_config() const { return episode_; }
    const RewardConfig& reward_config() const { return reward_; }
    int steps_done() const { return step_count_; }
    int horizon() const { return episode_.horizon; }
    bool active() const { return active_; }

private:
    dynamics::AxisParams axis_;
    EpisodeConfig episode_;
    RewardConfig reward_;
    dynamics::SystemState state_;
    GoalSpec goal_;
    std::array<double, deflection_history> y_hist_{};
    std::vector<double> y_window_;
    std::size_t window_len_ = 0;
    std::uint64_t next_episode_ = 0;
    int step_count_ = 0;
    bool active_ = false;
};

} // namespace vclab::env
