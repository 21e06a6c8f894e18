#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vclab/env.hpp"
#include "vclab/neural.hpp"
#include "vclab/util.hpp"

namespace vclab::ppo {

struct PpoConfig {
    double gamma = 0.99;
    double lambda_gae = 0.95;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;        ///< decays linearly to entropy_coef_final
    double entropy_coef_final = 0.001;
    double value_coef = 0.5;
    double learning_rate = 3e-4;       ///< decays linearly to 0 at total_steps
    int epochs = 4;
    int seq_len = 64;                  ///< truncated-backprop window
    int minibatches = 4;               ///< minibatches per epoch
    int n_envs = 8;
    int n_steps = 256;                 ///< steps per env per rollout
    long long total_steps = 300000;
    std::uint64_t seed = 0;
    std::string optimizer = "adam";    ///< "adam" or "sgd" (plain gradient steps)
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double max_grad_norm = 0.5;        ///< 0 disables clipping
    double kl_ceiling = 0.05;          ///< divergence guard on approximate KL
    double sigma_floor = 0.0;          ///< exploration noise floor, action units (0 = none)

    void validate() const {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma in [0,1]");
        if (!(lambda_gae >= 0.0 && lambda_gae <= 1.0)) {
            throw std::invalid_argument("ppo: lambda_gae in [0,1]");
        }
        if (!(clip_eps > 0.0)) throw std::invalid_argument("ppo: clip_eps must be > 0");
        if (entropy_coef < 0.0 || entropy_coef_final < 0.0 || value_coef < 0.0) {
            throw std::invalid_argument("ppo: coefficients must be >= 0");
        }
        if (learning_rate < 0.0) throw std::invalid_argument("ppo: learning_rate must be >= 0");
        if (epochs < 1 || minibatches < 1 || n_envs < 1 || n_steps < 1 || seq_len < 1) {
            throw std::invalid_argument("ppo: epochs/minibatches/n_envs/n_steps/seq_len >= 1");
        }
        if (n_steps % seq_len != 0) {
            throw std::invalid_argument("ppo: n_steps must be a multiple of seq_len");
        }
        if (optimizer != "adam" && optimizer != "sgd") {
            throw std::invalid_argument("ppo: optimizer must be adam or sgd");
        }
        if (total_steps < static_cast<long long>(n_envs) * n_steps) {
            throw std::invalid_argument("ppo: total_steps must cover at least one rollout");
        }
        if (max_grad_norm < 0.0 || kl_ceiling <= 0.0 || sigma_floor < 0.0) {
            throw std::invalid_argument("ppo: max_grad_norm >= 0, kl_ceiling > 0, sigma_floor >= 0");
        }
    }
};

/// Linear learning-rate decay over the step budget.
inline double lr_at(const PpoConfig& cfg, long long steps_done) {
    const double progress =
        clamp(static_cast<double>(steps_done) / static_cast<double>(cfg.total_steps), 0.0, 1.0);
    return cfg.learning_rate * (1.0 - progress);
}

inline double entropy_coef_at(const PpoConfig& cfg, long long steps_done) {
    const double progress =
        clamp(static_cast<double>(steps_done) / static_cast<double>(cfg.total_steps), 0.0, 1.0);
    return cfg.entropy_coef + (cfg.entropy_coef_final - cfg.entropy_coef) * progress;
}

/// Rollout storage across an environment pool. Layout is [env][step];
/// recurrent snapshots exist only at sequence truncation boundaries.
struct Trajectory {
    int n_envs = 0;
    int n_steps = 0;
    int obs_dim = 0;
    int act_dim = 0;
    int seq_len = 0;
    int lstm_dim = 0;

    std::vector<double> obs;                 // n_envs * n_steps * obs_dim
    std::vector<double> actions;             // n_envs * n_steps * act_dim (raw draws)
    std::vector<double> env_actions;         // same, clamped as executed
    std::vector<double> rewards;             // n_envs * n_steps
    std::vector<double> log_prob_old;        // n_envs * n_steps
    std::vector<double> value_old;           // n_envs * n_steps
    std::vector<std::uint8_t> episode_start; // n_envs * n_steps
    std::vector<std::uint8_t> done;          // n_envs * n_steps
    std::vector<double> bootstrap_value;     // n_envs
    std::vector<double> seq_h0, seq_c0;      // n_envs * (n_steps/seq_len) * lstm_dim

    std::size_t idx(int e, int t) const {
        return static_cast<std::size_t>(e) * n_steps + t;
    }
    int seqs_per_env() const { return seq_len > 0 ? n_steps / seq_len : 0; }
    std::size_t size() const { return static_cast<std::size_t>(n_envs) * n_steps; }

    void resize(int envs, int steps, int obs_d, int act_d, int seq, int lstm) {
        n_envs = envs;
        n_steps = steps;
        obs_dim = obs_d;
        act_dim = act_d;
        seq_len = seq;
        lstm_dim = lstm;
        obs.assign(size() * obs_dim, 0.0);
        actions.assign(size() * act_dim, 0.0);
        env_actions.assign(size() * act_dim, 0.0);
        rewards.assign(size(), 0.0);
        log_prob_old.assign(size(), 0.0);
        value_old.assign(size(), 0.0);
        episode_start.assign(size(), 0);
        done.assign(size(), 0);
        bootstrap_value.assign(envs, 0.0);
        const std::size_t snaps = static_cast<std::size_t>(envs) * seqs_per_env() * lstm_dim;
        seq_h0.assign(snaps, 0.0);
        seq_c0.assign(snaps, 0.0);
    }
};

/// One environment plus its carried policy state between rollouts.
struct EnvSlot {
    env::AxisEnv env;
    neural::RecurrentState rec;
    env::Observation obs;
    bool episode_start = true;
    double episode_return = 0.0;

    EnvSlot(env::AxisEnv e, int lstm_dim)
        : env(std::move(e)), rec(neural::RecurrentState::zeros(lstm_dim)) {
        obs = env.reset();
    }
};

/// A finished episode inside a rollout.
struct EpisodeRecord {
    int env = 0;
    int step = 0; ///< step index within the rollout at which the episode ended
    double episode_return = 0.0;
};

/// Step every environment n_steps times under the sampled policy, recording
/// everything the update needs. Deterministic for a fixed rng state.
inline void collect_rollout(std::vector<EnvSlot>& slots, const neural::PolicyValueNet& net,
                            const neural::ObsEncoder& encoder, int n_steps, int seq_len,
                            Rng& rng, Trajectory& traj,
                            std::vector<EpisodeRecord>* completed = nullptr) {
    const int n_envs = static_cast<int>(slots.size());
    const neural::LayerSpec& spec = net.spec();
    if (n_steps > 0 && seq_len > 0 && n_steps % seq_len != 0) {
        throw std::invalid_argument("collect_rollout: n_steps must be a multiple of seq_len");
    }
    traj.resize(n_envs, n_steps, spec.obs_dim, spec.act_dim, n_steps > 0 ? seq_len : 0,
                spec.lstm);

    std::vector<double> features(spec.obs_dim);
    for (int t = 0; t < n_steps; ++t) {
        for (int e = 0; e < n_envs; ++e) {
            EnvSlot& slot = slots[e];
            const std::size_t i = traj.idx(e, t);

            if (t % seq_len == 0) {
                const std::size_t snap =
                    (static_cast<std::size_t>(e) * traj.seqs_per_env() + t / seq_len) * spec.lstm;
                std::copy(slot.rec.h.begin(), slot.rec.h.end(), traj.seq_h0.begin() + snap);
                std::copy(slot.rec.c.begin(), slot.rec.c.end(), traj.seq_c0.begin() + snap);
            }

            encoder.encode(slot.obs, features);
            std::copy(features.begin(), features.end(), traj.obs.begin() + i * spec.obs_dim);
            traj.episode_start[i] = slot.episode_start ? 1 : 0;
            if (slot.episode_start) {
                std::fill(slot.rec.h.begin(), slot.rec.h.end(), 0.0);
                std::fill(slot.rec.c.begin(), slot.rec.c.end(), 0.0);
            }

            const neural::PolicyValueNet::StepOutput out = net.step_forward(features, slot.rec);
            const neural::GaussianSample sample =
                neural::sample_action(out.mean, net.log_std(), spec.action_bound, rng);

            std::copy(sample.action_raw.begin(), sample.action_raw.end(),
                      traj.actions.begin() + i * spec.act_dim);
            std::copy(sample.action.begin(), sample.action.end(),
                      traj.env_actions.begin() + i * spec.act_dim);
            traj.log_prob_old[i] = sample.log_prob;
            traj.value_old[i] = out.value;

            const env::AxisEnv::StepResult sr = slot.env.step(sample.action[0]);
            traj.rewards[i] = sr.reward;
            traj.done[i] = sr.done ? 1 : 0;
            slot.episode_return += sr.reward;
            slot.episode_start = false;

            if (sr.done) {
                if (completed != nullptr) {
                    completed->push_back({e, t, slot.episode_return});
                }
                slot.episode_return = 0.0;
                slot.obs = slot.env.reset();
                std::fill(slot.rec.h.begin(), slot.rec.h.end(), 0.0);
                std::fill(slot.rec.c.begin(), slot.rec.c.end(), 0.0);
                slot.episode_start = true;
            } else {
                slot.obs = sr.obs;
            }
        }
    }

    // Bootstrap values for unfinished episodes at the rollout boundary.
    for (int e = 0; e < n_envs; ++e) {
        EnvSlot& slot = slots[e];
        if (n_steps == 0 || slot.episode_start) {
            traj.bootstrap_value[e] = 0.0;
            continue;
        }
        encoder.encode(slot.obs, features);
        neural::RecurrentState peek = slot.rec; // do not advance the carried state
        traj.bootstrap_value[e] = net.step_forward(features, peek).value;
    }
}

/// Generalized advantage estimation with resets at episode boundaries.
/// returns = advantages + values.
inline void gae(const Trajectory& traj, double gamma, double lambda,
                std::span<const double> bootstrap, std::vector<double>& advantages,
                std::vector<double>& returns) {
    if (static_cast<int>(bootstrap.size()) != traj.n_envs) {
        throw std::invalid_argument("gae: bootstrap length mismatch");
    }
    advantages.assign(traj.size(), 0.0);
    returns.assign(traj.size(), 0.0);
    for (int e = 0; e < traj.n_envs; ++e) {
        double acc = 0.0;
        for (int t = traj.n_steps - 1; t >= 0; --t) {
            const std::size_t i = traj.idx(e, t);
            const double nonterminal = traj.done[i] ? 0.0 : 1.0;
            const double next_value =
                (t == traj.n_steps - 1) ? bootstrap[e] : traj.value_old[traj.idx(e, t + 1)];
            const double delta =
                traj.rewards[i] + gamma * next_value * nonterminal - traj.value_old[i];
            acc = delta + gamma * lambda * nonterminal * acc;
            advantages[i] = acc;
            returns[i] = acc + traj.value_old[i];
        }
    }
}

/// GAE plus per-rollout advantage normalization (mean 0, std 1).
inline void prepare_targets(const Trajectory& traj, const PpoConfig& cfg,
                            std::vector<double>& advantages, std::vector<double>& returns) {
    gae(traj, cfg.gamma, cfg.lambda_gae, traj.bootstrap_value, advantages, returns);
    double mean = 0.0;
    for (double a : advantages) mean += a;
    mean /= std::max<std::size_t>(1, advantages.size());
    double var = 0.0;
    for (double a : advantages) var += (a - mean) * (a - mean);
    var /= std::max<std::size_t>(1, advantages.size());
    const double scale = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& a : advantages) a = (a - mean) * scale;
}

struct SeqRef {
    int env = 0;
    int seq = 0;
};

struct LossStats {
    double total = 0.0;
    double policy = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
    int samples = 0;

    std::string describe() const {
        std::ostringstream os;
        os << "total=" << total << " policy=" << policy << " value=" << value
           << " entropy=" << entropy << " clip_fraction=" << clip_fraction
           << " approx_kl=" << approx_kl;
        return os.str();
    }
};

/// Clipped-surrogate PPO loss over a minibatch of stored sequences:
///   L = -E[min(rho A, clip(rho, 1-eps, 1+eps) A)]
///       + value_coef E[(V - returns)^2] - entropy_coef H(policy)
/// With with_grad, exact gradients accumulate into the parameter set.
inline LossStats ppo_loss(neural::PolicyValueNet& net, const Trajectory& traj,
                          std::span<const SeqRef> batch, std::span<const double> advantages,
                          std::span<const double> returns, const PpoConfig& cfg,
                          double entropy_coef, bool with_grad) {
    const neural::LayerSpec& spec = net.spec();
    const int L = traj.seq_len;
    const int A = spec.act_dim;
    const std::span<const double> log_std = net.log_std();
    std::vector<double> sigma(A), inv_sigma2(A);
    for (int d = 0; d < A; ++d) {
        sigma[d] = std::exp(log_std[d]);
        inv_sigma2[d] = 1.0 / (sigma[d] * sigma[d]);
    }

    LossStats stats;
    stats.samples = static_cast<int>(batch.size()) * L;
    const double inv_n = 1.0 / std::max(1, stats.samples);
    const double entropy = neural::gaussian_entropy(log_std);
    std::vector<double> dlog_std(A, 0.0);

    neural::PolicyValueNet::SequenceCache cache;
    std::vector<double> dmean(static_cast<std::size_t>(L) * A);
    std::vector<double> dvalue(L);

    for (const SeqRef& ref : batch) {
        const int t0 = ref.seq * L;
        const std::size_t base = traj.idx(ref.env, t0);

        neural::RecurrentState initial = neural::RecurrentState::zeros(spec.lstm);
        const std::size_t snap =
            (static_cast<std::size_t>(ref.env) * traj.seqs_per_env() + ref.seq) * spec.lstm;
        std::copy_n(traj.seq_h0.begin() + snap, spec.lstm, initial.h.begin());
        std::copy_n(traj.seq_c0.begin() + snap, spec.lstm, initial.c.begin());

        net.forward_sequence(
            std::span<const double>(traj.obs).subspan(base * spec.obs_dim,
                                                      static_cast<std::size_t>(L) * spec.obs_dim),
            L, initial,
            std::span<const std::uint8_t>(traj.episode_start).subspan(base, L), cache);

        std::fill(dmean.begin(), dmean.end(), 0.0);
        std::fill(dvalue.begin(), dvalue.end(), 0.0);

        for (int t = 0; t < L; ++t) {
            const std::size_t i = base + t;
            const std::span<const double> mean(cache.mean.data() +
                                                   static_cast<std::size_t>(t) * A,
                                               A);
            const std::span<const double> action(traj.actions.data() + i * A, A);
            const double log_prob_new = neural::gaussian_log_prob(mean, log_std, action);
            const double ratio = std::exp(log_prob_new - traj.log_prob_old[i]);
            const double adv = advantages[i];

            const double unclipped = ratio * adv;
            const double clipped = clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            const double surrogate = std::min(unclipped, clipped);
            stats.policy -= surrogate * inv_n;
            if (std::abs(ratio - 1.0) > cfg.clip_eps) stats.clip_fraction += 1.0;
            stats.approx_kl += (ratio - 1.0) - std::log(ratio);

            const double verr = cache.value[t] - returns[i];
            stats.value += verr * verr * inv_n;

            if (with_grad) {
                dvalue[t] = cfg.value_coef * 2.0 * verr * inv_n;
                if (unclipped <= clipped) { // clip inactive on the chosen branch
                    const double coef = -adv * ratio * inv_n;
                    for (int d = 0; d < A; ++d) {
                        const double z = action[d] - mean[d];
                        dmean[static_cast<std::size_t>(t) * A + d] = coef * z * inv_sigma2[d];
                        dlog_std[d] += coef * (z * z * inv_sigma2[d] - 1.0);
                    }
                }
            }
        }
        if (with_grad) net.backward_sequence(cache, dmean, dvalue);
    }

    if (with_grad) {
        std::vector<double>& g = net.params().find("log_std").grad;
        for (int d = 0; d < A; ++d) g[d] += dlog_std[d] - entropy_coef; // dH/dlog_std = 1
    }

    stats.entropy = entropy;
    stats.clip_fraction *= inv_n;
    stats.approx_kl *= inv_n;
    stats.total = stats.policy + cfg.value_coef * stats.value - entropy_coef * entropy;
    if (!std::isfinite(stats.total)) {
        throw std::runtime_error("ppo: non-finite loss (" + stats.describe() + ")");
    }
    return stats;
}

/// Plain-gradient or Adam parameter updates. SGD deltas are exactly
/// -lr * gradient.
class Optimizer {
public:
    Optimizer(const PpoConfig& cfg, const neural::ParamSet& params)
        : kind_(cfg.optimizer), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2),
          eps_(cfg.adam_eps) {
        m_.resize(params.params.size());
        v_.resize(params.params.size());
        for (std::size_t i = 0; i < params.params.size(); ++i) {
            m_[i].assign(params.params[i].size(), 0.0);
            v_[i].assign(params.params[i].size(), 0.0);
        }
    }

    void step(neural::ParamSet& params, double lr) {
        if (kind_ == "sgd") {
            for (neural::Param& p : params.params) {
                for (std::size_t i = 0; i < p.size(); ++i) p.value[i] -= lr * p.grad[i];
            }
            return;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.params.size(); ++k) {
            neural::Param& p = params.params[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
                v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
                p.value[i] -= lr * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + eps_);
            }
        }
    }

private:
    std::string kind_;
    double beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Scale gradients to a maximum global norm; returns the pre-clip norm.
inline double clip_grad_norm(neural::ParamSet& params, double max_norm) {
    double sq = 0.0;
    for (const neural::Param& p : params.params) {
        for (double g : p.grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (neural::Param& p : params.params) {
            for (double& g : p.grad) g *= scale;
        }
    }
    return norm;
}

struct UpdateResult {
    LossStats stats;       ///< averaged over the minibatches that ran
    double lr = 0.0;
    double entropy_coef = 0.0;
    double grad_norm = 0.0;
    int minibatches_run = 0;
    bool kl_stopped = false;
};

/// One PPO update over a completed rollout: configured epochs of shuffled
/// sequence minibatches with truncated backpropagation through time. The
/// divergence guard skips remaining minibatches when the approximate KL
/// exceeds the ceiling.
inline UpdateResult update(neural::PolicyValueNet& net, Optimizer& opt, const Trajectory& traj,
                           const PpoConfig& cfg, long long steps_done, Rng& rng) {
    cfg.validate();
    std::vector<double> advantages, returns;
    prepare_targets(traj, cfg, advantages, returns);

    UpdateResult res;
    res.lr = lr_at(cfg, steps_done);
    res.entropy_coef = entropy_coef_at(cfg, steps_done);

    std::vector<SeqRef> order;
    for (int e = 0; e < traj.n_envs; ++e) {
        for (int s = 0; s < traj.seqs_per_env(); ++s) order.push_back({e, s});
    }
    if (order.empty()) return res;

    LossStats sum;
    for (int epoch = 0; epoch < cfg.epochs && !res.kl_stopped; ++epoch) {
        // Fisher-Yates with the trainer stream keeps runs reproducible.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
            std::swap(order[i - 1], order[j]);
        }
        const int per_batch =
            std::max<int>(1, (static_cast<int>(order.size()) + cfg.minibatches - 1) /
                                 cfg.minibatches);
        for (std::size_t at = 0; at < order.size() && !res.kl_stopped; at += per_batch) {
            const std::size_t n =
                std::min<std::size_t>(per_batch, order.size() - at);
            net.params().zero_grad();
            const LossStats stats =
                ppo_loss(net, traj, std::span<const SeqRef>(order).subspan(at, n), advantages,
                         returns, cfg, res.entropy_coef, true);
            res.grad_norm = clip_grad_norm(net.params(), cfg.max_grad_norm);
            opt.step(net.params(), res.lr);
            if (cfg.sigma_floor > 0.0) {
                const double floor = std::log(cfg.sigma_floor);
                for (double& v : net.params().find("log_std").value) {
                    if (v < floor) v = floor;
                }
            }

            sum.total += stats.total;
            sum.policy += stats.policy;
            sum.value += stats.value;
            sum.entropy += stats.entropy;
            sum.clip_fraction += stats.clip_fraction;
            sum.approx_kl += stats.approx_kl;
            sum.samples += stats.samples;
            ++res.minibatches_run;

            if (stats.approx_kl > cfg.kl_ceiling) res.kl_stopped = true;
        }
    }

    const double inv = 1.0 / std::max(1, res.minibatches_run);
    res.stats.total = sum.total * inv;
    res.stats.policy = sum.policy * inv;
    res.stats.value = sum.value * inv;
    res.stats.entropy = sum.entropy * inv;
    res.stats.clip_fraction = sum.clip_fraction * inv;
    res.stats.approx_kl = sum.approx_kl * inv;
    res.stats.samples = sum.samples;
    return res;
}

} // namespace vclab::ppo
