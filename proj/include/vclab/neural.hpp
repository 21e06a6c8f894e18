#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vclab/env.hpp"
#include "vclab/util.hpp"

namespace vclab::neural {

/// One named parameter tensor with its gradient accumulator.
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;

    std::size_t size() const { return value.size(); }
};

struct ParamSet {
    std::vector<Param> params;

    Param& add(std::string name, std::vector<std::size_t> shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        params.push_back(Param{std::move(name), std::move(shape),
                               std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
        return params.back();
    }

    Param& find(std::string_view name) {
        for (Param& p : params) {
            if (p.name == name) return p;
        }
        throw std::invalid_argument("params: no parameter named " + std::string(name));
    }

    const Param& find(std::string_view name) const {
        return const_cast<ParamSet*>(this)->find(name);
    }

    void zero_grad() {
        for (Param& p : params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const Param& p : params) n += p.size();
        return n;
    }

    bool finite() const {
        for (const Param& p : params) {
            for (double v : p.value) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    }
};

/// Network sizing: dense trunk -> LSTM -> Gaussian policy head + value head.
struct LayerSpec {
    int obs_dim = 9;
    int dense1 = 64;
    int dense2 = 64;
    int lstm = 64;
    int act_dim = 1;
    double action_bound = 400.0; ///< saturating output scale, mm/s

    bool operator==(const LayerSpec&) const = default;

    std::string describe() const {
        std::ostringstream os;
        os << "obs=" << obs_dim << " dense1=" << dense1 << " dense2=" << dense2
           << " lstm=" << lstm << " act=" << act_dim << " bound=" << action_bound;
        return os.str();
    }
};

/// Hidden and cell vectors of the recurrent layer. Zeroed at episode start.
struct RecurrentState {
    std::vector<double> h, c;

    static RecurrentState zeros(int n) {
        RecurrentState s;
        s.h.assign(n, 0.0);
        s.c.assign(n, 0.0);
        return s;
    }
};

/// Maps an environment observation onto the network input features. Static
/// scaling: positions by travel span, velocities by the action bound,
/// deflections by the reward normalization amplitude. The last feature is the
/// normalized goal offset.
struct ObsEncoder {
    double x_min = 0.0;
    double span = 500.0;
    double v_max = 400.0;
    double y_ref = 1.0;

    static constexpr int dim = 9;

    ObsEncoder() = default;
    ObsEncoder(const dynamics::AxisParams& axis, const env::RewardConfig& reward)
        : x_min(axis.x_min), span(axis.travel_span()), v_max(axis.v_max), y_ref(reward.y_ref) {}

    void encode(const env::Observation& obs, std::span<double> out) const {
        out[0] = (obs.x - x_min) / span;
        out[1] = obs.v / v_max;
        for (int i = 0; i < env::deflection_history; ++i) out[2 + i] = obs.y_hist[i] / y_ref;
        out[7] = (obs.x_g - x_min) / span;
        out[8] = (obs.x_g - obs.x) / span;
    }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// out = W x + b, W row-major (rows x cols).
inline void matvec(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        double acc = b.empty() ? 0.0 : b[r];
        const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += wr[c] * x[c];
        out[r] = acc;
    }
}

/// grad_w += d (outer) x; grad_b += d.
inline void accumulate_outer(std::span<double> grad_w, std::span<double> grad_b,
                             std::span<const double> d, std::span<const double> x, int rows,
                             int cols) {
    for (int r = 0; r < rows; ++r) {
        double* gr = grad_w.data() + static_cast<std::size_t>(r) * cols;
        const double dr = d[r];
        for (int c = 0; c < cols; ++c) gr[c] += dr * x[c];
        if (!grad_b.empty()) grad_b[r] += dr;
    }
}

/// out += W^T d.
inline void matvec_transposed_add(std::span<const double> w, std::span<const double> d,
                                  std::span<double> out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
        const double dr = d[r];
        for (int c = 0; c < cols; ++c) out[c] += wr[c] * dr;
    }
}

/// Fill (rows x cols) with an orthogonal(-ish) matrix scaled by gain:
/// Gram-Schmidt over the smaller dimension of a Gaussian draw.
inline void orthogonal_init(std::span<double> w, int rows, int cols, double gain, Rng& rng) {
    const int small = std::min(rows, cols);
    const int large = std::max(rows, cols);
    std::vector<std::vector<double>> basis;
    basis.reserve(small);
    while (static_cast<int>(basis.size()) < small) {
        std::vector<double> v(large);
        for (double& x : v) x = rng.normal();
        for (const std::vector<double>& q : basis) {
            double dot = 0.0;
            for (int i = 0; i < large; ++i) dot += q[i] * v[i];
            for (int i = 0; i < large; ++i) v[i] -= dot * q[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-8) continue; // redraw a degenerate vector
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double q = rows <= cols ? basis[r][c] : basis[c][r];
            w[static_cast<std::size_t>(r) * cols + c] = gain * q;
        }
    }
}

} // namespace detail

/// Recurrent actor-critic network with exact hand-derived reverse-mode
/// gradients, including full backpropagation through the processed window.
///
/// Forward per step:
///   a1 = tanh(W1 x + b1)
///   a2 = tanh(W2 a1 + b2)
///   [i f g o] = gates(W a2 + U h + b),  c' = f.c + i.g,  h' = o.tanh(c')
///   mean = bound * tanh(Wp h' + bp),    value = Wv h' + bv
struct PolicyValueNet {
public:
    /// policy_gain scales the policy-head initialization: small values start
    /// near-zero mean commands, values near 1 start with an exploratory
    /// goal-conditioned velocity field. sigma_scale sets the initial action
    /// noise to sigma = 0.5 * action_bound * sigma_scale.
    PolicyValueNet(const LayerSpec& spec, std::uint64_t init_seed, double policy_gain = 0.5,
                   double sigma_scale = 0.2)
        : spec_(spec) {
        allocate();
        initialize(init_seed, policy_gain, sigma_scale);
    }

    PolicyValueNet(const LayerSpec& spec, ParamSet params) : spec_(spec) {
        allocate();
        if (params.params.size() != params_.params.size()) {
            throw std::runtime_error("network: parameter count mismatch");
        }
        for (std::size_t i = 0; i < params_.params.size(); ++i) {
            Param& dst = params_.params[i];
            Param& src = params.params[i];
            if (src.name != dst.name || src.shape != dst.shape) {
                throw std::runtime_error("network: parameter " + src.name +
                                         " does not match layer spec");
            }
            dst.value = std::move(src.value);
        }
    }

    const LayerSpec& spec() const { return spec_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    std::span<const double> log_std() const { return params_.params[idx_log_std_].value; }

    struct StepOutput {
        std::vector<double> mean;
        double value = 0.0;
    };

    /// Single control step; advances the recurrent state in place.
    /// In-place aliasing of h/c is safe: the cell consumes both fully before
    /// writing its outputs.
    StepOutput step_forward(std::span<const double> features, RecurrentState& rec) const {
        check_features(features, 1);
        Scratch s(spec_);
        StepOutput out;
        out.mean.resize(spec_.act_dim);
        double value = 0.0;
        cell_step(features, rec.h, rec.c, s, rec.h, rec.c, out.mean, value);
        out.value = value;
        return out;
    }

    /// Per-sequence activations kept for the backward pass.
    struct SequenceCache {
        int T = 0;
        std::vector<double> input;        // T x obs_dim
        std::vector<double> a1, a2;       // T x dense
        std::vector<double> gates;        // T x 4*lstm, blocks [i f g o]
        std::vector<double> c, tanh_c, h; // T x lstm
        std::vector<double> mean_tanh;    // T x act (pre-bound tanh output)
        std::vector<double> mean;         // T x act
        std::vector<double> value;        // T
        std::vector<std::uint8_t> episode_start; // T
        RecurrentState initial;
    };

    /// Forward over a T-step window. episode_start[t] marks observations that
    /// begin a new episode: the carried state is zeroed before that step.
    /// Bit-identical to T calls of step_forward with the same resets.
    void forward_sequence(std::span<const double> features, int T, const RecurrentState& initial,
                          std::span<const std::uint8_t> episode_start,
                          SequenceCache& cache) const {
        check_features(features, T);
        if (static_cast<int>(episode_start.size()) != T) {
            throw std::invalid_argument("network: episode_start length mismatch");
        }
        const int H = spec_.lstm;
        cache.T = T;
        cache.input.assign(features.begin(), features.end());
        cache.a1.resize(static_cast<std::size_t>(T) * spec_.dense1);
        cache.a2.resize(static_cast<std::size_t>(T) * spec_.dense2);
        cache.gates.resize(static_cast<std::size_t>(T) * 4 * H);
        cache.c.resize(static_cast<std::size_t>(T) * H);
        cache.tanh_c.resize(static_cast<std::size_t>(T) * H);
        cache.h.resize(static_cast<std::size_t>(T) * H);
        cache.mean_tanh.resize(static_cast<std::size_t>(T) * spec_.act_dim);
        cache.mean.resize(static_cast<std::size_t>(T) * spec_.act_dim);
        cache.value.resize(T);
        cache.episode_start.assign(episode_start.begin(), episode_start.end());
        cache.initial = initial;

        Scratch s(spec_);
        RecurrentState rec = initial;
        for (int t = 0; t < T; ++t) {
            if (episode_start[t]) {
                std::fill(rec.h.begin(), rec.h.end(), 0.0);
                std::fill(rec.c.begin(), rec.c.end(), 0.0);
            }
            const std::span<const double> x = features.subspan(
                static_cast<std::size_t>(t) * spec_.obs_dim, spec_.obs_dim);
            cell_step_cached(x, rec, s, cache, t);
        }
    }

    /// Accumulate parameter gradients of sum_t (dmean[t] . mean[t] +
    /// dvalue[t] * value[t]) into the parameter set. Exact reverse mode
    /// through the whole window, honoring episode boundaries.
    void backward_sequence(const SequenceCache& cache, std::span<const double> dmean,
                           std::span<const double> dvalue) {
        const int T = cache.T;
        const int H = spec_.lstm;
        const int A = spec_.act_dim;
        if (static_cast<int>(dvalue.size()) != T ||
            static_cast<int>(dmean.size()) != T * A) {
            throw std::invalid_argument("network: gradient length mismatch");
        }

        auto& g = params_;
        std::span<double> gw1 = g.params[idx_w1_].grad, gb1 = g.params[idx_b1_].grad;
        std::span<double> gw2 = g.params[idx_w2_].grad, gb2 = g.params[idx_b2_].grad;
        std::span<double> gw = g.params[idx_lw_].grad, gu = g.params[idx_lu_].grad,
                          gb = g.params[idx_lb_].grad;
        std::span<double> gwp = g.params[idx_wp_].grad, gbp = g.params[idx_bp_].grad;
        std::span<double> gwv = g.params[idx_wv_].grad, gbv = g.params[idx_bv_].grad;
        std::span<const double> w1 = values(idx_w1_), w2 = values(idx_w2_);
        std::span<const double> lw = values(idx_lw_), lu = values(idx_lu_);
        std::span<const double> wp = values(idx_wp_), wv = values(idx_wv_);

        std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0);
        std::vector<double> dh(H), dc(H), dz(4 * H), da2(spec_.dense2), da1(spec_.dense1);
        std::vector<double> dz2(spec_.dense2), dz1(spec_.dense1), dp(A);

        for (int t = T - 1; t >= 0; --t) {
            const std::size_t th = static_cast<std::size_t>(t) * H;
            const std::size_t ta = static_cast<std::size_t>(t) * A;
            const double* h_t = cache.h.data() + th;
            const double* tanh_c = cache.tanh_c.data() + th;

            std::fill(dh.begin(), dh.end(), 0.0);

            // Policy head.
            for (int a = 0; a < A; ++a) {
                const double mt = cache.mean_tanh[ta + a];
                dp[a] = dmean[ta + a] * spec_.action_bound * (1.0 - mt * mt);
            }
            detail::accumulate_outer(gwp, gbp, dp, std::span<const double>(h_t, H), A, H);
            detail::matvec_transposed_add(wp, dp, dh, A, H);

            // Value head.
            const double dv = dvalue[t];
            for (int k = 0; k < H; ++k) gwv[k] += dv * h_t[k];
            gbv[0] += dv;
            for (int k = 0; k < H; ++k) dh[k] += wv[k] * dv;

            for (int k = 0; k < H; ++k) dh[k] += dh_next[k];

            const bool fresh = cache.episode_start[t] != 0;
            const double* h_prev =
                fresh ? nullptr : (t == 0 ? cache.initial.h.data() : cache.h.data() + th - H);
            const double* c_prev =
                fresh ? nullptr : (t == 0 ? cache.initial.c.data() : cache.c.data() + th - H);

            // LSTM cell backward.
            const double* gate = cache.gates.data() + static_cast<std::size_t>(t) * 4 * H;
            const double* gi = gate;
            const double* gf = gate + H;
            const double* gg = gate + 2 * H;
            const double* go = gate + 3 * H;
            for (int k = 0; k < H; ++k) {
                const double dog = dh[k] * tanh_c[k];
                const double dck = dh[k] * go[k] * (1.0 - tanh_c[k] * tanh_c[k]) + dc_next[k];
                const double cp = c_prev ? c_prev[k] : 0.0;
                const double di = dck * gg[k];
                const double dg = dck * gi[k];
                const double df = dck * cp;
                dc[k] = dck * gf[k]; // flows to c_{t-1}
                dz[k] = di * gi[k] * (1.0 - gi[k]);
                dz[H + k] = df * gf[k] * (1.0 - gf[k]);
                dz[2 * H + k] = dg * (1.0 - gg[k] * gg[k]);
                dz[3 * H + k] = dog * go[k] * (1.0 - go[k]);
            }
            const double* a2_t = cache.a2.data() + static_cast<std::size_t>(t) * spec_.dense2;
            detail::accumulate_outer(gw, gb, dz, std::span<const double>(a2_t, spec_.dense2),
                                     4 * H, spec_.dense2);
            if (h_prev != nullptr) {
                detail::accumulate_outer(gu, {}, dz, std::span<const double>(h_prev, H), 4 * H, H);
            }
            std::fill(da2.begin(), da2.end(), 0.0);
            detail::matvec_transposed_add(lw, dz, da2, 4 * H, spec_.dense2);
            if (fresh) {
                std::fill(dh_next.begin(), dh_next.end(), 0.0);
                std::fill(dc_next.begin(), dc_next.end(), 0.0);
            } else {
                std::fill(dh_next.begin(), dh_next.end(), 0.0);
                detail::matvec_transposed_add(lu, dz, dh_next, 4 * H, H);
                dc_next = dc;
            }

            // Dense trunk backward.
            const double* a1_t = cache.a1.data() + static_cast<std::size_t>(t) * spec_.dense1;
            for (int k = 0; k < spec_.dense2; ++k) dz2[k] = da2[k] * (1.0 - a2_t[k] * a2_t[k]);
            detail::accumulate_outer(gw2, gb2, dz2, std::span<const double>(a1_t, spec_.dense1),
                                     spec_.dense2, spec_.dense1);
            std::fill(da1.begin(), da1.end(), 0.0);
            detail::matvec_transposed_add(w2, dz2, da1, spec_.dense2, spec_.dense1);

            const double* x_t = cache.input.data() + static_cast<std::size_t>(t) * spec_.obs_dim;
            for (int k = 0; k < spec_.dense1; ++k) dz1[k] = da1[k] * (1.0 - a1_t[k] * a1_t[k]);
            detail::accumulate_outer(gw1, gb1, dz1, std::span<const double>(x_t, spec_.obs_dim),
                                     spec_.dense1, spec_.obs_dim);
        }
    }

private:
    struct Scratch {
        std::vector<double> a1, a2, z;
        explicit Scratch(const LayerSpec& s)
            : a1(s.dense1), a2(s.dense2), z(4 * static_cast<std::size_t>(s.lstm)) {}
    };

    void allocate() {
        if (spec_.obs_dim < 1 || spec_.dense1 < 1 || spec_.dense2 < 1 || spec_.lstm < 1 ||
            spec_.act_dim < 1 || !(spec_.action_bound > 0.0)) {
            throw std::invalid_argument("network: invalid layer spec: " + spec_.describe());
        }
        const std::size_t d1 = spec_.dense1, d2 = spec_.dense2, h = spec_.lstm,
                          a = spec_.act_dim, in = spec_.obs_dim;
        idx_w1_ = add("dense1.W", {d1, in});
        idx_b1_ = add("dense1.b", {d1});
        idx_w2_ = add("dense2.W", {d2, d1});
        idx_b2_ = add("dense2.b", {d2});
        idx_lw_ = add("lstm.W", {4 * h, d2});
        idx_lu_ = add("lstm.U", {4 * h, h});
        idx_lb_ = add("lstm.b", {4 * h});
        idx_wp_ = add("policy.W", {a, h});
        idx_bp_ = add("policy.b", {a});
        idx_wv_ = add("value.W", {1, h});
        idx_bv_ = add("value.b", {1});
        idx_log_std_ = add("log_std", {a});
    }

    std::size_t add(std::string name, std::vector<std::size_t> shape) {
        params_.add(std::move(name), std::move(shape));
        return params_.params.size() - 1;
    }

    void initialize(std::uint64_t seed, double policy_gain, double sigma_scale) {
        Rng rng = Rng::substream(seed, 0x6e657477ull); // parameter-init stream
        const int h = spec_.lstm;
        detail::orthogonal_init(params_.params[idx_w1_].value, spec_.dense1, spec_.obs_dim,
                                std::sqrt(2.0), rng);
        detail::orthogonal_init(params_.params[idx_w2_].value, spec_.dense2, spec_.dense1,
                                std::sqrt(2.0), rng);
        // Per-gate orthogonal blocks for the recurrent layer.
        for (int gate = 0; gate < 4; ++gate) {
            std::span<double> wb(params_.params[idx_lw_].value.data() +
                                     static_cast<std::size_t>(gate) * h * spec_.dense2,
                                 static_cast<std::size_t>(h) * spec_.dense2);
            std::span<double> ub(params_.params[idx_lu_].value.data() +
                                     static_cast<std::size_t>(gate) * h * h,
                                 static_cast<std::size_t>(h) * h);
            detail::orthogonal_init(wb, h, spec_.dense2, 1.0, rng);
            detail::orthogonal_init(ub, h, h, 1.0, rng);
        }
        // Forget-gate bias of 1 keeps early memory open.
        std::vector<double>& lb = params_.params[idx_lb_].value;
        for (int k = 0; k < h; ++k) lb[h + k] = 1.0;
        detail::orthogonal_init(params_.params[idx_wp_].value, spec_.act_dim, h, policy_gain,
                                rng);
        detail::orthogonal_init(params_.params[idx_wv_].value, 1, h, 1.0, rng);
        const double init_log_std = std::log(0.5 * spec_.action_bound * sigma_scale);
        for (double& v : params_.params[idx_log_std_].value) v = init_log_std;
    }

    std::span<const double> values(std::size_t idx) const { return params_.params[idx].value; }

    void check_features(std::span<const double> features, int T) const {
        if (static_cast<int>(features.size()) != T * spec_.obs_dim) {
            throw std::invalid_argument("network: feature length mismatch for spec " +
                                        spec_.describe());
        }
        for (double v : features) {
            if (!std::isfinite(v)) throw std::invalid_argument("network: non-finite feature");
        }
    }

    /// Shared cell arithmetic: both forward paths run exactly this code.
    void cell_step(std::span<const double> x, std::span<const double> h_prev,
                   std::span<const double> c_prev, Scratch& s, std::span<double> h_out,
                   std::span<double> c_out, std::span<double> mean_out, double& value_out,
                   double* gates_out = nullptr, double* tanh_c_out = nullptr,
                   double* a1_out = nullptr, double* a2_out = nullptr,
                   double* mean_tanh_out = nullptr) const {
        const int H = spec_.lstm;
        detail::matvec(values(idx_w1_), values(idx_b1_), x, s.a1, spec_.dense1, spec_.obs_dim);
        for (double& v : s.a1) v = std::tanh(v);
        detail::matvec(values(idx_w2_), values(idx_b2_), s.a1, s.a2, spec_.dense2, spec_.dense1);
        for (double& v : s.a2) v = std::tanh(v);

        detail::matvec(values(idx_lw_), values(idx_lb_), s.a2, s.z, 4 * H, spec_.dense2);
        // z += U h_prev
        {
            std::span<const double> lu = values(idx_lu_);
            for (int r = 0; r < 4 * H; ++r) {
                const double* ur = lu.data() + static_cast<std::size_t>(r) * H;
                double acc = s.z[r];
                for (int k = 0; k < H; ++k) acc += ur[k] * h_prev[k];
                s.z[r] = acc;
            }
        }
        for (int k = 0; k < H; ++k) {
            const double gi = detail::sigmoid(s.z[k]);
            const double gf = detail::sigmoid(s.z[H + k]);
            const double gg = std::tanh(s.z[2 * H + k]);
            const double go = detail::sigmoid(s.z[3 * H + k]);
            const double c_new = gf * c_prev[k] + gi * gg;
            const double tc = std::tanh(c_new);
            if (gates_out != nullptr) {
                gates_out[k] = gi;
                gates_out[H + k] = gf;
                gates_out[2 * H + k] = gg;
                gates_out[3 * H + k] = go;
            }
            if (tanh_c_out != nullptr) tanh_c_out[k] = tc;
            c_out[k] = c_new;
            h_out[k] = go * tc;
        }
        if (a1_out != nullptr) std::copy(s.a1.begin(), s.a1.end(), a1_out);
        if (a2_out != nullptr) std::copy(s.a2.begin(), s.a2.end(), a2_out);

        std::span<const double> wp = values(idx_wp_), bp = values(idx_bp_);
        for (int a = 0; a < spec_.act_dim; ++a) {
            const double* wr = wp.data() + static_cast<std::size_t>(a) * H;
            double acc = bp[a];
            for (int k = 0; k < H; ++k) acc += wr[k] * h_out[k];
            const double th = std::tanh(acc);
            if (mean_tanh_out != nullptr) mean_tanh_out[a] = th;
            mean_out[a] = spec_.action_bound * th;
        }
        std::span<const double> wv = values(idx_wv_);
        double acc = values(idx_bv_)[0];
        for (int k = 0; k < H; ++k) acc += wv[k] * h_out[k];
        value_out = acc;
    }

    void cell_step_cached(std::span<const double> x, RecurrentState& rec, Scratch& s,
                          SequenceCache& cache, int t) const {
        const int H = spec_.lstm;
        const std::size_t th = static_cast<std::size_t>(t) * H;
        double value = 0.0;
        cell_step(x, rec.h, rec.c,
                  s, std::span<double>(cache.h.data() + th, H),
                  std::span<double>(cache.c.data() + th, H),
                  std::span<double>(cache.mean.data() + static_cast<std::size_t>(t) * spec_.act_dim,
                                    spec_.act_dim),
                  value, cache.gates.data() + static_cast<std::size_t>(t) * 4 * H,
                  cache.tanh_c.data() + th,
                  cache.a1.data() + static_cast<std::size_t>(t) * spec_.dense1,
                  cache.a2.data() + static_cast<std::size_t>(t) * spec_.dense2,
                  cache.mean_tanh.data() + static_cast<std::size_t>(t) * spec_.act_dim);
        cache.value[t] = value;
        std::copy_n(cache.h.data() + th, H, rec.h.data());
        std::copy_n(cache.c.data() + th, H, rec.c.data());
    }

    LayerSpec spec_;
    ParamSet params_;
    std::size_t idx_w1_ = 0, idx_b1_ = 0, idx_w2_ = 0, idx_b2_ = 0;
    std::size_t idx_lw_ = 0, idx_lu_ = 0, idx_lb_ = 0;
    std::size_t idx_wp_ = 0, idx_bp_ = 0, idx_wv_ = 0, idx_bv_ = 0;
    std::size_t idx_log_std_ = 0;
};

// ---------------------------------------------------------------------------
// Gaussian policy
// ---------------------------------------------------------------------------

struct GaussianSample {
    std::vector<double> action;     ///< clamped to the action bound, for the plant
    std::vector<double> action_raw; ///< unclamped draw, for likelihood ratios
    double log_prob = 0.0;          ///< density of the unclamped Gaussian at the draw
};

inline double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                                std::span<const double> action) {
    double lp = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double z = (action[i] - mean[i]) / std::exp(log_std[i]);
        lp += -log_std[i] - 0.5 * std::log(2.0 * pi) - 0.5 * z * z;
    }
    return lp;
}

inline GaussianSample sample_action(std::span<const double> mean,
                                    std::span<const double> log_std, double bound, Rng& rng) {
    if (mean.size() != log_std.size()) {
        throw std::invalid_argument("sample_action: mean / log_std size mismatch");
    }
    GaussianSample s;
    s.action.resize(mean.size());
    s.action_raw.resize(mean.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
        require_finite(log_std[i], "sample_action: log_std");
        const double raw = mean[i] + std::exp(log_std[i]) * rng.normal();
        s.action_raw[i] = raw;
        s.action[i] = clamp(raw, -bound, bound);
    }
    // Same routine the trainer uses, so stored and recomputed log-probs of an
    // unchanged policy are bit-identical.
    s.log_prob = gaussian_log_prob(mean, log_std, s.action_raw);
    return s;
}

/// Differential entropy of the diagonal Gaussian: sum(log_std) + d/2 log(2 pi e).
inline double gaussian_entropy(std::span<const double> log_std) {
    double h = 0.0;
    for (double ls : log_std) h += ls + 0.5 * std::log(2.0 * pi * std::exp(1.0));
    return h;
}

// ---------------------------------------------------------------------------
// Checkpoints: line-oriented text, values as C99 hex floats (bit exact).
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    LayerSpec spec;
    std::uint64_t seed = 0;
    long long step = 0;
};

namespace detail {

inline std::string hex_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline double parse_double(const std::string& tok, const char* context) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
        throw std::runtime_error(std::string("checkpoint: bad numeric token in ") + context);
    }
    return v;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const PolicyValueNet& net,
                            const CheckpointMeta& meta) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    const LayerSpec& s = net.spec();
    out << "vclab-checkpoint 1\n";
    out << "spec " << s.obs_dim << ' ' << s.dense1 << ' ' << s.dense2 << ' ' << s.lstm << ' '
        << s.act_dim << ' ' << detail::hex_double(s.action_bound) << '\n';
    out << "seed " << meta.seed << '\n';
    out << "step " << meta.step << '\n';
    for (const Param& p : net.params().params) {
        out << "param " << p.name << ' ' << p.shape.size();
        for (std::size_t d : p.shape) out << ' ' << d;
        out << '\n';
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            out << detail::hex_double(p.value[i]) << (((i + 1) % 8 == 0) ? '\n' : ' ');
        }
        if (p.value.size() % 8 != 0) out << '\n';
    }
    out << "end\n";
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline std::pair<PolicyValueNet, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string word;
    in >> word;
    long long version = 0;
    if (!(in >> version) || word != "vclab-checkpoint" || version != 1) {
        throw std::runtime_error("checkpoint: unrecognized header in " + path);
    }
    CheckpointMeta meta;
    in >> word;
    if (word != "spec") throw std::runtime_error("checkpoint: missing spec line");
    std::string bound_tok;
    in >> meta.spec.obs_dim >> meta.spec.dense1 >> meta.spec.dense2 >> meta.spec.lstm >>
        meta.spec.act_dim >> bound_tok;
    meta.spec.action_bound = detail::parse_double(bound_tok, "spec");
    in >> word >> meta.seed;
    if (word != "seed") throw std::runtime_error("checkpoint: missing seed line");
    in >> word >> meta.step;
    if (word != "step") throw std::runtime_error("checkpoint: missing step line");

    ParamSet params;
    while (in >> word) {
        if (word == "end") break;
        if (word != "param") throw std::runtime_error("checkpoint: expected param, got " + word);
        std::string name;
        std::size_t rank = 0;
        in >> name >> rank;
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (std::size_t d = 0; d < rank; ++d) {
            in >> shape[d];
            n *= shape[d];
        }
        Param& p = params.add(name, shape);
        for (std::size_t i = 0; i < n; ++i) {
            std::string tok;
            if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated values for " + name);
            p.value[i] = detail::parse_double(tok, name.c_str());
        }
    }
    if (word != "end") throw std::runtime_error("checkpoint: missing end marker");
    return {PolicyValueNet(meta.spec, std::move(params)), meta};
}

} // namespace vclab::neural
