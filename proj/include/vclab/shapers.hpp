#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vclab/util.hpp"

namespace vclab::shapers {

struct Impulse {
    double time;      ///< s, relative to command start
    double amplitude; ///< dimensionless weight
};

/// Impulse train of a command shaper. Times strictly increase from 0 and
/// amplitudes sum to 1 so the shaped command preserves total displacement.
struct ImpulseSequence {
    std::vector<Impulse> impulses;
    double design_omega = 0.0; ///< rad/s the shaper was designed for
    double design_xi = 0.0;

    double duration() const { return impulses.empty() ? 0.0 : impulses.back().time; }

    void validate() const {
        if (impulses.empty()) throw std::invalid_argument("shaper: empty impulse sequence");
        if (impulses.front().time != 0.0) {
            throw std::invalid_argument("shaper: first impulse must be at t = 0");
        }
        double sum = 0.0;
        double prev = -1.0;
        for (const Impulse& imp : impulses) {
            require_finite(imp.time, "shaper: impulse time");
            require_finite(imp.amplitude, "shaper: impulse amplitude");
            if (imp.time <= prev) throw std::invalid_argument("shaper: impulse times must increase");
            prev = imp.time;
            sum += imp.amplitude;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw std::invalid_argument("shaper: impulse amplitudes must sum to 1");
        }
    }
};

/// Pass-through shaper: a single unit impulse at t = 0.
inline ImpulseSequence identity_sequence() {
    return ImpulseSequence{{{0.0, 1.0}}, 0.0, 0.0};
}

namespace detail {

inline void check_mode(double omega, double xi) {
    require_finite(omega, "shaper: omega");
    require_finite(xi, "shaper: xi");
    if (!(omega > 0.0)) throw std::invalid_argument("shaper: omega must be > 0");
    if (!(xi >= 0.0 && xi < 1.0)) {
        throw std::invalid_argument("shaper: xi must be in [0, 1) (no oscillatory mode to shape)");
    }
}

} // namespace detail

/// Two-impulse zero-vibration shaper for a mode (omega, xi).
inline ImpulseSequence make_zv(double omega, double xi) {
    detail::check_mode(omega, xi);
    const double omega_d = omega * std::sqrt(1.0 - xi * xi);
    const double k = std::exp(-xi * pi / std::sqrt(1.0 - xi * xi));
    ImpulseSequence seq;
    seq.impulses = {{0.0, 1.0 / (1.0 + k)}, {pi / omega_d, k / (1.0 + k)}};
    seq.design_omega = omega;
    seq.design_xi = xi;
    return seq;
}

/// Three-impulse zero-vibration-and-derivative shaper: also zeroes the
/// frequency sensitivity of the residual at the design point.
inline ImpulseSequence make_zvd(double omega, double xi) {
    detail::check_mode(omega, xi);
    const double omega_d = omega * std::sqrt(1.0 - xi * xi);
    const double k = std::exp(-xi * pi / std::sqrt(1.0 - xi * xi));
    const double norm = (1.0 + k) * (1.0 + k);
    ImpulseSequence seq;
    seq.impulses = {{0.0, 1.0 / norm},
                    {pi / omega_d, 2.0 * k / norm},
                    {2.0 * pi / omega_d, k * k / norm}};
    seq.design_omega = omega;
    seq.design_xi = xi;
    return seq;
}

/// Posicast's two-part delayed command is the ZV shaper in discrete form.
inline ImpulseSequence make_posicast(double omega, double xi) { return make_zv(omega, xi); }

/// Residual vibration ratio V of the shaped impulse response at mode
/// (omega, xi), normalized so a single unit impulse gives V = 1:
///
///   V = e^{-xi omega t_n} sqrt(C^2 + S^2)
///   C = sum A_i e^{xi omega t_i} cos(omega_d t_i),  S likewise with sin
inline double residual_vibration(const ImpulseSequence& seq, double omega, double xi) {
    seq.validate();
    detail::check_mode(omega, xi);
    const double omega_d = omega * std::sqrt(1.0 - xi * xi);
    const double t_n = seq.impulses.back().time;
    double c = 0.0;
    double s = 0.0;
    for (const Impulse& imp : seq.impulses) {
        const double w = imp.amplitude * std::exp(xi * omega * imp.time);
        c += w * std::cos(omega_d * imp.time);
        s += w * std::sin(omega_d * imp.time);
    }
    return std::exp(-xi * omega * t_n) * std::sqrt(c * c + s * s);
}

/// Convolve a sampled command with the impulse train. Impulse times round to
/// the nearest sample; output length = input length + round(t_n / dt).
inline std::vector<double> shape_command(const ImpulseSequence& seq,
                                         std::span<const double> command, double dt) {
    seq.validate();
    if (!(dt > 0.0)) throw std::invalid_argument("shape_command: dt must be > 0");
    std::vector<long long> offsets;
    offsets.reserve(seq.impulses.size());
    for (const Impulse& imp : seq.impulses) {
        offsets.push_back(std::llround(imp.time / dt));
    }
    std::vector<double> out(command.size() + static_cast<std::size_t>(offsets.back()), 0.0);
    for (std::size_t i = 0; i < seq.impulses.size(); ++i) {
        const double a = seq.impulses[i].amplitude;
        const std::size_t shift = static_cast<std::size_t>(offsets[i]);
        for (std::size_t n = 0; n < command.size(); ++n) {
            out[n + shift] += a * command[n];
        }
    }
    return out;
}

/// Evaluate the residual vibration across a frequency grid at the sequence's
/// design damping ratio.
inline std::vector<std::pair<double, double>> sensitivity_curve(const ImpulseSequence& seq,
                                                                std::span<const double> omegas) {
    seq.validate();
    if (omegas.empty()) throw std::invalid_argument("sensitivity_curve: empty frequency grid");
    std::vector<std::pair<double, double>> curve;
    curve.reserve(omegas.size());
    for (double w : omegas) {
        curve.emplace_back(w, residual_vibration(seq, w, seq.design_xi));
    }
    return curve;
}

} // namespace vclab::shapers
