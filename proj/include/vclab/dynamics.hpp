#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>

#include "vclab/util.hpp"

namespace vclab::dynamics {

/// Physical and servo parameters of the simulated axis.
///
/// The plant is a rigid carriage behind a first-order velocity loop plus one
/// flexible mode excited by carriage acceleration:
///
///   v' = (u - v) / tau_v
///   x' = v
///   y'' = -2 xi omega_n y' - omega_n^2 y - coupling_k * v'
struct AxisParams {
    double omega_n = 2.0 * pi * 10.0; ///< natural angular frequency, rad/s
    double xi = 0.02;                 ///< damping ratio
    double coupling_k = 0.0005;       ///< deflection gain per unit carriage acceleration
    double tau_v = 0.01;              ///< velocity-loop time constant, s
    double v_max = 400.0;             ///< velocity limit, mm/s
    double x_min = 0.0;               ///< travel lower limit, mm
    double x_max = 500.0;             ///< travel upper limit, mm
    double dt_physics = 0.001;        ///< integration substep, s
    double dt_control = 0.01;         ///< agent decision period, s

    double omega_d() const { return omega_n * std::sqrt(1.0 - xi * xi); }
    double travel_span() const { return x_max - x_min; }

    int substeps() const {
        return static_cast<int>(std::llround(dt_control / dt_physics));
    }

    void validate() const {
        if (!(omega_n > 0.0)) throw std::invalid_argument("axis: omega_n must be > 0");
        if (!(xi >= 0.0 && xi < 1.0)) throw std::invalid_argument("axis: xi must be in [0, 1)");
        if (!(tau_v > 0.0)) throw std::invalid_argument("axis: tau_v must be > 0");
        if (!(v_max > 0.0)) throw std::invalid_argument("axis: v_max must be > 0");
        if (!(x_min < x_max)) throw std::invalid_argument("axis: empty travel range");
        if (!(dt_physics > 0.0) || !(dt_control > 0.0) || dt_physics > dt_control) {
            throw std::invalid_argument("axis: require 0 < dt_physics <= dt_control");
        }
        const double ratio = dt_control / dt_physics;
        if (std::abs(ratio - std::llround(ratio)) > 1e-9 * ratio) {
            throw std::invalid_argument("axis: dt_control must be an integer multiple of dt_physics");
        }
    }
};

/// Full simulator state.
struct SystemState {
    double x = 0.0;     ///< carriage position, mm
    double v = 0.0;     ///< carriage velocity, mm/s
    double y = 0.0;     ///< flexible deflection, mm
    double y_dot = 0.0; ///< deflection rate, mm/s
    double t = 0.0;     ///< simulation time, s

    bool finite() const {
        return std::isfinite(x) && std::isfinite(v) && std::isfinite(y) &&
               std::isfinite(y_dot) && std::isfinite(t);
    }
};

namespace detail {

struct Derivative {
    double dx, dv, dy, dy_dot;
};

inline Derivative eval(const SystemState& s, double u, const AxisParams& p) {
    Derivative d;
    d.dv = (u - s.v) / p.tau_v;
    d.dx = s.v;
    d.dy = s.y_dot;
    d.dy_dot = -2.0 * p.xi * p.omega_n * s.y_dot - p.omega_n * p.omega_n * s.y -
               p.coupling_k * d.dv;
    return d;
}

/// One classical RK4 substep of length h with zero-order-hold command u.
inline SystemState rk4_substep(const SystemState& s, double u, double h, const AxisParams& p) {
    const Derivative k1 = eval(s, u, p);
    SystemState m;
    m.x = s.x + 0.5 * h * k1.dx;
    m.v = s.v + 0.5 * h * k1.dv;
    m.y = s.y + 0.5 * h * k1.dy;
    m.y_dot = s.y_dot + 0.5 * h * k1.dy_dot;
    const Derivative k2 = eval(m, u, p);
    m.x = s.x + 0.5 * h * k2.dx;
    m.v = s.v + 0.5 * h * k2.dv;
    m.y = s.y + 0.5 * h * k2.dy;
    m.y_dot = s.y_dot + 0.5 * h * k2.dy_dot;
    const Derivative k3 = eval(m, u, p);
    m.x = s.x + h * k3.dx;
    m.v = s.v + h * k3.dv;
    m.y = s.y + h * k3.dy;
    m.y_dot = s.y_dot + h * k3.dy_dot;
    const Derivative k4 = eval(m, u, p);

    SystemState out;
    out.x = s.x + h / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    out.v = s.v + h / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
    out.y = s.y + h / 6.0 * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy);
    out.y_dot = s.y_dot + h / 6.0 * (k1.dy_dot + 2.0 * k2.dy_dot + 2.0 * k3.dy_dot + k4.dy_dot);
    out.t = s.t;
    return out;
}

inline void apply_travel_limits(SystemState& s, const AxisParams& p) {
    if (s.x <= p.x_min) {
        s.x = p.x_min;
        if (s.v < 0.0) s.v = 0.0; // hard stop
    } else if (s.x >= p.x_max) {
        s.x = p.x_max;
        if (s.v > 0.0) s.v = 0.0;
    }
}

} // namespace detail

/// Advance one control period dt_control under commanded velocity u (mm/s),
/// integrating in substeps of dt_physics. Deterministic: identical inputs
/// yield bit-identical outputs.
inline SystemState step(const SystemState& state, double u, const AxisParams& params) {
    params.validate();
    if (!state.finite()) throw std::invalid_argument("dynamics::step: non-finite state");
    require_finite(u, "dynamics::step: command");

    const double uc = clamp(u, -params.v_max, params.v_max);
    const int n = params.substeps();
    SystemState s = state;
    for (int i = 0; i < n; ++i) {
        s = detail::rk4_substep(s, uc, params.dt_physics, params);
        detail::apply_travel_limits(s, params);
    }
    s.t = state.t + params.dt_control;
    return s;
}

/// Vibration amplitude estimate: peak |y| over a trailing window of
/// deflection samples spaced dt apart. The window must span at least one
/// damped period 2*pi/omega_d.
inline double envelope(std::span<const double> window, double dt, const AxisParams& params) {
    params.validate();
    if (!(dt > 0.0)) throw std::invalid_argument("envelope: dt must be > 0");
    const double period = 2.0 * pi / params.omega_d();
    if (window.size() < 2 ||
        static_cast<double>(window.size() - 1) * dt + 1e-12 < period) {
        throw std::invalid_argument("envelope: window shorter than one damped period");
    }
    double peak = 0.0;
    for (double y : window) {
        require_finite(y, "envelope: sample");
        peak = std::max(peak, std::abs(y));
    }
    return peak;
}

/// Modal energy of the flexible mode per unit modal mass: (y'^2 + omega_n^2 y^2) / 2.
inline double modal_energy(const SystemState& s, const AxisParams& p) {
    return 0.5 * (s.y_dot * s.y_dot + p.omega_n * p.omega_n * s.y * s.y);
}

} // namespace vclab::dynamics
