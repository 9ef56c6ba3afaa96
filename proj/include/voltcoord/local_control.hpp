#pragma once

#include <cmath>
#include <optional>

#include "voltcoord/power_flow.hpp"

namespace voltcoord {

struct CapabilityLimits {
    double q_min = 0.0;
    double q_max = 0.0;
    double s_max = 0.0;
    double p = 0.0;

    static CapabilityLimits of(const Asset& a, double p_now) {
        return {a.q_min, a.q_max, a.s_max, p_now};
    }
};

// Clamp into [q_min, q_max] and the apparent-power circle at the current p.
inline double clamp_to_capability(double q, const CapabilityLimits& lim) {
    double head = lim.s_max * lim.s_max - lim.p * lim.p;
    double q_circle = head > 0.0 ? std::sqrt(head) : 0.0;
    double lo = std::max(lim.q_min, -q_circle);
    double hi = std::min(lim.q_max, q_circle);
    if (lo > hi) return 0.5 * (lo + hi);  // empty set after roundoff; midpoint
    return std::min(std::max(q, lo), hi);
}

inline double interpolate_curve(const std::vector<CurvePoint>& pts, double x) {
    if (pts.empty()) return 0.0;
    if (x <= pts.front().x) return pts.front().y;  // flat extrapolation
    if (x >= pts.back().x) return pts.back().y;
    for (size_t i = 1; i < pts.size(); ++i) {
        if (x <= pts[i].x) {
            double t = (x - pts[i - 1].x) / (pts[i].x - pts[i - 1].x);
            return pts[i - 1].y + t * (pts[i].y - pts[i - 1].y);
        }
    }
    return pts.back().y;
}

inline double eval_characteristic(const ControlCharacteristic& c, double v, double p,
                                  const CapabilityLimits& lim) {
    double q = 0.0;
    if (const auto* fc = std::get_if<FixedCosPhi>(&c)) {
        double tan_phi = std::tan(std::acos(fc->cos_phi));
        q = (fc->underexcited ? -1.0 : 1.0) * std::abs(p) * tan_phi;
    } else if (const auto* qv = std::get_if<QofV>(&c)) {
        q = interpolate_curve(qv->points, v) * lim.q_max;
    } else if (const auto* qp = std::get_if<QofP>(&c)) {
        q = interpolate_curve(qp->points, p) * lim.q_max;
    } else if (const auto* ds = std::get_if<DirectSetpoint>(&c)) {
        q = ds->q;
    } else if (const auto* fb = std::get_if<FallbackProfile>(&c)) {
        q = fb->curve ? interpolate_curve(fb->curve->points, v) * lim.q_max : fb->constant_q;
    }
    return clamp_to_capability(q, lim);
}

// The q an asset applies autonomously when no central setpoint is fresh.
inline double fallback_setpoint(const Asset& asset, double local_v, double local_p) {
    CapabilityLimits lim = CapabilityLimits::of(asset, local_p);
    if (asset.fallback) return eval_characteristic(*asset.fallback, local_v, local_p, lim);
    return eval_characteristic(default_qofv_curve(), local_v, local_p, lim);
}

struct AssetOverride {
    std::optional<double> p;
    std::optional<double> q;
};
using Overrides = std::map<std::string, AssetOverride>;

struct CoupledSolution {
    PowerFlowSolution sol;
    int picard_iterations = 0;
};

// Fixed point of the Q(V) feedback loop: every voltage-dependent asset ends up
// with q equal to its characteristic at the solution voltage (within tol).
// Direct q overrides win over characteristics. Damped Picard, alpha = 0.5.
inline CoupledSolution coupled_power_flow(const Network& net, const Overrides& overrides = {},
                                          const TapVector& taps = {},
                                          const PowerFlowOptions& pf_opts = {}) {
    AdmittanceModel adm = build_admittance(net, taps);

    Dispatch dispatch;
    std::vector<const Asset*> voltage_driven;
    for (const auto& a : net.assets) {
        auto ov = overrides.find(a.id);
        double p = (ov != overrides.end() && ov->second.p) ? *ov->second.p : a.p;
        CapabilityLimits lim = CapabilityLimits::of(a, p);
        double q;
        if (ov != overrides.end() && ov->second.q) {
            q = clamp_to_capability(*ov->second.q, lim);
        } else {
            q = eval_characteristic(a.control, 1.0, p, lim);
            bool is_qofv = std::holds_alternative<QofV>(a.control) ||
                           (std::holds_alternative<FallbackProfile>(a.control) &&
                            std::get<FallbackProfile>(a.control).curve.has_value());
            if (is_qofv) voltage_driven.push_back(&a);
        }
        dispatch[a.id] = {p, q};
    }

    CoupledSolution out;
    PowerFlowOptions opts = pf_opts;
    double last_delta = 0.0;
    for (int it = 0; it < defaults::picard_max_iterations; ++it) {
        out.sol = solve_power_flow(net, dispatch, taps, opts, &adm);
        out.picard_iterations = it + 1;
        if (voltage_driven.empty()) return out;

        double delta = 0.0;
        for (const Asset* a : voltage_driven) {
            double v = out.sol.vmag(a->bus);
            PQ& pq = dispatch[a->id];
            double target = eval_characteristic(a->control, v, pq.p, CapabilityLimits::of(*a, pq.p));
            delta = std::max(delta, std::abs(target - pq.q));
            pq.q += defaults::picard_damping * (target - pq.q);
        }
        if (delta <= defaults::picard_tolerance) return out;
        last_delta = delta;

        // Warm-start the next inner solve from the current voltages.
        opts.flat_start = false;
        opts.initial_vm = &out.sol.vm;
        opts.initial_va = &out.sol.va;
    }
    throw FixedPointDivergence(last_delta);
}

struct OltcState {
    int position = 0;
    int violation_counter = 0;
    bool saturated = false;
};

// Deadband automaton. Raising the tap position raises the HV-side ratio
// (ratio = 1 + (pos - neutral) * step), which lowers the LV voltage; the
// automaton therefore steps down on undervoltage and up on overvoltage.
// Exactly on the deadband edge no action is taken.
inline std::pair<OltcState, int> oltc_step(OltcState state, const TapChanger& tc,
                                           double v_measured) {
    state.saturated = false;
    double err = v_measured - tc.v_setpoint;
    if (std::abs(err) <= tc.deadband) {
        state.violation_counter = 0;
        return {state, 0};
    }
    state.violation_counter += 1;
    if (state.violation_counter < tc.delay_steps) return {state, 0};

    int delta = err < 0 ? -1 : +1;  // undervoltage: lower the ratio
    int next = state.position + delta;
    if (next < tc.pos_min || next > tc.pos_max) {
        state.saturated = true;
        return {state, 0};
    }
    state.position = next;
    state.violation_counter = 0;
    return {state, delta};
}

}  // namespace voltcoord
