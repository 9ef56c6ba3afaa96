#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>

#include "voltcoord/local_control.hpp"

namespace voltcoord {

struct Violation {
    enum class Kind { voltage_low, voltage_high, thermal };
    Kind kind = Kind::voltage_low;
    std::string element;
    double value = 0.0;
    double bound = 0.0;
    double magnitude = 0.0;

    std::string describe() const {
        std::ostringstream os;
        switch (kind) {
            case Kind::voltage_low: os << "undervoltage at bus '"; break;
            case Kind::voltage_high: os << "overvoltage at bus '"; break;
            case Kind::thermal: os << "overload on branch '"; break;
        }
        os << element << "': " << value << " vs bound " << bound;
        return os.str();
    }
};

struct InfeasibleError : Error {
    std::vector<Violation> violations;
    explicit InfeasibleError(std::vector<Violation> v)
        : Error(describe(v)), violations(std::move(v)) {}
    static std::string describe(const std::vector<Violation>& v) {
        std::string s = "no constraint-satisfying operating point:";
        for (const auto& viol : v) s += "\n  - " + viol.describe();
        return s;
    }
};

struct AssetCapability {
    double q_min = 0.0, q_max = 0.0, s_max = 0.0;
};

struct ConstraintSet {
    std::map<std::string, std::pair<double, double>> v_bounds;  // per bus
    std::map<std::string, double> line_i_max;                   // pu
    std::map<std::string, double> tx_s_rated;                   // pu
    std::map<std::string, AssetCapability> asset_caps;
    std::vector<std::string> controllable_assets;
    std::vector<std::string> decision_taps;

    static ConstraintSet from_network(const Network& net, const InterfaceSpec& ifc) {
        ConstraintSet cs;
        for (const auto& b : net.buses) cs.v_bounds[b.id] = {b.v_min, b.v_max};
        for (const auto& l : net.lines) cs.line_i_max[l.id] = l.i_max;
        for (const auto& t : net.transformers) cs.tx_s_rated[t.id] = t.s_rated / net.s_base;
        for (const auto& a : net.assets) cs.asset_caps[a.id] = {a.q_min, a.q_max, a.s_max};
        cs.controllable_assets = ifc.controllable_assets;
        for (const auto& tid : ifc.downstream_tap_changers) {
            const Transformer* tx = net.find_transformer(tid);
            if (tx && tx->tap && tx->tap->mode == TapMode::optimized)
                cs.decision_taps.push_back(tid);
        }
        return cs;
    }
};

inline std::vector<Violation> check_constraints(const PowerFlowSolution& sol,
                                                const ConstraintSet& cs) {
    constexpr double eps = 1e-9;
    std::vector<Violation> out;
    for (size_t i = 0; i < sol.bus_ids.size(); ++i) {
        auto it = cs.v_bounds.find(sol.bus_ids[i]);
        if (it == cs.v_bounds.end()) continue;
        double v = sol.vm[i];
        if (v < it->second.first - eps)
            out.push_back({Violation::Kind::voltage_low, sol.bus_ids[i], v, it->second.first,
                           it->second.first - v});
        else if (v > it->second.second + eps)
            out.push_back({Violation::Kind::voltage_high, sol.bus_ids[i], v, it->second.second,
                           v - it->second.second});
    }
    for (const auto& bf : sol.branch_flows) {
        if (bf.is_transformer) {
            auto it = cs.tx_s_rated.find(bf.id);
            if (it == cs.tx_s_rated.end()) continue;
            double loading = std::max(std::abs(bf.s_from), std::abs(bf.s_to));
            if (loading > it->second + eps)
                out.push_back(
                    {Violation::Kind::thermal, bf.id, loading, it->second, loading - it->second});
        } else {
            auto it = cs.line_i_max.find(bf.id);
            if (it == cs.line_i_max.end()) continue;
            double loading = std::max(bf.i_from, bf.i_to);
            if (loading > it->second + eps)
                out.push_back(
                    {Violation::Kind::thermal, bf.id, loading, it->second, loading - it->second});
        }
    }
    return out;
}

struct SetpointBundle {
    TapVector taps;                             // decision taps only
    std::map<std::string, double> q_setpoints;  // directly controllable assets
    double achieved_q_if = 0.0;
    double deviation = 0.0;  // signed, target minus achieved
};

struct FlexRange {
    double q_min = 0.0;
    double q_max = 0.0;
    SetpointBundle witness_min, witness_max;
    bool feasible = false;
    int skipped_points = 0;  // oracle enumeration points that failed to converge
};

struct VerifiedPoint {
    CoupledSolution coupled;
    double q_if = 0.0;
    std::vector<Violation> violations;
};

// Re-simulates a bundle from scratch; never trusts any linearization.
inline VerifiedPoint verify_bundle(const Network& net, const InterfaceSpec& ifc,
                                   const ConstraintSet& cs, const SetpointBundle& bundle) {
    Overrides ov;
    for (const auto& [aid, q] : bundle.q_setpoints) ov[aid].q = q;
    VerifiedPoint vp;
    vp.coupled = coupled_power_flow(net, ov, bundle.taps);
    vp.q_if = interface_q(vp.coupled.sol, ifc);
    vp.violations = check_constraints(vp.coupled.sol, cs);
    return vp;
}

namespace flex_detail {

struct QBox {
    std::string id;
    double lo = 0.0, hi = 0.0;
};

// Effective q interval at the asset's present active power.
inline QBox effective_box(const Network& net, const ConstraintSet& cs, const std::string& aid) {
    const Asset* a = net.find_asset(aid);
    if (!a) throw Error("unknown controllable asset '" + aid + "'");
    const AssetCapability& cap = cs.asset_caps.at(aid);
    double head = cap.s_max * cap.s_max - a->p * a->p;
    double circle = head > 0.0 ? std::sqrt(head) : 0.0;
    return {aid, std::max(cap.q_min, -circle), std::min(cap.q_max, circle)};
}

inline TapVector current_taps(const Network& net, const ConstraintSet& cs) {
    TapVector t;
    for (const auto& tid : cs.decision_taps) {
        const Transformer* tx = net.find_transformer(tid);
        if (!tx || !tx->tap) throw Error("decision tap '" + tid + "' has no tap changer");
        t[tid] = tx->tap->position;
    }
    return t;
}

}  // namespace flex_detail

// Exhaustive enumeration over all decision-tap combinations and a uniform grid
// of every controllable asset's q range. Ground truth at desk scale; guarded
// because the point count is exponential.
inline FlexRange flex_range_oracle(const Network& net, const InterfaceSpec& ifc,
                                   const ConstraintSet& cs,
                                   int grid_points = defaults::oracle_grid_points) {
    if (cs.decision_taps.size() > 3 || cs.controllable_assets.size() > 4)
        throw OracleTooLarge("oracle guard: needs <= 3 decision taps and <= 4 controllable assets (got " +
                             std::to_string(cs.decision_taps.size()) + " taps, " +
                             std::to_string(cs.controllable_assets.size()) + " assets)");
    if (grid_points < 2) grid_points = 2;

    std::vector<flex_detail::QBox> boxes;
    for (const auto& aid : cs.controllable_assets)
        boxes.push_back(flex_detail::effective_box(net, cs, aid));

    std::vector<std::pair<std::string, std::pair<int, int>>> tap_ranges;
    for (const auto& tid : cs.decision_taps) {
        const Transformer* tx = net.find_transformer(tid);
        tap_ranges.push_back({tid, {tx->tap->pos_min, tx->tap->pos_max}});
    }

    FlexRange range;
    std::vector<int> tap_idx(tap_ranges.size(), 0);
    std::vector<int> q_idx(boxes.size(), 0);

    auto q_value = [&](size_t k, int i) {
        const auto& b = boxes[k];
        if (b.hi <= b.lo) return b.lo;
        return b.lo + (b.hi - b.lo) * i / (grid_points - 1);
    };

    bool done = false;
    while (!done) {
        TapVector taps;
        for (size_t i = 0; i < tap_ranges.size(); ++i)
            taps[tap_ranges[i].first] = tap_ranges[i].second.first + tap_idx[i];
        Overrides ov;
        SetpointBundle candidate;
        candidate.taps = taps;
        for (size_t k = 0; k < boxes.size(); ++k) {
            double q = q_value(k, q_idx[k]);
            ov[boxes[k].id].q = q;
            candidate.q_setpoints[boxes[k].id] = q;
        }
        try {
            CoupledSolution coupled = coupled_power_flow(net, ov, taps);
            if (check_constraints(coupled.sol, cs).empty()) {
                double q_if = interface_q(coupled.sol, ifc);
                candidate.achieved_q_if = q_if;
                if (!range.feasible || q_if < range.q_min) {
                    range.q_min = q_if;
                    range.witness_min = candidate;
                }
                if (!range.feasible || q_if > range.q_max) {
                    range.q_max = q_if;
                    range.witness_max = candidate;
                }
                range.feasible = true;
            }
        } catch (const NonConvergence&) {
            ++range.skipped_points;
        } catch (const FixedPointDivergence&) {
            ++range.skipped_points;
        } catch (const SingularJacobian&) {
            ++range.skipped_points;
        }

        // odometer over q grid, then taps
        done = true;
        for (size_t k = 0; k < q_idx.size(); ++k) {
            if (++q_idx[k] < grid_points) {
                done = false;
                break;
            }
            q_idx[k] = 0;
        }
        if (done && !tap_idx.empty()) {
            for (size_t i = 0; i < tap_idx.size(); ++i) {
                int span = tap_ranges[i].second.second - tap_ranges[i].second.first;
                if (++tap_idx[i] <= span) {
                    done = false;
                    break;
                }
                tap_idx[i] = 0;
            }
        }
    }
    return range;
}

namespace flex_detail {

enum class Objective { maximize_qif, minimize_qif, track_target };

struct SearchPoint {
    TapVector taps;
    std::map<std::string, double> q;  // controllable setpoints
    VerifiedPoint vp;
};

inline double objective_value(Objective obj, double q_if, double target) {
    switch (obj) {
        case Objective::maximize_qif: return q_if;
        case Objective::minimize_qif: return -q_if;
        case Objective::track_target: return -std::abs(q_if - target);
    }
    return 0.0;
}

inline VerifiedPoint evaluate(const Network& net, const InterfaceSpec& ifc, const ConstraintSet& cs,
                              const TapVector& taps, const std::map<std::string, double>& q) {
    Overrides ov;
    for (const auto& [aid, qv] : q) ov[aid].q = qv;
    VerifiedPoint vp;
    vp.coupled = coupled_power_flow(net, ov, taps);
    vp.q_if = interface_q(vp.coupled.sol, ifc);
    vp.violations = check_constraints(vp.coupled.sol, cs);
    return vp;
}

// Scale factor keeping linear-predicted voltages inside their bounds.
inline double voltage_trim(const PowerFlowSolution& sol, const ConstraintSet& cs,
                           const SensitivityMatrices& sens,
                           const std::vector<double>& dq) {
    double lambda = 1.0;
    for (size_t b = 0; b < sol.bus_ids.size(); ++b) {
        auto it = cs.v_bounds.find(sol.bus_ids[b]);
        if (it == cs.v_bounds.end()) continue;
        double dv = 0.0;
        for (size_t k = 0; k < dq.size(); ++k) dv += sens.dv_dq(b, k) * dq[k];
        if (std::abs(dv) < 1e-14) continue;
        double v = sol.vm[b];
        if (dv > 0 && v + dv > it->second.second)
            lambda = std::min(lambda, std::max(0.0, (it->second.second - v) / dv));
        else if (dv < 0 && v + dv < it->second.first)
            lambda = std::min(lambda, std::max(0.0, (it->second.first - v) / dv));
    }
    return lambda;
}

// Gradient descent on the bound-violation penalty; returns true when repaired.
inline bool repair_base_case(const Network& net, const InterfaceSpec& ifc, const ConstraintSet& cs,
                             SearchPoint& pt) {
    for (int it = 0; it < 15; ++it) {
        if (pt.vp.violations.empty()) return true;
        if (cs.controllable_assets.empty() && cs.decision_taps.empty()) return false;
        SensitivityMatrices sens =
            sensitivities(net, pt.vp.coupled.sol, ifc, pt.taps, cs.controllable_assets,
                          cs.decision_taps);
        const auto& sol = pt.vp.coupled.sol;

        std::vector<double> dq(cs.controllable_assets.size(), 0.0);
        for (size_t b = 0; b < sol.bus_ids.size(); ++b) {
            auto vb = cs.v_bounds.find(sol.bus_ids[b]);
            if (vb == cs.v_bounds.end()) continue;
            double need = 0.0;  // wanted voltage change
            if (sol.vm[b] > vb->second.second) need = vb->second.second - sol.vm[b];
            if (sol.vm[b] < vb->second.first) need = vb->second.first - sol.vm[b];
            if (need == 0.0) continue;
            for (size_t k = 0; k < dq.size(); ++k) dq[k] += sens.dv_dq(b, k) * need;
        }
        double norm = 0.0;
        for (double d : dq) norm = std::max(norm, std::abs(d));
        bool moved = false;
        if (norm > 1e-12) {
            for (size_t k = 0; k < dq.size(); ++k) {
                QBox box = effective_box(net, cs, cs.controllable_assets[k]);
                double step = dq[k] / norm * 0.25 * (box.hi - box.lo);
                double q_new = std::min(std::max(pt.q[box.id] + step, box.lo), box.hi);
                if (q_new != pt.q[box.id]) moved = true;
                pt.q[box.id] = q_new;
            }
        }
        // One corrective tap move per pass if it reduces the worst violation.
        double worst_now = 0.0;
        for (const auto& v : pt.vp.violations) worst_now = std::max(worst_now, v.magnitude);
        if (moved) {
            pt.vp = evaluate(net, ifc, cs, pt.taps, pt.q);
            continue;
        }
        bool tap_helped = false;
        for (const auto& tid : cs.decision_taps) {
            const Transformer* tx = net.find_transformer(tid);
            for (int dir : {-1, +1}) {
                int pos = pt.taps.count(tid) ? pt.taps[tid] : tx->tap->position;
                int cand = pos + dir;
                if (cand < tx->tap->pos_min || cand > tx->tap->pos_max) continue;
                TapVector t2 = pt.taps;
                t2[tid] = cand;
                VerifiedPoint vp2 = evaluate(net, ifc, cs, t2, pt.q);
                double worst2 = 0.0;
                for (const auto& v : vp2.violations) worst2 = std::max(worst2, v.magnitude);
                if (worst2 < worst_now - 1e-9) {
                    pt.taps = t2;
                    pt.vp = vp2;
                    worst_now = worst2;
                    tap_helped = true;
                    break;
                }
            }
            if (tap_helped) break;
        }
        if (!tap_helped && !moved) return pt.vp.violations.empty();
    }
    return pt.vp.violations.empty();
}

// Shared search engine for the flexibility extremes and target tracking.
// Every accepted state comes from an exact coupled solve plus constraint check;
// the sensitivity model only proposes moves.
inline SearchPoint sensitivity_search(const Network& net, const InterfaceSpec& ifc,
                                      const ConstraintSet& cs, Objective obj, double target) {
    SearchPoint pt;
    pt.taps = current_taps(net, cs);

    // Base point: controllables at their present law-driven values.
    CoupledSolution base = coupled_power_flow(net, {}, pt.taps);
    for (const auto& aid : cs.controllable_assets) {
        QBox box = effective_box(net, cs, aid);
        double q0 = base.sol.dispatch.at(aid).q;
        pt.q[aid] = std::min(std::max(q0, box.lo), box.hi);
    }
    pt.vp = evaluate(net, ifc, cs, pt.taps, pt.q);

    if (!pt.vp.violations.empty()) {
        std::vector<Violation> base_viol = pt.vp.violations;
        if (!repair_base_case(net, ifc, cs, pt)) throw InfeasibleError(base_viol);
    }

    const bool track = obj == Objective::track_target;
    double step_frac = track ? 1.0 : 0.25;
    double best_obj = objective_value(obj, pt.vp.q_if, target);
    const size_t na = cs.controllable_assets.size();

    for (int iter = 0; iter < defaults::sensitivity_max_iterations; ++iter) {
        if (track && std::abs(pt.vp.q_if - target) <= 1e-7) break;

        double obj_at_start = best_obj;
        bool progressed = false;
        bool q_blocked = na == 0;
        bool tap_moved = false;
        if (na > 0) {
            SensitivityMatrices sens = sensitivities(net, pt.vp.coupled.sol, ifc, pt.taps,
                                                     cs.controllable_assets, cs.decision_taps);
            std::vector<double> dq(na, 0.0);
            if (track) {
                double residual = target - pt.vp.q_if;
                double reachable = 0.0;
                std::vector<double> full(na, 0.0);
                for (size_t k = 0; k < na; ++k) {
                    QBox box = effective_box(net, cs, cs.controllable_assets[k]);
                    double s = sens.dqif_dq(k);
                    double dir = residual * s >= 0 ? 1.0 : -1.0;
                    double head = dir > 0 ? box.hi - pt.q[box.id] : pt.q[box.id] - box.lo;
                    full[k] = dir * head;
                    reachable += std::abs(s) * head;
                }
                double scale = reachable > std::abs(residual) && reachable > 0
                                   ? std::abs(residual) / reachable
                                   : 1.0;
                for (size_t k = 0; k < na; ++k) dq[k] = full[k] * scale * step_frac;
            } else {
                double want = obj == Objective::maximize_qif ? 1.0 : -1.0;
                for (size_t k = 0; k < na; ++k) {
                    QBox box = effective_box(net, cs, cs.controllable_assets[k]);
                    double dir = sens.dqif_dq(k) * want >= 0 ? 1.0 : -1.0;
                    double head = dir > 0 ? box.hi - pt.q[box.id] : pt.q[box.id] - box.lo;
                    dq[k] = dir * head * step_frac;
                }
            }
            double lambda = voltage_trim(pt.vp.coupled.sol, cs, sens, dq);
            double largest_move = 0.0;
            for (double d : dq) largest_move = std::max(largest_move, std::abs(d * lambda));
            if (lambda <= 1e-9 || largest_move <= 1e-12) {
                q_blocked = true;
            } else {
                std::map<std::string, double> q_new = pt.q;
                for (size_t k = 0; k < na; ++k) {
                    QBox box = effective_box(net, cs, cs.controllable_assets[k]);
                    q_new[box.id] =
                        std::min(std::max(pt.q[box.id] + dq[k] * lambda, box.lo), box.hi);
                }
                VerifiedPoint vp_new = evaluate(net, ifc, cs, pt.taps, q_new);
                double obj_new = objective_value(obj, vp_new.q_if, target);
                if (vp_new.violations.empty() && obj_new > best_obj + 1e-12) {
                    pt.q = q_new;
                    pt.vp = vp_new;
                    best_obj = obj_new;
                    progressed = true;
                } else {
                    step_frac *= 0.5;  // regression or a linearization miss
                }
            }
        }

        // One-step tap lookahead, exact evaluation, greedy per changer. Taps
        // are tried only once the continuous direction has been exhausted;
        // moving them earlier trades away q headroom for marginal gains.
        double q_gain = best_obj - obj_at_start;
        bool try_taps = !progressed || q_gain < defaults::sensitivity_min_improvement;
        if (!try_taps) continue;
        for (const auto& tid : cs.decision_taps) {
            const Transformer* tx = net.find_transformer(tid);
            int pos = pt.taps.at(tid);
            int best_cand = pos;
            VerifiedPoint best_vp;
            double best_cand_obj = best_obj;
            for (int dir : {-1, +1}) {
                int cand = pos + dir;
                if (cand < tx->tap->pos_min || cand > tx->tap->pos_max) continue;
                TapVector t2 = pt.taps;
                t2[tid] = cand;
                VerifiedPoint vp2;
                try {
                    vp2 = evaluate(net, ifc, cs, t2, pt.q);
                } catch (const NonConvergence&) {
                    continue;
                } catch (const FixedPointDivergence&) {
                    continue;
                }
                if (!vp2.violations.empty()) continue;
                double o2 = objective_value(obj, vp2.q_if, target);
                if (o2 > best_cand_obj + 1e-9) {
                    best_cand = cand;
                    best_cand_obj = o2;
                    best_vp = vp2;
                }
            }
            if (best_cand != pos) {
                pt.taps[tid] = best_cand;
                pt.vp = best_vp;
                best_obj = best_cand_obj;
                tap_moved = true;
            }
        }

        if (tap_moved) continue;
        if (!progressed && !q_blocked && step_frac >= 1e-3) continue;  // retry halved
        break;
    }
    return pt;
}

inline SetpointBundle bundle_of(const SearchPoint& pt, double target, bool track) {
    SetpointBundle b;
    b.taps = pt.taps;
    b.q_setpoints = pt.q;
    b.achieved_q_if = pt.vp.q_if;
    b.deviation = track ? target - pt.vp.q_if : 0.0;
    return b;
}

}  // namespace flex_detail

// Sensitivity-guided interface flexibility range: two directed searches with
// exact re-verification of both witnesses.
inline FlexRange flex_range_sensitivity(const Network& net, const InterfaceSpec& ifc,
                                        const ConstraintSet& cs) {
    using namespace flex_detail;
    SearchPoint lo = sensitivity_search(net, ifc, cs, Objective::minimize_qif, 0.0);
    SearchPoint hi = sensitivity_search(net, ifc, cs, Objective::maximize_qif, 0.0);
    FlexRange r;
    r.feasible = true;
    r.q_min = lo.vp.q_if;
    r.q_max = hi.vp.q_if;
    r.witness_min = bundle_of(lo, 0.0, false);
    r.witness_max = bundle_of(hi, 0.0, false);
    if (r.q_min > r.q_max) {  // degenerate, keep ordered
        std::swap(r.q_min, r.q_max);
        std::swap(r.witness_min, r.witness_max);
    }
    return r;
}

enum class FlexMethod { oracle, sensitivity };

inline FlexRange flex_range(const Network& net, const InterfaceSpec& ifc, const ConstraintSet& cs,
                            FlexMethod method, int oracle_grid_points = defaults::oracle_grid_points) {
    return method == FlexMethod::oracle ? flex_range_oracle(net, ifc, cs, oracle_grid_points)
                                        : flex_range_sensitivity(net, ifc, cs);
}

// Minimizes |interface Q - q_target|; clamps to the nearest achievable value
// when the target is outside the feasible set, reporting the gap as deviation.
inline SetpointBundle allocate_setpoints(const Network& net, const InterfaceSpec& ifc,
                                         const ConstraintSet& cs, double q_target) {
    using namespace flex_detail;
    SearchPoint pt = sensitivity_search(net, ifc, cs, Objective::track_target, q_target);
    return bundle_of(pt, q_target, true);
}

// ---------------------------------------------------------------------------
// Per-voltage-level decomposition: every MV/LV interface becomes a sub-problem
// on its LV subtree, the MV master sees each substation as one aggregate
// controllable injection bounded by the sub-range.
// ---------------------------------------------------------------------------

struct SubProblem {
    std::string transformer_id;
    Network lv_net;  // boundary bus as slack at the measured MV voltage
    InterfaceSpec ifc;
    ConstraintSet cs;
    FlexRange range;
    double base_p_if = 0.0, base_q_if = 0.0;
    bool frozen = false;  // no usable flexibility; aggregate pinned at base
};

struct Decomposition {
    std::vector<SubProblem> subs;
    Network master_net;
    InterfaceSpec master_ifc;
    ConstraintSet master_cs;
    std::map<std::string, std::string> agg_of;  // transformer id -> aggregate asset id
};

// Standalone copy of the LV subtree below `transformer_id`; the MV-side bus
// becomes the slack at `boundary_vm`.
inline Network extract_subtree(const Network& net, const std::string& transformer_id,
                               double boundary_vm) {
    const Transformer* tx = net.find_transformer(transformer_id);
    if (!tx) throw Error("unknown transformer id '" + transformer_id + "'");
    auto adj = detail::Adjacency::build(net);
    size_t tx_index = 0;
    for (size_t i = 0; i < net.transformers.size(); ++i)
        if (net.transformers[i].id == transformer_id) tx_index = i;
    auto comp = detail::component_without(adj, tx->lv_bus, {'T', tx_index});

    Network sub;
    sub.s_base = net.s_base;
    sub.slack_vm = boundary_vm;
    for (const auto& b : net.buses) {
        if (b.id == tx->hv_bus) {
            Bus boundary = b;
            boundary.kind = BusKind::slack;
            sub.buses.push_back(boundary);
        } else if (comp.count(b.id)) {
            Bus inner = b;
            inner.kind = BusKind::load;
            sub.buses.push_back(inner);
        }
    }
    for (const auto& l : net.lines)
        if (comp.count(l.from_bus) && comp.count(l.to_bus)) sub.lines.push_back(l);
    for (const auto& t : net.transformers)
        if (t.id == transformer_id || (comp.count(t.hv_bus) && comp.count(t.lv_bus)))
            sub.transformers.push_back(t);
    for (const auto& a : net.assets)
        if (comp.count(a.bus)) sub.assets.push_back(a);
    return sub;
}

inline Decomposition decompose_by_level(const Network& net, const InterfaceSpec& ifc_hvmv,
                                        const ConstraintSet& cs,
                                        FlexMethod sub_method = FlexMethod::sensitivity,
                                        int oracle_grid_points = defaults::oracle_grid_points) {
    CoupledSolution base = coupled_power_flow(net, {}, flex_detail::current_taps(net, cs));

    std::set<std::string> downstream(ifc_hvmv.downstream_buses.begin(),
                                     ifc_hvmv.downstream_buses.end());
    std::set<std::string> ctrl(cs.controllable_assets.begin(), cs.controllable_assets.end());
    std::set<std::string> dec_taps(cs.decision_taps.begin(), cs.decision_taps.end());

    Decomposition dec;
    std::set<std::string> absorbed_buses;
    for (const auto& t : net.transformers) {
        if (!t.is_interface || t.id == ifc_hvmv.transformer_id) continue;
        if (!downstream.count(t.hv_bus)) continue;
        SubProblem sp;
        sp.transformer_id = t.id;
        sp.lv_net = extract_subtree(net, t.id, base.sol.vmag(t.hv_bus));
        sp.ifc = interface_of(sp.lv_net, t.id);
        sp.cs = ConstraintSet::from_network(sp.lv_net, sp.ifc);
        for (auto& [bid, bounds] : sp.cs.v_bounds) {
            auto it = cs.v_bounds.find(bid);
            if (it != cs.v_bounds.end()) bounds = it->second;
        }
        for (auto& [aid, cap] : sp.cs.asset_caps) {
            auto it = cs.asset_caps.find(aid);
            if (it != cs.asset_caps.end()) cap = it->second;
        }
        sp.cs.controllable_assets.clear();
        for (const auto& aid : sp.ifc.controllable_assets)
            if (ctrl.count(aid)) sp.cs.controllable_assets.push_back(aid);
        sp.cs.decision_taps.clear();
        for (const auto& tid : sp.ifc.downstream_tap_changers)
            if (dec_taps.count(tid)) sp.cs.decision_taps.push_back(tid);

        const BranchFlow& bf = base.sol.branch(t.id);
        sp.base_p_if = bf.s_from.real();
        sp.base_q_if = bf.s_from.imag();
        try {
            sp.range = flex_range(sp.lv_net, sp.ifc, sp.cs, sub_method, oracle_grid_points);
            if (!sp.range.feasible) sp.frozen = true;
        } catch (const InfeasibleError&) {
            sp.frozen = true;
        }
        if (sp.frozen) {
            sp.range.q_min = sp.range.q_max = sp.base_q_if;
            sp.range.feasible = false;
        }
        for (const auto& bid : sp.ifc.downstream_buses) absorbed_buses.insert(bid);
        dec.subs.push_back(sp);
    }

    // MV master: substation subtrees collapse into one aggregate injection each.
    Network& m = dec.master_net;
    m.s_base = net.s_base;
    m.slack_vm = net.slack_vm;
    for (const auto& b : net.buses)
        if (!absorbed_buses.count(b.id)) m.buses.push_back(b);
    for (const auto& l : net.lines)
        if (!absorbed_buses.count(l.from_bus) && !absorbed_buses.count(l.to_bus))
            m.lines.push_back(l);
    for (const auto& t : net.transformers)
        if (!absorbed_buses.count(t.hv_bus) && !absorbed_buses.count(t.lv_bus))
            m.transformers.push_back(t);
    for (const auto& a : net.assets)
        if (!absorbed_buses.count(a.bus)) m.assets.push_back(a);
    for (const auto& sp : dec.subs) {
        Asset agg;
        agg.id = "agg__" + sp.transformer_id;
        agg.bus = net.find_transformer(sp.transformer_id)->hv_bus;
        agg.kind = AssetKind::aggregate;
        agg.p = -sp.base_p_if;  // the substation draws p_if from the MV bus
        agg.q_min = -sp.range.q_max;
        agg.q_max = -sp.range.q_min;
        double q0 = std::min(std::max(-sp.base_q_if, agg.q_min), agg.q_max);
        agg.control = DirectSetpoint{q0};
        double q_amp = std::max(std::abs(agg.q_min), std::abs(agg.q_max));
        agg.s_max = std::hypot(agg.p, q_amp) * 1.001 + 1e-9;
        agg.directly_controllable = !sp.frozen;
        dec.agg_of[sp.transformer_id] = agg.id;
        m.assets.push_back(agg);
    }

    dec.master_ifc = interface_of(m, ifc_hvmv.transformer_id);
    dec.master_cs = ConstraintSet::from_network(m, dec.master_ifc);
    for (auto& [bid, bounds] : dec.master_cs.v_bounds) {
        auto it = cs.v_bounds.find(bid);
        if (it != cs.v_bounds.end()) bounds = it->second;
    }
    dec.master_cs.controllable_assets.clear();
    for (const auto& aid : dec.master_ifc.controllable_assets) {
        bool is_agg = aid.rfind("agg__", 0) == 0;
        if (is_agg || ctrl.count(aid)) dec.master_cs.controllable_assets.push_back(aid);
    }
    dec.master_cs.decision_taps.clear();
    for (const auto& tid : dec.master_ifc.downstream_tap_changers)
        if (dec_taps.count(tid)) dec.master_cs.decision_taps.push_back(tid);
    return dec;
}

// Per-substation allocations for a master-level bundle, assembled and
// re-verified on the full network.
inline SetpointBundle map_master_bundle_down(const Network& net, const InterfaceSpec& ifc,
                                             const ConstraintSet& cs, const Decomposition& dec,
                                             const SetpointBundle& master, double q_target,
                                             VerifiedPoint* verified = nullptr) {
    SetpointBundle full;
    full.taps = master.taps;
    for (const auto& [aid, q] : master.q_setpoints)
        if (aid.rfind("agg__", 0) != 0) full.q_setpoints[aid] = q;

    for (const auto& sp : dec.subs) {
        if (sp.frozen) continue;
        auto it = master.q_setpoints.find(dec.agg_of.at(sp.transformer_id));
        if (it == master.q_setpoints.end()) continue;
        double sub_target = -it->second;
        SetpointBundle sub = allocate_setpoints(sp.lv_net, sp.ifc, sp.cs, sub_target);
        for (const auto& [tid, pos] : sub.taps) full.taps[tid] = pos;
        for (const auto& [aid, q] : sub.q_setpoints) full.q_setpoints[aid] = q;
    }

    VerifiedPoint vp = verify_bundle(net, ifc, cs, full);
    full.achieved_q_if = vp.q_if;
    full.deviation = q_target - vp.q_if;
    if (verified) *verified = vp;
    return full;
}

// Master allocation followed by per-substation allocations.
inline SetpointBundle solve_decomposed(const Network& net, const InterfaceSpec& ifc,
                                       const ConstraintSet& cs, const Decomposition& dec,
                                       double q_target) {
    SetpointBundle master =
        allocate_setpoints(dec.master_net, dec.master_ifc, dec.master_cs, q_target);
    return map_master_bundle_down(net, ifc, cs, dec, master, q_target);
}

// Flexibility range of the decomposed problem. Both extremes are realized as
// complete dispatches and re-verified on the full network; when the boundary
// approximation overshoots, the extreme target is backed off toward the base
// point until the full verification is clean.
inline FlexRange decomposed_flex_range(const Network& net, const InterfaceSpec& ifc,
                                       const ConstraintSet& cs, const Decomposition& dec) {
    FlexRange master_range =
        flex_range_sensitivity(dec.master_net, dec.master_ifc, dec.master_cs);
    VerifiedPoint base = verify_bundle(net, ifc, cs, SetpointBundle{});
    double base_q = base.q_if;

    auto realize = [&](double extreme_target,
                       const SetpointBundle& master_witness) -> std::pair<double, SetpointBundle> {
        VerifiedPoint vp;
        SetpointBundle b =
            map_master_bundle_down(net, ifc, cs, dec, master_witness, extreme_target, &vp);
        if (vp.violations.empty()) return {vp.q_if, b};
        for (int i = 1; i <= 10; ++i) {
            double lambda = 1.0 - 0.1 * i;
            double target = base_q + lambda * (extreme_target - base_q);
            SetpointBundle master =
                allocate_setpoints(dec.master_net, dec.master_ifc, dec.master_cs, target);
            b = map_master_bundle_down(net, ifc, cs, dec, master, target, &vp);
            if (vp.violations.empty()) return {vp.q_if, b};
        }
        SetpointBundle none;
        none.achieved_q_if = base_q;
        return {base_q, none};
    };

    FlexRange r;
    auto [qmin, wmin] = realize(master_range.q_min, master_range.witness_min);
    auto [qmax, wmax] = realize(master_range.q_max, master_range.witness_max);
    r.feasible = true;
    r.q_min = std::min(qmin, qmax);
    r.q_max = std::max(qmin, qmax);
    r.witness_min = qmin <= qmax ? wmin : wmax;
    r.witness_max = qmin <= qmax ? wmax : wmin;
    return r;
}

// Discrete tap recovery from a continuous relaxation: floor/ceil candidates per
// changer, ordered by linear-predicted |Q - target| with ties broken toward
// neutral, first exactly-verified feasible combination wins.
inline std::pair<TapVector, SetpointBundle> round_and_fix_taps(
    const Network& net, const InterfaceSpec& ifc, const ConstraintSet& cs, double q_target,
    const std::map<std::string, double>& relaxed_taps) {
    using namespace flex_detail;
    if (relaxed_taps.size() > 8) throw Error("round_and_fix_taps: too many tap changers");

    std::vector<std::string> ids;
    std::vector<std::vector<int>> cands;
    for (const auto& [tid, frac] : relaxed_taps) {
        const Transformer* tx = net.find_transformer(tid);
        if (!tx || !tx->tap) throw Error("'" + tid + "' has no tap changer");
        if (frac < tx->tap->pos_min - 1e-9 || frac > tx->tap->pos_max + 1e-9)
            throw Error("fractional tap for '" + tid + "' out of bounds");
        int lo = static_cast<int>(std::floor(frac));
        int hi = static_cast<int>(std::ceil(frac));
        lo = std::max(lo, tx->tap->pos_min);
        hi = std::min(hi, tx->tap->pos_max);
        ids.push_back(tid);
        cands.push_back(lo == hi ? std::vector<int>{lo} : std::vector<int>{lo, hi});
    }

    TapVector base_taps = current_taps(net, cs);
    CoupledSolution base = coupled_power_flow(net, {}, base_taps);
    SensitivityMatrices sens =
        sensitivities(net, base.sol, ifc, base_taps, cs.controllable_assets, ids);
    double qif0 = interface_q(base.sol, ifc);

    struct Combo {
        TapVector taps;
        double predicted;
        int neutral_distance;
    };
    std::vector<Combo> combos;
    std::vector<size_t> idx(ids.size(), 0);
    bool done = ids.empty();
    if (ids.empty()) combos.push_back({TapVector{}, qif0, 0});
    while (!done) {
        Combo c;
        c.predicted = qif0;
        c.neutral_distance = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
            int pos = cands[i][idx[i]];
            c.taps[ids[i]] = pos;
            const Transformer* tx = net.find_transformer(ids[i]);
            int pos0 = base_taps.count(ids[i]) ? base_taps[ids[i]] : tx->tap->position;
            c.predicted += sens.dqif_dtap(i) * (pos - pos0);
            c.neutral_distance += std::abs(pos - tx->tap->neutral);
        }
        combos.push_back(c);
        done = true;
        for (size_t i = 0; i < idx.size(); ++i) {
            if (++idx[i] < cands[i].size()) {
                done = false;
                break;
            }
            idx[i] = 0;
        }
    }
    std::stable_sort(combos.begin(), combos.end(), [&](const Combo& a, const Combo& b) {
        double da = std::abs(a.predicted - q_target), db = std::abs(b.predicted - q_target);
        if (std::abs(da - db) > 1e-12) return da < db;
        return a.neutral_distance < b.neutral_distance;
    });

    for (const auto& combo : combos) {
        Network fixed = net;
        for (const auto& [tid, pos] : combo.taps) fixed.find_transformer(tid)->tap->position = pos;
        ConstraintSet cs_fixed = cs;
        cs_fixed.decision_taps.clear();  // continuous re-dispatch only
        try {
            SetpointBundle b = allocate_setpoints(fixed, ifc, cs_fixed, q_target);
            SetpointBundle out = b;
            out.taps = combo.taps;
            return {combo.taps, out};
        } catch (const InfeasibleError&) {
            continue;
        }
    }
    throw InfeasibleError({});
}

}  // namespace voltcoord
