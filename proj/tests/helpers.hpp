#pragma once

#include <random>

#include "voltcoord/voltcoord.hpp"

namespace voltcoord::testing {

// Two-bus network: slack -- line(r, x) -- load bus with one asset.
// `load_p`/`load_q` are consumption-positive here; the asset stores them as
// negative injections.
inline Network two_bus(double r, double x, double load_p, double load_q,
                       double q_span = 2.0) {
    Network net;
    net.s_base = 10.0;
    net.buses.push_back({"B1", BusKind::slack, 20.0, 0.5, 1.5, VoltageLevel::MV});
    net.buses.push_back({"B2", BusKind::load, 20.0, 0.5, 1.5, VoltageLevel::MV});
    net.lines.push_back({"L1", "B1", "B2", r, x, 0.0, 100.0});
    Asset a;
    a.id = "LOAD";
    a.bus = "B2";
    a.kind = AssetKind::household;
    a.p = -load_p;
    a.q_min = -q_span;
    a.q_max = q_span;
    a.s_max = 60.0;
    a.control = DirectSetpoint{-load_q};
    net.assets.push_back(a);
    return net;
}

// Closed-form |V2| for the two-bus case (load-positive p, q):
// |V2|^4 + (2(qx + pr) - |V1|^2)|V2|^2 + (p^2 + q^2)(r^2 + x^2) = 0,
// high-voltage root. Returns NaN when no real root exists (beyond loadability).
inline double two_bus_vm_oracle(double r, double x, double p, double q, double v1 = 1.0) {
    double b = 2.0 * (q * x + p * r) - v1 * v1;
    double c = (p * p + q * q) * (r * r + x * x);
    double disc = b * b - 4.0 * c;
    if (disc < 0.0) return std::numeric_limits<double>::quiet_NaN();
    double v2_sq = (-b + std::sqrt(disc)) / 2.0;
    return std::sqrt(v2_sq);
}

// Slack -- transformer (interface) -- load bus, for interface-flow tests.
inline Network two_bus_tx(double x, double load_p, double load_q, bool with_tap = false,
                          int position = 0) {
    Network net;
    net.s_base = 10.0;
    net.buses.push_back({"H", BusKind::slack, 110.0, 0.5, 1.5, VoltageLevel::HV});
    net.buses.push_back({"M", BusKind::load, 20.0, 0.5, 1.5, VoltageLevel::MV});
    Transformer t;
    t.id = "T1";
    t.hv_bus = "H";
    t.lv_bus = "M";
    t.s_rated = 10.0;
    t.r = 0.0;
    t.x = x;
    t.is_interface = true;
    if (with_tap) t.tap = TapChanger{-5, 5, 0, 0.025, position, 1.0, 0.02, 1, TapMode::optimized};
    net.transformers.push_back(t);
    Asset a;
    a.id = "LOAD";
    a.bus = "M";
    a.kind = AssetKind::commercial;
    a.p = -load_p;
    a.q_min = -2.0;
    a.q_max = 2.0;
    a.s_max = 30.0;
    a.control = DirectSetpoint{-load_q};
    net.assets.push_back(a);
    return net;
}

struct RandomNetOptions {
    int n_load_buses = 6;       // MV buses below the interface transformer
    int n_controllable = 2;
    int n_extra_taps = 0;       // in-line regulators on the MV chain
    bool interface_tap = false; // tap changer on the interface transformer
    bool tight_v_bounds = false;
    bool with_qofv = false;     // one voltage-dependent DER
};

// Randomized radial instance: HV slack, interface transformer, an MV tree with
// loads and directly controllable DER. Regenerates until the base case is
// valid, convergent and violation-free.
inline Network make_random_radial(std::mt19937_64& rng, const RandomNetOptions& opt = {}) {
    auto uni = [&](double lo, double hi) {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    };
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    for (int attempt = 0; attempt < 60; ++attempt) {
        Network net;
        net.s_base = 10.0;
        double v_lo = opt.tight_v_bounds ? 0.97 : 0.90;
        double v_hi = opt.tight_v_bounds ? 1.03 : 1.10;
        net.buses.push_back({"H", BusKind::slack, 110.0, v_lo, v_hi, VoltageLevel::HV});
        net.buses.push_back({"M0", BusKind::load, 20.0, v_lo, v_hi, VoltageLevel::MV});
        Transformer t0;
        t0.id = "TIF";
        t0.hv_bus = "H";
        t0.lv_bus = "M0";
        t0.s_rated = 10.0;
        t0.r = 0.002;
        t0.x = uni(0.06, 0.12);
        t0.is_interface = true;
        if (opt.interface_tap)
            t0.tap = TapChanger{-2, 2, 0, 0.02, 0, 1.0, 0.03, 1, TapMode::optimized};
        net.transformers.push_back(t0);

        for (int i = 1; i <= opt.n_load_buses; ++i) {
            std::string id = "M" + std::to_string(i);
            net.buses.push_back({id, BusKind::load, 20.0, v_lo, v_hi, VoltageLevel::MV});
            int parent = pick(0, i - 1);
            std::string pid = "M" + std::to_string(parent);
            if (opt.n_extra_taps > 0 && i <= opt.n_extra_taps) {
                Transformer tr;  // in-line regulator, 1:1 with a tap changer
                tr.id = "TR" + std::to_string(i);
                tr.hv_bus = pid;
                tr.lv_bus = id;
                tr.s_rated = 10.0;
                tr.r = 0.001;
                tr.x = uni(0.02, 0.05);
                tr.tap = TapChanger{-2, 2, 0, 0.02, 0, 1.0, 0.03, 1, TapMode::optimized};
                net.transformers.push_back(tr);
            } else {
                net.lines.push_back({"L" + std::to_string(i), pid, id, uni(0.004, 0.02),
                                     uni(0.015, 0.05), 0.0, 5.0});
            }
        }

        for (int i = 1; i <= opt.n_load_buses; ++i) {
            Asset load;
            load.id = "LD" + std::to_string(i);
            load.bus = "M" + std::to_string(i);
            load.kind = AssetKind::household;
            load.p = -uni(0.02, 0.12);
            load.q_min = -0.2;
            load.q_max = 0.2;
            load.s_max = 0.5;
            load.control = FixedCosPhi{0.97, true};
            net.assets.push_back(load);
        }
        for (int k = 0; k < opt.n_controllable; ++k) {
            Asset der;
            der.id = "DER" + std::to_string(k);
            der.bus = "M" + std::to_string(pick(1, opt.n_load_buses));
            der.kind = k % 2 == 0 ? AssetKind::pv : AssetKind::storage;
            der.p = uni(0.0, 0.25);
            double span = uni(0.08, 0.30);
            der.q_min = -span;
            der.q_max = span;
            der.s_max = 1.3 * std::hypot(der.p, span);
            der.control = DirectSetpoint{0.0};
            der.directly_controllable = true;
            net.assets.push_back(der);
        }
        if (opt.with_qofv) {
            Asset qv;
            qv.id = "QV0";
            qv.bus = "M" + std::to_string(opt.n_load_buses);
            qv.kind = AssetKind::pv;
            qv.p = uni(0.05, 0.2);
            qv.q_min = -0.1;
            qv.q_max = 0.1;
            qv.s_max = 1.3 * std::hypot(qv.p, 0.1);
            qv.control = default_qofv_curve();
            net.assets.push_back(qv);
        }

        if (!validate(net).ok()) continue;
        try {
            CoupledSolution base = coupled_power_flow(net, {}, {});
            InterfaceSpec ifc = interface_of(net, "TIF");
            ConstraintSet cs = ConstraintSet::from_network(net, ifc);
            if (!check_constraints(base.sol, cs).empty()) continue;
            return net;
        } catch (const Error&) {
            continue;
        }
    }
    throw Error("could not generate a feasible random instance");
}

// Finite-difference oracle for the injection sensitivities at a solution.
struct FdSensitivities {
    Eigen::MatrixXd dv_dq;
    Eigen::RowVectorXd dqif_dq;
};

inline FdSensitivities fd_sensitivities(const Network& net, const PowerFlowSolution& sol,
                                        const InterfaceSpec& ifc,
                                        const std::vector<std::string>& asset_ids,
                                        double h = 1e-4) {
    FdSensitivities fd;
    const int n = static_cast<int>(sol.bus_ids.size());
    const int na = static_cast<int>(asset_ids.size());
    fd.dv_dq = Eigen::MatrixXd::Zero(n, na);
    fd.dqif_dq = Eigen::RowVectorXd::Zero(na);
    for (int c = 0; c < na; ++c) {
        Dispatch plus = sol.dispatch, minus = sol.dispatch;
        plus.at(asset_ids[c]).q += h;
        minus.at(asset_ids[c]).q -= h;
        PowerFlowSolution sp = solve_power_flow(net, plus);
        PowerFlowSolution sm = solve_power_flow(net, minus);
        for (int i = 0; i < n; ++i) fd.dv_dq(i, c) = (sp.vm[i] - sm.vm[i]) / (2 * h);
        fd.dqif_dq(c) = (interface_q(sp, ifc) - interface_q(sm, ifc)) / (2 * h);
    }
    return fd;
}

// Two-substation MV/LV system for decomposition tests: HV slack, MV spine,
// two LV subtrees with controllable DER.
inline Network two_substation_net(std::mt19937_64& rng, bool sub_tap = false) {
    auto uni = [&](double lo, double hi) {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    };
    for (int attempt = 0; attempt < 40; ++attempt) {
        Network net;
        net.s_base = 10.0;
        net.buses.push_back({"H", BusKind::slack, 110.0, 0.90, 1.10, VoltageLevel::HV});
        net.buses.push_back({"M1", BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});
        net.buses.push_back({"M2", BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});
        net.buses.push_back({"M3", BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});
        for (const auto& b : {"A", "B"})
            for (int i = 0; i < 2; ++i)
                net.buses.push_back({std::string("L") + b + std::to_string(i), BusKind::load, 0.4,
                                     0.90, 1.10, VoltageLevel::LV});

        Transformer hv;
        hv.id = "T_HVMV";
        hv.hv_bus = "H";
        hv.lv_bus = "M1";
        hv.s_rated = 10.0;
        hv.r = 0.002;
        hv.x = 0.08;
        hv.is_interface = true;
        net.transformers.push_back(hv);
        net.lines.push_back({"LM2", "M1", "M2", uni(0.004, 0.012), uni(0.01, 0.03), 0.0, 5.0});
        net.lines.push_back({"LM3", "M2", "M3", uni(0.004, 0.012), uni(0.01, 0.03), 0.0, 5.0});

        auto add_sub = [&](const std::string& tag, const std::string& mv_bus, bool tap) {
            Transformer tx;
            tx.id = "T_S" + tag;
            tx.hv_bus = mv_bus;
            tx.lv_bus = "L" + tag + "0";
            tx.s_rated = 0.63;
            tx.r = 0.01;
            tx.x = 0.045;
            tx.is_interface = true;
            if (tap) tx.tap = TapChanger{-3, 3, 0, 0.015, 0, 1.0, 0.012, 1, TapMode::optimized};
            net.transformers.push_back(tx);
            net.lines.push_back({"LL" + tag, "L" + tag + "0", "L" + tag + "1", 2.0, 0.6, 0.0,
                                 0.05});
            Asset load;
            load.id = "LD" + tag;
            load.bus = "L" + tag + "1";
            load.kind = AssetKind::household;
            load.p = -uni(0.001, 0.004);
            load.q_min = -0.01;
            load.q_max = 0.01;
            load.s_max = 0.02;
            load.control = FixedCosPhi{0.97, true};
            net.assets.push_back(load);
            Asset der;
            der.id = "DER" + tag;
            der.bus = "L" + tag + "1";
            der.kind = AssetKind::pv;
            der.p = uni(0.001, 0.006);
            double span = uni(0.004, 0.012);
            der.q_min = -span;
            der.q_max = span;
            der.s_max = 1.3 * std::hypot(der.p, span);
            der.control = DirectSetpoint{0.0};
            der.directly_controllable = true;
            net.assets.push_back(der);
        };
        add_sub("A", "M2", sub_tap);
        add_sub("B", "M3", false);

        Asset mv_der;
        mv_der.id = "DER_MV";
        mv_der.bus = "M3";
        mv_der.kind = AssetKind::wind;
        mv_der.p = uni(0.0, 0.2);
        mv_der.q_min = -0.15;
        mv_der.q_max = 0.15;
        mv_der.s_max = 1.3 * std::hypot(mv_der.p, 0.15);
        mv_der.control = DirectSetpoint{0.0};
        mv_der.directly_controllable = true;
        net.assets.push_back(mv_der);

        if (!validate(net).ok()) continue;
        try {
            CoupledSolution base = coupled_power_flow(net, {}, {});
            InterfaceSpec ifc = interface_of(net, "T_HVMV");
            ConstraintSet cs = ConstraintSet::from_network(net, ifc);
            if (!check_constraints(base.sol, cs).empty()) continue;
            return net;
        } catch (const Error&) {
            continue;
        }
    }
    throw Error("could not generate a two-substation instance");
}

}  // namespace voltcoord::testing
