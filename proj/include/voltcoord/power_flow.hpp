#pragma once

#include <complex>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "voltcoord/grid.hpp"

namespace voltcoord {

using TapVector = std::map<std::string, int>;

struct PQ {
    double p = 0.0;
    double q = 0.0;
};

// Complete per-asset injections, generation positive.
using Dispatch = std::map<std::string, PQ>;

struct PowerFlowOptions {
    double tol = defaults::pf_tolerance;
    int max_iter = defaults::pf_max_iterations;
    bool flat_start = true;
    const std::vector<double>* initial_vm = nullptr;  // used when flat_start is false
    const std::vector<double>* initial_va = nullptr;
};

struct BranchFlow {
    std::string id;
    bool is_transformer = false;
    std::string from_bus, to_bus;  // transformers: from = HV side
    std::complex<double> s_from, s_to;
    double i_from = 0.0, i_to = 0.0;
};

struct PowerFlowSolution {
    std::vector<std::string> bus_ids;
    std::vector<double> vm;  // pu
    std::vector<double> va;  // rad
    std::vector<BranchFlow> branch_flows;
    std::complex<double> slack_injection;
    int iterations = 0;
    double max_mismatch = 0.0;
    Dispatch dispatch;  // injections this solution was computed with

    int bus_index(const std::string& id) const {
        for (size_t i = 0; i < bus_ids.size(); ++i)
            if (bus_ids[i] == id) return static_cast<int>(i);
        throw Error("unknown bus '" + id + "' in solution");
    }
    double vmag(const std::string& id) const { return vm[bus_index(id)]; }
    const BranchFlow& branch(const std::string& id) const {
        for (const auto& bf : branch_flows)
            if (bf.id == id) return bf;
        throw Error("unknown branch '" + id + "' in solution");
    }
};

struct AdmittanceModel {
    struct Branch {
        std::string id;
        bool is_transformer = false;
        int f = 0, t = 0;
        std::complex<double> yff, yft, ytf, ytt;
        double i_max = 0.0;    // pu, lines
        double s_rated = 0.0;  // pu, transformers
    };
    Eigen::MatrixXcd ybus;
    std::vector<Branch> branches;
    std::map<std::string, int> bus_index;
};

inline int tap_position_of(const Network& net, const Transformer& tx, const TapVector& taps) {
    auto it = taps.find(tx.id);
    if (it != taps.end()) {
        if (!tx.tap) throw Error("transformer '" + tx.id + "' has no tap changer");
        if (it->second < tx.tap->pos_min || it->second > tx.tap->pos_max)
            throw Error("tap position " + std::to_string(it->second) + " out of bounds for '" +
                        tx.id + "'");
        return it->second;
    }
    (void)net;
    return tx.tap ? tx.tap->position : 0;
}

inline AdmittanceModel build_admittance(const Network& net, const TapVector& taps = {}) {
    AdmittanceModel m;
    const int n = static_cast<int>(net.buses.size());
    m.ybus = Eigen::MatrixXcd::Zero(n, n);
    for (int i = 0; i < n; ++i) m.bus_index[net.buses[i].id] = i;

    for (const auto& l : net.lines) {
        AdmittanceModel::Branch br;
        br.id = l.id;
        br.f = m.bus_index.at(l.from_bus);
        br.t = m.bus_index.at(l.to_bus);
        std::complex<double> y = 1.0 / std::complex<double>(l.r, l.x);
        std::complex<double> ysh(0.0, l.b_shunt / 2.0);
        br.yff = y + ysh;
        br.yft = -y;
        br.ytf = -y;
        br.ytt = y + ysh;
        br.i_max = l.i_max;
        m.branches.push_back(br);
    }
    for (const auto& tx : net.transformers) {
        AdmittanceModel::Branch br;
        br.id = tx.id;
        br.is_transformer = true;
        br.f = m.bus_index.at(tx.hv_bus);
        br.t = m.bus_index.at(tx.lv_bus);
        // Impedance given on the unit's own rating.
        double scale = net.s_base / tx.s_rated;
        std::complex<double> y = 1.0 / std::complex<double>(tx.r * scale, tx.x * scale);
        double t = tx.ratio_at(tap_position_of(net, tx, taps));
        br.yff = y / (t * t);
        br.yft = -y / t;
        br.ytf = -y / t;
        br.ytt = y;
        br.s_rated = tx.s_rated / net.s_base;
        m.branches.push_back(br);
    }
    for (const auto& br : m.branches) {
        m.ybus(br.f, br.f) += br.yff;
        m.ybus(br.f, br.t) += br.yft;
        m.ybus(br.t, br.f) += br.ytf;
        m.ybus(br.t, br.t) += br.ytt;
    }
    return m;
}

namespace pf_detail {

// Bus injection vector from a complete dispatch. Throws if an asset is missing
// or a setpoint leaves its capability set (1e-7 slack for clamping roundoff).
inline Eigen::VectorXcd injections(const Network& net, const AdmittanceModel& m,
                                   const Dispatch& dispatch) {
    Eigen::VectorXcd s = Eigen::VectorXcd::Zero(net.buses.size());
    for (const auto& a : net.assets) {
        auto it = dispatch.find(a.id);
        if (it == dispatch.end()) throw Error("dispatch is missing asset '" + a.id + "'");
        const PQ& pq = it->second;
        constexpr double slack = 1e-7;
        if (pq.q < a.q_min - slack || pq.q > a.q_max + slack)
            throw Error("dispatch q for '" + a.id + "' outside [q_min, q_max]");
        if (pq.p * pq.p + pq.q * pq.q > a.s_max * a.s_max + slack)
            throw Error("dispatch for '" + a.id + "' exceeds s_max");
        s(m.bus_index.at(a.bus)) += std::complex<double>(pq.p, pq.q);
    }
    return s;
}

struct NrState {
    Eigen::VectorXd vm, va;
    std::vector<int> pq;  // non-slack bus indices, in bus order
    int slack = 0;
};

// Full polar-form Jacobian over the non-slack buses, O(n^2).
inline Eigen::MatrixXd jacobian(const Eigen::MatrixXcd& y, const Eigen::VectorXd& vm,
                                const Eigen::VectorXd& va, const std::vector<int>& pq) {
    const int n = static_cast<int>(vm.size());
    Eigen::VectorXcd v(n);
    for (int i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));
    Eigen::VectorXcd s = v.cwiseProduct((y * v).conjugate());

    const int k = static_cast<int>(pq.size());
    Eigen::MatrixXd jac(2 * k, 2 * k);
    for (int r = 0; r < k; ++r) {
        int i = pq[r];
        double pi = s(i).real(), qi = s(i).imag();
        for (int c = 0; c < k; ++c) {
            int j = pq[c];
            double g = y(i, j).real(), b = y(i, j).imag();
            if (i == j) {
                jac(r, c) = -qi - b * vm(i) * vm(i);                 // dP/dVa
                jac(r, k + c) = pi / vm(i) + g * vm(i);              // dP/dVm
                jac(k + r, c) = pi - g * vm(i) * vm(i);              // dQ/dVa
                jac(k + r, k + c) = qi / vm(i) - b * vm(i);          // dQ/dVm
            } else {
                double th = va(i) - va(j);
                double ct = std::cos(th), st = std::sin(th);
                jac(r, c) = vm(i) * vm(j) * (g * st - b * ct);
                jac(r, k + c) = vm(i) * (g * ct + b * st);
                jac(k + r, c) = -vm(i) * vm(j) * (g * ct + b * st);
                jac(k + r, k + c) = vm(i) * (g * st - b * ct);
            }
        }
    }
    return jac;
}

}  // namespace pf_detail

inline PowerFlowSolution solve_power_flow(const Network& net, const Dispatch& dispatch,
                                          const TapVector& taps = {},
                                          const PowerFlowOptions& opts = {},
                                          const AdmittanceModel* prebuilt = nullptr) {
    AdmittanceModel local;
    if (!prebuilt) {
        local = build_admittance(net, taps);
        prebuilt = &local;
    }
    const AdmittanceModel& m = *prebuilt;
    const int n = static_cast<int>(net.buses.size());

    pf_detail::NrState st;
    st.vm = Eigen::VectorXd::Ones(n);
    st.va = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i)
        if (net.buses[i].kind == BusKind::slack) st.slack = i;
    for (int i = 0; i < n; ++i)
        if (i != st.slack) st.pq.push_back(i);
    if (!opts.flat_start && opts.initial_vm && opts.initial_va) {
        for (int i = 0; i < n; ++i) {
            st.vm(i) = (*opts.initial_vm)[i];
            st.va(i) = (*opts.initial_va)[i];
        }
    }
    st.vm(st.slack) = net.slack_vm;
    st.va(st.slack) = 0.0;

    Eigen::VectorXcd s_spec = pf_detail::injections(net, m, dispatch);
    const int k = static_cast<int>(st.pq.size());

    auto mismatch = [&](Eigen::VectorXd& g) {
        Eigen::VectorXcd v(n);
        for (int i = 0; i < n; ++i) v(i) = std::polar(st.vm(i), st.va(i));
        Eigen::VectorXcd s_calc = v.cwiseProduct((m.ybus * v).conjugate());
        g.resize(2 * k);
        for (int r = 0; r < k; ++r) {
            g(r) = s_spec(st.pq[r]).real() - s_calc(st.pq[r]).real();
            g(k + r) = s_spec(st.pq[r]).imag() - s_calc(st.pq[r]).imag();
        }
        return s_calc;
    };

    Eigen::VectorXd g;
    Eigen::VectorXcd s_calc = mismatch(g);
    int iter = 0;
    double residual = k > 0 ? g.cwiseAbs().maxCoeff() : 0.0;
    while (residual > opts.tol) {
        if (iter >= opts.max_iter) throw NonConvergence(iter, residual);
        Eigen::MatrixXd jac = pf_detail::jacobian(m.ybus, st.vm, st.va, st.pq);
        Eigen::VectorXd dx = jac.partialPivLu().solve(g);
        if (!dx.allFinite()) throw SingularJacobian("singular power flow Jacobian");
        for (int r = 0; r < k; ++r) {
            st.va(st.pq[r]) += dx(r);
            st.vm(st.pq[r]) += dx(k + r);
        }
        ++iter;
        if (st.vm.minCoeff() <= 1e-6 || !st.vm.allFinite() || !st.va.allFinite())
            throw NonConvergence(iter, residual);
        s_calc = mismatch(g);
        residual = g.cwiseAbs().maxCoeff();
    }

    PowerFlowSolution sol;
    sol.iterations = iter;
    sol.max_mismatch = residual;
    sol.dispatch = dispatch;
    sol.bus_ids.reserve(n);
    for (const auto& b : net.buses) sol.bus_ids.push_back(b.id);
    sol.vm.assign(st.vm.data(), st.vm.data() + n);
    sol.va.assign(st.va.data(), st.va.data() + n);

    Eigen::VectorXcd v(n);
    for (int i = 0; i < n; ++i) v(i) = std::polar(st.vm(i), st.va(i));
    for (const auto& br : m.branches) {
        BranchFlow bf;
        bf.id = br.id;
        bf.is_transformer = br.is_transformer;
        bf.from_bus = net.buses[br.f].id;
        bf.to_bus = net.buses[br.t].id;
        std::complex<double> i_f = br.yff * v(br.f) + br.yft * v(br.t);
        std::complex<double> i_t = br.ytf * v(br.f) + br.ytt * v(br.t);
        bf.s_from = v(br.f) * std::conj(i_f);
        bf.s_to = v(br.t) * std::conj(i_t);
        bf.i_from = std::abs(i_f);
        bf.i_to = std::abs(i_t);
        sol.branch_flows.push_back(bf);
    }
    sol.slack_injection = s_calc(st.slack);
    return sol;
}

// Signed reactive flow at the interface transformer's HV terminal (HV -> LV positive).
inline double interface_q(const PowerFlowSolution& sol, const InterfaceSpec& ifc) {
    return sol.branch(ifc.transformer_id).s_from.imag();
}
inline double interface_p(const PowerFlowSolution& sol, const InterfaceSpec& ifc) {
    return sol.branch(ifc.transformer_id).s_from.real();
}

struct SensitivityMatrices {
    std::vector<std::string> asset_ids;
    std::vector<std::string> bus_ids;  // all buses; slack rows are zero
    Eigen::MatrixXd dv_dq;             // bus voltage magnitude per asset Q injection
    Eigen::RowVectorXd dqif_dq;        // interface Q per asset Q injection
    std::vector<std::string> tap_ids;
    Eigen::MatrixXd dv_dtap;  // secant over one tap step
    Eigen::RowVectorXd dqif_dtap;
};

// Jacobian-based injection sensitivities at a converged solution; tap columns
// by exact one-step re-solve (taps are discrete, the secant is what matters).
inline SensitivityMatrices sensitivities(const Network& net, const PowerFlowSolution& sol,
                                         const InterfaceSpec& ifc, const TapVector& taps,
                                         std::vector<std::string> asset_ids = {},
                                         std::vector<std::string> tap_ids = {}) {
    if (asset_ids.empty()) asset_ids = ifc.controllable_assets;
    if (tap_ids.empty()) tap_ids = ifc.downstream_tap_changers;

    AdmittanceModel m = build_admittance(net, taps);
    const int n = static_cast<int>(net.buses.size());
    std::vector<int> pq;
    int slack = 0;
    for (int i = 0; i < n; ++i)
        if (net.buses[i].kind == BusKind::slack) slack = i;
    for (int i = 0; i < n; ++i)
        if (i != slack) pq.push_back(i);
    const int k = static_cast<int>(pq.size());
    std::map<int, int> pq_row;
    for (int r = 0; r < k; ++r) pq_row[pq[r]] = r;

    Eigen::VectorXd vm(n), va(n);
    for (int i = 0; i < n; ++i) {
        vm(i) = sol.vm[i];
        va(i) = sol.va[i];
    }
    Eigen::MatrixXd jac = pf_detail::jacobian(m.ybus, vm, va, pq);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);

    // Gradient of the interface HV-side Q flow w.r.t. the state (va_pq, vm_pq).
    const AdmittanceModel::Branch* br = nullptr;
    for (const auto& b : m.branches)
        if (b.id == ifc.transformer_id) br = &b;
    if (!br) throw Error("interface transformer '" + ifc.transformer_id + "' not found");
    std::complex<double> uh = std::polar(vm(br->f), va(br->f));
    std::complex<double> ul = std::polar(vm(br->t), va(br->t));
    std::complex<double> ih = br->yff * uh + br->yft * ul;
    std::complex<double> j(0, 1);
    std::complex<double> dS_dth = j * uh * std::conj(ih) - j * uh * std::conj(br->yff * uh);
    std::complex<double> dS_dvh = (uh * std::conj(ih) + uh * std::conj(br->yff * uh)) / vm(br->f);
    std::complex<double> dS_dtl = -j * uh * std::conj(br->yft * ul);
    std::complex<double> dS_dvl = uh * std::conj(br->yft * ul) / vm(br->t);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(2 * k);
    if (pq_row.count(br->f)) {
        grad(pq_row[br->f]) = dS_dth.imag();
        grad(k + pq_row[br->f]) = dS_dvh.imag();
    }
    if (pq_row.count(br->t)) {
        grad(pq_row[br->t]) = dS_dtl.imag();
        grad(k + pq_row[br->t]) = dS_dvl.imag();
    }

    SensitivityMatrices sm;
    sm.asset_ids = asset_ids;
    sm.bus_ids = sol.bus_ids;
    sm.tap_ids = tap_ids;
    const int na = static_cast<int>(asset_ids.size());
    sm.dv_dq = Eigen::MatrixXd::Zero(n, na);
    sm.dqif_dq = Eigen::RowVectorXd::Zero(na);
    for (int c = 0; c < na; ++c) {
        const Asset* a = net.find_asset(asset_ids[c]);
        if (!a) throw Error("unknown asset '" + asset_ids[c] + "'");
        int b = m.bus_index.at(a->bus);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * k);
        if (pq_row.count(b)) rhs(k + pq_row[b]) = 1.0;  // unit Q injection increase
        Eigen::VectorXd dx = lu.solve(rhs);
        if (!dx.allFinite()) throw SingularJacobian("singular Jacobian in sensitivity solve");
        for (int r = 0; r < k; ++r) sm.dv_dq(pq[r], c) = dx(k + r);
        sm.dqif_dq(c) = grad.dot(dx);
    }

    const int nt = static_cast<int>(tap_ids.size());
    sm.dv_dtap = Eigen::MatrixXd::Zero(n, nt);
    sm.dqif_dtap = Eigen::RowVectorXd::Zero(nt);
    double qif0 = interface_q(sol, ifc);
    for (int c = 0; c < nt; ++c) {
        const Transformer* tx = net.find_transformer(tap_ids[c]);
        if (!tx || !tx->tap) throw Error("'" + tap_ids[c] + "' has no tap changer");
        int pos = tap_position_of(net, *tx, taps);
        int dir = pos < tx->tap->pos_max ? 1 : -1;
        TapVector moved = taps;
        moved[tx->id] = pos + dir;
        PowerFlowOptions o;
        o.flat_start = false;
        o.initial_vm = &sol.vm;
        o.initial_va = &sol.va;
        PowerFlowSolution shifted = solve_power_flow(net, sol.dispatch, moved, o);
        for (int i = 0; i < n; ++i) sm.dv_dtap(i, c) = (shifted.vm[i] - sol.vm[i]) / dir;
        sm.dqif_dtap(c) = (interface_q(shifted, ifc) - qif0) / dir;
    }
    return sm;
}

// Cross-checks branch flows against the specified injections bus by bus:
// at every non-slack bus the branch terms must sum to the dispatched S, and at
// the slack bus to the reported slack injection. ~0 on a converged case.
inline double power_balance_residual(const Network& net, const PowerFlowSolution& sol) {
    std::map<std::string, std::complex<double>> into_grid;
    for (const auto& bf : sol.branch_flows) {
        into_grid[bf.from_bus] += bf.s_from;
        into_grid[bf.to_bus] += bf.s_to;
    }
    std::map<std::string, std::complex<double>> spec;
    for (const auto& a : net.assets) {
        auto it = sol.dispatch.find(a.id);
        if (it != sol.dispatch.end())
            spec[a.bus] += std::complex<double>(it->second.p, it->second.q);
    }
    double worst = 0.0;
    for (const auto& b : net.buses) {
        std::complex<double> inj =
            b.kind == BusKind::slack ? sol.slack_injection : spec[b.id];
        worst = std::max(worst, std::abs(inj - into_grid[b.id]));
    }
    return worst;
}

}  // namespace voltcoord
