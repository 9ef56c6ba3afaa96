#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace voltcoord;
using voltcoord::testing::two_bus;
using voltcoord::testing::two_bus_tx;
using voltcoord::testing::two_bus_vm_oracle;

TEST_CASE("admittance of a single line x=0.1") {
    Network net = two_bus(0.0, 0.1, 0.0, 0.0);
    AdmittanceModel m = build_admittance(net);
    REQUIRE(m.ybus.rows() == 2);
    CHECK_THAT(m.ybus(0, 1).imag(), Catch::Matchers::WithinAbs(10.0, 1e-12));
    CHECK_THAT(m.ybus(0, 1).real(), Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(m.ybus(0, 0).imag(), Catch::Matchers::WithinAbs(-10.0, 1e-12));
}

TEST_CASE("tap at neutral equals the fixed-ratio transformer") {
    Network fixed = two_bus_tx(0.1, 0.0, 0.0, false);
    Network tapped = two_bus_tx(0.1, 0.0, 0.0, true, 0);
    AdmittanceModel mf = build_admittance(fixed);
    AdmittanceModel mt = build_admittance(tapped);
    CHECK((mf.ybus - mt.ybus).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("one tap step of 0.025 applies ratio 1.025 on the HV side") {
    Network net = two_bus_tx(0.1, 0.0, 0.0, true, 1);
    AdmittanceModel m = build_admittance(net);
    std::complex<double> y = 1.0 / std::complex<double>(0.0, 0.1);
    double t = 1.025;
    CHECK(std::abs(m.branches[0].yff - y / (t * t)) < 1e-12);
    CHECK(std::abs(m.branches[0].yft + y / t) < 1e-12);
    CHECK(std::abs(m.branches[0].ytt - y) < 1e-12);
    // positions come either from the network or a TapVector override
    AdmittanceModel m2 = build_admittance(two_bus_tx(0.1, 0.0, 0.0, true, 0), {{"T1", 1}});
    CHECK((m.ybus - m2.ybus).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("no-load case is flat and converges immediately") {
    Network net = two_bus(0.01, 0.1, 0.0, 0.0);
    net.assets.clear();
    PowerFlowSolution sol = solve_power_flow(net, {});
    CHECK(sol.iterations <= 1);
    for (double v : sol.vm) CHECK_THAT(v, Catch::Matchers::WithinAbs(1.0, 1e-12));
    for (double a : sol.va) CHECK_THAT(a, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("two-bus case matches the closed-form quadratic") {
    const double r = 0.0, x = 0.1, p = 0.5, q = 0.2;
    Network net = two_bus(r, x, p, q);
    Dispatch d{{"LOAD", {-p, -q}}};
    PowerFlowSolution sol = solve_power_flow(net, d);
    double expected = two_bus_vm_oracle(r, x, p, q);
    CHECK_THAT(sol.vmag("B2"), Catch::Matchers::WithinAbs(expected, 1e-6));
    CHECK_THAT(sol.vmag("B2"), Catch::Matchers::WithinAbs(0.9782, 2e-4));
    CHECK(sol.max_mismatch <= 1e-8);

    // with resistance too
    Network net2 = two_bus(0.03, 0.1, 0.4, 0.15);
    PowerFlowSolution sol2 = solve_power_flow(net2, {{"LOAD", {-0.4, -0.15}}});
    CHECK_THAT(sol2.vmag("B2"),
               Catch::Matchers::WithinAbs(two_bus_vm_oracle(0.03, 0.1, 0.4, 0.15), 1e-6));
}

TEST_CASE("absurd loading does not converge") {
    Network net = two_bus(0.0, 0.1, 50.0, 0.0);
    CHECK(std::isnan(two_bus_vm_oracle(0.0, 0.1, 50.0, 0.0)));  // no real root
    CHECK_THROWS_AS(solve_power_flow(net, {{"LOAD", {-50.0, 0.0}}}), NonConvergence);
}

TEST_CASE("interface flow is zero at no load and signed by direction") {
    Network net = two_bus_tx(0.1, 0.0, 0.0);
    InterfaceSpec ifc = interface_of(net, "T1");
    PowerFlowSolution sol = solve_power_flow(net, {{"LOAD", {0.0, 0.0}}});
    CHECK_THAT(interface_q(sol, ifc), Catch::Matchers::WithinAbs(0.0, 1e-9));

    PowerFlowSolution absorb = solve_power_flow(net, {{"LOAD", {0.0, -0.3}}});
    PowerFlowSolution inject = solve_power_flow(net, {{"LOAD", {0.0, 0.3}}});
    CHECK(interface_q(absorb, ifc) > 0.0);  // HV -> LV positive
    CHECK(interface_q(inject, ifc) < 0.0);
    CHECK(interface_q(absorb, ifc) + interface_q(inject, ifc) < 0.05);  // loss asymmetry only
}

TEST_CASE("interface Q equals load Q plus the reactive loss") {
    Network net = two_bus_tx(0.1, 0.5, 0.2);
    InterfaceSpec ifc = interface_of(net, "T1");
    PowerFlowSolution sol = solve_power_flow(net, {{"LOAD", {-0.5, -0.2}}});
    const BranchFlow& bf = sol.branch("T1");
    double q_loss = (bf.s_from + bf.s_to).imag();
    CHECK(q_loss >= 0.0);
    CHECK_THAT(interface_q(sol, ifc), Catch::Matchers::WithinAbs(0.2 + q_loss, 1e-9));
}

TEST_CASE("both-end flows differ exactly by the branch loss, losses nonnegative") {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 5; ++k) {
        Network net = voltcoord::testing::make_random_radial(rng, {.n_load_buses = 8,
                                                                   .n_controllable = 2});
        CoupledSolution cs = coupled_power_flow(net);
        for (const auto& bf : cs.sol.branch_flows) {
            std::complex<double> loss = bf.s_from + bf.s_to;
            CHECK(loss.real() >= -1e-10);
        }
        CHECK(power_balance_residual(net, cs.sol) <= 1e-8);
    }
}

TEST_CASE("Jacobian sensitivities match central finite differences") {
    std::mt19937_64 rng(42);
    for (int k = 0; k < 4; ++k) {
        Network net = voltcoord::testing::make_random_radial(
            rng, {.n_load_buses = 7, .n_controllable = 3});
        InterfaceSpec ifc = interface_of(net, "TIF");
        CoupledSolution base = coupled_power_flow(net);
        SensitivityMatrices sm =
            sensitivities(net, base.sol, ifc, {}, ifc.controllable_assets, {});
        auto fd = voltcoord::testing::fd_sensitivities(net, base.sol, ifc,
                                                       ifc.controllable_assets);
        for (int c = 0; c < sm.dv_dq.cols(); ++c) {
            for (int i = 0; i < sm.dv_dq.rows(); ++i) {
                double a = sm.dv_dq(i, c), b = fd.dv_dq(i, c);
                CHECK(std::abs(a - b) <= 1e-3 * std::max({std::abs(a), std::abs(b), 1e-6}));
            }
            double a = sm.dqif_dq(c), b = fd.dqif_dq(c);
            CHECK(std::abs(a - b) <= 1e-3 * std::max({std::abs(a), std::abs(b), 1e-6}));
        }
    }
}

TEST_CASE("two-bus voltage sensitivity is close to x to first order") {
    Network net_tx = two_bus_tx(0.1, 0.3, 0.1);
    net_tx.assets[0].directly_controllable = true;
    InterfaceSpec ifc = interface_of(net_tx, "T1");
    CoupledSolution base = coupled_power_flow(net_tx);
    SensitivityMatrices sm = sensitivities(net_tx, base.sol, ifc, {}, {"LOAD"}, {});
    double dv = sm.dv_dq(1, 0);
    CHECK(dv > 0.0);
    CHECK_THAT(dv, Catch::Matchers::WithinAbs(0.1, 0.02));  // within 20% of x
}

TEST_CASE("slack-adjacent injection has near-zero voltage sensitivity at the slack") {
    Network net = two_bus_tx(0.1, 0.2, 0.1);
    net.assets[0].directly_controllable = true;
    InterfaceSpec ifc = interface_of(net, "T1");
    CoupledSolution base = coupled_power_flow(net);
    SensitivityMatrices sm = sensitivities(net, base.sol, ifc, {}, {"LOAD"}, {});
    CHECK_THAT(sm.dv_dq(0, 0), Catch::Matchers::WithinAbs(0.0, 1e-12));  // slack row
}

TEST_CASE("tap finite-difference columns match a manual re-solve") {
    Network net = two_bus_tx(0.1, 0.4, 0.15, true, 0);
    InterfaceSpec ifc = interface_of(net, "T1");
    CoupledSolution base = coupled_power_flow(net);
    SensitivityMatrices sm = sensitivities(net, base.sol, ifc, {}, {"LOAD"}, {"T1"});
    PowerFlowSolution shifted = solve_power_flow(net, base.sol.dispatch, {{"T1", 1}});
    // warm vs flat starts land within the Newton tolerance of each other
    CHECK_THAT(sm.dv_dtap(1, 0),
               Catch::Matchers::WithinAbs(shifted.vmag("M") - base.sol.vmag("M"), 1e-9));
    // raising the HV-side ratio lowers the LV-side voltage
    CHECK(sm.dv_dtap(1, 0) < 0.0);
}

TEST_CASE("identical inputs give bit-identical solutions") {
    Network net = two_bus(0.01, 0.08, 0.35, 0.12);
    PowerFlowSolution a = solve_power_flow(net, {{"LOAD", {-0.35, -0.12}}});
    PowerFlowSolution b = solve_power_flow(net, {{"LOAD", {-0.35, -0.12}}});
    REQUIRE(a.vm.size() == b.vm.size());
    for (size_t i = 0; i < a.vm.size(); ++i) {
        CHECK(a.vm[i] == b.vm[i]);
        CHECK(a.va[i] == b.va[i]);
    }
}

TEST_CASE("dispatch must cover every asset and respect capabilities") {
    Network net = two_bus(0.0, 0.1, 0.2, 0.1);
    CHECK_THROWS_WITH(solve_power_flow(net, {}), Catch::Matchers::ContainsSubstring("missing"));
    CHECK_THROWS_WITH(solve_power_flow(net, {{"LOAD", {-0.2, 5.0}}}),
                      Catch::Matchers::ContainsSubstring("q_min"));
}
