#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace voltcoord;

namespace {

Message heartbeat(int seq_hint = 0) {
    Message m;
    m.kind = MsgKind::Heartbeat;
    m.sender = "central";
    m.receiver = "edge_T";
    m.seq = 100 + seq_hint;
    return m;
}

Message command(double q_target, int valid_until, uint64_t seq) {
    Message m;
    m.kind = MsgKind::SetpointCommand;
    m.sender = "central";
    m.receiver = "edge_T";
    m.seq = seq;
    m.payload = {{"q_if_target", q_target}, {"valid_until", valid_until}};
    return m;
}

}  // namespace

TEST_CASE("upstream clamp") {
    FlexReportData rep{-0.3, 0.5, true};
    CHECK(upstream_clamp_target(rep, 0.2) == 0.2);
    CHECK(upstream_clamp_target(rep, 0.9) == 0.5);
    CHECK(upstream_clamp_target(rep, -1.0) == -0.3);
}

TEST_CASE("upstream withholds the target on an infeasible report") {
    SimBus bus(1);
    bus.add_duplex_link("central", "upstream", 0, 0.0);
    UpstreamController up;
    up.set_request(0.4);
    Message rep;
    rep.kind = MsgKind::FlexibilityReport;
    rep.sender = "central";
    rep.receiver = "upstream";
    rep.payload = {{"q_min", 0.0}, {"q_max", 0.0}, {"feasible", false}};
    up.on_message(rep, bus, 3);
    CHECK(up.alarms() == 1);
    CHECK(bus.deliver_due(10).empty());  // no QTarget sent

    rep.payload["feasible"] = true;
    rep.payload["q_max"] = 0.25;
    up.on_message(rep, bus, 4);
    auto due = bus.deliver_due(4);
    REQUIRE(due.size() == 1);
    CHECK(due[0].kind == MsgKind::QTarget);
    CHECK(due[0].payload.at("q_target").get<double>() == 0.25);
}

TEST_CASE("edge enters fallback exactly after the missed-heartbeat threshold") {
    EdgeAgent edge("edge_T", "T");
    Message hb = heartbeat();
    edge.on_message(hb, 10);  // last delivery at t=10
    edge.on_message(command(0.1, 12, 1), 10);
    CHECK(edge.update_mode(10) == Mode::coordinated);
    CHECK(edge.update_mode(11) == Mode::coordinated);
    CHECK(edge.update_mode(12) == Mode::coordinated);
    CHECK(edge.update_mode(13) == Mode::fallback);  // 3 periods after the last delivery
}

TEST_CASE("heartbeats alone never restore coordinated mode") {
    EdgeAgent edge("edge_T", "T");
    edge.on_message(heartbeat(), 0);
    edge.on_message(command(0.1, 2, 1), 0);
    CHECK(edge.update_mode(0) == Mode::coordinated);
    // heartbeats stop, fallback at t=3
    CHECK(edge.update_mode(3) == Mode::fallback);
    // heartbeats resume without a fresh command: stays fallback
    edge.on_message(heartbeat(1), 8);
    CHECK(edge.update_mode(8) == Mode::fallback);
    // a fresh command restores coordination
    edge.on_message(command(0.2, 10, 2), 8);
    CHECK(edge.update_mode(8) == Mode::coordinated);
}

TEST_CASE("continuous heartbeats keep the edge coordinated indefinitely") {
    EdgeAgent edge("edge_T", "T");
    for (int t = 0; t < 30; ++t) {
        edge.on_message(heartbeat(t), t);
        edge.on_message(command(0.0, t + defaults::target_validity_cycles, t + 1), t);
        CHECK(edge.update_mode(t) == Mode::coordinated);
    }
}

TEST_CASE("re-delivered and stale commands are ignored") {
    EdgeAgent edge("edge_T", "T");
    edge.on_message(heartbeat(), 0);
    edge.on_message(command(0.5, 2, 5), 0);
    REQUIRE(edge.command());
    CHECK(edge.command()->q_if_target == 0.5);
    // duplicate seq: no change
    edge.on_message(command(0.9, 4, 5), 1);
    CHECK(edge.command()->q_if_target == 0.5);
    // lower seq: no change
    edge.on_message(command(0.7, 4, 3), 1);
    CHECK(edge.command()->q_if_target == 0.5);
    // newer seq wins
    edge.on_message(command(0.8, 4, 6), 1);
    CHECK(edge.command()->q_if_target == 0.8);
}

TEST_CASE("edge cascade meets its command and reports the residual gap") {
    std::mt19937_64 rng(51);
    Network net = testing::two_substation_net(rng, /*sub_tap=*/true);
    const Transformer* tx = net.find_transformer("T_SA");
    CoupledSolution base = coupled_power_flow(net);
    double boundary_vm = base.sol.vmag(tx->hv_bus);
    double q0 = base.sol.branch("T_SA").s_from.imag();

    SECTION("command equal to the current flow changes nothing") {
        EdgeAction act = edge_cascade(net, "T_SA", q0, boundary_vm);
        CHECK(std::abs(act.deviation) <= 1e-6);
        if (!act.taps.empty()) CHECK(act.taps.at("T_SA") == tx->tap->position);
    }

    SECTION("an achievable command is tracked locally") {
        const Asset* der = net.find_asset("DERA");
        double shift = 0.6 * der->q_max;
        EdgeAction act = edge_cascade(net, "T_SA", q0 + shift, boundary_vm);
        CHECK(act.ran_cascade);
        CHECK(std::abs(act.deviation) <= 0.001);
    }

    SECTION("an impossible command yields the closest point and a positive gap") {
        EdgeAction act = edge_cascade(net, "T_SA", q0 + 1.0, boundary_vm);  // far outside
        CHECK(std::abs(act.deviation) > 0.5);
    }
}

TEST_CASE("edge cascade matches a local oracle over tap and q grid") {
    std::mt19937_64 rng(53);
    Network net = testing::two_substation_net(rng, /*sub_tap=*/true);
    const Transformer* tx = net.find_transformer("T_SA");
    CoupledSolution base = coupled_power_flow(net);
    double boundary_vm = base.sol.vmag(tx->hv_bus);
    double q0 = base.sol.branch("T_SA").s_from.imag();
    const Asset* der = net.find_asset("DERA");
    double q_cmd = q0 + 0.8 * der->q_max;

    EdgeAction act = edge_cascade(net, "T_SA", q_cmd, boundary_vm);

    // local oracle: enumerate tap in {-1,0,1} x q grid on the LV subtree
    Network lv = extract_subtree(net, "T_SA", boundary_vm);
    InterfaceSpec ifc = interface_of(lv, "T_SA");
    ConstraintSet cs = ConstraintSet::from_network(lv, ifc);
    double best = 1e9;
    for (int pos : {-1, 0, 1}) {
        Network lv_c = lv;
        lv_c.find_transformer("T_SA")->tap->position = pos;
        for (int i = 0; i <= 40; ++i) {
            double q = der->q_min + (der->q_max - der->q_min) * i / 40.0;
            Overrides ov;
            ov["DERA"].q = q;
            try {
                CoupledSolution cs_sol = coupled_power_flow(lv_c, ov);
                if (!check_constraints(cs_sol.sol, cs).empty()) continue;
                best = std::min(best, std::abs(interface_q(cs_sol.sol, ifc) - q_cmd));
            } catch (const Error&) {
            }
        }
    }
    CHECK(std::abs(act.deviation) <= best + 0.001);
}

TEST_CASE("central flexibility assessment and stale-data handling") {
    std::mt19937_64 rng(57);
    Network net = testing::two_substation_net(rng);
    CentralController central("central", &net, "T_HVMV");
    auto edge_nodes = central.edge_nodes();
    REQUIRE(edge_nodes.size() == 2);

    // no measurements at all -> stale
    CHECK_FALSE(central.assess_flexibility(net, 10).has_value());
    CHECK_FALSE(central.stale_log().empty());

    // fresh measurement reports enable the assessment
    CoupledSolution base = coupled_power_flow(net);
    for (const auto& node : edge_nodes) {
        std::string tid = node.substr(5);
        Message m;
        m.kind = MsgKind::MeasurementReport;
        m.sender = node;
        m.receiver = "central";
        const Transformer* tx = net.find_transformer(tid);
        nlohmann::ordered_json asset_p = nlohmann::ordered_json::object();
        for (const auto& aid : interface_of(net, tid).downstream_assets)
            asset_p[aid] = net.find_asset(aid)->p;
        m.payload = {{"transformer", tid},
                     {"boundary_vm", base.sol.vmag(tx->hv_bus)},
                     {"q_if", base.sol.branch(tid).s_from.imag()},
                     {"p_if", base.sol.branch(tid).s_from.real()},
                     {"tap_position", 0},
                     {"asset_p", asset_p}};
        central.on_message(m, 11);
    }
    auto rep = central.assess_flexibility(net, 11);
    REQUIRE(rep.has_value());
    CHECK(rep->feasible);
    CHECK(rep->q_min < rep->q_max);

    // a QTarget turns into commands for both substations
    Message tgt;
    tgt.kind = MsgKind::QTarget;
    tgt.sender = "upstream";
    tgt.receiver = "central";
    tgt.payload = {{"q_target", (rep->q_min + rep->q_max) / 2}, {"valid_until", 13}};
    central.on_message(tgt, 11);
    auto cmds = central.dispatch_target(11);
    REQUIRE(cmds.has_value());
    CHECK_FALSE(cmds->fallback_directive);
    CHECK(cmds->edge_targets.size() == 2);
}

TEST_CASE("stale substations are excluded and their share reallocated") {
    std::mt19937_64 rng(59);
    Network net = testing::two_substation_net(rng);
    CentralController central("central", &net, "T_HVMV");
    CoupledSolution base = coupled_power_flow(net);
    auto report = [&](const std::string& node, int now) {
        std::string tid = node.substr(5);
        Message m;
        m.kind = MsgKind::MeasurementReport;
        m.sender = node;
        m.receiver = "central";
        const Transformer* tx = net.find_transformer(tid);
        nlohmann::ordered_json asset_p = nlohmann::ordered_json::object();
        for (const auto& aid : interface_of(net, tid).downstream_assets)
            asset_p[aid] = net.find_asset(aid)->p;
        m.payload = {{"transformer", tid},
                     {"boundary_vm", base.sol.vmag(tx->hv_bus)},
                     {"q_if", base.sol.branch(tid).s_from.imag()},
                     {"p_if", base.sol.branch(tid).s_from.real()},
                     {"tap_position", 0},
                     {"asset_p", asset_p}};
        central.on_message(m, now);
    };
    // only substation B reports recently; A is stale
    report("edge_T_SA", 0);
    report("edge_T_SB", 10);
    auto rep = central.assess_flexibility(net, 10);
    REQUIRE(rep.has_value());

    Message tgt;
    tgt.kind = MsgKind::QTarget;
    tgt.sender = "upstream";
    tgt.receiver = "central";
    tgt.payload = {{"q_target", rep->q_max}, {"valid_until", 12}};
    central.on_message(tgt, 10);
    auto cmds = central.dispatch_target(10);
    REQUIRE(cmds.has_value());
    // the stale substation receives no command; the fresh one does
    CHECK(cmds->edge_targets.count("edge_T_SB") == 1);
    CHECK(cmds->edge_targets.count("edge_T_SA") == 0);
}

TEST_CASE("protocol liveness: a lossless cycle completes within one step") {
    std::mt19937_64 rng(61);
    Network net = testing::two_substation_net(rng);
    auto dir = std::filesystem::temp_directory_path() / "vc_liveness";
    std::filesystem::create_directories(dir);
    save_network(net, (dir / "grid.json").string());
    json sc = {{"grid", "grid.json"},
               {"horizon", 3},
               {"seed", 1},
               {"events", json::array({{{"at", 0}, {"kind", "tso_q_request"}, {"q_mvar", 0.3}}})}};
    std::ofstream f(dir / "sc.json");
    f << sc.dump();
    f.close();
    ResultLog log = run_scenario(load_scenario((dir / "sc.json").string()));
    REQUIRE(log.steps.size() == 3);
    // the request lands at step 0 already: flexibility assessed, target set,
    // commands executed, and the achieved flow within tolerance
    CHECK(log.steps[0].flex_valid);
    REQUIRE(log.steps[0].target.has_value());
    CHECK(std::abs(log.steps[0].deviation) <= 0.005);
}
