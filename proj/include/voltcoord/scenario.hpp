#pragma once

#include <filesystem>
#include <iomanip>
#include <sstream>

#include "voltcoord/coordination.hpp"
#include "voltcoord/grid_io.hpp"

namespace voltcoord {

struct ScenarioEvent {
    enum class Kind { tso_q_request, comm_partition, asset_limit_change, tap_mode_change };
    int at = 0;
    Kind kind = Kind::tso_q_request;

    double q_mvar = 0.0;  // tso_q_request

    std::set<std::string> group_a, group_b;  // comm_partition
    bool group_b_all_edges = false;
    int duration_steps = 0;

    std::string asset_id;  // asset_limit_change (engineering units)
    std::optional<double> q_min_mvar, q_max_mvar, s_max_mva;

    std::string transformer_id;  // tap_mode_change
    TapMode new_mode = TapMode::local;
};

inline const char* to_string(ScenarioEvent::Kind k) {
    switch (k) {
        case ScenarioEvent::Kind::tso_q_request: return "tso_q_request";
        case ScenarioEvent::Kind::comm_partition: return "comm_partition";
        case ScenarioEvent::Kind::asset_limit_change: return "asset_limit_change";
        case ScenarioEvent::Kind::tap_mode_change: return "tap_mode_change";
    }
    return "?";
}

struct ProfilePoint {
    double p = 0.0;  // pu
    std::optional<double> q;
};

// step -> asset -> values
using Profiles = std::map<int, std::map<std::string, ProfilePoint>>;

struct Scenario {
    std::string grid_path;
    int step_minutes = 15;
    int horizon = 0;
    uint64_t seed = 0;
    std::string profile_csv;  // optional
    std::string interface_transformer;  // optional; defaults to the unique HV-side interface
    FallbackPolicy fallback_policy = FallbackPolicy::profiles;
    int comm_latency_steps = 0;
    double comm_drop_probability = 0.0;
    std::map<std::string, std::pair<double, double>> v_bound_overrides;
    std::vector<ScenarioEvent> events;
};

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("scenario file '" + path + "' is not valid JSON: " + std::string(e.what()));
    }
    Scenario sc;
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::string grid = doc.at("grid").get<std::string>();
    sc.grid_path = (base / grid).string();
    sc.step_minutes = doc.value("step_minutes", 15);
    sc.horizon = doc.at("horizon").get<int>();
    sc.seed = doc.value("seed", 0);
    if (doc.contains("profiles") && !doc.at("profiles").is_null())
        sc.profile_csv = (base / doc.at("profiles").get<std::string>()).string();
    sc.interface_transformer = doc.value("interface", std::string{});
    std::string policy = doc.value("fallback_policy", std::string("profiles"));
    if (policy == "profiles")
        sc.fallback_policy = FallbackPolicy::profiles;
    else if (policy == "oltc_local")
        sc.fallback_policy = FallbackPolicy::oltc_local;
    else
        throw Error("scenario: fallback_policy must be 'profiles' or 'oltc_local'");
    if (doc.contains("comms")) {
        sc.comm_latency_steps = doc.at("comms").value("latency_steps", 0);
        sc.comm_drop_probability = doc.at("comms").value("drop_probability", 0.0);
    }
    if (doc.contains("constraints") && doc.at("constraints").contains("v_bounds")) {
        for (const auto& [bid, arr] : doc.at("constraints").at("v_bounds").items())
            sc.v_bound_overrides[bid] = {arr.at(0).get<double>(), arr.at(1).get<double>()};
    }
    if (doc.contains("events")) {
        for (const auto& je : doc.at("events")) {
            ScenarioEvent ev;
            ev.at = je.at("at").get<int>();
            if (ev.at < 0 || ev.at >= sc.horizon)
                throw Error("scenario: event at step " + std::to_string(ev.at) +
                            " outside horizon");
            std::string kind = je.at("kind").get<std::string>();
            if (kind == "tso_q_request") {
                ev.kind = ScenarioEvent::Kind::tso_q_request;
                ev.q_mvar = je.at("q_mvar").get<double>();
            } else if (kind == "comm_partition") {
                ev.kind = ScenarioEvent::Kind::comm_partition;
                for (const auto& n : je.at("group_a")) ev.group_a.insert(n.get<std::string>());
                if (je.at("group_b").is_string() && je.at("group_b") == "all_edges")
                    ev.group_b_all_edges = true;
                else
                    for (const auto& n : je.at("group_b")) ev.group_b.insert(n.get<std::string>());
                ev.duration_steps = je.at("duration_steps").get<int>();
            } else if (kind == "asset_limit_change") {
                ev.kind = ScenarioEvent::Kind::asset_limit_change;
                ev.asset_id = je.at("asset").get<std::string>();
                if (je.contains("q_min_mvar")) ev.q_min_mvar = je.at("q_min_mvar").get<double>();
                if (je.contains("q_max_mvar")) ev.q_max_mvar = je.at("q_max_mvar").get<double>();
                if (je.contains("s_max_mva")) ev.s_max_mva = je.at("s_max_mva").get<double>();
            } else if (kind == "tap_mode_change") {
                ev.kind = ScenarioEvent::Kind::tap_mode_change;
                ev.transformer_id = je.at("transformer").get<std::string>();
                std::string mode = je.at("mode").get<std::string>();
                ev.new_mode = mode == "fixed"      ? TapMode::fixed
                              : mode == "optimized" ? TapMode::optimized
                                                    : TapMode::local;
            } else {
                throw Error("scenario: unknown event kind '" + kind + "'");
            }
            sc.events.push_back(ev);
        }
    }
    return sc;
}

// Profile CSV: step,asset_id,p_mw[,q_mvar]. Assets appearing in the file must
// cover every step of the horizon; absent assets keep their grid-file values.
inline Profiles load_profiles(const std::string& path, const Network& net, int horizon) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open profile file '" + path + "'");
    Profiles prof;
    std::set<std::string> seen_assets;
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (first && line.rfind("step", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::istringstream ls(line);
        std::string f0, f1, f2, f3;
        std::getline(ls, f0, ',');
        std::getline(ls, f1, ',');
        std::getline(ls, f2, ',');
        bool has_q = static_cast<bool>(std::getline(ls, f3, ','));
        int step = std::stoi(f0);
        if (step < 0 || step >= horizon)
            throw Error("profile line " + std::to_string(lineno) + ": step outside horizon");
        if (!net.find_asset(f1))
            throw Error("profile line " + std::to_string(lineno) + ": unknown asset '" + f1 + "'");
        ProfilePoint pt;
        pt.p = std::stod(f2) / net.s_base;
        if (has_q && !f3.empty()) pt.q = std::stod(f3) / net.s_base;
        prof[step][f1] = pt;
        seen_assets.insert(f1);
    }
    for (const auto& aid : seen_assets)
        for (int t = 0; t < horizon; ++t)
            if (!prof.count(t) || !prof.at(t).count(aid))
                throw Error("profiles do not cover the horizon: asset '" + aid +
                            "' missing at step " + std::to_string(t));
    return prof;
}

struct StepRecord {
    int step = 0;
    bool converged = true;
    std::map<std::string, double> bus_vm;
    std::map<std::string, double> bus_va;
    double interface_q = 0.0;
    double interface_p = 0.0;
    bool flex_valid = false;
    double flex_q_min = 0.0, flex_q_max = 0.0;
    std::optional<double> target;
    double deviation = 0.0;  // target - achieved when a target is active
    std::map<std::string, int> tap_positions;
    std::map<std::string, std::string> modes;  // edge node -> mode
    std::vector<Violation> violations;
    int oltc_iterations = 0;
    bool oltc_oscillation = false;
};

struct EventRecord {
    int step = 0;
    std::string kind;
    std::string detail;
};

struct ResultLog {
    std::vector<StepRecord> steps;
    std::vector<EventRecord> events;
    std::vector<DeliveryRecord> comms;
    std::string interface_transformer;
    uint64_t seed = 0;
};

inline json step_to_json(const StepRecord& r) {
    json j;
    j["step"] = r.step;
    j["converged"] = r.converged;
    j["bus_vm"] = json::object();
    for (const auto& [b, v] : r.bus_vm) j["bus_vm"][b] = v;
    j["bus_va"] = json::object();
    for (const auto& [b, v] : r.bus_va) j["bus_va"][b] = v;
    j["interface_q"] = r.interface_q;
    j["interface_p"] = r.interface_p;
    j["flex_valid"] = r.flex_valid;
    j["flex_q_min"] = r.flex_q_min;
    j["flex_q_max"] = r.flex_q_max;
    if (r.target)
        j["target"] = *r.target;
    else
        j["target"] = nullptr;
    j["deviation"] = r.deviation;
    j["tap_positions"] = json::object();
    for (const auto& [t, p] : r.tap_positions) j["tap_positions"][t] = p;
    j["modes"] = json::object();
    for (const auto& [n, m] : r.modes) j["modes"][n] = m;
    j["violations"] = json::array();
    for (const auto& v : r.violations) {
        const char* kind = v.kind == Violation::Kind::voltage_low    ? "voltage_low"
                           : v.kind == Violation::Kind::voltage_high ? "voltage_high"
                                                                     : "thermal";
        j["violations"].push_back({{"kind", kind},
                                   {"element", v.element},
                                   {"value", v.value},
                                   {"bound", v.bound},
                                   {"magnitude", v.magnitude}});
    }
    j["oltc_iterations"] = r.oltc_iterations;
    j["oltc_oscillation"] = r.oltc_oscillation;
    return j;
}

namespace scenario_detail {

inline void route(const std::vector<Message>& msgs, UpstreamController& up,
                  CentralController& central, std::map<std::string, EdgeAgent>& edges,
                  std::vector<Message>& field_inbox, SimBus& bus, int now) {
    for (const auto& m : msgs) {
        if (m.receiver == "upstream")
            up.on_message(m, bus, now);
        else if (m.receiver == "central")
            central.on_message(m, now);
        else if (m.receiver == "field_mv")
            field_inbox.push_back(m);
        else if (auto it = edges.find(m.receiver); it != edges.end())
            it->second.on_message(m, now);
    }
}

}  // namespace scenario_detail

// Quasi-static time-series run. Within-step ordering is fixed: events and
// profiles, message delivery and controller logic (several bus pumps so a
// zero-latency cycle completes inside the step), actuation, physics with the
// OLTC automata driven to quiescence, recording.
inline ResultLog run_scenario(const Scenario& sc) {
    Network net0 = load_network(sc.grid_path);
    Network net_now = net0;
    for (const auto& [bid, bounds] : sc.v_bound_overrides) {
        bool found = false;
        for (auto& b : net_now.buses)
            if (b.id == bid) {
                b.v_min = bounds.first;
                b.v_max = bounds.second;
                found = true;
            }
        if (!found) throw Error("constraint override names unknown bus '" + bid + "'");
    }

    // Interface selection: explicit, or the unique interface with an HV bus.
    std::string hvmv_id = sc.interface_transformer;
    if (hvmv_id.empty()) {
        for (const auto& t : net_now.transformers) {
            const Bus* hv = net_now.find_bus(t.hv_bus);
            if (t.is_interface && hv && hv->level == VoltageLevel::HV) {
                if (!hvmv_id.empty())
                    throw Error("multiple HV-side interfaces; set \"interface\" in the scenario");
                hvmv_id = t.id;
            }
        }
        if (hvmv_id.empty()) throw Error("no HV-side interface transformer found");
    }

    Profiles profiles;
    if (!sc.profile_csv.empty()) profiles = load_profiles(sc.profile_csv, net_now, sc.horizon);

    SimBus bus(sc.seed);
    UpstreamController upstream;
    CentralController central("central", &net0, hvmv_id);
    std::map<std::string, EdgeAgent> edges;
    for (const auto& node : central.edge_nodes()) {
        std::string tid = node.substr(5);
        edges.emplace(node, EdgeAgent(node, tid));
        bus.add_duplex_link("central", node, sc.comm_latency_steps, sc.comm_drop_probability);
    }
    bus.add_duplex_link("central", "upstream", sc.comm_latency_steps, sc.comm_drop_probability);
    bus.add_duplex_link("central", "field_mv", sc.comm_latency_steps, sc.comm_drop_probability);

    InterfaceSpec hvmv_ifc = interface_of(net_now, hvmv_id);
    std::map<std::string, InterfaceSpec> edge_ifcs;
    for (const auto& [node, agent] : edges)
        edge_ifcs[node] = interface_of(net_now, agent.transformer_id());

    std::map<std::string, OltcState> oltc_states;
    for (const auto& t : net_now.transformers)
        if (t.tap) oltc_states[t.id] = OltcState{t.tap->position, 0, false};

    ResultLog log;
    log.interface_transformer = hvmv_id;
    log.seed = sc.seed;

    // Initial measured state before the first step.
    CoupledSolution last_physics = coupled_power_flow(net_now, {}, {});

    std::map<std::string, double> mv_overrides;  // from field_mv commands
    int mv_overrides_valid_until = -1;

    for (int t = 0; t < sc.horizon; ++t) {
        // 1. events
        for (const auto& ev : sc.events) {
            if (ev.at != t) continue;
            EventRecord rec{t, to_string(ev.kind), ""};
            switch (ev.kind) {
                case ScenarioEvent::Kind::tso_q_request:
                    upstream.set_request(ev.q_mvar / net_now.s_base);
                    rec.detail = std::to_string(ev.q_mvar) + " MVar";
                    break;
                case ScenarioEvent::Kind::comm_partition: {
                    std::set<std::string> b = ev.group_b;
                    if (ev.group_b_all_edges)
                        for (const auto& [node, agent] : edges) {
                            (void)agent;
                            b.insert(node);
                        }
                    bus.partition(ev.group_a, b, t, t + ev.duration_steps);
                    rec.detail = std::to_string(ev.duration_steps) + " steps";
                    break;
                }
                case ScenarioEvent::Kind::asset_limit_change: {
                    Asset* a = net_now.find_asset(ev.asset_id);
                    if (!a) throw Error("event names unknown asset '" + ev.asset_id + "'");
                    if (ev.q_min_mvar) a->q_min = *ev.q_min_mvar / net_now.s_base;
                    if (ev.q_max_mvar) a->q_max = *ev.q_max_mvar / net_now.s_base;
                    if (ev.s_max_mva) a->s_max = *ev.s_max_mva / net_now.s_base;
                    rec.detail = ev.asset_id;
                    break;
                }
                case ScenarioEvent::Kind::tap_mode_change: {
                    Transformer* tx = net_now.find_transformer(ev.transformer_id);
                    if (!tx || !tx->tap)
                        throw Error("event names unknown tap changer '" + ev.transformer_id + "'");
                    tx->tap->mode = ev.new_mode;
                    rec.detail = ev.transformer_id + " -> " + to_string(ev.new_mode);
                    break;
                }
            }
            log.events.push_back(rec);
        }

        // 2. profiles
        if (auto it = profiles.find(t); it != profiles.end()) {
            for (const auto& [aid, pt] : it->second) {
                Asset* a = net_now.find_asset(aid);
                a->p = pt.p;
                if (pt.q) a->control = DirectSetpoint{*pt.q};
            }
        }

        // 3. controller cascade with intra-step bus pumps
        std::vector<Message> field_inbox;
        auto pump = [&]() {
            scenario_detail::route(bus.deliver_due(t), upstream, central, edges, field_inbox, bus,
                                   t);
        };
        pump();
        central.send_heartbeats(bus, t);
        for (auto& [node, agent] : edges) {
            const InterfaceSpec& ifc = edge_ifcs.at(node);
            const Transformer* tx = net_now.find_transformer(agent.transformer_id());
            Message m;
            m.kind = MsgKind::MeasurementReport;
            m.sender = node;
            m.receiver = "central";
            nlohmann::ordered_json asset_p = nlohmann::ordered_json::object();
            for (const auto& aid : ifc.downstream_assets)
                asset_p[aid] = net_now.find_asset(aid)->p;
            m.payload = {{"transformer", agent.transformer_id()},
                         {"boundary_vm", last_physics.sol.vmag(tx->hv_bus)},
                         {"q_if", last_physics.sol.branch(tx->id).s_from.imag()},
                         {"p_if", last_physics.sol.branch(tx->id).s_from.real()},
                         {"tap_position", tx->tap ? tx->tap->position : 0},
                         {"asset_p", asset_p}};
            bus.send(std::move(m), t);
        }
        pump();
        central.assess_flexibility(net_now, t);
        central.publish_report(bus, "upstream", t);
        pump();  // upstream responds inside route()
        pump();  // central receives the QTarget
        if (auto cmds = central.dispatch_target(t)) central.send_commands(bus, *cmds, "field_mv", t);
        pump();

        // field_mv applies MV commands on delivery
        for (const auto& m : field_inbox) {
            if (m.kind != MsgKind::SetpointCommand) continue;
            mv_overrides.clear();
            for (const auto& [aid, q] : m.payload.at("q_setpoints").items())
                mv_overrides[aid] = q.get<double>();
            for (const auto& [tid, pos] : m.payload.at("taps").items()) {
                Transformer* tx = net_now.find_transformer(tid);
                if (tx && tx->tap) {
                    tx->tap->position = pos.get<int>();
                    oltc_states[tid].position = tx->tap->position;
                    oltc_states[tid].violation_counter = 0;
                }
            }
            mv_overrides_valid_until = m.payload.at("valid_until").get<int>();
        }
        if (t > mv_overrides_valid_until) mv_overrides.clear();

        // 4. edge actions and actuation
        Overrides step_overrides;
        for (const auto& [aid, q] : mv_overrides) step_overrides[aid].q = q;
        std::set<std::string> taps_reverted_to_local;
        std::map<std::string, std::string> modes;
        for (auto& [node, agent] : edges) {
            const InterfaceSpec& ifc = edge_ifcs.at(node);
            const Transformer* tx = net_now.find_transformer(agent.transformer_id());
            EdgeMeasurements meas;
            meas.boundary_vm = last_physics.sol.vmag(tx->hv_bus);
            meas.q_if = last_physics.sol.branch(tx->id).s_from.imag();
            meas.p_if = last_physics.sol.branch(tx->id).s_from.real();
            meas.tap_position = tx->tap ? tx->tap->position : 0;
            for (const auto& aid : ifc.downstream_assets)
                meas.asset_p[aid] = net_now.find_asset(aid)->p;
            for (const auto& bid : ifc.downstream_buses)
                meas.bus_vm[bid] = last_physics.sol.vmag(bid);

            EdgeAction action = agent.act(net_now, meas, t, sc.fallback_policy);
            modes[node] = to_string(agent.mode());
            for (const auto& [tid, pos] : action.taps) {
                Transformer* txm = net_now.find_transformer(tid);
                if (txm && txm->tap && txm->tap->position != pos) {
                    txm->tap->position = pos;
                    oltc_states[tid].position = pos;
                    oltc_states[tid].violation_counter = 0;
                }
            }
            for (const auto& [aid, q] : action.q_overrides) step_overrides[aid].q = q;
            if (action.tap_to_local_automaton && tx->tap)
                taps_reverted_to_local.insert(tx->id);
        }

        // 5. physics with OLTC quiescence
        StepRecord rec;
        rec.step = t;
        bool solved = false;
        std::set<std::vector<int>> visited_tap_vectors;
        int oltc_iter = 0;
        for (; oltc_iter < defaults::oltc_quiescence_limit; ++oltc_iter) {
            try {
                last_physics = coupled_power_flow(net_now, step_overrides, {});
                solved = true;
            } catch (const Error&) {
                solved = false;
                break;
            }
            std::vector<int> tap_vec;
            for (const auto& tx : net_now.transformers)
                if (tx.tap) tap_vec.push_back(tx.tap->position);
            if (!visited_tap_vectors.insert(tap_vec).second) {
                rec.oltc_oscillation = true;
                break;
            }
            bool changed = false;
            for (auto& tx : net_now.transformers) {
                if (!tx.tap) continue;
                bool local = tx.tap->mode == TapMode::local || taps_reverted_to_local.count(tx.id);
                if (!local) continue;
                auto [next, delta] =
                    oltc_step(oltc_states[tx.id], *tx.tap, last_physics.sol.vmag(tx.lv_bus));
                oltc_states[tx.id] = next;
                if (delta != 0) {
                    tx.tap->position = next.position;
                    changed = true;
                }
            }
            if (!changed) break;
        }
        rec.oltc_iterations = oltc_iter + 1;

        // 6. recording
        rec.converged = solved;
        if (solved) {
            for (size_t i = 0; i < last_physics.sol.bus_ids.size(); ++i) {
                rec.bus_vm[last_physics.sol.bus_ids[i]] = last_physics.sol.vm[i];
                rec.bus_va[last_physics.sol.bus_ids[i]] = last_physics.sol.va[i];
            }
            rec.interface_q = interface_q(last_physics.sol, hvmv_ifc);
            rec.interface_p = interface_p(last_physics.sol, hvmv_ifc);
            ConstraintSet cs_now = ConstraintSet::from_network(net_now, hvmv_ifc);
            rec.violations = check_constraints(last_physics.sol, cs_now);
        }
        if (central.last_report()) {
            rec.flex_valid = central.last_report()->feasible;
            rec.flex_q_min = central.last_report()->q_min;
            rec.flex_q_max = central.last_report()->q_max;
        }
        if (auto tgt = central.active_target(t)) {
            rec.target = *tgt;
            rec.deviation = *tgt - rec.interface_q;
        }
        for (const auto& tx : net_now.transformers)
            if (tx.tap) rec.tap_positions[tx.id] = tx.tap->position;
        rec.modes = modes;
        log.steps.push_back(rec);
    }

    log.comms = bus.delivery_log();
    return log;
}

// --------------------------------------------------------------------------
// Result emission
// --------------------------------------------------------------------------

inline json summarize(const ResultLog& log) {
    json s;
    s["steps"] = log.steps.size();
    s["seed"] = log.seed;
    s["interface"] = log.interface_transformer;
    size_t violations = 0;
    int nonconverged = 0;
    double max_abs_dev = 0.0;
    int fallback_edge_steps = 0;
    bool oscillated = false;
    double width_sum = 0.0;
    int width_count = 0;
    for (const auto& r : log.steps) {
        violations += r.violations.size();
        if (!r.converged) ++nonconverged;
        if (r.target) max_abs_dev = std::max(max_abs_dev, std::abs(r.deviation));
        for (const auto& [n, m] : r.modes)
            if (m == "fallback") {
                (void)n;
                ++fallback_edge_steps;
            }
        if (r.oltc_oscillation) oscillated = true;
        if (r.flex_valid) {
            width_sum += r.flex_q_max - r.flex_q_min;
            ++width_count;
        }
    }
    s["violation_count"] = violations;
    s["nonconverged_steps"] = nonconverged;
    s["max_abs_deviation"] = max_abs_dev;
    s["fallback_edge_steps"] = fallback_edge_steps;
    s["oltc_oscillation"] = oscillated;
    s["mean_flex_width"] = width_count ? width_sum / width_count : 0.0;
    size_t dropped = 0;
    for (const auto& c : log.comms)
        if (c.t_delivered < 0) ++dropped;
    s["messages_sent"] = log.comms.size();
    s["messages_dropped"] = dropped;
    if (!log.steps.empty()) {
        s["final_tap_positions"] = json::object();
        for (const auto& [tid, pos] : log.steps.back().tap_positions)
            s["final_tap_positions"][tid] = pos;
    }
    return s;
}

enum class ResultFormat { csv, json_lines };

inline void emit_results(const ResultLog& log, ResultFormat format, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::filesystem::path dir(out_dir);

    if (format == ResultFormat::json_lines) {
        std::ofstream f(dir / "timeseries.jsonl");
        if (!f) throw Error("cannot write timeseries.jsonl");
        for (const auto& r : log.steps) f << step_to_json(r).dump() << "\n";
    } else {
        std::ofstream f(dir / "timeseries.csv");
        if (!f) throw Error("cannot write timeseries.csv");
        f << "step,group,id,value\n";
        f << std::setprecision(12);
        for (const auto& r : log.steps) {
            f << r.step << ",converged,," << (r.converged ? 1 : 0) << "\n";
            for (const auto& [b, v] : r.bus_vm) f << r.step << ",voltage," << b << "," << v << "\n";
            f << r.step << ",interface,q_if," << r.interface_q << "\n";
            f << r.step << ",interface,p_if," << r.interface_p << "\n";
            if (r.flex_valid) {
                f << r.step << ",flex,q_min," << r.flex_q_min << "\n";
                f << r.step << ",flex,q_max," << r.flex_q_max << "\n";
            }
            if (r.target) {
                f << r.step << ",target,q_target," << *r.target << "\n";
                f << r.step << ",target,deviation," << r.deviation << "\n";
            }
            for (const auto& [tid, pos] : r.tap_positions)
                f << r.step << ",tap," << tid << "," << pos << "\n";
            for (const auto& [node, mode] : r.modes)
                f << r.step << ",mode," << node << "," << (mode == "fallback" ? 1 : 0) << "\n";
            for (const auto& v : r.violations)
                f << r.step << ",violation," << v.element << "," << v.magnitude << "\n";
        }
    }

    {
        std::ofstream f(dir / "events.csv");
        f << "step,kind,detail\n";
        for (const auto& e : log.events) f << e.step << "," << e.kind << "," << e.detail << "\n";
    }
    {
        std::ofstream f(dir / "comms.csv");
        f << "t_sent,t_delivered,kind,from,to,seq\n";
        for (const auto& r : log.comms) {
            f << r.t_sent << ",";
            if (r.t_delivered < 0)
                f << "DROPPED";
            else
                f << r.t_delivered;
            f << "," << to_string(r.kind) << "," << r.from << "," << r.to << "," << r.seq << "\n";
        }
    }
    {
        std::ofstream f(dir / "summary.json");
        f << summarize(log).dump(2) << "\n";
    }
}

}  // namespace voltcoord
