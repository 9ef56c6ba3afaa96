#pragma once

#include "voltcoord/comms.hpp"
#include "voltcoord/flex.hpp"

namespace voltcoord {

enum class Mode { coordinated, fallback };

inline const char* to_string(Mode m) {
    return m == Mode::coordinated ? "coordinated" : "fallback";
}

enum class FallbackPolicy { profiles, oltc_local };

struct FlexReportData {
    double q_min = 0.0;
    double q_max = 0.0;
    bool feasible = false;
};

// The HV-side optimisation is out of scope; the upstream controller is a stub
// that clamps the requested Q into the reported aggregate range. Interface is
// complete so a real optimiser can replace it.
inline double upstream_clamp_target(const FlexReportData& report, double tso_request_q) {
    return std::min(std::max(tso_request_q, report.q_min), report.q_max);
}

class UpstreamController {
public:
    explicit UpstreamController(std::string node_id = "upstream") : node_id_(std::move(node_id)) {}

    void set_request(double q) { tso_request_q_ = q; }
    std::optional<double> request() const { return tso_request_q_; }
    int alarms() const { return alarms_; }

    // Emits a QTarget toward the sender of the report once a request exists,
    // unless the report is flagged infeasible, in which case the target is
    // withheld and an alarm counted.
    void on_message(const Message& msg, SimBus& bus, int now) {
        if (msg.kind != MsgKind::FlexibilityReport) return;
        FlexReportData rep{msg.payload.at("q_min").get<double>(),
                           msg.payload.at("q_max").get<double>(),
                           msg.payload.at("feasible").get<bool>()};
        if (!rep.feasible) {
            ++alarms_;
            return;
        }
        if (!tso_request_q_) return;
        Message m;
        m.kind = MsgKind::QTarget;
        m.sender = node_id_;
        m.receiver = msg.sender;
        m.payload = {{"q_target", upstream_clamp_target(rep, *tso_request_q_)},
                     {"valid_until", now + defaults::target_validity_cycles}};
        bus.send(std::move(m), now);
    }

private:
    std::string node_id_;
    std::optional<double> tso_request_q_;
    int alarms_ = 0;
};

struct EdgeMeasurements {
    double boundary_vm = 1.0;  // MV-side voltage at the substation
    double q_if = 0.0, p_if = 0.0;
    int tap_position = 0;
    std::map<std::string, double> asset_p;  // downstream assets
    std::map<std::string, double> bus_vm;   // downstream buses
};

struct EdgeAction {
    TapVector taps;                             // own VRDT, when optimizer-controlled
    std::map<std::string, double> q_overrides;  // LV directly controllable assets
    double deviation = 0.0;                     // |achieved - command| predicted locally
    bool tap_to_local_automaton = false;        // fallback hand-over of the OLTC
    bool ran_cascade = false;
};

// Cascaded local optimisation: search the own tap one step either way and
// re-dispatch the LV controllable assets so the substation meets its Q
// command within local LV constraints. Pure function of its inputs.
inline EdgeAction edge_cascade(const Network& net_now, const std::string& transformer_id,
                               double q_command, double boundary_vm) {
    const Transformer* tx = net_now.find_transformer(transformer_id);
    if (!tx) throw Error("unknown transformer '" + transformer_id + "'");
    Network lv = extract_subtree(net_now, transformer_id, boundary_vm);
    InterfaceSpec ifc = interface_of(lv, transformer_id);
    ConstraintSet cs = ConstraintSet::from_network(lv, ifc);
    cs.decision_taps.clear();  // taps fixed per candidate below

    int pos = tx->tap ? tx->tap->position : 0;
    std::vector<int> candidates{pos};
    if (tx->tap && tx->tap->mode == TapMode::optimized) {
        if (pos - 1 >= tx->tap->pos_min) candidates.push_back(pos - 1);
        if (pos + 1 <= tx->tap->pos_max) candidates.push_back(pos + 1);
    }

    EdgeAction best;
    bool have_best = false;
    for (int cand : candidates) {
        Network lv_c = lv;
        if (lv_c.find_transformer(transformer_id)->tap)
            lv_c.find_transformer(transformer_id)->tap->position = cand;
        try {
            SetpointBundle b = allocate_setpoints(lv_c, ifc, cs, q_command);
            bool better = !have_best || std::abs(b.deviation) < std::abs(best.deviation) - 1e-9 ||
                          (std::abs(std::abs(b.deviation) - std::abs(best.deviation)) <= 1e-9 &&
                           std::abs(cand - pos) < std::abs(best.taps.count(transformer_id)
                                                               ? best.taps.at(transformer_id) - pos
                                                               : 0));
            if (better) {
                best = EdgeAction{};
                if (tx->tap && tx->tap->mode == TapMode::optimized)
                    best.taps[transformer_id] = cand;
                best.q_overrides = b.q_setpoints;
                best.deviation = b.deviation;
                best.ran_cascade = true;
                have_best = true;
            }
        } catch (const InfeasibleError&) {
            continue;
        } catch (const NonConvergence&) {
            continue;
        }
    }
    if (have_best) return best;

    // No candidate admits a feasible dispatch; report the gap from the local
    // fallback laws instead of failing.
    EdgeAction fb;
    fb.ran_cascade = false;
    for (const auto& aid : ifc.controllable_assets) {
        const Asset* a = lv.find_asset(aid);
        fb.q_overrides[aid] = fallback_setpoint(*a, boundary_vm, a->p);
    }
    fb.deviation = q_command;  // nothing achieved toward the command locally
    return fb;
}

struct EdgeCommand {
    double q_if_target = 0.0;
    int valid_until = -1;
    uint64_t seq = 0;
    int rx_at = -1;
    bool fallback_directive = false;
};

// Deterministic edge state machine. Fallback entry after
// `heartbeat_fallback_threshold` missed heartbeat periods; coordinated mode
// requires both a fresh heartbeat and an unexpired command.
class EdgeAgent {
public:
    EdgeAgent() = default;
    EdgeAgent(std::string node_id, std::string transformer_id)
        : node_id_(std::move(node_id)), transformer_id_(std::move(transformer_id)) {}

    const std::string& node_id() const { return node_id_; }
    const std::string& transformer_id() const { return transformer_id_; }
    Mode mode() const { return mode_; }
    int last_heartbeat_rx() const { return last_heartbeat_rx_; }
    const std::optional<EdgeCommand>& command() const { return command_; }

    void on_message(const Message& msg, int now) {
        if (msg.kind == MsgKind::Heartbeat) {
            last_heartbeat_rx_ = std::max(last_heartbeat_rx_, now);
        } else if (msg.kind == MsgKind::SetpointCommand) {
            if (msg.seq <= last_command_seq_) return;  // stale or duplicate
            last_command_seq_ = msg.seq;
            EdgeCommand cmd;
            cmd.seq = msg.seq;
            cmd.rx_at = now;
            if (msg.payload.contains("directive") && msg.payload.at("directive") == "fallback") {
                cmd.fallback_directive = true;
                cmd.valid_until = now;
            } else {
                cmd.q_if_target = msg.payload.at("q_if_target").get<double>();
                cmd.valid_until = msg.payload.at("valid_until").get<int>();
            }
            command_ = cmd;
        }
    }

    // Mode transition on the heartbeat staleness rule; re-entry to coordinated
    // needs a fresh, unexpired command as well, never a heartbeat alone.
    Mode update_mode(int now) {
        int staleness = now - last_heartbeat_rx_;
        if (staleness >= defaults::heartbeat_fallback_threshold) {
            mode_ = Mode::fallback;
        } else if (command_ && !command_->fallback_directive && now <= command_->valid_until) {
            mode_ = Mode::coordinated;
        }
        return mode_;
    }

    EdgeAction act(const Network& net_now, const EdgeMeasurements& meas, int now,
                   FallbackPolicy policy) {
        update_mode(now);
        bool cmd_valid = command_ && !command_->fallback_directive && now <= command_->valid_until;
        if (cmd_valid) {
            // Coordinated, or fallback still inside the command's horizon.
            return edge_cascade(net_now, transformer_id_, command_->q_if_target,
                                meas.boundary_vm);
        }
        // Pure local objectives: assets on fallback profiles, OLTC per policy.
        EdgeAction act;
        InterfaceSpec ifc = interface_of(net_now, transformer_id_);
        for (const auto& aid : ifc.controllable_assets) {
            const Asset* a = net_now.find_asset(aid);
            auto vit = meas.bus_vm.find(a->bus);
            double v = vit != meas.bus_vm.end() ? vit->second : meas.boundary_vm;
            auto pit = meas.asset_p.find(aid);
            double p = pit != meas.asset_p.end() ? pit->second : a->p;
            act.q_overrides[aid] = fallback_setpoint(*a, v, p);
        }
        act.tap_to_local_automaton = policy == FallbackPolicy::oltc_local;
        return act;
    }

private:
    std::string node_id_;
    std::string transformer_id_;
    Mode mode_ = Mode::fallback;  // until the first heartbeat + command
    int last_heartbeat_rx_ = -1000000;
    uint64_t last_command_seq_ = 0;
    std::optional<EdgeCommand> command_;
};

struct CentralCommands {
    std::map<std::string, double> mv_q_setpoints;  // directly controlled MV assets
    TapVector master_taps;
    std::map<std::string, double> edge_targets;  // edge node id -> substation Q target
    bool fallback_directive = false;
};

// Central coordinator at the HV/MV interface. Works on the grid model plus the
// last received edge measurements; staleness beyond the heartbeat threshold
// freezes a substation (its flexibility is excluded and reallocated).
class CentralController {
public:
    CentralController() = default;
    CentralController(std::string node_id, const Network* base_grid, std::string hvmv_transformer)
        : node_id_(std::move(node_id)),
          base_grid_(base_grid),
          hvmv_id_(std::move(hvmv_transformer)) {
        ifc_full_ = interface_of(*base_grid_, hvmv_id_);
        for (const auto& t : base_grid_->transformers) {
            if (!t.is_interface || t.id == hvmv_id_) continue;
            if (std::count(ifc_full_.downstream_buses.begin(), ifc_full_.downstream_buses.end(),
                           t.hv_bus)) {
                InterfaceSpec sub = interface_of(*base_grid_, t.id);
                edge_assets_["edge_" + t.id] =
                    std::set<std::string>(sub.downstream_assets.begin(),
                                          sub.downstream_assets.end());
                edge_tx_["edge_" + t.id] = t.id;
            }
        }
    }

    const std::string& node_id() const { return node_id_; }
    const std::vector<std::string>& stale_log() const { return stale_log_; }
    std::vector<std::string> edge_nodes() const {
        std::vector<std::string> out;
        for (const auto& [node, tid] : edge_tx_) {
            (void)tid;
            out.push_back(node);
        }
        return out;
    }

    void on_message(const Message& msg, int now) {
        if (msg.kind == MsgKind::MeasurementReport) {
            EdgeMeasurements& m = edge_meas_[msg.sender];
            m.boundary_vm = msg.payload.at("boundary_vm").get<double>();
            m.q_if = msg.payload.at("q_if").get<double>();
            m.p_if = msg.payload.at("p_if").get<double>();
            m.tap_position = msg.payload.at("tap_position").get<int>();
            m.asset_p.clear();
            for (const auto& [k, v] : msg.payload.at("asset_p").items())
                m.asset_p[k] = v.get<double>();
            edge_last_rx_[msg.sender] = now;
        } else if (msg.kind == MsgKind::QTarget) {
            int valid_until = msg.payload.at("valid_until").get<int>();
            if (now <= valid_until)
                target_ = PendingTarget{msg.payload.at("q_target").get<double>(), valid_until};
        }
    }

    void send_heartbeats(SimBus& bus, int now) {
        for (const auto& [node, tid] : edge_tx_) {
            (void)tid;
            Message m;
            m.kind = MsgKind::Heartbeat;
            m.sender = node_id_;
            m.receiver = node;
            bus.send(std::move(m), now);
        }
    }

    // Builds the central model view: the runner's current network with each
    // frozen (stale) substation's asset data pinned at the last report.
    Network model_view(const Network& net_now, int now) const {
        Network view = net_now;
        for (const auto& [node, assets] : edge_assets_) {
            if (fresh(node, now)) continue;
            auto mit = edge_meas_.find(node);
            if (mit == edge_meas_.end()) continue;  // never reported: keep base data
            for (auto& a : view.assets)
                if (assets.count(a.id)) {
                    auto pit = mit->second.asset_p.find(a.id);
                    if (pit != mit->second.asset_p.end()) a.p = pit->second;
                }
        }
        return view;
    }

    bool fresh(const std::string& edge_node, int now) const {
        auto it = edge_last_rx_.find(edge_node);
        return it != edge_last_rx_.end() &&
               now - it->second < defaults::heartbeat_fallback_threshold;
    }

    // Flexibility assessment at the HV/MV interface (decomposed, sensitivity
    // method). Returns nothing when every substation's data is stale.
    std::optional<FlexReportData> assess_flexibility(const Network& net_now, int now) {
        bool any_fresh = edge_tx_.empty();
        for (const auto& [node, tid] : edge_tx_) {
            (void)tid;
            if (fresh(node, now)) any_fresh = true;
        }
        if (!any_fresh) {
            stale_log_.push_back("step " + std::to_string(now) + ": all edge measurements stale");
            return std::nullopt;
        }
        model_ = model_view(net_now, now);
        InterfaceSpec ifc = interface_of(model_, hvmv_id_);
        ConstraintSet cs = ConstraintSet::from_network(model_, ifc);
        restrict_to_fresh(cs, now);
        FlexReportData rep;
        try {
            dec_ = decompose_by_level(model_, ifc, cs);
            FlexRange r = decomposed_flex_range(model_, ifc, cs, *dec_);
            rep.q_min = r.q_min;
            rep.q_max = r.q_max;
            rep.feasible = r.feasible;
            cs_ = cs;
            ifc_now_ = ifc;
        } catch (const InfeasibleError&) {
            CoupledSolution base = coupled_power_flow(model_, {}, {});
            rep.q_min = rep.q_max = interface_q(base.sol, interface_of(model_, hvmv_id_));
            rep.feasible = false;
            dec_.reset();
        }
        last_report_ = rep;
        return rep;
    }

    void publish_report(SimBus& bus, const std::string& upstream_node, int now) {
        if (!last_report_) return;
        Message m;
        m.kind = MsgKind::FlexibilityReport;
        m.sender = node_id_;
        m.receiver = upstream_node;
        m.payload = {{"q_min", last_report_->q_min},
                     {"q_max", last_report_->q_max},
                     {"feasible", last_report_->feasible}};
        bus.send(std::move(m), now);
    }

    // Target allocation: master problem on the aggregated model, one Q command
    // per reachable substation plus direct setpoints for MV assets.
    std::optional<CentralCommands> dispatch_target(int now) {
        if (!target_ || now > target_->valid_until || !dec_) return std::nullopt;
        CentralCommands out;
        try {
            SetpointBundle master = allocate_setpoints(dec_->master_net, dec_->master_ifc,
                                                       dec_->master_cs, target_->q_target);
            out.master_taps = master.taps;
            for (const auto& [aid, q] : master.q_setpoints) {
                if (aid.rfind("agg__", 0) == 0) {
                    std::string node = "edge_" + aid.substr(5);
                    if (fresh(node, now))  // unreachable substations keep their share frozen
                        out.edge_targets[node] = -q;  // back to HV->LV flow sign
                } else {
                    out.mv_q_setpoints[aid] = q;
                }
            }
        } catch (const InfeasibleError&) {
            out.fallback_directive = true;
        }
        return out;
    }

    void send_commands(SimBus& bus, const CentralCommands& cmds, const std::string& field_node,
                       int now) {
        if (cmds.fallback_directive) {
            for (const auto& [node, tid] : edge_tx_) {
                (void)tid;
                Message m;
                m.kind = MsgKind::SetpointCommand;
                m.sender = node_id_;
                m.receiver = node;
                m.payload = {{"directive", "fallback"}};
                bus.send(std::move(m), now);
            }
            return;
        }
        if (!cmds.mv_q_setpoints.empty() || !cmds.master_taps.empty()) {
            Message m;
            m.kind = MsgKind::SetpointCommand;
            m.sender = node_id_;
            m.receiver = field_node;
            nlohmann::ordered_json q = nlohmann::ordered_json::object();
            for (const auto& [aid, val] : cmds.mv_q_setpoints) q[aid] = val;
            nlohmann::ordered_json taps = nlohmann::ordered_json::object();
            for (const auto& [tid, pos] : cmds.master_taps) taps[tid] = pos;
            m.payload = {{"q_setpoints", q},
                         {"taps", taps},
                         {"valid_until", now + defaults::target_validity_cycles}};
            bus.send(std::move(m), now);
        }
        for (const auto& [node, q_target] : cmds.edge_targets) {
            Message m;
            m.kind = MsgKind::SetpointCommand;
            m.sender = node_id_;
            m.receiver = node;
            m.payload = {{"q_if_target", q_target},
                         {"valid_until", now + defaults::target_validity_cycles}};
            bus.send(std::move(m), now);
        }
    }

    const std::optional<FlexReportData>& last_report() const { return last_report_; }
    const std::optional<Decomposition>& decomposition() const { return dec_; }

    std::optional<double> active_target(int now) const {
        if (target_ && now <= target_->valid_until) return target_->q_target;
        return std::nullopt;
    }

private:
    struct PendingTarget {
        double q_target = 0.0;
        int valid_until = -1;
    };

    void restrict_to_fresh(ConstraintSet& cs, int now) const {
        std::vector<std::string> kept;
        for (const auto& aid : cs.controllable_assets) {
            bool frozen = false;
            for (const auto& [node, assets] : edge_assets_)
                if (assets.count(aid) && !fresh(node, now)) frozen = true;
            if (!frozen) kept.push_back(aid);
        }
        cs.controllable_assets = kept;
    }

    std::string node_id_;
    const Network* base_grid_ = nullptr;
    std::string hvmv_id_;
    InterfaceSpec ifc_full_;
    std::map<std::string, std::set<std::string>> edge_assets_;
    std::map<std::string, std::string> edge_tx_;  // node id -> transformer id
    std::map<std::string, EdgeMeasurements> edge_meas_;
    std::map<std::string, int> edge_last_rx_;
    std::optional<PendingTarget> target_;
    std::optional<FlexReportData> last_report_;
    std::optional<Decomposition> dec_;
    Network model_;
    ConstraintSet cs_;
    InterfaceSpec ifc_now_;
    std::vector<std::string> stale_log_;
};

}  // namespace voltcoord
