#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "voltcoord/common.hpp"

namespace voltcoord {

enum class BusKind { slack, load };
enum class VoltageLevel { LV = 0, MV = 1, HV = 2 };

inline const char* to_string(VoltageLevel l) {
    switch (l) {
        case VoltageLevel::LV: return "LV";
        case VoltageLevel::MV: return "MV";
        case VoltageLevel::HV: return "HV";
    }
    return "?";
}

struct Bus {
    std::string id;
    BusKind kind = BusKind::load;
    double base_kv = 0.0;
    double v_min = defaults::v_min_pu;  // pu
    double v_max = defaults::v_max_pu;  // pu
    VoltageLevel level = VoltageLevel::MV;
};

// All line quantities per-unit on the system base.
struct Line {
    std::string id;
    std::string from_bus;
    std::string to_bus;
    double r = 0.0;
    double x = 0.0;
    double b_shunt = 0.0;  // total charging susceptance
    double i_max = 0.0;    // current rating
};

enum class TapMode { fixed, local, optimized };

inline const char* to_string(TapMode m) {
    switch (m) {
        case TapMode::fixed: return "fixed";
        case TapMode::local: return "local";
        case TapMode::optimized: return "optimized";
    }
    return "?";
}

struct TapChanger {
    int pos_min = 0;
    int pos_max = 0;
    int neutral = 0;
    double step_size = 0.0;   // pu ratio change per step
    int position = 0;
    double v_setpoint = 1.0;  // pu, LV-side target
    double deadband = 0.01;   // pu half-width
    int delay_steps = 1;
    TapMode mode = TapMode::local;
};

// r, x per-unit on the transformer's own rating (converted when stamping).
struct Transformer {
    std::string id;
    std::string hv_bus;
    std::string lv_bus;
    double s_rated = 0.0;  // MVA
    double r = 0.0;
    double x = 0.0;
    std::optional<TapChanger> tap;
    bool is_interface = false;

    // Off-nominal ratio applied on the HV side of the pi model.
    double ratio_at(int position) const {
        if (!tap) return 1.0;
        return 1.0 + (position - tap->neutral) * tap->step_size;
    }
    double ratio() const { return tap ? ratio_at(tap->position) : 1.0; }
};

enum class AssetKind { pv, wind, storage, ev_charging, household, commercial, aggregate };

inline const char* to_string(AssetKind k) {
    switch (k) {
        case AssetKind::pv: return "pv";
        case AssetKind::wind: return "wind";
        case AssetKind::storage: return "storage";
        case AssetKind::ev_charging: return "ev_charging";
        case AssetKind::household: return "household";
        case AssetKind::commercial: return "commercial";
        case AssetKind::aggregate: return "aggregate";
    }
    return "?";
}

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

// q output of a curve is a fraction of the asset's q_max.
struct QofV {
    std::vector<CurvePoint> points;  // (v pu, q fraction)
};
struct QofP {
    std::vector<CurvePoint> points;  // (p pu, q fraction)
};
struct FixedCosPhi {
    double cos_phi = 0.97;
    bool underexcited = true;  // absorbing reactive power
};
struct DirectSetpoint {
    double q = 0.0;  // pu absolute
};
struct FallbackProfile {
    std::optional<QofV> curve;  // nullopt -> constant q
    double constant_q = 0.0;
};

using ControlCharacteristic =
    std::variant<FixedCosPhi, QofV, QofP, DirectSetpoint, FallbackProfile>;

inline QofV default_qofv_curve() {
    return QofV{{{0.93, 1.0}, {0.97, 0.0}, {1.03, 0.0}, {1.07, -1.0}}};
}

struct Asset {
    std::string id;
    std::string bus;
    AssetKind kind = AssetKind::household;
    double p = 0.0;      // pu, generation positive
    double q_min = 0.0;  // pu
    double q_max = 0.0;  // pu
    double s_max = 0.0;  // pu apparent power rating
    ControlCharacteristic control = FixedCosPhi{};
    std::optional<FallbackProfile> fallback;
    bool directly_controllable = false;
};

// Immutable after load; mutation happens on explicit copies only.
struct Network {
    double s_base = defaults::s_base_mva;  // MVA
    double slack_vm = 1.0;                 // slack voltage magnitude, pu
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<Transformer> transformers;
    std::vector<Asset> assets;

    const Bus* find_bus(const std::string& id) const {
        for (const auto& b : buses)
            if (b.id == id) return &b;
        return nullptr;
    }
    const Transformer* find_transformer(const std::string& id) const {
        for (const auto& t : transformers)
            if (t.id == id) return &t;
        return nullptr;
    }
    const Line* find_line(const std::string& id) const {
        for (const auto& l : lines)
            if (l.id == id) return &l;
        return nullptr;
    }
    const Asset* find_asset(const std::string& id) const {
        for (const auto& a : assets)
            if (a.id == id) return &a;
        return nullptr;
    }
    Asset* find_asset(const std::string& id) {
        for (auto& a : assets)
            if (a.id == id) return &a;
        return nullptr;
    }
    Transformer* find_transformer(const std::string& id) {
        for (auto& t : transformers)
            if (t.id == id) return &t;
        return nullptr;
    }
    const Bus& slack_bus() const {
        for (const auto& b : buses)
            if (b.kind == BusKind::slack) return b;
        throw Error("network has no slack bus");
    }
};

struct ValidationReport {
    std::vector<std::string> errors;
    std::vector<std::string> warnings;
    bool ok() const { return errors.empty(); }
};

namespace detail {

// Undirected adjacency over lines and transformers. Branch key: ("L"|"T", index).
struct Adjacency {
    std::map<std::string, std::vector<std::pair<std::string, std::pair<char, size_t>>>> nbrs;
    static Adjacency build(const Network& net) {
        Adjacency a;
        for (size_t i = 0; i < net.lines.size(); ++i) {
            const auto& l = net.lines[i];
            a.nbrs[l.from_bus].push_back({l.to_bus, {'L', i}});
            a.nbrs[l.to_bus].push_back({l.from_bus, {'L', i}});
        }
        for (size_t i = 0; i < net.transformers.size(); ++i) {
            const auto& t = net.transformers[i];
            a.nbrs[t.hv_bus].push_back({t.lv_bus, {'T', i}});
            a.nbrs[t.lv_bus].push_back({t.hv_bus, {'T', i}});
        }
        return a;
    }
};

// Component of `start`, never traversing the branch `skip`.
inline std::set<std::string> component_without(const Adjacency& adj, const std::string& start,
                                               std::pair<char, size_t> skip) {
    std::set<std::string> seen{start};
    std::vector<std::string> stack{start};
    while (!stack.empty()) {
        std::string b = stack.back();
        stack.pop_back();
        auto it = adj.nbrs.find(b);
        if (it == adj.nbrs.end()) continue;
        for (const auto& [nb, key] : it->second) {
            if (key == skip) continue;
            if (seen.insert(nb).second) stack.push_back(nb);
        }
    }
    return seen;
}

}  // namespace detail

inline ValidationReport validate(const Network& net) {
    ValidationReport rep;
    auto err = [&](const std::string& m) { rep.errors.push_back(m); };
    auto warn = [&](const std::string& m) { rep.warnings.push_back(m); };

    std::set<std::string> bus_ids;
    int slack_count = 0;
    for (const auto& b : net.buses) {
        if (!bus_ids.insert(b.id).second) err("duplicate bus id '" + b.id + "'");
        if (b.kind == BusKind::slack) ++slack_count;
        if (b.base_kv <= 0) err("bus '" + b.id + "': base_kv must be > 0");
        if (!(0 < b.v_min && b.v_min < b.v_max))
            err("bus '" + b.id + "': voltage bounds must satisfy 0 < v_min < v_max");
    }
    if (slack_count == 0) err("network has no slack bus");
    if (slack_count > 1)
        err("network has " + std::to_string(slack_count) + " slack buses, expected exactly one");

    std::set<std::string> branch_ids;
    for (const auto& l : net.lines) {
        if (!branch_ids.insert(l.id).second) err("duplicate branch id '" + l.id + "'");
        if (l.from_bus == l.to_bus) err("line '" + l.id + "': from_bus equals to_bus");
        if (!bus_ids.count(l.from_bus)) err("line '" + l.id + "': unknown from_bus '" + l.from_bus + "'");
        if (!bus_ids.count(l.to_bus)) err("line '" + l.id + "': unknown to_bus '" + l.to_bus + "'");
        if (l.r == 0.0 && l.x == 0.0) err("line '" + l.id + "': r and x are both zero");
        if (l.i_max <= 0) err("line '" + l.id + "': i_max must be > 0");
    }

    for (const auto& t : net.transformers) {
        if (!branch_ids.insert(t.id).second) err("duplicate branch id '" + t.id + "'");
        if (t.s_rated <= 0) err("transformer '" + t.id + "': s_rated must be > 0");
        if (t.x <= 0) err("transformer '" + t.id + "': x must be > 0");
        const Bus* hv = net.find_bus(t.hv_bus);
        const Bus* lv = net.find_bus(t.lv_bus);
        if (!hv) err("transformer '" + t.id + "': unknown hv_bus '" + t.hv_bus + "'");
        if (!lv) err("transformer '" + t.id + "': unknown lv_bus '" + t.lv_bus + "'");
        if (hv && lv) {
            if (hv->level < lv->level)
                err("transformer '" + t.id + "': hv_bus level below lv_bus level");
            else if (hv->level == lv->level)
                warn("transformer '" + t.id +
                     "': equal voltage levels (in-line regulator approximation)");
        }
        if (t.tap) {
            const auto& tc = *t.tap;
            if (!(tc.pos_min <= tc.neutral && tc.neutral <= tc.pos_max))
                err("transformer '" + t.id + "': tap requires pos_min <= neutral <= pos_max");
            if (tc.step_size <= 0) err("transformer '" + t.id + "': tap step_size must be > 0");
            if (tc.position < tc.pos_min || tc.position > tc.pos_max)
                err("transformer '" + t.id + "': tap position outside bounds");
            if (tc.delay_steps < 0) err("transformer '" + t.id + "': tap delay_steps must be >= 0");
            // Anti-hunting rule: one step moves the LV voltage by about step_size.
            if (tc.deadband <= tc.step_size / 2.0)
                warn("transformer '" + t.id + "': deadband below half step");
        }
    }

    std::set<std::string> asset_ids;
    for (const auto& a : net.assets) {
        if (!asset_ids.insert(a.id).second) err("duplicate asset id '" + a.id + "'");
        if (!bus_ids.count(a.bus)) err("asset '" + a.id + "': unknown bus '" + a.bus + "'");
        if (a.q_min > a.q_max) err("asset '" + a.id + "': q_min > q_max");
        if (a.s_max <= 0) err("asset '" + a.id + "': s_max must be > 0");
        if (a.directly_controllable && a.kind != AssetKind::aggregate &&
            !(a.q_min <= 0.0 && 0.0 <= a.q_max))
            err("asset '" + a.id + "': controllable DER must have q_min <= 0 <= q_max");
        if (a.p * a.p > a.s_max * a.s_max * (1.0 + 1e-12))
            err("asset '" + a.id + "': |p| exceeds s_max, capability set is empty");
        if (const auto* qv = std::get_if<QofV>(&a.control)) {
            for (size_t i = 1; i < qv->points.size(); ++i)
                if (qv->points[i].x <= qv->points[i - 1].x)
                    err("asset '" + a.id + "': Q(V) breakpoints must be strictly increasing");
        }
        if (const auto* qp = std::get_if<QofP>(&a.control)) {
            for (size_t i = 1; i < qp->points.size(); ++i)
                if (qp->points[i].x <= qp->points[i - 1].x)
                    err("asset '" + a.id + "': Q(P) breakpoints must be strictly increasing");
        }
    }

    // Connectivity and per-substation radiality.
    if (slack_count == 1 && rep.errors.empty()) {
        auto adj = detail::Adjacency::build(net);
        auto reached = detail::component_without(adj, net.slack_bus().id, {'?', size_t(-1)});
        for (const auto& b : net.buses)
            if (!reached.count(b.id)) err("bus '" + b.id + "' is disconnected from the slack bus");

        for (size_t i = 0; i < net.transformers.size(); ++i) {
            const auto& t = net.transformers[i];
            const Bus* hv = net.find_bus(t.hv_bus);
            const Bus* lv = net.find_bus(t.lv_bus);
            if (!hv || !lv || !(hv->level > lv->level) || lv->level != VoltageLevel::LV) continue;
            auto comp = detail::component_without(adj, t.lv_bus, {'T', i});
            if (comp.count(t.hv_bus)) {
                err("transformer '" + t.id + "': parallel path around the MV/LV transformer");
                continue;
            }
            size_t edges = 0;
            for (size_t j = 0; j < net.lines.size(); ++j)
                if (comp.count(net.lines[j].from_bus) && comp.count(net.lines[j].to_bus)) ++edges;
            for (size_t j = 0; j < net.transformers.size(); ++j)
                if (j != i && comp.count(net.transformers[j].hv_bus) &&
                    comp.count(net.transformers[j].lv_bus))
                    ++edges;
            if (edges != comp.size() - 1)
                err("transformer '" + t.id + "': LV subtree is not radial");
        }
    }
    return rep;
}

// Measurement point is the HV terminal; Q positive flows HV -> LV.
struct InterfaceSpec {
    std::string transformer_id;
    std::string measurement_bus;
    std::vector<std::string> downstream_buses;
    std::vector<std::string> downstream_assets;
    std::vector<std::string> controllable_assets;
    std::vector<std::string> downstream_tap_changers;  // transformer ids, interface's own included
};

inline InterfaceSpec interface_of(const Network& net, const std::string& transformer_id) {
    const Transformer* tx = net.find_transformer(transformer_id);
    if (!tx) {
        if (net.find_line(transformer_id))
            throw Error("'" + transformer_id + "' is not a transformer");
        throw Error("unknown transformer id '" + transformer_id + "'");
    }
    if (!tx->is_interface)
        throw Error("transformer '" + transformer_id + "' is not marked as an interface");

    auto adj = detail::Adjacency::build(net);
    size_t tx_index = 0;
    for (size_t i = 0; i < net.transformers.size(); ++i)
        if (net.transformers[i].id == transformer_id) tx_index = i;
    auto comp = detail::component_without(adj, tx->lv_bus, {'T', tx_index});

    InterfaceSpec spec;
    spec.transformer_id = transformer_id;
    spec.measurement_bus = tx->hv_bus;
    for (const auto& b : net.buses)
        if (comp.count(b.id)) spec.downstream_buses.push_back(b.id);
    for (const auto& a : net.assets)
        if (comp.count(a.bus)) {
            spec.downstream_assets.push_back(a.id);
            if (a.directly_controllable) spec.controllable_assets.push_back(a.id);
        }
    if (tx->tap) spec.downstream_tap_changers.push_back(tx->id);
    for (const auto& t : net.transformers)
        if (t.id != tx->id && t.tap && comp.count(t.hv_bus) && comp.count(t.lv_bus))
            spec.downstream_tap_changers.push_back(t.id);
    return spec;
}

}  // namespace voltcoord
