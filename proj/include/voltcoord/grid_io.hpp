#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "voltcoord/grid.hpp"

namespace voltcoord {

using json = nlohmann::ordered_json;

enum class UnitsMode { engineering, per_unit };

// Grid files carry engineering units by default (kV, MW, MVar, ohms, siemens,
// amperes); "units": "per_unit" switches every line/asset quantity to per-unit
// on s_base_mva. Transformer r/x are per-unit on the transformer's own rating
// in both modes. Voltage bounds and Q(V) abscissae are always per-unit.
namespace grid_io_detail {

inline double z_base_ohm(double base_kv, double s_base_mva) {
    return base_kv * base_kv / s_base_mva;
}
inline double i_base_amp(double base_kv, double s_base_mva) {
    return s_base_mva * 1e6 / (std::sqrt(3.0) * base_kv * 1e3);
}

inline const json& require(const json& obj, const std::string& key, const std::string& context) {
    if (!obj.contains(key))
        throw GridFormatError(context + ": missing required field '" + key + "'");
    return obj.at(key);
}

inline double num(const json& obj, const std::string& key, const std::string& context) {
    const json& v = require(obj, key, context);
    if (!v.is_number())
        throw GridFormatError(context + ": field '" + key + "' must be a number");
    return v.get<double>();
}

inline double num_or(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<double>();
}

inline std::string str(const json& obj, const std::string& key, const std::string& context) {
    const json& v = require(obj, key, context);
    if (!v.is_string())
        throw GridFormatError(context + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

inline VoltageLevel parse_level(const std::string& s, const std::string& context) {
    if (s == "HV") return VoltageLevel::HV;
    if (s == "MV") return VoltageLevel::MV;
    if (s == "LV") return VoltageLevel::LV;
    throw GridFormatError(context + ": level must be one of HV, MV, LV (got '" + s + "')");
}

inline AssetKind parse_asset_kind(const std::string& s, const std::string& context) {
    if (s == "pv") return AssetKind::pv;
    if (s == "wind") return AssetKind::wind;
    if (s == "storage") return AssetKind::storage;
    if (s == "ev_charging") return AssetKind::ev_charging;
    if (s == "household") return AssetKind::household;
    if (s == "commercial") return AssetKind::commercial;
    throw GridFormatError(context + ": unknown asset kind '" + s + "'");
}

inline TapMode parse_tap_mode(const std::string& s, const std::string& context) {
    if (s == "fixed") return TapMode::fixed;
    if (s == "local") return TapMode::local;
    if (s == "optimized") return TapMode::optimized;
    throw GridFormatError(context + ": unknown tap mode '" + s + "'");
}

inline std::vector<CurvePoint> parse_points(const json& arr, const std::string& context) {
    if (!arr.is_array()) throw GridFormatError(context + ": points must be an array of [x, y]");
    std::vector<CurvePoint> pts;
    for (const auto& p : arr) {
        if (!p.is_array() || p.size() != 2)
            throw GridFormatError(context + ": each point must be a [x, y] pair");
        pts.push_back({p[0].get<double>(), p[1].get<double>()});
    }
    return pts;
}

// `p_scale`/`q_scale` convert the file's power values to per-unit.
inline ControlCharacteristic parse_control(const json& c, double p_scale, double q_scale,
                                           const std::string& context) {
    std::string type = str(c, "type", context);
    if (type == "cos_phi") {
        FixedCosPhi fc;
        fc.cos_phi = num(c, "value", context);
        if (fc.cos_phi <= 0.0 || fc.cos_phi > 1.0)
            throw GridFormatError(context + ": cos_phi value must be in (0, 1]");
        std::string exc = c.contains("excitation") ? c.at("excitation").get<std::string>() : "under";
        if (exc != "under" && exc != "over")
            throw GridFormatError(context + ": excitation must be 'under' or 'over'");
        fc.underexcited = (exc == "under");
        return fc;
    }
    if (type == "q_of_v") {
        QofV qv{parse_points(require(c, "points", context), context)};
        return qv;
    }
    if (type == "q_of_p") {
        QofP qp{parse_points(require(c, "points", context), context)};
        for (auto& pt : qp.points) pt.x *= p_scale;
        return qp;
    }
    if (type == "setpoint") {
        return DirectSetpoint{num(c, "q", context) * q_scale};
    }
    if (type == "fallback_profile") {
        FallbackProfile fb;
        if (c.contains("profile"))
            fb.curve = QofV{parse_points(require(c.at("profile"), "points", context), context)};
        else
            fb.constant_q = num_or(c, "constant_q", 0.0) * q_scale;
        return fb;
    }
    throw GridFormatError(context + ": unknown control type '" + type + "'");
}

inline json control_to_json(const ControlCharacteristic& c, double p_scale, double q_scale) {
    json out;
    if (const auto* fc = std::get_if<FixedCosPhi>(&c)) {
        out["type"] = "cos_phi";
        out["value"] = fc->cos_phi;
        out["excitation"] = fc->underexcited ? "under" : "over";
    } else if (const auto* qv = std::get_if<QofV>(&c)) {
        out["type"] = "q_of_v";
        json pts = json::array();
        for (const auto& p : qv->points) pts.push_back({p.x, p.y});
        out["points"] = pts;
    } else if (const auto* qp = std::get_if<QofP>(&c)) {
        out["type"] = "q_of_p";
        json pts = json::array();
        for (const auto& p : qp->points) pts.push_back({p.x / p_scale, p.y});
        out["points"] = pts;
    } else if (const auto* ds = std::get_if<DirectSetpoint>(&c)) {
        out["type"] = "setpoint";
        out["q"] = ds->q / q_scale;
    } else if (const auto* fb = std::get_if<FallbackProfile>(&c)) {
        out["type"] = "fallback_profile";
        if (fb->curve) {
            json pts = json::array();
            for (const auto& p : fb->curve->points) pts.push_back({p.x, p.y});
            out["profile"] = {{"points", pts}};
        } else {
            out["constant_q"] = fb->constant_q / q_scale;
        }
    }
    return out;
}

}  // namespace grid_io_detail

inline Network network_from_json(const json& doc) {
    using namespace grid_io_detail;
    Network net;
    net.s_base = num(doc, "s_base_mva", "grid file");
    if (net.s_base <= 0) throw GridFormatError("grid file: s_base_mva must be > 0");
    net.slack_vm = num_or(doc, "slack_vm", 1.0);

    UnitsMode units = UnitsMode::engineering;
    if (doc.contains("units")) {
        std::string u = doc.at("units").get<std::string>();
        if (u == "engineering")
            units = UnitsMode::engineering;
        else if (u == "per_unit")
            units = UnitsMode::per_unit;
        else
            throw GridFormatError("grid file: units must be 'engineering' or 'per_unit'");
    }
    const bool eng = units == UnitsMode::engineering;

    for (const auto& jb : require(doc, "buses", "grid file")) {
        Bus b;
        std::string ctx = "bus '" + (jb.contains("id") ? jb.at("id").get<std::string>() : "?") + "'";
        b.id = str(jb, "id", ctx);
        std::string kind = str(jb, "kind", ctx);
        if (kind == "slack")
            b.kind = BusKind::slack;
        else if (kind == "load")
            b.kind = BusKind::load;
        else
            throw GridFormatError(ctx + ": kind must be 'slack' or 'load'");
        b.base_kv = num(jb, "base_kv", ctx);
        b.v_min = num_or(jb, "v_min", defaults::v_min_pu);
        b.v_max = num_or(jb, "v_max", defaults::v_max_pu);
        b.level = parse_level(str(jb, "level", ctx), ctx);
        net.buses.push_back(b);
    }

    if (doc.contains("lines")) {
        for (const auto& jl : doc.at("lines")) {
            Line l;
            std::string ctx = "line '" + (jl.contains("id") ? jl.at("id").get<std::string>() : "?") + "'";
            l.id = str(jl, "id", ctx);
            l.from_bus = str(jl, "from_bus", ctx);
            l.to_bus = str(jl, "to_bus", ctx);
            const Bus* from = net.find_bus(l.from_bus);
            if (!from) throw GridFormatError(ctx + ": unknown from_bus '" + l.from_bus + "'");
            double zb = z_base_ohm(from->base_kv, net.s_base);
            double ib = i_base_amp(from->base_kv, net.s_base);
            l.r = num(jl, "r", ctx) / (eng ? zb : 1.0);
            l.x = num(jl, "x", ctx) / (eng ? zb : 1.0);
            l.b_shunt = num_or(jl, "b_shunt", 0.0) * (eng ? zb : 1.0);
            l.i_max = num(jl, "i_max", ctx) / (eng ? ib : 1.0);
            net.lines.push_back(l);
        }
    }

    if (doc.contains("transformers")) {
        for (const auto& jt : doc.at("transformers")) {
            Transformer t;
            std::string ctx =
                "transformer '" + (jt.contains("id") ? jt.at("id").get<std::string>() : "?") + "'";
            t.id = str(jt, "id", ctx);
            t.hv_bus = str(jt, "hv_bus", ctx);
            t.lv_bus = str(jt, "lv_bus", ctx);
            t.s_rated = num(jt, "s_rated", ctx);
            t.r = num_or(jt, "r", 0.0);
            t.x = num(jt, "x", ctx);
            t.is_interface = jt.contains("is_interface") && jt.at("is_interface").get<bool>();
            if (jt.contains("tap") && !jt.at("tap").is_null()) {
                const json& jtap = jt.at("tap");
                TapChanger tc;
                tc.pos_min = static_cast<int>(num(jtap, "pos_min", ctx));
                tc.pos_max = static_cast<int>(num(jtap, "pos_max", ctx));
                tc.neutral = static_cast<int>(num_or(jtap, "neutral", 0));
                tc.step_size = num(jtap, "step_size", ctx);
                tc.position = static_cast<int>(num_or(jtap, "position", tc.neutral));
                tc.v_setpoint = num_or(jtap, "v_setpoint", 1.0);
                tc.deadband = num_or(jtap, "deadband", 0.01);
                tc.delay_steps = static_cast<int>(num_or(jtap, "delay_steps", 1));
                tc.mode = jtap.contains("mode") ? parse_tap_mode(jtap.at("mode").get<std::string>(), ctx)
                                                : TapMode::local;
                t.tap = tc;
            }
            net.transformers.push_back(t);
        }
    }

    if (doc.contains("assets")) {
        for (const auto& ja : doc.at("assets")) {
            Asset a;
            std::string ctx = "asset '" + (ja.contains("id") ? ja.at("id").get<std::string>() : "?") + "'";
            a.id = str(ja, "id", ctx);
            a.bus = str(ja, "bus", ctx);
            a.kind = parse_asset_kind(str(ja, "kind", ctx), ctx);
            double pscale = eng ? 1.0 / net.s_base : 1.0;
            a.p = num(ja, "p", ctx) * pscale;
            a.q_min = num(ja, "q_min", ctx) * pscale;
            a.q_max = num(ja, "q_max", ctx) * pscale;
            a.s_max = num(ja, "s_max", ctx) * pscale;
            a.directly_controllable =
                ja.contains("directly_controllable") && ja.at("directly_controllable").get<bool>();
            if (ja.contains("control"))
                a.control = parse_control(ja.at("control"), pscale, pscale, ctx);
            else if (a.kind == AssetKind::household || a.kind == AssetKind::commercial ||
                     a.kind == AssetKind::ev_charging)
                a.control = FixedCosPhi{0.97, true};
            else
                a.control = default_qofv_curve();
            if (ja.contains("fallback")) {
                auto fb = parse_control(ja.at("fallback"), pscale, pscale, ctx);
                if (const auto* f = std::get_if<FallbackProfile>(&fb))
                    a.fallback = *f;
                else
                    throw GridFormatError(ctx + ": fallback must have type 'fallback_profile'");
            }
            net.assets.push_back(a);
        }
    }
    return net;
}

inline json network_to_json(const Network& net, UnitsMode units = UnitsMode::engineering) {
    using namespace grid_io_detail;
    const bool eng = units == UnitsMode::engineering;
    json doc;
    doc["s_base_mva"] = net.s_base;
    if (net.slack_vm != 1.0) doc["slack_vm"] = net.slack_vm;
    doc["units"] = eng ? "engineering" : "per_unit";
    doc["buses"] = json::array();
    for (const auto& b : net.buses) {
        doc["buses"].push_back({{"id", b.id},
                                {"kind", b.kind == BusKind::slack ? "slack" : "load"},
                                {"base_kv", b.base_kv},
                                {"v_min", b.v_min},
                                {"v_max", b.v_max},
                                {"level", to_string(b.level)}});
    }
    doc["lines"] = json::array();
    for (const auto& l : net.lines) {
        const Bus* from = net.find_bus(l.from_bus);
        double zb = eng ? z_base_ohm(from->base_kv, net.s_base) : 1.0;
        double ib = eng ? i_base_amp(from->base_kv, net.s_base) : 1.0;
        doc["lines"].push_back({{"id", l.id},
                                {"from_bus", l.from_bus},
                                {"to_bus", l.to_bus},
                                {"r", l.r * zb},
                                {"x", l.x * zb},
                                {"b_shunt", l.b_shunt / zb},
                                {"i_max", l.i_max * ib}});
    }
    doc["transformers"] = json::array();
    for (const auto& t : net.transformers) {
        json jt = {{"id", t.id},         {"hv_bus", t.hv_bus}, {"lv_bus", t.lv_bus},
                   {"s_rated", t.s_rated}, {"r", t.r},           {"x", t.x},
                   {"is_interface", t.is_interface}};
        if (t.tap) {
            const auto& tc = *t.tap;
            jt["tap"] = {{"pos_min", tc.pos_min},       {"pos_max", tc.pos_max},
                         {"neutral", tc.neutral},       {"step_size", tc.step_size},
                         {"position", tc.position},     {"v_setpoint", tc.v_setpoint},
                         {"deadband", tc.deadband},     {"delay_steps", tc.delay_steps},
                         {"mode", to_string(tc.mode)}};
        }
        doc["transformers"].push_back(jt);
    }
    doc["assets"] = json::array();
    for (const auto& a : net.assets) {
        if (a.kind == AssetKind::aggregate)
            throw Error("aggregate assets are internal and cannot be serialized");
        double pscale = eng ? 1.0 / net.s_base : 1.0;
        json ja = {{"id", a.id},
                   {"bus", a.bus},
                   {"kind", to_string(a.kind)},
                   {"p", a.p / pscale},
                   {"q_min", a.q_min / pscale},
                   {"q_max", a.q_max / pscale},
                   {"s_max", a.s_max / pscale},
                   {"directly_controllable", a.directly_controllable},
                   {"control", control_to_json(a.control, pscale, pscale)}};
        if (a.fallback) ja["fallback"] = control_to_json(*a.fallback, pscale, pscale);
        doc["assets"].push_back(ja);
    }
    return doc;
}

inline Network load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw GridFormatError("cannot open grid file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw GridFormatError("grid file '" + path + "' is not valid JSON: " + e.what());
    }
    Network net = network_from_json(doc);
    ValidationReport rep = validate(net);
    if (!rep.ok()) throw ValidationError(rep.errors);
    return net;
}

inline void save_network(const Network& net, const std::string& path,
                         UnitsMode units = UnitsMode::engineering) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write grid file '" + path + "'");
    out << network_to_json(net, units).dump(2) << "\n";
}

}  // namespace voltcoord
