#pragma once

#include "voltcoord/scenario.hpp"

namespace voltcoord {

// Minimal valid grid: slack plus one load bus, one line, one load.
inline Network build_two_bus_fixture() {
    Network net;
    net.s_base = 10.0;
    net.buses.push_back({"N1", BusKind::slack, 20.0, 0.90, 1.10, VoltageLevel::MV});
    net.buses.push_back({"N2", BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});
    net.lines.push_back({"L1", "N1", "N2", 0.01, 0.10, 0.0, 3.0});
    Asset load;
    load.id = "LOAD1";
    load.bus = "N2";
    load.kind = AssetKind::household;
    load.p = -0.2;
    load.q_min = -0.5;
    load.q_max = 0.5;
    load.s_max = 0.6;
    load.control = FixedCosPhi{0.97, true};
    net.assets.push_back(load);
    return net;
}

namespace fixture_detail {

inline Line mv_line(const std::string& id, const std::string& from, const std::string& to,
                    double km, double s_base) {
    // 20 kV cable: 0.2 ohm/km, 0.13 ohm/km, 55 uS/km charging, 400 A rating
    double zb = 20.0 * 20.0 / s_base;
    double ib = s_base * 1e6 / (std::sqrt(3.0) * 20e3);
    return {id, from, to, 0.20 * km / zb, 0.13 * km / zb, 55e-6 * km * zb, 400.0 / ib};
}

inline Line lv_line(const std::string& id, const std::string& from, const std::string& to,
                    double km, double s_base) {
    // 0.4 kV main: 0.32 ohm/km, 0.08 ohm/km, 235 A rating
    double zb = 0.4 * 0.4 / s_base;
    double ib = s_base * 1e6 / (std::sqrt(3.0) * 400.0);
    return {id, from, to, 0.32 * km / zb, 0.08 * km / zb, 0.0, 235.0 / ib};
}

inline Asset der(const std::string& id, const std::string& bus, AssetKind kind, double p_mw,
                 double q_mvar, double s_mva, bool controllable, double s_base) {
    Asset a;
    a.id = id;
    a.bus = bus;
    a.kind = kind;
    a.p = p_mw / s_base;
    a.q_min = -q_mvar / s_base;
    a.q_max = q_mvar / s_base;
    a.s_max = s_mva / s_base;
    a.directly_controllable = controllable;
    a.control = controllable ? ControlCharacteristic{DirectSetpoint{0.0}}
                             : ControlCharacteristic{default_qofv_curve()};
    return a;
}

}  // namespace fixture_detail

// Synthetic MV feeder: 115/20 kV, 40 MVA HV/MV transformer, 15 secondary
// substations with PV, wind, storage, one charging park, commercial loads and
// 160 households over radial LV feeders. Electrical parameters are synthetic
// (cable data above); the topology is two MV branches off the station busbar.
inline Network build_fixture_feeder() {
    using namespace fixture_detail;
    Network net;
    net.s_base = 10.0;

    net.buses.push_back({"HV", BusKind::slack, 115.0, 0.90, 1.10, VoltageLevel::HV});
    net.buses.push_back({"MV00", BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});

    Transformer hvmv;
    hvmv.id = "T_HVMV";
    hvmv.hv_bus = "HV";
    hvmv.lv_bus = "MV00";
    hvmv.s_rated = 40.0;
    hvmv.r = 0.003;
    hvmv.x = 0.12;
    hvmv.is_interface = true;
    hvmv.tap = TapChanger{-9, 9, 0, 0.0125, 0, 1.00, 0.015, 1, TapMode::local};
    net.transformers.push_back(hvmv);

    auto pad = [](int k) {
        std::string s = std::to_string(k);
        return s.size() == 1 ? "0" + s : s;
    };

    // MV branches: MV00 -> MV01..MV08 and MV00 -> MV09..MV15
    for (int k = 1; k <= 15; ++k)
        net.buses.push_back({"MV" + pad(k), BusKind::load, 20.0, 0.90, 1.10, VoltageLevel::MV});
    for (int k = 1; k <= 8; ++k) {
        std::string from = k == 1 ? "MV00" : "MV" + pad(k - 1);
        net.lines.push_back(
            mv_line("L_MV" + pad(k), from, "MV" + pad(k), 1.2 + 0.15 * k, net.s_base));
    }
    for (int k = 9; k <= 15; ++k) {
        std::string from = k == 9 ? "MV00" : "MV" + pad(k - 1);
        net.lines.push_back(
            mv_line("L_MV" + pad(k), from, "MV" + pad(k), 1.0 + 0.2 * (k - 8), net.s_base));
    }

    // Substations: MV/LV transformer plus a three-bus LV feeder each.
    int households_left = 160;
    for (int k = 1; k <= 15; ++k) {
        std::string sk = pad(k);
        std::string lv0 = "LV" + sk + "_0", lv1 = "LV" + sk + "_1", lv2 = "LV" + sk + "_2";
        for (const auto& b : {lv0, lv1, lv2})
            net.buses.push_back({b, BusKind::load, 0.4, 0.90, 1.10, VoltageLevel::LV});

        Transformer tx;
        tx.id = "T_S" + sk;
        tx.hv_bus = "MV" + sk;
        tx.lv_bus = lv0;
        tx.s_rated = 0.63;
        tx.r = 0.011;
        tx.x = 0.045;
        tx.is_interface = true;
        if (k == 1)
            tx.tap = TapChanger{-4, 4, 0, 0.015, 0, 1.00, 0.012, 1, TapMode::optimized};
        else if (k == 8 || k == 15)
            tx.tap = TapChanger{-4, 4, 0, 0.015, 0, 1.00, 0.012, 1, TapMode::local};
        net.transformers.push_back(tx);

        net.lines.push_back(lv_line("L_" + lv1, lv0, lv1, 0.22, net.s_base));
        net.lines.push_back(lv_line("L_" + lv2, lv1, lv2, 0.25, net.s_base));

        // Households: 11 on the first ten substations, 10 on the rest.
        int hh = k <= 10 ? 11 : 10;
        households_left -= hh;
        for (int h = 0; h < hh; ++h) {
            Asset a;
            a.id = "HH" + sk + "_" + std::to_string(h);
            a.bus = h % 2 == 0 ? lv1 : lv2;
            a.kind = AssetKind::household;
            a.p = -0.0028 / net.s_base;  // -2.8 kW
            a.q_min = -0.005 / net.s_base;
            a.q_max = 0.005 / net.s_base;
            a.s_max = 0.009 / net.s_base;  // 9 kVA
            a.control = FixedCosPhi{0.97, true};
            net.assets.push_back(a);
        }

        // Rooftop PV with Q(V) on every substation (the indirect lever).
        Asset pv = der("PV" + sk, lv2, AssetKind::pv, 0.025, 0.013, 0.030, false, net.s_base);
        net.assets.push_back(pv);
        if (k % 3 == 0) {
            // every third substation also has a directly controllable PV
            Asset pv2 = der("PVC" + sk, lv1, AssetKind::pv, 0.020, 0.011, 0.025, true, net.s_base);
            pv2.control = default_qofv_curve();
            net.assets.push_back(pv2);
        }
    }
    (void)households_left;

    // Commercial loads at five substation busbars.
    for (int k : {2, 5, 8, 11, 14}) {
        Asset c;
        c.id = "COM" + pad(k);
        c.bus = "LV" + pad(k) + "_0";
        c.kind = AssetKind::commercial;
        c.p = -0.040 / net.s_base;  // -40 kW
        c.q_min = -0.030 / net.s_base;
        c.q_max = 0.030 / net.s_base;
        c.s_max = 0.060 / net.s_base;
        c.control = FixedCosPhi{0.95, true};
        net.assets.push_back(c);
    }

    // MV-connected plant.
    net.assets.push_back(der("PV_MV_A", "MV04", AssetKind::pv, 1.2, 0.7, 1.5, true, net.s_base));
    net.assets.push_back(der("PV_MV_B", "MV12", AssetKind::pv, 1.0, 0.6, 1.3, true, net.s_base));
    net.assets.push_back(der("WIND_A", "MV06", AssetKind::wind, 1.8, 0.9, 2.2, true, net.s_base));
    net.assets.push_back(der("WIND_B", "MV10", AssetKind::wind, 1.5, 0.8, 2.0, true, net.s_base));
    net.assets.push_back(
        der("STORAGE_MV", "MV02", AssetKind::storage, 0.0, 0.5, 0.8, true, net.s_base));
    net.assets.push_back(
        der("STORAGE_S05", "LV05_0", AssetKind::storage, 0.0, 0.15, 0.25, true, net.s_base));
    net.assets.push_back(
        der("STORAGE_S09", "LV09_0", AssetKind::storage, 0.0, 0.15, 0.25, true, net.s_base));
    Asset ev = der("EVPARK", "MV13", AssetKind::ev_charging, -0.8, 0.45, 1.2, true, net.s_base);
    net.assets.push_back(ev);

    return net;
}

// Day-shaped p profiles for the feeder's non-household assets.
inline void write_feeder15_day_profiles(const Network& net, const std::string& csv_path,
                                        int horizon = 96) {
    std::ofstream f(csv_path);
    if (!f) throw Error("cannot write profile file '" + csv_path + "'");
    f << "step,asset_id,p_mw\n";
    f << std::setprecision(10);
    auto solar = [&](int t) {
        if (t < 24 || t > 72) return 0.0;
        double s = std::sin(M_PI * (t - 24) / 48.0);
        return std::pow(s, 1.5);
    };
    auto wind = [&](int t, double phase) {
        double w = 0.40 + 0.20 * std::sin(2 * M_PI * t / 96.0 + phase) +
                   0.12 * std::sin(2 * M_PI * t / 31.0 + 2 * phase);
        return std::min(std::max(w, 0.05), 0.80);
    };
    for (int t = 0; t < horizon; ++t) {
        for (const auto& a : net.assets) {
            if (a.kind == AssetKind::household) continue;  // constant base load
            double rated_mw = std::abs(a.p) * net.s_base;
            double p_mw = 0.0;
            switch (a.kind) {
                case AssetKind::pv: p_mw = rated_mw * solar(t); break;
                case AssetKind::wind:
                    p_mw = rated_mw * wind(t, a.id.back() == 'A' ? 0.3 : 1.7);
                    break;
                case AssetKind::storage: {
                    double cap = a.s_max * net.s_base;
                    if (t >= 44 && t < 52) p_mw = -0.3 * cap;       // charge at noon
                    else if (t >= 72 && t < 84) p_mw = 0.3 * cap;   // evening discharge
                    break;
                }
                case AssetKind::ev_charging:
                    p_mw = -rated_mw * (0.15 + (t >= 32 && t < 56 ? 0.25 : 0.0) +
                                        (t >= 68 && t < 92 ? 0.55 : 0.0));
                    break;
                case AssetKind::commercial:
                    p_mw = -rated_mw * (0.4 + (t >= 32 && t < 76 ? 0.5 : 0.0));
                    break;
                default: p_mw = a.p * net.s_base; break;
            }
            f << t << "," << a.id << "," << p_mw << "\n";
        }
    }
}

// Scenario bundle under `dir`: grid, day profiles and two scenarios (a target
// step change, and the same day with a mid-run central/edge partition).
inline void write_feeder15_bundle(const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::filesystem::path base(dir);
    Network net = build_fixture_feeder();
    save_network(net, (base / "feeder15.json").string());
    write_feeder15_day_profiles(net, (base / "feeder15_day.csv").string());

    json day = {
        {"grid", "feeder15.json"},
        {"step_minutes", 15},
        {"horizon", 96},
        {"seed", 42},
        {"profiles", "feeder15_day.csv"},
        {"fallback_policy", "profiles"},
        {"events",
         json::array({{{"at", 8}, {"kind", "tso_q_request"}, {"q_mvar", 2.5}},
                      {{"at", 48}, {"kind", "tso_q_request"}, {"q_mvar", -2.0}}})}};
    std::ofstream f1(base / "feeder15_day.scenario.json");
    f1 << day.dump(2) << "\n";

    json part = day;
    part["seed"] = 42;
    part["events"].push_back({{"at", 40},
                              {"kind", "comm_partition"},
                              {"group_a", json::array({"central"})},
                              {"group_b", "all_edges"},
                              {"duration_steps", 16}});
    std::ofstream f2(base / "feeder15_partition.scenario.json");
    f2 << part.dump(2) << "\n";
}

}  // namespace voltcoord
