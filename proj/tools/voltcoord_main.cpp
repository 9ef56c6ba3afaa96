#include <iostream>

#include <CLI11.hpp>

#include "voltcoord/voltcoord.hpp"

using namespace voltcoord;

namespace {

// 0 = success and zero violations, 2 = completed with violations, 1 = error.
constexpr int kOk = 0;
constexpr int kError = 1;
constexpr int kViolations = 2;

int cmd_validate(const std::string& grid_path) {
    std::ifstream in(grid_path);
    if (!in) {
        std::cerr << "error: cannot open '" << grid_path << "'\n";
        return kError;
    }
    Network net = network_from_json(json::parse(in));
    ValidationReport rep = validate(net);
    for (const auto& w : rep.warnings) std::cout << "warning: " << w << "\n";
    for (const auto& e : rep.errors) std::cout << "error: " << e << "\n";
    if (rep.ok()) {
        std::cout << "grid '" << grid_path << "' is valid (" << net.buses.size() << " buses, "
                  << net.lines.size() << " lines, " << net.transformers.size()
                  << " transformers, " << net.assets.size() << " assets)\n";
        return kOk;
    }
    return kViolations;
}

InterfaceSpec resolve_interface(const Network& net, const std::string& id) {
    if (!id.empty()) return interface_of(net, id);
    std::string found;
    for (const auto& t : net.transformers) {
        const Bus* hv = net.find_bus(t.hv_bus);
        if (t.is_interface && hv && hv->level == VoltageLevel::HV) {
            if (!found.empty()) throw Error("multiple HV-side interfaces, use --interface");
            found = t.id;
        }
    }
    if (found.empty()) throw Error("no HV-side interface transformer; use --interface");
    return interface_of(net, found);
}

int cmd_flex(const std::string& grid_path, const std::string& interface_id,
             const std::string& method, int grid_points) {
    Network net = load_network(grid_path);
    InterfaceSpec ifc = resolve_interface(net, interface_id);
    ConstraintSet cs = ConstraintSet::from_network(net, ifc);
    FlexRange r = flex_range(net, ifc, cs,
                             method == "oracle" ? FlexMethod::oracle : FlexMethod::sensitivity,
                             grid_points);
    if (!r.feasible) {
        std::cout << "interface " << ifc.transformer_id << ": no feasible operating point\n";
        return kViolations;
    }
    std::cout << "interface " << ifc.transformer_id << " (" << method << ")\n"
              << "  q_min = " << r.q_min * net.s_base << " MVar (" << r.q_min << " pu)\n"
              << "  q_max = " << r.q_max * net.s_base << " MVar (" << r.q_max << " pu)\n"
              << "  width = " << (r.q_max - r.q_min) * net.s_base << " MVar\n";
    for (const auto* w : {&r.witness_min, &r.witness_max}) {
        VerifiedPoint vp = verify_bundle(net, ifc, cs, *w);
        if (!vp.violations.empty()) {
            std::cout << "  witness re-verification FAILED\n";
            return kViolations;
        }
    }
    std::cout << "  witnesses re-verified: ok\n";
    return kOk;
}

int cmd_allocate(const std::string& grid_path, const std::string& interface_id,
                 double target_mvar) {
    Network net = load_network(grid_path);
    InterfaceSpec ifc = resolve_interface(net, interface_id);
    ConstraintSet cs = ConstraintSet::from_network(net, ifc);
    SetpointBundle b = allocate_setpoints(net, ifc, cs, target_mvar / net.s_base);
    std::cout << "target    " << target_mvar << " MVar\n"
              << "achieved  " << b.achieved_q_if * net.s_base << " MVar\n"
              << "deviation " << b.deviation * net.s_base << " MVar\n";
    for (const auto& [tid, pos] : b.taps) std::cout << "tap " << tid << " -> " << pos << "\n";
    for (const auto& [aid, q] : b.q_setpoints)
        std::cout << "q   " << aid << " -> " << q * net.s_base << " MVar\n";
    VerifiedPoint vp = verify_bundle(net, ifc, cs, b);
    if (!vp.violations.empty()) {
        for (const auto& v : vp.violations) std::cout << "violation: " << v.describe() << "\n";
        return kViolations;
    }
    return kOk;
}

int cmd_run(const std::string& scenario_path, const std::string& out_dir, long long seed,
            const std::string& format) {
    Scenario sc = load_scenario(scenario_path);
    if (seed >= 0) sc.seed = static_cast<uint64_t>(seed);
    ResultLog log = run_scenario(sc);
    emit_results(log, format == "json-lines" ? ResultFormat::json_lines : ResultFormat::csv,
                 out_dir);
    json s = summarize(log);
    std::cout << s.dump(2) << "\n";
    size_t violations = s.at("violation_count").get<size_t>();
    std::cout << "results written to " << out_dir << "\n";
    return violations == 0 ? kOk : kViolations;
}

int cmd_fixture(const std::string& name, const std::string& out) {
    if (name == "feeder15") {
        Network net = build_fixture_feeder();
        ValidationReport rep = validate(net);
        if (!rep.ok()) throw ValidationError(rep.errors);
        save_network(net, out);
        std::cout << "wrote " << out << "\n";
        return kOk;
    }
    if (name == "two-bus") {
        save_network(build_two_bus_fixture(), out);
        std::cout << "wrote " << out << "\n";
        return kOk;
    }
    if (name == "feeder15-day") {
        write_feeder15_bundle(out);
        std::cout << "wrote feeder15 grid, day profiles and scenarios under " << out << "\n";
        return kOk;
    }
    std::cerr << "unknown fixture '" << name << "' (feeder15, feeder15-day, two-bus)\n";
    return kError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voltcoord - coordinated volt/VAR control simulator"};
    app.require_subcommand(1);

    std::string grid, interface_id, method = "sensitivity", scenario, out_dir = "out",
                fixture_name, out_file, format = "csv";
    int grid_points = defaults::oracle_grid_points;
    double target_mvar = 0.0;
    long long seed = -1;

    auto* validate_cmd = app.add_subcommand("validate", "validate a grid file");
    validate_cmd->add_option("grid", grid, "grid file")->required();

    auto* flex_cmd = app.add_subcommand("flex", "interface reactive power flexibility range");
    flex_cmd->add_option("grid", grid, "grid file")->required();
    flex_cmd->add_option("--interface", interface_id, "interface transformer id");
    flex_cmd->add_option("--method", method, "oracle|sensitivity")
        ->check(CLI::IsMember({"oracle", "sensitivity"}));
    flex_cmd->add_option("--grid-points", grid_points, "oracle grid points per asset");

    auto* alloc_cmd = app.add_subcommand("allocate", "allocate a Q target to setpoints");
    alloc_cmd->add_option("grid", grid, "grid file")->required();
    alloc_cmd->add_option("--interface", interface_id, "interface transformer id");
    alloc_cmd->add_option("--target", target_mvar, "Q target at the interface, MVar")->required();

    auto* run_cmd = app.add_subcommand("run", "run a scenario");
    run_cmd->add_option("scenario", scenario, "scenario file")->required();
    run_cmd->add_option("--out", out_dir, "output directory");
    run_cmd->add_option("--seed", seed, "override the scenario seed");
    run_cmd->add_option("--format", format, "csv|json-lines")
        ->check(CLI::IsMember({"csv", "json-lines"}));

    auto* fix_cmd = app.add_subcommand("fixture", "write a built-in fixture");
    fix_cmd->add_option("name", fixture_name, "feeder15|feeder15-day|two-bus")->required();
    fix_cmd->add_option("--out", out_file, "output file or directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate_cmd->parsed()) return cmd_validate(grid);
        if (flex_cmd->parsed()) return cmd_flex(grid, interface_id, method, grid_points);
        if (alloc_cmd->parsed()) return cmd_allocate(grid, interface_id, target_mvar);
        if (run_cmd->parsed()) return cmd_run(scenario, out_dir, seed, format);
        if (fix_cmd->parsed()) return cmd_fixture(fixture_name, out_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kError;
    }
    return kError;
}
