#include "cctsens/commands.hpp"

#include <CLI11.hpp>

#include <string>

int main(int argc, char** argv) {
    CLI::App app{"Critical clearing time and its parameter sensitivity for constrained systems"};
    app.require_subcommand(1);

    std::string config;
    std::string tol;
    cctsens::CommandOptions co;
    std::string out = ".";

    const std::vector<std::pair<const char*, const char*>> commands{
        {"cct", "Critical clearing time by bisection, with mode and limit point"},
        {"sens", "CCT sensitivity for each active parameter"},
        {"sweep", "CCT (and tangent slopes) over a one-parameter range"},
        {"sr-grid", "Post-fault stability region on a planar grid"},
        {"validate", "Finite-difference and brute-force oracle checks"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config, "JSON run configuration")->required();
        sub->add_option("--out", out, "Output directory")->capture_default_str();
        sub->add_flag("--verify", co.verify, "Attach oracle comparisons; exit 3 when one fails");
        sub->add_option("--tol", tol, "Tolerance overrides, e.g. bisection_tol=1e-4,t_max=30");
        sub->add_option("--jobs", co.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return cctsens::kExitConfig;
    }
    co.out = out;
    return cctsens::run_command(app.get_subcommands().front()->get_name(), config, tol, co);
}
