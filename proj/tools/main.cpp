#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "tuneout/errors.hpp"

#ifndef TUNEOUT_DEFAULT_SPECIES
#define TUNEOUT_DEFAULT_SPECIES "data/rb87.species"
#endif

namespace {

// 0 success, 1 validation, 2 computation, 3 non-convergence.
int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "tuneout: " << kind << ": " << e.what() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace tuneout;
    CLI::App app{"Tune-out wavelength toolkit: polarisabilities, Kapitza-Dirac analysis and fits"};
    app.set_version_flag("--version", "tuneout-cli 1.0.0");
    app.set_config("--config", "", "TOML configuration; [subcommand] tables hold subcommand options");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.option_defaults()->always_capture_default();
    app.fallthrough();
    app.require_subcommand(1);

    cli::Globals g;
    g.species = TUNEOUT_DEFAULT_SPECIES;
    app.add_option("--species", g.species, "Species data file")->check(CLI::ExistingFile);
    app.add_option("--output", g.output, "JSONL output file; stdout when omitted");
    app.add_option("--csv", g.csv, "CSV table output file");
    app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);

    const auto commands = cli::add_commands(app, g);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        for (const auto& c : commands) {
            if (c.app->parsed()) c.run();
        }
    } catch (const ValidationError& e) {
        return report("validation error", e, 1);
    } catch (const NonConvergenceError& e) {
        return report("no convergence", e, 3);
    } catch (const ComputationError& e) {
        return report("computation error", e, 2);
    } catch (const std::exception& e) {
        return report("error", e, 2);
    }
    return 0;
}
