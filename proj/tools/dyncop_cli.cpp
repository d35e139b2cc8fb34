#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dyncop.h"

namespace {

int exit_code(dc_status s) {
    switch (s) {
        case DC_OK: return 0;
        case DC_ERR_CONFIG:
        case DC_ERR_INPUT:
        case DC_ERR_ARGUMENT: return 2;
        default: return 3;
    }
}

std::string output_dir(const dc_config* cfg) {
    size_t needed = 0;
    dc_config_output(cfg, nullptr, 0, &needed);
    std::string s(needed, '\0');
    dc_config_output(cfg, s.data(), s.size(), &needed);
    s.resize(needed > 0 ? needed - 1 : 0);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-and-space-varying copulas: simulate, solve margins, evolve, validate"};
    app.require_subcommand(1);

    std::string config, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads, resolution;
    for (const char* name : {"simulate", "marginal", "evolve", "validate", "product"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "experiment config file")->required();
        sub->add_option("--out", out, "output directory (default: run.output)");
        sub->add_option("--seed", seed, "root seed, overrides run.seed");
        sub->add_option("--threads", threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
        sub->add_option("--resolution", resolution, "lattice resolution, overrides grid.resolution")
            ->check(CLI::Range(5, 100000));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    dc_config* cfg = nullptr;
    dc_status st = dc_config_load(config.c_str(), &cfg);
    if (st != DC_OK) {
        std::fprintf(stderr, "dyncop: %s: %s\n", dc_status_name(st), dc_last_error());
        return exit_code(st);
    }
    if (seed) dc_config_set_seed(cfg, *seed);
    if (threads) dc_config_set_threads(cfg, *threads);
    if (resolution) dc_config_set_resolution(cfg, *resolution);
    if (out.empty()) out = output_dir(cfg);

    std::vector<char> summary(4096);
    size_t needed = 0;
    st = dc_run(cfg, command.c_str(), out.c_str(), summary.data(), summary.size(), &needed);
    if (needed > summary.size()) {
        summary.resize(needed);
        st = dc_run(cfg, command.c_str(), out.c_str(), summary.data(), summary.size(), &needed);
    }
    dc_config_free(cfg);
    if (st != DC_OK) std::fprintf(stderr, "dyncop %s: %s: %s\n", command.c_str(), dc_status_name(st), dc_last_error());
    if (needed > 0) std::printf("%s\n", summary.data());
    return exit_code(st);
}
