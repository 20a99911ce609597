// ora: command-line driver for the pretraining and probing pipeline.
//
//   ora <command> [--config FILE] [--set key=value]... [--objective K] [--seed N] [--out PATH]
//
// Exit status 0 on success, 2 on usage or configuration errors, 1 on runtime
// failures. Errors are one JSON line on stderr.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ora/pipeline.hpp"

namespace {

int fail(int code, const std::string& kind, const std::string& command, const std::string& message) {
    nlohmann::json j = {{"error", kind}, {"command", command}, {"message", message}};
    std::cerr << j.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Marked time-to-event pretraining toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("ora ") + ora::kVersion);

    struct Options {
        std::string config;
        std::vector<std::string> sets;
        std::string objective, seed, out;
    } opts;

    for (const auto& [name, fn] : ora::commands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config, "key=value config file (a manifest works too)")->check(CLI::ExistingFile);
        sub->add_option("--set", opts.sets, "override one key, key=value")->allow_extra_args(false);
        sub->add_option("--objective", opts.objective, "ntp, tpp or ora");
        sub->add_option("--seed", opts.seed, "root seed");
        sub->add_option("--out", opts.out, "output path");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(2, "usage", "", e.what());
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        ora::RunConfig cfg;
        if (!opts.config.empty()) cfg.merge_text(ora::read_file(opts.config));
        for (const auto& kv : opts.sets) cfg.assign(kv);
        if (!opts.objective.empty()) cfg.set("objective", opts.objective);
        if (!opts.seed.empty()) cfg.set("seed", opts.seed);
        if (!opts.out.empty()) cfg.set("out", opts.out);
        ora::commands().at(command)(cfg);
    } catch (const ora::ConfigError& e) {
        return fail(2, e.kind(), command, e.what());
    } catch (const ora::Error& e) {
        return fail(1, e.kind(), command, e.what());
    } catch (const std::exception& e) {
        return fail(1, "internal", command, e.what());
    }
    return 0;
}
