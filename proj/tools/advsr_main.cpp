#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "advsr/harness.hpp"

int main(int argc, char** argv) {
    CLI::App app{"adversarial-audio toolkit for speaker recognition"};
    app.require_subcommand(1);

    struct Args {
        std::string config;
        uint64_t seed = 0;
        bool seed_set = false;
        std::string out;
    };

    std::vector<std::pair<CLI::App*, std::shared_ptr<Args>>> subs;
    for (const auto& name : advsr::harness::command_names()) {
        auto args = std::make_shared<Args>();
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", args->config, "experiment config (JSON)")->required();
        sub->add_option("--seed", args->seed, "override config seed")->each([args](const std::string&) {
            args->seed_set = true;
        });
        sub->add_option("--out", args->out, "override output directory");
        subs.emplace_back(sub, args);
    }

    CLI11_PARSE(app, argc, argv);

    for (const auto& [sub, args] : subs) {
        if (!sub->parsed()) continue;
        advsr::harness::Options opts;
        opts.config_path = args->config;
        if (args->seed_set) opts.seed = args->seed;
        if (!args->out.empty()) opts.out_dir = args->out;
        try {
            return advsr::harness::run(sub->get_name(), opts);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
    }
    return 1;
}
