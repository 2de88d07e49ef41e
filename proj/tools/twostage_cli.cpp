#include "twostage/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

int main(int argc, char **argv) {
    namespace cli = twostage::cli;
    CLI::App app{"Two-stage separable least-squares estimation toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    for (const auto &name : cli::command_names()) {
        auto *sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (overrides the config's 'out')");
        sub->add_option("--seed", seed, "override the command's primary seed");
        sub->add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kExitConfig;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    cli::RunOptions opt;
    try {
        opt = cli::options_from_file(config_path);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cli::kExitConfig;
    }
    opt.config.erase("out");
    if (!out_dir.empty())
        opt.out = out_dir;
    opt.seed = seed;
    opt.threads = threads;
    return cli::dispatch(command, opt);
}
