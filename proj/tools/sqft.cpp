#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "sqft/cli.hpp"

namespace {

void print_failures(const sqft::cli::RunResult& r)
{
    for (const auto& f : r.failures) std::cerr << "FAIL " << f.to_json().dump() << "\n";
}

}  // namespace

int main(int argc, char** argv)
{
    using namespace sqft::cli;
    CLI::App app{"stochastic field-theory experiment runner"};
    app.set_version_flag("--version", std::string(SQFT_VERSION));
    app.require_subcommand(1);
    app.fallthrough();

    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    bool strict = false;
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--threads", threads, "worker threads (0 = hardware)");
    app.add_flag("--strict", strict, "treat unknown config fields as errors");

    auto* run_cmd = app.add_subcommand("run", "run an experiment config");
    std::string config;
    std::string out_dir;
    run_cmd->add_option("config", config, "path to a JSON config")->required();
    run_cmd->add_option("-o,--output", out_dir, "output directory (overrides config and SQFT_OUTPUT_ROOT)");

    auto* list_cmd = app.add_subcommand("list", "list experiments as JSON");
    auto* desc_cmd = app.add_subcommand("describe", "print the parameter schema of an experiment");
    std::string exp_id;
    desc_cmd->add_option("id", exp_id, "experiment id")->required();
    auto* self_cmd = app.add_subcommand("selftest", "run fast internal checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }
    sqft::set_default_threads(threads);

    if (*list_cmd) {
        std::cout << list_experiments().dump(2) << "\n";
        return kExitPass;
    }
    if (*desc_cmd) {
        try {
            std::cout << describe(exp_id).dump(2) << "\n";
            return kExitPass;
        } catch (const sqft::ConfigError& e) {
            std::cerr << "config error [" << e.field() << "]: " << e.what() << "\n";
            return kExitConfig;
        }
    }
    if (*self_cmd) {
        const auto s = selftest(seed.value_or(20261015));
        for (const auto& r : s.reports) std::cout << (r.pass ? "PASS " : "FAIL ") << r.to_json().dump() << "\n";
        return s.pass ? kExitPass : kExitCheck;
    }

    RunOptions opt;
    opt.seed = seed;
    opt.threads = threads;
    opt.strict = strict;
    if (!out_dir.empty()) opt.output_dir = out_dir;
    const auto res = run(config, opt);
    if (!res.message.empty()) std::cerr << res.message << "\n";
    print_failures(res);
    if (res.exit_code != kExitConfig || !res.output_dir.empty())
        std::cout << "status " << res.exit_code << " output " << res.output_dir.string() << "\n";
    return res.exit_code;
}
