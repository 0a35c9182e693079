#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mdiqds/cli.hpp"

int main(int argc, char** argv) {
    using namespace mdiqds;

    CLI::App app{"mdiqds: measurement-device-independent quantum digital signatures, simulated"};
    app.footer(cli::kExitCodeTable);
    app.require_subcommand(1);

    // simulate
    cli::SimulateArgs sim_args;
    std::uint64_t seed_flag = 0;
    auto* sim_cmd = app.add_subcommand("simulate", "run the three quantum sessions, dump tallies");
    sim_cmd->add_option("--config", sim_args.config_path, "experiment config file")->required();
    auto* sim_seed = sim_cmd->add_option("--seed", seed_flag, "override the session seed");
    sim_cmd->add_option("--out", sim_args.out_dir, "output directory (default: config [output])");
    sim_cmd->add_flag("--oracle", sim_args.oracle, "tag true photon-number classes in the tallies");

    // analyze
    cli::AnalyzeArgs an_args;
    auto* an_cmd = app.add_subcommand("analyze", "finite-key bounds and key length");
    an_cmd->add_option("--config", an_args.config_path, "config file (for the epsilon budget)");
    an_cmd->add_option("--table1", an_args.table1_path, "pre-tabulated bounds file");
    an_cmd->add_option("--tally", an_args.tally_paths, "tally file (repeatable, shards merged)");
    an_cmd->add_option("--out", an_args.out_path, "also write the report here");
    an_cmd->add_option("--deviation", an_args.deviation, "concentration bound: hoeffding or kl");

    // sign-demo
    cli::SignDemoArgs demo_args;
    std::uint64_t demo_seed_flag = 0;
    auto* demo_cmd = app.add_subcommand("sign-demo", "full three-party signature protocol run");
    demo_cmd->add_option("--config", demo_args.config_path, "experiment config file")->required();
    auto* demo_seed = demo_cmd->add_option("--seed", demo_seed_flag, "override the session seed");
    demo_cmd->add_option("--out", demo_args.out_dir, "output directory (default: config [output])");
    demo_cmd->add_option("--transport", demo_args.transport, "inproc or socket")
        ->check(CLI::IsMember({"inproc", "socket"}));

    // bounds
    cli::BoundsArgs bounds_args;
    auto* bounds_cmd = app.add_subcommand("bounds", "security bound sweep to CSV");
    bounds_cmd->add_option("--L", bounds_args.L_list, "comma list of signature lengths");
    bounds_cmd->add_option("--s-a", bounds_args.s_a_list, "comma list of s_a values")->required();
    bounds_cmd->add_option("--s-v", bounds_args.s_v_list, "comma list of s_v values")->required();
    bounds_cmd->add_option("--p-e", bounds_args.p_e_list, "comma list of p_E values")->required();
    bounds_cmd->add_option("--eps-qkd", bounds_args.eps_qkd, "distribution-stage failure budget");
    bounds_cmd->add_option("--f", bounds_args.f, "forging-bound split parameter f");
    bounds_cmd->add_option("--eps", bounds_args.eps, "forging-bound smoothing eps");
    bounds_cmd->add_option("--eps-pe", bounds_args.eps_pe, "parameter-estimation failure budget");
    bounds_cmd->add_option("--eps-est", bounds_args.eps_est, "min-entropy estimation budget");
    bounds_cmd->add_option("--out", bounds_args.out_path, "also write the CSV here");

    // keygen
    cli::KeygenArgs key_args;
    std::uint64_t key_seed_flag = 0, key_bits_flag = 0;
    auto* key_cmd = app.add_subcommand("keygen", "write pre-shared authentication key files");
    key_cmd->add_option("--config", key_args.config_path, "config file (dir, bits, seed source)");
    key_cmd->add_option("--dir", key_args.dir, "key directory");
    auto* key_seed = key_cmd->add_option("--seed", key_seed_flag, "generation seed");
    auto* key_bits = key_cmd->add_option("--bits", key_bits_flag, "bits per pair key file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints help or the parse message
        return code == 0 ? 0 : cli::exit_usage;
    }

    if (*sim_seed) sim_args.seed = seed_flag;
    if (*demo_seed) demo_args.seed = demo_seed_flag;
    if (*key_seed) key_args.seed = key_seed_flag;
    if (*key_bits) key_args.bits = key_bits_flag;

    return cli::guarded(
        [&]() -> int {
            if (sim_cmd->parsed()) return cli::run_simulate(sim_args, std::cout);
            if (an_cmd->parsed()) return cli::run_analyze(an_args, std::cout);
            if (demo_cmd->parsed()) return cli::run_sign_demo(demo_args, std::cout);
            if (bounds_cmd->parsed()) return cli::run_bounds(bounds_args, std::cout);
            if (key_cmd->parsed()) return cli::run_keygen(key_args, std::cout);
            return cli::exit_usage;
        },
        std::cerr);
}
