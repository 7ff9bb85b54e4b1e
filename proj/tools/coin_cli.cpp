// Experiment harness CLI: single runs, method comparisons, hyperparameter
// sweeps and feature dumps. Exit codes: 0 success, 2 validation/parse
// failure, 1 runtime failure.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coin/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string tok = csv.substr(pos, comma - pos);
        seeds.push_back(coin::detail::parse_u64(tok, "--seeds"));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return seeds;
}

std::vector<double> parse_value_list(const std::string& csv) {
    std::vector<double> values;
    size_t pos = 0;
    while (pos <= csv.size()) {
        size_t comma = csv.find(',', pos);
        std::string tok = csv.substr(pos, comma - pos);
        values.push_back(coin::detail::parse_double(tok, "--values"));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return values;
}

struct CommonArgs {
    std::string spec_path;
    std::string out_dir;
    std::string seeds_csv;
    int jobs = 1;
};

coin::ExperimentSpec load_spec(const CommonArgs& args) {
    coin::ExperimentSpec spec = coin::parse_spec_file(args.spec_path);
    if (!args.seeds_csv.empty()) spec.seeds = parse_seed_list(args.seeds_csv);
    if (!args.out_dir.empty()) spec.out_dir = args.out_dir;
    spec.validate();
    return spec;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
    cmd->add_option("--spec", args.spec_path, "experiment spec file")->required();
    if (with_out) cmd->add_option("--out", args.out_dir, "output directory (overrides spec)");
    cmd->add_option("--seeds", args.seeds_csv, "comma-separated seed list (overrides spec)");
    cmd->add_option("--jobs", args.jobs, "worker threads for independent runs");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"COIN two-stage fine-tuning experiments on synthetic data"};
    app.require_subcommand(1);

    CommonArgs run_args, compare_args, sweep_args, dump_args;
    std::string sweep_param, sweep_values_csv;
    std::string dump_ckpt, dump_layer = "z", dump_out;

    CLI::App* run_cmd = app.add_subcommand("run", "train and write per-run reports");
    add_common(run_cmd, run_args);

    CLI::App* compare_cmd = app.add_subcommand("compare", "compare methods across seeds");
    add_common(compare_cmd, compare_args);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "sweep one hyperparameter");
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--param", sweep_param, "one of alpha, tau, N")->required();
    sweep_cmd->add_option("--values", sweep_values_csv, "comma-separated values")->required();

    CLI::App* dump_cmd = app.add_subcommand("dump-features", "dump test-split features to CSV");
    add_common(dump_cmd, dump_args, false);
    dump_cmd->add_option("--ckpt", dump_ckpt, "checkpoint file")->required();
    dump_cmd->add_option("--layer", dump_layer, "feature layer: z or v");
    dump_cmd->add_option("--out", dump_out, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            coin::ExperimentSpec spec = load_spec(run_args);
            coin::cmd_run(spec, spec.out_dir, run_args.jobs);
        } else if (compare_cmd->parsed()) {
            coin::ExperimentSpec spec = load_spec(compare_args);
            coin::cmd_compare(spec, spec.out_dir, compare_args.jobs);
        } else if (sweep_cmd->parsed()) {
            coin::ExperimentSpec spec = load_spec(sweep_args);
            coin::cmd_sweep(spec, sweep_param, parse_value_list(sweep_values_csv), spec.out_dir,
                            sweep_args.jobs);
        } else if (dump_cmd->parsed()) {
            coin::ExperimentSpec spec = load_spec(dump_args);
            coin::cmd_dump_features(dump_ckpt, spec,
                                    coin::detail::parse_layer(dump_layer, "--layer"), dump_out);
        }
    } catch (const coin::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const coin::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
