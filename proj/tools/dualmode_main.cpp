// Command-line entry point: run the pipeline end to end or one stage at a
// time, and build ablation tables from finished runs.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dualmode/experiment.hpp"
#include "dualmode/io.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string variant;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out) {
    cmd->add_option("--config", args.config_path, "experiment config file (JSON); defaults apply when omitted")
        ->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", args.out_dir, "run directory");
    if (needs_out) out->required();
    cmd->add_option("--seed", args.seed, "override the master seed");
    cmd->add_option("--variant", args.variant, "override rl.variant (DualGRPO, NoDualAdv, NoDualAdvNoPfxSmp, StandardGRPO)");
}

dualmode::ExperimentConfig resolve(const CommonArgs& args) {
    dualmode::ExperimentConfig config =
        args.config_path.empty() ? dualmode::default_config() : dualmode::load_config(args.config_path);
    return dualmode::resolve_config(config, args.seed, args.variant);
}

void prepare_run_dir(const dualmode::ExperimentConfig& config, const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw std::runtime_error("cannot create run directory: " + dir);
    dualmode::write_text_file((std::filesystem::path(dir) / "config.resolved.json").string(),
                              dualmode::config_to_json(config));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-mode policy laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    std::vector<std::string> compare_dirs;
    std::string compare_out;

    auto* cmd_generate = app.add_subcommand("generate", "generate the datasets only");
    auto* cmd_warmup = app.add_subcommand("warmup", "supervised warm-up from generated data");
    auto* cmd_train = app.add_subcommand("train", "RL from the warm-up checkpoint");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate the latest checkpoint");
    auto* cmd_sweep = app.add_subcommand("sweep", "mixed-ratio sweep of the latest checkpoint");
    auto* cmd_all = app.add_subcommand("all", "full pipeline: generate, warmup, train, eval, sweep");
    for (CLI::App* cmd : {cmd_generate, cmd_warmup, cmd_train, cmd_eval, cmd_sweep, cmd_all}) {
        add_common(cmd, args, true);
    }

    auto* cmd_compare = app.add_subcommand("compare", "ablation table from finished runs");
    cmd_compare->add_option("runs", compare_dirs, "run directories")->required()->expected(-2);
    cmd_compare->add_option("--out", compare_out, "write the table here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_compare->parsed()) {
            const std::string table = dualmode::compare_runs(compare_dirs);
            if (compare_out.empty()) {
                std::cout << table;
            } else {
                dualmode::write_text_file(compare_out, table);
            }
            return 0;
        }

        const dualmode::ExperimentConfig config = resolve(args);
        if (cmd_all->parsed()) {
            dualmode::run_experiment(config, args.out_dir);
            return 0;
        }
        prepare_run_dir(config, args.out_dir);
        if (cmd_generate->parsed()) dualmode::stage_generate(config, args.out_dir);
        if (cmd_warmup->parsed()) dualmode::stage_warmup(config, args.out_dir);
        if (cmd_train->parsed()) dualmode::stage_train(config, args.out_dir);
        if (cmd_eval->parsed()) dualmode::stage_evaluate(config, args.out_dir);
        if (cmd_sweep->parsed()) dualmode::stage_sweep(config, args.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
