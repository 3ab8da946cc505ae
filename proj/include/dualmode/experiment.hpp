#pragma once

// Config-driven experiment pipeline: dataset generation -> warm-up -> RL ->
// evaluation -> sweep, one run per directory, everything reproducible from
// the resolved config stored alongside the artifacts.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dualmode/dualgrpo.hpp"
#include "dualmode/eval.hpp"
#include "dualmode/synthenv.hpp"
#include "dualmode/warmup.hpp"

namespace dualmode {

struct DataConfig {
    int sft_count = 3000;
    int rl_count = 4000;
    int eval_count = 2000;

    void validate() const;
};

struct PolicyConfig {
    int hidden = 48;
    int horizon = 1;
};

struct SweepConfig {
    std::vector<double> ratios{0.0, 0.25, 0.5, 0.75, 1.0};
    int count = 1500;
};

struct ExperimentConfig {
    std::string run_name = "default";
    std::uint64_t seed = 1;
    EnvConfig env;
    DataConfig data;
    PolicyConfig policy;
    WarmupConfig warmup;
    RLConfig rl;
    EvalSettings eval;
    SweepConfig sweep;
};

ExperimentConfig default_config();

// Defaults overridden by whatever fields the file provides; unknown fields
// are rejected so typos cannot silently fall back to defaults.
ExperimentConfig load_config(const std::string& path);

// Fills every stage seed left at 0 from the master seed (a seed override
// replaces the master and rederives all unset stage seeds).
ExperimentConfig resolve_config(ExperimentConfig config, std::optional<std::uint64_t> seed_override = std::nullopt,
                                const std::string& variant_override = "");

std::string config_to_json(const ExperimentConfig& config);
PolicyDims policy_dims(const ExperimentConfig& config);

// Individual pipeline stages; each reads its inputs from (and writes its
// artifacts into) the run directory. `config` must already be resolved.
void stage_generate(const ExperimentConfig& config, const std::string& run_dir);
void stage_warmup(const ExperimentConfig& config, const std::string& run_dir);
void stage_train(const ExperimentConfig& config, const std::string& run_dir);
void stage_evaluate(const ExperimentConfig& config, const std::string& run_dir);
void stage_sweep(const ExperimentConfig& config, const std::string& run_dir);

// The full pipeline; writes the resolved config and a manifest, then runs
// every stage in order.
void run_experiment(const ExperimentConfig& config, const std::string& run_dir);

// Ablation table: one row per run (accuracy by slice plus oracle agreement).
// Throws on missing directories/artifacts (naming the path) and on runs whose
// slice sets disagree.
std::string compare_runs(const std::vector<std::string>& run_dirs);

}  // namespace dualmode
