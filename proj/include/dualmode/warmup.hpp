#pragma once

// Stage 1: mixed-mode supervised warm-up. Builds mode-labeled demonstrations
// (personalized-QA unconditionally Personalized; objective tasks labeled by a
// gain test against a probe policy) and fits the policy by full-batch
// maximum likelihood so both prefix-conditioned behaviors exist before RL.

#include <cstdint>
#include <string>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/policy.hpp"

namespace dualmode {

struct Demonstration {
    long long instance_id = 0;
    Mode mode = Mode::General;
    int target_answer = 0;  // answer-vocab id; the correct answer under the labeled mode's information
};

struct WarmupConfig {
    int probe_epochs = 30;       // brief pre-fit of the labeling probe
    double probe_lr = 0.2;
    int gain_samples = 8;        // k rollouts per mode in the gain test
    double gain_temperature = 1.0;  // probe rollouts drawn at the policy's native distribution
    int epochs = 400;            // SFT epochs
    double lr = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

// The answer key a demonstration teaches: objective_answer for objective
// tasks, persona_answer for personalized QA.
int demo_target(const TaskInstance& instance);

// Probe for gain-based labeling: a fresh policy briefly pre-fit on both modes
// of every instance (answer keys only; alignment is never consulted). Kept
// deliberately short so persona decoys still mislead it.
PolicyParams build_probe(const std::vector<TaskInstance>& instances, const PolicyDims& dims,
                         const WarmupConfig& config);

// PersonalizedQA -> Personalized unconditionally. Objective: k forced rollouts
// per mode under the probe; Personalized only if its correctness rate strictly
// exceeds the General rate (ties mean no clear benefit, so General).
Mode gain_based_label(const TaskInstance& instance, const PolicyParams& probe, int k, double temperature, Rng& rng);

// One demonstration per instance, labeled with gain_based_label using a
// per-instance stream derived from config.seed (order-independent).
std::vector<Demonstration> build_demonstrations(const std::vector<TaskInstance>& instances, const PolicyParams& probe,
                                                const WarmupConfig& config);

// Full-batch gradient descent on the mean negative log-likelihood of
// (prefix, target answer), with persona masked at answer positions of
// General-mode demos. The step halves on any loss increase, so the recorded
// sequence (epoch 0 = initial loss, then one entry per epoch) never rises.
// lr = 0 returns the parameters bitwise-unchanged.
PolicyParams sft_fit(const PolicyParams& params, const std::vector<Demonstration>& demos,
                     const std::vector<TaskInstance>& instances, int epochs, double lr,
                     std::vector<double>* loss_curve = nullptr);

// Mean NLL of the demo set under the current parameters.
double sft_loss(const PolicyParams& params, const std::vector<Demonstration>& demos,
                const std::vector<TaskInstance>& instances);

// Line-delimited demo records.
void save_demos_jsonl(const std::string& path, const std::vector<Demonstration>& demos);
std::vector<Demonstration> load_demos_jsonl(const std::string& path);

}  // namespace dualmode
