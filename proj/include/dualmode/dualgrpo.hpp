#pragma once

// Stage 2: RL on top of the warm-up checkpoint. Prefix-forced rollouts,
// intra/inter-mode advantage composition with prefix amplification, and a
// KL-regularized clipped policy-gradient update against a frozen reference.
// The ablation variants drop the dual advantage (pooled centering) and/or the
// forced prefix sampling.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/policy.hpp"
#include "dualmode/rng.hpp"

namespace dualmode {

enum class Variant { DualGRPO, NoDualAdv, NoDualAdvNoPfxSmp, StandardGRPO };

const std::string& to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct RLConfig {
    int n_per_mode = 4;         // 2n = 8 rollouts per sample
    double beta_prefix = 2.0;   // prefix advantage amplification
    double kl_coeff = 0.04;
    double clip_eps = 0.2;      // inert at one update per rollout batch, but implemented
    double temperature = 0.6;
    double lr = 0.05;
    int steps = 700;
    int batch_size = 16;
    std::uint64_t seed = 0;
    Variant variant = Variant::DualGRPO;
    // Off by default: the advantage definition mean-centers only. When set,
    // centered advantages are additionally divided by their group std.
    bool normalize_advantages = false;
    int checkpoint_interval = 0;  // 0 = only the final checkpoint

    void validate() const;
};

struct StepMetrics {
    double mean_reward_gm = 0.0;
    double mean_reward_pm = 0.0;
    double p_personalized_mean = 0.0;  // selector mass on Personalized, before the update
    double mode_entropy = 0.0;         // mean binary entropy of the selector
    double kl = 0.0;                   // mean per-token KL estimate against the reference
    double loss = 0.0;                 // negative surrogate value at the pre-update parameters
};

// Exactly n trajectories per forced mode, each scored by the environment.
RolloutGroup prefix_forced_rollout(const PolicyParams& params, const TaskInstance& instance, int n,
                                   double temperature, Rng& rng);

// Per-trajectory advantages, indexed general-then-personalized like
// RolloutGroup::trajectory.
std::vector<double> intra_advantage(const RolloutGroup& group);  // r - mu_m
std::vector<double> inter_advantage(const RolloutGroup& group);  // mu_m - mu_other, zero-sum
AdvantageAssignment compose_advantages(const RolloutGroup& group, double beta_prefix, bool normalize = false);

// Standard GRPO centering over one pool of trajectories: A_i = r_i - mean,
// broadcast to every token with no prefix amplification.
std::vector<std::vector<double>> pooled_advantages(const std::vector<Trajectory>& trajectories, bool normalize = false);

// One instance's rollouts with their per-token advantages, ready for the
// surrogate. Built differently per variant; the update consumes it uniformly.
struct InstanceRollout {
    TaskInstance instance;
    std::vector<Trajectory> trajectories;
    std::vector<std::vector<double>> per_token_advantages;
};

InstanceRollout variant_rollout_and_advantage(const PolicyParams& params, const TaskInstance& instance,
                                              const RLConfig& config, Rng& rng);

// Clipped-ratio surrogate with a k3 KL penalty, averaged over all tokens:
//   J = mean_t [ min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t) - kl_coeff * k3_t ]
// where rho_t is the probability ratio against each trajectory's stored
// rollout-time log-probabilities (1 at the rollout parameters).
double surrogate_value(const PolicyParams& params, const std::vector<InstanceRollout>& rollouts,
                       const PolicyParams& ref_params, const RLConfig& config);
std::vector<double> surrogate_gradient(const PolicyParams& params, const std::vector<InstanceRollout>& rollouts,
                                       const PolicyParams& ref_params, const RLConfig& config);

// One ascent step from explicit rollouts; the core of rl_step, exposed so
// hand-constructed groups can drive an update.
std::pair<PolicyParams, StepMetrics> update_from_rollouts(const PolicyParams& params,
                                                          const std::vector<InstanceRollout>& rollouts,
                                                          const PolicyParams& ref_params, const RLConfig& config);

// Rollout + advantage + one update over a batch of instances.
std::pair<PolicyParams, StepMetrics> rl_step(const PolicyParams& params, const std::vector<TaskInstance>& batch,
                                             const PolicyParams& ref_params, const RLConfig& config, Rng& rng);

// Full training loop: sequential batches over the dataset (wrapping), one
// update per batch, observer called after every step.
using StepObserver = std::function<void(int step, const StepMetrics& metrics, const PolicyParams& params)>;
PolicyParams train(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                   const PolicyParams& ref_params, const RLConfig& config, const StepObserver& observer = {});

}  // namespace dualmode
