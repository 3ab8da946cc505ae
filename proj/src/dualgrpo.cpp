#include "dualmode/dualgrpo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualmode/synthenv.hpp"

namespace dualmode {

namespace {

constexpr double kNormalizeEps = 1e-8;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

double population_std(const std::vector<double>& xs, double mean) {
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

const std::string& to_string(Variant v) {
    static const std::string names[] = {"DualGRPO", "NoDualAdv", "NoDualAdvNoPfxSmp", "StandardGRPO"};
    return names[static_cast<int>(v)];
}

Variant variant_from_string(const std::string& s) {
    if (s == "DualGRPO") return Variant::DualGRPO;
    if (s == "NoDualAdv") return Variant::NoDualAdv;
    if (s == "NoDualAdvNoPfxSmp") return Variant::NoDualAdvNoPfxSmp;
    if (s == "StandardGRPO") return Variant::StandardGRPO;
    throw std::invalid_argument("unknown variant: " + s);
}

void RLConfig::validate() const {
    require(n_per_mode >= 1, "n_per_mode must be at least 1");
    require(beta_prefix >= 1.0, "beta_prefix must be >= 1");
    require(kl_coeff >= 0.0, "kl_coeff must be non-negative");
    require(clip_eps >= 0.0, "clip_eps must be non-negative");
    require(temperature > 0.0, "temperature must be positive");
    require(lr >= 0.0, "lr must be non-negative");
    require(steps >= 0 && batch_size >= 1, "steps/batch_size out of range");
    require(checkpoint_interval >= 0, "checkpoint_interval must be non-negative");
}

// ---- rollouts ----

RolloutGroup prefix_forced_rollout(const PolicyParams& params, const TaskInstance& instance, int n,
                                   double temperature, Rng& rng) {
    require(n >= 1, "n must be at least 1");
    std::vector<Trajectory> general, personalized;
    general.reserve(static_cast<size_t>(n));
    personalized.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Trajectory t = sample_trajectory(params, instance, Mode::General, temperature, rng);
        t.reward = score(instance, t);
        general.push_back(std::move(t));
    }
    for (int i = 0; i < n; ++i) {
        Trajectory t = sample_trajectory(params, instance, Mode::Personalized, temperature, rng);
        t.reward = score(instance, t);
        personalized.push_back(std::move(t));
    }
    return RolloutGroup(instance.id, std::move(general), std::move(personalized));
}

// ---- advantages ----

std::vector<double> intra_advantage(const RolloutGroup& group) {
    const int n = group.n_per_mode();
    std::vector<double> out(2 * static_cast<size_t>(n));
    for (int i = 0; i < 2 * n; ++i) {
        const Trajectory& t = group.trajectory(i);
        out[static_cast<size_t>(i)] = t.reward - (i < n ? group.mu_general : group.mu_personalized);
    }
    return out;
}

std::vector<double> inter_advantage(const RolloutGroup& group) {
    const int n = group.n_per_mode();
    const double gap = group.mu_general - group.mu_personalized;
    std::vector<double> out(2 * static_cast<size_t>(n));
    for (int i = 0; i < 2 * n; ++i) out[static_cast<size_t>(i)] = i < n ? gap : -gap;
    return out;
}

AdvantageAssignment compose_advantages(const RolloutGroup& group, double beta_prefix, bool normalize) {
    const int n = group.n_per_mode();
    std::vector<double> intra = intra_advantage(group);
    if (normalize) {
        // Per-mode std scaling; centering (and thus the zero sums) is preserved.
        std::vector<double> gm(intra.begin(), intra.begin() + n), pm(intra.begin() + n, intra.end());
        const double sd_gm = population_std(gm, 0.0) + kNormalizeEps;
        const double sd_pm = population_std(pm, 0.0) + kNormalizeEps;
        for (int i = 0; i < 2 * n; ++i) intra[static_cast<size_t>(i)] /= (i < n ? sd_gm : sd_pm);
    }
    const std::vector<double> inter = inter_advantage(group);
    std::vector<double> composed(intra.size());
    std::vector<std::vector<double>> per_token(intra.size());
    for (size_t i = 0; i < intra.size(); ++i) {
        composed[i] = intra[i] + inter[i];
        const size_t len = group.trajectory(static_cast<int>(i)).answer_tokens.size() + 1;
        per_token[i].assign(len, composed[i]);
        per_token[i][0] = beta_prefix * composed[i];
    }
    return AdvantageAssignment(std::move(intra), std::vector<double>(inter), std::move(composed), std::move(per_token),
                               beta_prefix, n);
}

std::vector<std::vector<double>> pooled_advantages(const std::vector<Trajectory>& trajectories, bool normalize) {
    require(!trajectories.empty(), "pooled centering needs at least one trajectory");
    double mean = 0.0;
    for (const Trajectory& t : trajectories) mean += t.reward;
    mean /= static_cast<double>(trajectories.size());
    std::vector<double> centered(trajectories.size());
    for (size_t i = 0; i < trajectories.size(); ++i) centered[i] = trajectories[i].reward - mean;
    if (normalize) {
        const double sd = population_std(centered, 0.0) + kNormalizeEps;
        for (double& a : centered) a /= sd;
    }
    std::vector<std::vector<double>> per_token(trajectories.size());
    for (size_t i = 0; i < trajectories.size(); ++i) {
        per_token[i].assign(trajectories[i].answer_tokens.size() + 1, centered[i]);
    }
    return per_token;
}

InstanceRollout variant_rollout_and_advantage(const PolicyParams& params, const TaskInstance& instance,
                                              const RLConfig& config, Rng& rng) {
    config.validate();
    InstanceRollout out;
    out.instance = instance;
    switch (config.variant) {
        case Variant::DualGRPO: {
            RolloutGroup group = prefix_forced_rollout(params, instance, config.n_per_mode, config.temperature, rng);
            AdvantageAssignment adv = compose_advantages(group, config.beta_prefix, config.normalize_advantages);
            out.per_token_advantages = std::move(adv.per_token);
            out.trajectories.reserve(2 * static_cast<size_t>(config.n_per_mode));
            for (Trajectory& t : group.general_trajectories) out.trajectories.push_back(std::move(t));
            for (Trajectory& t : group.personalized_trajectories) out.trajectories.push_back(std::move(t));
            break;
        }
        case Variant::NoDualAdv: {
            // Keeps the balanced forced sampling, drops the dual advantage:
            // plain pooled centering over all 2n rollouts, no amplification.
            RolloutGroup group = prefix_forced_rollout(params, instance, config.n_per_mode, config.temperature, rng);
            out.trajectories.reserve(2 * static_cast<size_t>(config.n_per_mode));
            for (Trajectory& t : group.general_trajectories) out.trajectories.push_back(std::move(t));
            for (Trajectory& t : group.personalized_trajectories) out.trajectories.push_back(std::move(t));
            out.per_token_advantages = pooled_advantages(out.trajectories, config.normalize_advantages);
            break;
        }
        case Variant::NoDualAdvNoPfxSmp:
        case Variant::StandardGRPO: {
            // Conventional GRPO: the policy picks its own prefixes.
            const int total = 2 * config.n_per_mode;
            out.trajectories.reserve(static_cast<size_t>(total));
            for (int i = 0; i < total; ++i) {
                Trajectory t = sample_trajectory(params, instance, std::nullopt, config.temperature, rng);
                t.reward = score(instance, t);
                out.trajectories.push_back(std::move(t));
            }
            out.per_token_advantages = pooled_advantages(out.trajectories, config.normalize_advantages);
            break;
        }
    }
    return out;
}

// ---- surrogate ----

namespace {

struct SurrogateEval {
    double value = 0.0;
    double mean_kl = 0.0;
    std::vector<double> grad;  // empty unless requested
};

// Single pass over all tokens: value, KL, and (optionally) the gradient.
// Deterministic reduction order: rollout index, trajectory index, token index.
SurrogateEval eval_surrogate(const PolicyParams& params, const std::vector<InstanceRollout>& rollouts,
                             const PolicyParams& ref_params, const RLConfig& config, bool want_grad) {
    require(!rollouts.empty(), "surrogate needs at least one rollout");
    long long total_tokens = 0;
    for (const InstanceRollout& r : rollouts) {
        require(r.trajectories.size() == r.per_token_advantages.size(), "advantage/trajectory count mismatch");
        for (const Trajectory& t : r.trajectories) total_tokens += static_cast<long long>(t.answer_tokens.size()) + 1;
    }
    const double inv_tokens = 1.0 / static_cast<double>(total_tokens);

    SurrogateEval out;
    if (want_grad) out.grad.assign(static_cast<size_t>(params.dims.theta_length()), 0.0);
    std::vector<double> weights;
    for (const InstanceRollout& r : rollouts) {
        for (size_t i = 0; i < r.trajectories.size(); ++i) {
            const Trajectory& traj = r.trajectories[i];
            const std::vector<double>& adv = r.per_token_advantages[i];
            require(adv.size() == traj.answer_tokens.size() + 1, "per-token advantage length mismatch");
            const std::vector<double> lp = sequence_logprob(params, r.instance, traj);
            const std::vector<double> lp_ref = sequence_logprob(ref_params, r.instance, traj);
            weights.assign(lp.size(), 0.0);
            bool any_weight = false;
            for (size_t t = 0; t < lp.size(); ++t) {
                const double rho = std::exp(lp[t] - traj.token_logprobs[t]);
                const double unclipped = rho * adv[t];
                const double clipped = std::clamp(rho, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv[t];
                const double delta = lp_ref[t] - lp[t];            // log ratio to the reference
                const double k3 = std::expm1(delta) - delta;       // e^d - d - 1 >= 0
                out.value += std::min(unclipped, clipped) - config.kl_coeff * k3;
                out.mean_kl += k3;
                if (want_grad) {
                    // d/dlp of the clipped term is rho*A on the unclipped branch, 0 on the
                    // clipped one; d/dlp of -kl_coeff*k3 is kl_coeff*(e^d - 1).
                    double w = (unclipped <= clipped) ? unclipped : 0.0;
                    w += config.kl_coeff * std::expm1(delta);
                    weights[t] = w;
                    any_weight = any_weight || w != 0.0;
                }
            }
            if (want_grad && any_weight) {
                accumulate_grad_weighted_logprob(params, r.instance, traj, weights, inv_tokens, out.grad);
            }
        }
    }
    out.value *= inv_tokens;
    out.mean_kl *= inv_tokens;
    return out;
}

}  // namespace

double surrogate_value(const PolicyParams& params, const std::vector<InstanceRollout>& rollouts,
                       const PolicyParams& ref_params, const RLConfig& config) {
    return eval_surrogate(params, rollouts, ref_params, config, false).value;
}

std::vector<double> surrogate_gradient(const PolicyParams& params, const std::vector<InstanceRollout>& rollouts,
                                       const PolicyParams& ref_params, const RLConfig& config) {
    return eval_surrogate(params, rollouts, ref_params, config, true).grad;
}

// ---- updates ----

std::pair<PolicyParams, StepMetrics> update_from_rollouts(const PolicyParams& params,
                                                          const std::vector<InstanceRollout>& rollouts,
                                                          const PolicyParams& ref_params, const RLConfig& config) {
    config.validate();
    require(!rollouts.empty(), "update needs a non-empty rollout batch");

    StepMetrics m;
    long long count_gm = 0, count_pm = 0;
    for (const InstanceRollout& r : rollouts) {
        for (const Trajectory& t : r.trajectories) {
            if (t.mode == Mode::General) {
                m.mean_reward_gm += t.reward;
                ++count_gm;
            } else {
                m.mean_reward_pm += t.reward;
                ++count_pm;
            }
        }
        const auto [p_gm, p_pm] = mode_distribution(params, r.instance);
        m.p_personalized_mean += p_pm;
        m.mode_entropy += -(p_gm * std::log(p_gm) + p_pm * std::log(p_pm));
    }
    m.mean_reward_gm = count_gm > 0 ? m.mean_reward_gm / static_cast<double>(count_gm) : 0.0;
    m.mean_reward_pm = count_pm > 0 ? m.mean_reward_pm / static_cast<double>(count_pm) : 0.0;
    m.p_personalized_mean /= static_cast<double>(rollouts.size());
    m.mode_entropy /= static_cast<double>(rollouts.size());

    const SurrogateEval eval = eval_surrogate(params, rollouts, ref_params, config, true);
    m.kl = eval.mean_kl;
    m.loss = -eval.value;

    PolicyParams next = params;
    bool moved = false;
    for (size_t i = 0; i < next.theta.size(); ++i) {
        const double step = config.lr * eval.grad[i];
        if (step != 0.0) {
            next.theta[i] += step;
            moved = true;
        }
    }
    if (!moved) return {params, m};  // exact no-op when the gradient vanishes
    return {std::move(next), m};
}

std::pair<PolicyParams, StepMetrics> rl_step(const PolicyParams& params, const std::vector<TaskInstance>& batch,
                                             const PolicyParams& ref_params, const RLConfig& config, Rng& rng) {
    require(!batch.empty(), "rl_step needs a non-empty batch");
    std::vector<InstanceRollout> rollouts;
    rollouts.reserve(batch.size());
    for (const TaskInstance& inst : batch) {
        rollouts.push_back(variant_rollout_and_advantage(params, inst, config, rng));
    }
    return update_from_rollouts(params, rollouts, ref_params, config);
}

PolicyParams train(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                   const PolicyParams& ref_params, const RLConfig& config, const StepObserver& observer) {
    config.validate();
    require(!dataset.empty(), "training needs a non-empty dataset");
    Rng rng(derive_seed(config.seed, hash_tag("rl-train")));
    PolicyParams current = params;
    size_t cursor = 0;
    std::vector<TaskInstance> batch;
    for (int step = 0; step < config.steps; ++step) {
        batch.clear();
        for (int b = 0; b < config.batch_size; ++b) {
            batch.push_back(dataset[cursor]);
            cursor = (cursor + 1) % dataset.size();
        }
        auto [next, metrics] = rl_step(current, batch, ref_params, config, rng);
        current = std::move(next);
        if (observer) observer(step, metrics, current);
    }
    return current;
}

}  // namespace dualmode
