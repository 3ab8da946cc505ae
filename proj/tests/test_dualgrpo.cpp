#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "dualmode/core.hpp"
#include "dualmode/dualgrpo.hpp"
#include "dualmode/policy.hpp"
#include "dualmode/rng.hpp"
#include "dualmode/synthenv.hpp"
#include "oracles.hpp"

using namespace dualmode;

namespace {

EnvConfig tiny_env(uint64_t seed = 19) {
    EnvConfig c;
    c.d_q = 3;
    c.d_p = 3;
    c.vocab_answers = 3;
    c.seed = seed;
    return c;
}

PolicyDims tiny_dims() { return PolicyDims{3, 3, 4, 5, 1}; }

RolloutGroup rollout_with_rewards(const PolicyParams& params, const TaskInstance& inst,
                                  const std::vector<double>& rewards_gm, const std::vector<double>& rewards_pm,
                                  uint64_t rng_seed = 81) {
    Rng rng(rng_seed);
    RolloutGroup g = prefix_forced_rollout(params, inst, static_cast<int>(rewards_gm.size()), 0.6, rng);
    for (size_t i = 0; i < rewards_gm.size(); ++i) g.general_trajectories[i].reward = rewards_gm[i];
    for (size_t i = 0; i < rewards_pm.size(); ++i) g.personalized_trajectories[i].reward = rewards_pm[i];
    // Rebuild so the means reflect the injected rewards.
    return RolloutGroup(g.instance_id, g.general_trajectories, g.personalized_trajectories);
}

InstanceRollout to_rollout(const TaskInstance& inst, const RolloutGroup& group, double beta, bool normalize = false) {
    InstanceRollout r;
    r.instance = inst;
    for (const Trajectory& t : group.general_trajectories) r.trajectories.push_back(t);
    for (const Trajectory& t : group.personalized_trajectories) r.trajectories.push_back(t);
    r.per_token_advantages = compose_advantages(group, beta, normalize).per_token;
    return r;
}

// Selector log-odds toward Personalized at temperature 1.
double prefix_logit_gap(const PolicyParams& params, const TaskInstance& inst) {
    const auto [p_gm, p_pm] = mode_distribution(params, inst);
    return std::log(p_pm / p_gm);
}

double mean_k3(const PolicyParams& params, const PolicyParams& ref, const std::vector<InstanceRollout>& rollouts) {
    double total = 0.0;
    long long count = 0;
    for (const InstanceRollout& r : rollouts) {
        for (const Trajectory& traj : r.trajectories) {
            const std::vector<double> lp = sequence_logprob(params, r.instance, traj);
            const std::vector<double> lp_ref = sequence_logprob(ref, r.instance, traj);
            for (size_t t = 0; t < lp.size(); ++t) {
                const double d = lp_ref[t] - lp[t];
                total += std::expm1(d) - d;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("defaults follow the pinned hyperparameters") {
    const RLConfig c;
    CHECK(c.n_per_mode == 4);  // 8 rollouts per sample
    CHECK(c.beta_prefix == 2.0);
    CHECK(c.kl_coeff == 0.04);
    CHECK(c.clip_eps == 0.2);
    CHECK(c.temperature == 0.6);
    CHECK(c.variant == Variant::DualGRPO);
    CHECK_FALSE(c.normalize_advantages);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation") {
    RLConfig c;
    c.n_per_mode = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RLConfig{};
    c.beta_prefix = 0.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RLConfig{};
    c.kl_coeff = -0.1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RLConfig{};
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("variant names round-trip") {
    for (Variant v : {Variant::DualGRPO, Variant::NoDualAdv, Variant::NoDualAdvNoPfxSmp, Variant::StandardGRPO})
        CHECK(variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(variant_from_string("Dual-GRPO"), std::invalid_argument);
}

TEST_CASE("prefix-forced rollouts are balanced and scored") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 4, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    Rng rng(2);
    const RolloutGroup g = prefix_forced_rollout(params, data[0], 4, 0.6, rng);
    CHECK(g.n_per_mode() == 4);
    CHECK(g.general_trajectories.size() == 4);
    CHECK(g.personalized_trajectories.size() == 4);
    for (int i = 0; i < 8; ++i) {
        const Trajectory& t = g.trajectory(i);
        CHECK(t.mode == (i < 4 ? Mode::General : Mode::Personalized));
        CHECK((t.reward == 0.0 || t.reward == 1.0));
    }

    Rng r1(7), r2(7);
    const RolloutGroup a = prefix_forced_rollout(params, data[1], 2, 0.6, r1);
    const RolloutGroup b = prefix_forced_rollout(params, data[1], 2, 0.6, r2);
    for (int i = 0; i < 4; ++i) {
        CHECK(a.trajectory(i).answer_tokens == b.trajectory(i).answer_tokens);
        CHECK(a.trajectory(i).reward == b.trajectory(i).reward);
    }

    Rng r3(9);
    const RolloutGroup single = prefix_forced_rollout(params, data[2], 1, 0.6, r3);
    CHECK(single.mu_general == single.general_trajectories[0].reward);
    CHECK(single.mu_personalized == single.personalized_trajectories[0].reward);
}

TEST_CASE("forcing beats a 99 percent skewed selector") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 10, 0);
    const PolicyDims dims = tiny_dims();
    PolicyParams params = init_params(1, dims);
    std::fill(params.theta.begin(), params.theta.end(), 0.0);
    const int b2_off = dims.hidden * dims.input_dim() + dims.hidden + dims.vocab_size * dims.hidden;
    params.theta[static_cast<size_t>(b2_off + 1)] = 6.0;  // p_pm = sigmoid(6) > 0.99
    const auto [p_gm, p_pm] = mode_distribution(params, data[0]);
    CHECK(p_pm > 0.99);
    (void)p_gm;

    Rng rng(3);
    int general_count = 0;
    for (int g = 0; g < 1000; ++g) {
        const RolloutGroup group = prefix_forced_rollout(params, data[static_cast<size_t>(g % 10)], 2, 0.6, rng);
        for (int i = 0; i < 4; ++i) general_count += group.trajectory(i).mode == Mode::General ? 1 : 0;
    }
    CHECK(general_count == 2000);  // exactly n per mode in every group

    // Free sampling under the same selector collapses to Personalized.
    RLConfig config;
    config.variant = Variant::NoDualAdvNoPfxSmp;
    config.n_per_mode = 2;
    int personalized = 0, total = 0;
    for (int g = 0; g < 50; ++g) {
        const InstanceRollout r = variant_rollout_and_advantage(params, data[static_cast<size_t>(g % 10)], config, rng);
        for (const Trajectory& t : r.trajectories) {
            personalized += t.mode == Mode::Personalized ? 1 : 0;
            ++total;
        }
    }
    CHECK(static_cast<double>(personalized) / total > 0.95);
}

TEST_CASE("intra advantage centers within each mode") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 0, 1, 0}, {1, 1, 1, 1});
    const std::vector<double> intra = intra_advantage(g);
    const std::vector<double> want = {0.5, -0.5, 0.5, -0.5, 0.0, 0.0, 0.0, 0.0};
    REQUIRE(intra.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(intra[i] == doctest::Approx(want[i]).epsilon(1e-15));
}

TEST_CASE("inter advantage is the zero-sum mode gap") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 1, 0.5, 0.5}, {0.5, 0.5, 0, 0});
    REQUIRE(g.mu_general == doctest::Approx(0.75));
    REQUIRE(g.mu_personalized == doctest::Approx(0.25));
    const std::vector<double> inter = inter_advantage(g);
    for (int i = 0; i < 4; ++i) CHECK(inter[static_cast<size_t>(i)] == doctest::Approx(0.5).epsilon(1e-15));
    for (int i = 4; i < 8; ++i) CHECK(inter[static_cast<size_t>(i)] == doctest::Approx(-0.5).epsilon(1e-15));
    CHECK(4 * inter[0] + 4 * inter[4] == 0.0);
}

TEST_CASE("composition matches the worked example") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 1, 0, 0}, {0, 0, 0, 1});
    const AdvantageAssignment adv = compose_advantages(g, 2.0);
    // First general sample, reward 1: intra 0.5, inter 0.25, composed 0.75, prefix 1.5.
    CHECK(adv.intra[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(adv.inter[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(adv.composed[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(adv.per_token[0][0] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(adv.per_token[0][1] == doctest::Approx(0.75).epsilon(1e-15));

    double total = 0.0;
    for (double c : adv.composed) total += c;
    CHECK(std::abs(total) <= 1e-9);

    const AdvantageAssignment flat = compose_advantages(g, 1.0);
    for (const auto& row : flat.per_token)
        for (double v : row) CHECK(v == doctest::Approx(row[0]).epsilon(1e-15));
}

TEST_CASE("advantages match the brute-force oracle on random groups") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 8, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    Rng rng(2025);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        std::vector<double> gm, pm;
        for (int i = 0; i < n; ++i) {
            gm.push_back(rng.u01());
            pm.push_back(rng.u01());
        }
        const double beta = 1.0 + rng.uniform(0.0, 3.0);
        const RolloutGroup g = rollout_with_rewards(params, data[rep % 8], gm, pm, 1000 + static_cast<uint64_t>(rep));
        const AdvantageAssignment adv = compose_advantages(g, beta);
        const oracles::AdvantageOracle want = oracles::advantages(gm, pm, beta);
        for (int i = 0; i < 2 * n; ++i) {
            CHECK(std::abs(adv.intra[static_cast<size_t>(i)] - want.intra[static_cast<size_t>(i)]) <= 1e-12);
            CHECK(std::abs(adv.inter[static_cast<size_t>(i)] - want.inter[static_cast<size_t>(i)]) <= 1e-12);
            CHECK(std::abs(adv.composed[static_cast<size_t>(i)] - want.composed[static_cast<size_t>(i)]) <= 1e-12);
            CHECK(std::abs(adv.per_token[static_cast<size_t>(i)][0] - want.prefix[static_cast<size_t>(i)]) <= 1e-12);
        }
        double intra_gm = 0.0, intra_pm = 0.0, composed_sum = 0.0;
        for (int i = 0; i < n; ++i) intra_gm += adv.intra[static_cast<size_t>(i)];
        for (int i = n; i < 2 * n; ++i) intra_pm += adv.intra[static_cast<size_t>(i)];
        for (double c : adv.composed) composed_sum += c;
        CHECK(std::abs(intra_gm) <= 1e-9);
        CHECK(std::abs(intra_pm) <= 1e-9);
        CHECK(std::abs(composed_sum) <= 1e-9);
    }
}

TEST_CASE("pooled centering matches the hand example") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 0}, {0, 0});
    std::vector<Trajectory> pool;
    for (const Trajectory& t : g.general_trajectories) pool.push_back(t);
    for (const Trajectory& t : g.personalized_trajectories) pool.push_back(t);
    const std::vector<std::vector<double>> adv = pooled_advantages(pool);
    const std::vector<double> want = {0.75, -0.25, -0.25, -0.25};
    REQUIRE(adv.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
        for (double v : adv[i]) CHECK(v == doctest::Approx(want[i]).epsilon(1e-15));
    }
}

TEST_CASE("dual advantages reduce to pooled centering at equal means and beta one") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 4, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    Rng rng(31);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 1 + static_cast<int>(rng.uniform_int(6));
        std::vector<double> gm;
        for (int i = 0; i < n; ++i) gm.push_back(rng.u01());
        std::vector<double> pm(gm.rbegin(), gm.rend());  // same multiset, so means match
        const RolloutGroup g = rollout_with_rewards(params, data[rep % 4], gm, pm, 500 + static_cast<uint64_t>(rep));
        const AdvantageAssignment dual = compose_advantages(g, 1.0);

        std::vector<Trajectory> pool;
        for (const Trajectory& t : g.general_trajectories) pool.push_back(t);
        for (const Trajectory& t : g.personalized_trajectories) pool.push_back(t);
        const std::vector<std::vector<double>> pooled = pooled_advantages(pool);
        for (size_t i = 0; i < pool.size(); ++i) {
            CHECK(std::abs(dual.per_token[i][0] - pooled[i][0]) <= 1e-12);
            CHECK(std::abs(dual.composed[i] - pooled[i][1]) <= 1e-12);
        }
    }
}

TEST_CASE("std normalization rescales intra but keeps the zero sums") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(1, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 1, 0, 0}, {1, 0, 0, 0});
    const AdvantageAssignment adv = compose_advantages(g, 2.0, true);
    // General intra [0.5 0.5 -0.5 -0.5] has population std 0.5.
    CHECK(adv.intra[0] == doctest::Approx(1.0).epsilon(1e-6));
    double intra_gm = 0.0;
    for (int i = 0; i < 4; ++i) intra_gm += adv.intra[static_cast<size_t>(i)];
    CHECK(std::abs(intra_gm) <= 1e-9);
}

TEST_CASE("variants shape rollouts and advantages as specified") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 3, 0);
    const PolicyParams params = init_params(4, tiny_dims());
    RLConfig config;
    config.n_per_mode = 3;

    SUBCASE("dual grpo amplifies the prefix") {
        Rng rng(11);
        const InstanceRollout r = variant_rollout_and_advantage(params, data[0], config, rng);
        REQUIRE(r.trajectories.size() == 6);
        for (int i = 0; i < 6; ++i) CHECK(r.trajectories[static_cast<size_t>(i)].mode == (i < 3 ? Mode::General : Mode::Personalized));
        const RolloutGroup g(data[0].id,
                             std::vector<Trajectory>(r.trajectories.begin(), r.trajectories.begin() + 3),
                             std::vector<Trajectory>(r.trajectories.begin() + 3, r.trajectories.end()));
        const AdvantageAssignment adv = compose_advantages(g, config.beta_prefix);
        for (size_t i = 0; i < 6; ++i) {
            CHECK(r.per_token_advantages[i][0] == doctest::Approx(adv.per_token[i][0]).epsilon(1e-15));
            CHECK(r.per_token_advantages[i][1] == doctest::Approx(adv.per_token[i][1]).epsilon(1e-15));
        }
    }

    SUBCASE("no-dual-adv keeps forcing but pools the centering") {
        Rng rng(12);
        config.variant = Variant::NoDualAdv;
        const InstanceRollout r = variant_rollout_and_advantage(params, data[1], config, rng);
        REQUIRE(r.trajectories.size() == 6);
        int general = 0;
        double mean = 0.0;
        for (const Trajectory& t : r.trajectories) {
            general += t.mode == Mode::General ? 1 : 0;
            mean += t.reward;
        }
        CHECK(general == 3);
        mean /= 6.0;
        for (size_t i = 0; i < 6; ++i) {
            CHECK(r.per_token_advantages[i][0] == doctest::Approx(r.trajectories[i].reward - mean).epsilon(1e-12));
            CHECK(r.per_token_advantages[i][0] == r.per_token_advantages[i][1]);  // no amplification
        }
    }

    SUBCASE("standard grpo is the free-sampling alias") {
        config.variant = Variant::NoDualAdvNoPfxSmp;
        Rng r1(13);
        const InstanceRollout a = variant_rollout_and_advantage(params, data[2], config, r1);
        config.variant = Variant::StandardGRPO;
        Rng r2(13);
        const InstanceRollout b = variant_rollout_and_advantage(params, data[2], config, r2);
        REQUIRE(a.trajectories.size() == b.trajectories.size());
        for (size_t i = 0; i < a.trajectories.size(); ++i) {
            CHECK(a.trajectories[i].mode == b.trajectories[i].mode);
            CHECK(a.trajectories[i].answer_tokens == b.trajectories[i].answer_tokens);
            CHECK(a.per_token_advantages[i] == b.per_token_advantages[i]);
        }
    }
}

TEST_CASE("zero advantages and zero kl coefficient leave parameters untouched") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(6, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 1, 1, 1}, {1, 1, 1, 1});
    RLConfig config;
    config.kl_coeff = 0.0;
    const std::vector<InstanceRollout> rollouts = {to_rollout(data[0], g, config.beta_prefix)};
    const auto [next, metrics] = update_from_rollouts(params, rollouts, params, config);
    CHECK(next.theta == params.theta);
    CHECK(metrics.loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(metrics.kl == 0.0);
    CHECK(metrics.mean_reward_gm == 1.0);
    CHECK(metrics.mean_reward_pm == 1.0);
}

TEST_CASE("surrogate gradient matches finite differences on a two-instance batch") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 2, 0);
    const PolicyParams params = init_params(7, tiny_dims());
    const PolicyParams ref = init_params(8, tiny_dims());
    RLConfig config;
    config.n_per_mode = 2;

    std::vector<InstanceRollout> rollouts;
    rollouts.push_back(to_rollout(data[0], rollout_with_rewards(params, data[0], {1, 0}, {0, 0}, 51), config.beta_prefix));
    rollouts.push_back(to_rollout(data[1], rollout_with_rewards(params, data[1], {0, 1}, {1, 1}, 52), config.beta_prefix));

    const auto value_at = [&](const std::vector<double>& theta) {
        PolicyParams p = params;
        p.theta = theta;
        return surrogate_value(p, rollouts, ref, config);
    };

    // At the rollout parameters every ratio is exactly 1.
    const std::vector<double> g0 = surrogate_gradient(params, rollouts, ref, config);
    const std::vector<double> fd0 = finite_difference_gradient(value_at, params.theta, 1e-6);
    CHECK(max_relative_error(g0, fd0) <= 1e-4);

    // Slightly off-policy: ratios differ from 1 but stay inside the clip band.
    PolicyParams shifted = params;
    Rng rng(9);
    for (double& w : shifted.theta) w += rng.uniform(-0.005, 0.005);
    const auto value_shifted = [&](const std::vector<double>& theta) {
        PolicyParams p = shifted;
        p.theta = theta;
        return surrogate_value(p, rollouts, ref, config);
    };
    const std::vector<double> g1 = surrogate_gradient(shifted, rollouts, ref, config);
    const std::vector<double> fd1 = finite_difference_gradient(value_shifted, shifted.theta, 1e-6);
    CHECK(max_relative_error(g1, fd1) <= 1e-4);
}

TEST_CASE("clipping freezes the gradient on the clipped branch") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(10, tiny_dims());
    Rng rng(5);
    Trajectory traj = sample_trajectory(params, data[0], Mode::Personalized, 0.6, rng);
    // Pretend the rollout-time policy gave these tokens much less probability,
    // so rho = 1.3 at every position, beyond clip_eps = 0.2.
    const std::vector<double> lp = sequence_logprob(params, data[0], traj);
    for (size_t t = 0; t < traj.token_logprobs.size(); ++t) traj.token_logprobs[t] = lp[t] - std::log(1.3);

    InstanceRollout r;
    r.instance = data[0];
    r.trajectories = {traj};
    RLConfig config;
    config.kl_coeff = 0.0;

    r.per_token_advantages = {{1.0, 1.0}};  // positive advantage: min picks the clipped constant
    CHECK(surrogate_value(params, {r}, params, config) == doctest::Approx(1.2).epsilon(1e-9));
    const std::vector<double> frozen = surrogate_gradient(params, {r}, params, config);
    for (double gradient : frozen) CHECK(gradient == 0.0);

    r.per_token_advantages = {{-1.0, -1.0}};  // negative advantage: the unclipped branch stays active
    CHECK(surrogate_value(params, {r}, params, config) == doctest::Approx(-1.3).epsilon(1e-9));
    const std::vector<double> live = surrogate_gradient(params, {r}, params, config);
    double magnitude = 0.0;
    for (double gradient : live) magnitude += std::abs(gradient);
    CHECK(magnitude > 0.0);
    const auto value_at = [&](const std::vector<double>& theta) {
        PolicyParams p = params;
        p.theta = theta;
        return surrogate_value(p, {r}, params, config);
    };
    CHECK(max_relative_error(live, finite_difference_gradient(value_at, params.theta, 1e-6)) <= 1e-4);
}

TEST_CASE("a rewarded mode gains selector mass in one step") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(12, tiny_dims());
    RLConfig config;
    config.lr = 1e-3;
    config.kl_coeff = 0.0;

    const RolloutGroup general_wins = rollout_with_rewards(params, data[0], {1, 1, 1, 1}, {0, 0, 0, 0});
    const auto [after_g, m1] = update_from_rollouts(params, {to_rollout(data[0], general_wins, 2.0)}, params, config);
    CHECK(mode_distribution(after_g, data[0]).first > mode_distribution(params, data[0]).first);

    const RolloutGroup personalized_wins = rollout_with_rewards(params, data[0], {0, 0, 0, 0}, {1, 1, 1, 1});
    const auto [after_p, m2] = update_from_rollouts(params, {to_rollout(data[0], personalized_wins, 2.0)}, params, config);
    CHECK(mode_distribution(after_p, data[0]).second > mode_distribution(params, data[0]).second);
}

TEST_CASE("larger beta moves the selector harder for identical rollouts") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 1, 0);
    const PolicyParams params = init_params(13, tiny_dims());
    const RolloutGroup g = rollout_with_rewards(params, data[0], {1, 1, 0, 0}, {0, 0, 0, 1});
    RLConfig config;
    config.lr = 1e-3;
    config.kl_coeff = 0.0;

    const double before = prefix_logit_gap(params, data[0]);
    const auto [with_beta1, m1] = update_from_rollouts(params, {to_rollout(data[0], g, 1.0)}, params, config);
    const auto [with_beta2, m2] = update_from_rollouts(params, {to_rollout(data[0], g, 2.0)}, params, config);
    const double shift1 = std::abs(prefix_logit_gap(with_beta1, data[0]) - before);
    const double shift2 = std::abs(prefix_logit_gap(with_beta2, data[0]) - before);
    CHECK(shift2 > shift1);
}

TEST_CASE("a large kl coefficient anchors the step to the reference") {
    const std::vector<TaskInstance> data = generate_dataset(tiny_env(), 2, 0);
    const PolicyParams ref = init_params(14, tiny_dims());
    PolicyParams params = ref;
    Rng rng(15);
    for (double& w : params.theta) w += rng.uniform(-0.05, 0.05);

    RLConfig config;
    config.n_per_mode = 2;
    config.lr = 0.02;
    std::vector<InstanceRollout> rollouts;
    for (const TaskInstance& inst : data) {
        rollouts.push_back(variant_rollout_and_advantage(params, inst, config, rng));
    }

    config.kl_coeff = 0.0;
    const auto [free_step, m1] = update_from_rollouts(params, rollouts, ref, config);
    config.kl_coeff = 10.0;
    const auto [anchored_step, m2] = update_from_rollouts(params, rollouts, ref, config);
    CHECK(mean_k3(anchored_step, ref, rollouts) < mean_k3(free_step, ref, rollouts));
}

TEST_CASE("rl_step reports pre-update metrics against the reference") {
    const std::vector<TaskInstance> batch = generate_dataset(tiny_env(), 3, 0);
    const PolicyParams params = init_params(16, tiny_dims());
    RLConfig config;
    config.n_per_mode = 2;
    config.lr = 0.01;
    Rng rng(17);
    const auto [next, metrics] = rl_step(params, batch, params, config, rng);
    CHECK(metrics.kl == 0.0);  // reference equals the sampling policy here
    CHECK(metrics.loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(metrics.mean_reward_gm >= 0.0);
    CHECK(metrics.mean_reward_gm <= 1.0);
    CHECK(metrics.mean_reward_pm >= 0.0);
    CHECK(metrics.mean_reward_pm <= 1.0);
    CHECK(metrics.p_personalized_mean > 0.0);
    CHECK(metrics.p_personalized_mean < 1.0);
    CHECK(metrics.mode_entropy > 0.0);
    CHECK(metrics.mode_entropy <= std::log(2.0) + 1e-12);
    CHECK_THROWS_AS(rl_step(params, {}, params, config, rng), std::invalid_argument);
}

TEST_CASE("training is deterministic and visits every step") {
    const std::vector<TaskInstance> dataset = generate_dataset(tiny_env(), 12, 0);
    const PolicyParams params = init_params(18, tiny_dims());
    RLConfig config;
    config.n_per_mode = 2;
    config.steps = 5;
    config.batch_size = 4;
    config.lr = 0.01;
    config.seed = 99;

    std::vector<int> steps_seen;
    const PolicyParams a =
        train(params, dataset, params, config, [&](int step, const StepMetrics&, const PolicyParams&) {
            steps_seen.push_back(step);
        });
    CHECK(steps_seen == std::vector<int>{0, 1, 2, 3, 4});
    const PolicyParams b = train(params, dataset, params, config);
    CHECK(a.theta == b.theta);
}
