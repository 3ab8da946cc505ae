#pragma once

// Independent reference implementations for the test suites. These are
// written directly from the documented contracts (input encoding, theta
// layout, advantage equations) with plain loops, on purpose sharing no code
// with the library, so agreement is meaningful.

#include <array>
#include <cmath>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/policy.hpp"

namespace oracles {

// Naive forward pass: x = [query | turn flags | persona_eff | history
// one-hots], theta = [W1 | b1 | W2 | b2], logits = W2 tanh(W1 x + b1) + b2.
inline std::vector<double> forward_logits(const dualmode::PolicyParams& params, const std::vector<double>& query,
                                          const std::array<double, 2>& turn_flags,
                                          const std::vector<double>& persona_eff, const std::vector<int>& history) {
    const auto& dims = params.dims;
    const int D = dims.d_q + 2 + dims.d_p + dims.horizon * dims.vocab_size;

    std::vector<double> x(static_cast<size_t>(D), 0.0);
    int at = 0;
    for (int i = 0; i < dims.d_q; ++i) x[at++] = query[i];
    x[at++] = turn_flags[0];
    x[at++] = turn_flags[1];
    for (int i = 0; i < dims.d_p; ++i) x[at++] = persona_eff[i];
    for (size_t j = 0; j < history.size(); ++j) x[at + static_cast<int>(j) * dims.vocab_size + history[j]] = 1.0;

    int off = 0;
    std::vector<double> hidden(static_cast<size_t>(dims.hidden));
    for (int j = 0; j < dims.hidden; ++j) {
        double z = params.theta[static_cast<size_t>(dims.hidden * D + j)];  // b1[j]
        for (int i = 0; i < D; ++i) z += params.theta[static_cast<size_t>(off + j * D + i)] * x[static_cast<size_t>(i)];
        hidden[static_cast<size_t>(j)] = std::tanh(z);
    }
    off = dims.hidden * D + dims.hidden;
    std::vector<double> logits(static_cast<size_t>(dims.vocab_size));
    for (int v = 0; v < dims.vocab_size; ++v) {
        double s = params.theta[static_cast<size_t>(off + dims.vocab_size * dims.hidden + v)];  // b2[v]
        for (int j = 0; j < dims.hidden; ++j) {
            s += params.theta[static_cast<size_t>(off + v * dims.hidden + j)] * hidden[static_cast<size_t>(j)];
        }
        logits[static_cast<size_t>(v)] = s;
    }
    return logits;
}

// Log-probabilities (temperature 1) of every token of a trajectory, via the
// naive forward pass and a naive softmax.
inline std::vector<double> trajectory_logprobs(const dualmode::PolicyParams& params,
                                               const dualmode::TaskInstance& inst,
                                               const dualmode::Trajectory& traj) {
    const std::vector<double> zeros(inst.persona_features.size(), 0.0);
    std::vector<int> history;
    std::vector<double> out;
    const int L = static_cast<int>(traj.answer_tokens.size());
    for (int t = 0; t <= L; ++t) {
        const bool masked = t > 0 && traj.mode == dualmode::Mode::General;
        const std::vector<double> logits = oracles::forward_logits(params, inst.query_features, {0.0, 0.0},
                                                                   masked ? zeros : inst.persona_features, history);
        const int token = t == 0 ? dualmode::prefix_token_id(traj.mode) : traj.answer_tokens[static_cast<size_t>(t - 1)];
        double m = logits[0];
        for (double v : logits) m = std::max(m, v);
        double total = 0.0;
        for (double v : logits) total += std::exp(v - m);
        out.push_back(logits[static_cast<size_t>(token)] - m - std::log(total));
        history.push_back(token);
    }
    return out;
}

// Direct transcription of the advantage equations from per-mode rewards:
// intra = r - mu_m, inter = mu_m - mu_other, composed = intra + inter,
// prefix advantage = beta * composed.
struct AdvantageOracle {
    std::vector<double> intra, inter, composed, prefix;
};

inline AdvantageOracle advantages(const std::vector<double>& rewards_gm, const std::vector<double>& rewards_pm,
                                  double beta) {
    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double mu_gm = mean(rewards_gm), mu_pm = mean(rewards_pm);
    AdvantageOracle o;
    for (double r : rewards_gm) {
        o.intra.push_back(r - mu_gm);
        o.inter.push_back(mu_gm - mu_pm);
    }
    for (double r : rewards_pm) {
        o.intra.push_back(r - mu_pm);
        o.inter.push_back(mu_pm - mu_gm);
    }
    for (size_t i = 0; i < o.intra.size(); ++i) {
        o.composed.push_back(o.intra[i] + o.inter[i]);
        o.prefix.push_back(beta * o.composed[i]);
    }
    return o;
}

// Pooled GRPO centering over one list of rewards.
inline std::vector<double> pooled(const std::vector<double>& rewards) {
    double mu = 0.0;
    for (double r : rewards) mu += r;
    mu /= static_cast<double>(rewards.size());
    std::vector<double> out;
    for (double r : rewards) out.push_back(r - mu);
    return out;
}

}  // namespace oracles
