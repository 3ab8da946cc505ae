#pragma once

// The dual-mode autoregressive policy: a two-layer tanh scorer over a small
// vocabulary, with the mode selector realized as the position-0 distribution
// over the two prefix tokens. Provides sampling, exact log-probabilities,
// analytic gradients, a finite-difference checker, and checkpointing.
//
// Input encoding for the token at position t (0 = prefix, 1..L = answers):
//   x = [ query_features (d_q)
//       | previous-turn mode one-hot (2; zeros outside two-turn episodes)
//       | persona_features_effective (d_p)
//       | history one-hots (horizon blocks of vocab_size; block j holds the
//         j-th emitted token, so position t fills blocks 0..t-1) ]
// persona_features_effective is the instance persona at position 0 (mode not
// yet chosen) and at answer positions under Personalized mode; it is the zero
// vector at answer positions under General mode.
//
// theta layout (row-major): W1 (hidden x input_dim), b1 (hidden),
// W2 (vocab_size x hidden), b2 (vocab_size). Hidden activation tanh;
// logits = W2 tanh(W1 x + b1) + b2.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/rng.hpp"

namespace dualmode {

struct PolicyDims {
    int d_q = 0;
    int d_p = 0;
    int hidden = 0;
    int vocab_size = 0;  // answer vocabulary + 2 prefix tokens
    int horizon = 1;     // maximum answer length L_max

    void validate() const;
    int input_dim() const { return d_q + 2 + d_p + horizon * vocab_size; }
    int theta_length() const;
    int answer_vocab() const { return vocab_size - kNumPrefixTokens; }
    bool operator==(const PolicyDims&) const = default;
};

struct PolicyParams {
    PolicyDims dims;
    std::vector<double> theta;
};

using TurnFlags = std::array<double, 2>;  // one-hot of the previous turn's mode
inline constexpr TurnFlags kNoTurnFlags{0.0, 0.0};

// Weights i.i.d. uniform in [-0.05, 0.05]; identical (seed, dims) give
// bitwise-identical theta.
PolicyParams init_params(std::uint64_t seed, const PolicyDims& dims);

// Full-vocabulary logits for one position. `history` holds the tokens emitted
// before this position (prefix first); `persona_eff` must already reflect mode
// masking. Exposed mainly for tests and oracles.
std::vector<double> forward_logits(const PolicyParams& params, const std::vector<double>& query,
                                   const TurnFlags& turn_flags, const std::vector<double>& persona_eff,
                                   const std::vector<int>& history);

// Stable log-softmax of logits / temperature.
std::vector<double> log_softmax(const std::vector<double>& logits, double temperature = 1.0);

// The mode selector sigma(m | q, p): position-0 probabilities of the two
// prefix tokens, renormalized. Persona is visible (mode not yet chosen).
// Temperature applies to sampling-time selection; 1.0 is the training-time
// distribution.
std::pair<double, double> mode_distribution(const PolicyParams& params, const TaskInstance& instance,
                                            double temperature = 1.0, const TurnFlags& turn_flags = kNoTurnFlags);

// Samples a trajectory of exactly dims.horizon answer tokens. If forced_mode
// is set, the prefix token is fixed to it (consuming no randomness for the
// mode draw) and the recorded log-probability is the policy's own temperature-1
// log-probability of that prefix. Answer tokens are drawn from the
// temperature-scaled softmax restricted to the answer vocabulary;
// temperature < 1e-6 degenerates to argmax. Recorded token_logprobs are
// temperature-1 full-vocabulary values. reward is left at 0.
Trajectory sample_trajectory(const PolicyParams& params, const TaskInstance& instance,
                             std::optional<Mode> forced_mode, double temperature, Rng& rng,
                             const TurnFlags& turn_flags = kNoTurnFlags);

// Same, but the caller supplies the mode and one uniform draw per answer
// position (inverse-CDF over answer tokens). Lets evaluators couple branches
// with common random numbers.
Trajectory sample_trajectory_with_uniforms(const PolicyParams& params, const TaskInstance& instance, Mode mode,
                                           double temperature, const std::vector<double>& answer_uniforms,
                                           const TurnFlags& turn_flags = kNoTurnFlags);

// Recomputes per-token temperature-1 log-probabilities (prefix plus answers)
// for an existing trajectory. Throws on tokens outside the vocabulary.
std::vector<double> sequence_logprob(const PolicyParams& params, const TaskInstance& instance,
                                     const Trajectory& trajectory, const TurnFlags& turn_flags = kNoTurnFlags);

// Analytic d/dtheta of sum_t weights[t] * log pi(token_t). weights has one
// entry per token including the prefix.
std::vector<double> grad_weighted_logprob(const PolicyParams& params, const TaskInstance& instance,
                                          const Trajectory& trajectory, const std::vector<double>& weights,
                                          const TurnFlags& turn_flags = kNoTurnFlags);

// Accumulating form: grad += scale * d/dtheta of the weighted log-likelihood.
void accumulate_grad_weighted_logprob(const PolicyParams& params, const TaskInstance& instance,
                                      const Trajectory& trajectory, const std::vector<double>& weights, double scale,
                                      std::vector<double>& grad, const TurnFlags& turn_flags = kNoTurnFlags);

// Central finite differences of an arbitrary scalar function of theta.
std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& theta, double step = 1e-6);

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b);

// ---- checkpoints ----
// Binary format: magic, dims, seed, stage tag, then theta as little-endian
// 64-bit floats. Round-trips bit-exactly.

struct Checkpoint {
    PolicyParams params;
    std::uint64_t seed = 0;
    std::string stage;  // e.g. "warmup", "final"
};

void save_checkpoint(const std::string& path, const PolicyParams& params, std::uint64_t seed, const std::string& stage);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dualmode
