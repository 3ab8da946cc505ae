#pragma once

// Synthetic dual-mode task environment. The double-edged persona effect is
// encoded in the information structure: aligned personas carry a recoverable
// hint toward the objective answer, unaligned personas carry a decoy pointing
// at a wrong answer, and personalized-QA answers are functions of the persona.
// Rewards never depend on the mode directly.

#include <array>
#include <cstdint>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/rng.hpp"

namespace dualmode {

struct EnvConfig {
    int d_q = 8;
    int d_p = 8;
    int vocab_answers = 8;  // V_a
    // Probabilities of (Objective+Unaligned, Objective+Aligned, PersonalizedQA).
    std::array<double, 3> mix{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    // Fraction of persona feature mass carrying the signal (provenance in
    // component 0, a codeword in the rest); the remaining 1 - hint_strength is
    // uniform noise, so hint_strength = 1 means a noiseless persona.
    double hint_strength = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

// Fixed random structure drawn once per dataset seed: the query answer
// projection and the +-1 persona codebook that carries hints, decoys, and
// subjective answers.
struct EnvTables {
    std::vector<std::vector<double>> query_proj;    // V_a rows of length d_q
    std::vector<std::vector<double>> codebook;      // V_a rows of length d_p, entries +-1
};

EnvTables make_env_tables(const EnvConfig& config);

// argmax_a dot(rows[a], v); ties break toward the lower index.
int project_argmax(const std::vector<std::vector<double>>& rows, const std::vector<double>& v);

// Deterministic per (config, count, stream): the same seed always yields the
// same tables, and each stream tag yields an independent instance sequence
// over those tables (training/eval splits share one environment).
std::vector<TaskInstance> generate_dataset(const EnvConfig& config, int count, std::uint64_t stream = 0);

// Binary correctness of the first answer token against the kind's answer key.
double score(const TaskInstance& instance, const Trajectory& trajectory);

// The reward-maximizing mode: Personalized wherever the persona helps
// (PersonalizedQA and aligned objective tasks), General otherwise. Evaluation
// ground truth only; the policy never sees it.
Mode oracle_mode(const TaskInstance& instance);

}  // namespace dualmode
