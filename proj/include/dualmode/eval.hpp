#pragma once

// Analysis instruments: accuracy and mode proportions by slice, either-mode
// upper bound, mixed-ratio sweeps, two-turn consistency, deviation ratios,
// and logistic-regression attribution of the mode choice.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualmode/core.hpp"
#include "dualmode/policy.hpp"
#include "dualmode/synthenv.hpp"

namespace dualmode {

struct EvalSettings {
    int samples_per_instance = 4;
    // Evaluation reads the policy at its native distribution; sharpened
    // decoding would overstate agreement and mask selector differences.
    double temperature = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EvalReport {
    std::map<std::string, double> accuracy_by_slice;
    std::map<std::string, double> mode_proportion_by_slice;  // fraction choosing Personalized
    std::map<std::string, double> upper_bound_by_slice;      // either-mode-correct rate
    std::map<std::string, long long> slice_counts;
    double oracle_agreement = 0.0;
    double overall_accuracy = 0.0;
};

// Free sampling at the configured temperature. Each sample shares its answer
// draws between the two forced branches and the free branch, so the
// upper bound dominates the free accuracy pointwise, not just in expectation.
EvalReport evaluate(const PolicyParams& params, const std::vector<TaskInstance>& dataset, const EvalSettings& settings);

std::string eval_report_to_json(const EvalReport& report);
void save_eval_report(const std::string& path, const EvalReport& report);

// Mean correctness when every sample is forced to one mode.
double forced_mode_accuracy(const PolicyParams& params, const std::vector<TaskInstance>& dataset, Mode mode,
                            const EvalSettings& settings);

struct SweepPoint {
    double ratio;
    double accuracy;
};

// For each ratio r: an eval set with PersonalizedQA fraction r (objective
// remainder split evenly between aligned and unaligned), same environment
// tables throughout. forced_mode evaluates a fixed-mode baseline instead of
// free sampling.
std::vector<SweepPoint> mixed_ratio_sweep(const PolicyParams& params, const EnvConfig& env_config,
                                          const std::vector<double>& ratios, int count, const EvalSettings& settings,
                                          std::optional<Mode> forced_mode = std::nullopt);

enum class TurnOrder { GeneralFirst, PersonalizedFirst };

const std::string& to_string(TurnOrder order);

struct TwoTurnReport {
    double mode_alignment_rate = 0.0;                 // second-turn mode matches the single-turn mode
    std::map<std::string, double> deviation_by_slice;  // percentage, per slice
    std::map<std::string, long long> samples_by_slice;
};

// Second-turn episodes carry the first turn's mode as a one-hot input flag;
// the single-turn choice uses the same underlying draw, so a policy that
// ignores the flag aligns exactly.
TwoTurnReport two_turn_consistency(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                                   TurnOrder order, const EvalSettings& settings);

// Per-slice deviation percentage averaged over both first-turn orders.
std::map<std::string, double> deviation_ratio(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                                              const EvalSettings& settings);

struct ModeRegressionResult {
    std::vector<double> weights;  // query features then persona features
    double bias = 0.0;
    std::vector<int> top_features;  // indices into weights, by descending |weight|
    std::vector<double> loss_curve;
};

// L2-regularized logistic regression predicting the free-sampled mode from
// [query; persona] features. Throws if only one mode ever gets sampled.
ModeRegressionResult mode_regression(const PolicyParams& params, const std::vector<TaskInstance>& dataset, int top_k,
                                     const EvalSettings& settings);

}  // namespace dualmode
