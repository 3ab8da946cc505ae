#pragma once

// Shared domain types. Data only; constructors validate invariants.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualmode {

// ---- vocabulary layout ----
// Token ids: [0] general prefix, [1] personalized prefix, [2..V) answer tokens.
// Dataset answer keys are answer-vocabulary ids (0-based); trajectories carry
// full-vocabulary token ids.

enum class Mode { General = 0, Personalized = 1 };
enum class TaskKind { Objective = 0, PersonalizedQA = 1 };
enum class Alignment { NoPersona = 0, Unaligned = 1, Aligned = 2 };

inline constexpr int kNumPrefixTokens = 2;
inline constexpr int kUnsetAnswer = -1;  // sentinel for answer keys that do not apply

inline int prefix_token_id(Mode m) { return m == Mode::General ? 0 : 1; }
inline int answer_token_id(int answer_id) { return answer_id + kNumPrefixTokens; }
inline bool is_prefix_token(int token_id) { return token_id >= 0 && token_id < kNumPrefixTokens; }

inline Mode mode_from_prefix_token(int token_id) {
    if (!is_prefix_token(token_id)) throw std::invalid_argument("not a prefix token id: " + std::to_string(token_id));
    return token_id == 0 ? Mode::General : Mode::Personalized;
}

inline Mode other_mode(Mode m) { return m == Mode::General ? Mode::Personalized : Mode::General; }

const std::string& to_string(Mode m);
const std::string& to_string(TaskKind k);
const std::string& to_string(Alignment a);
Mode mode_from_string(const std::string& s);
TaskKind kind_from_string(const std::string& s);
Alignment alignment_from_string(const std::string& s);

// ---- task instances ----

struct TaskInstance {
    long long id = 0;
    std::vector<double> query_features;    // length d_q, components in [-1, 1]
    std::vector<double> persona_features;  // length d_p, components in [-1, 1]
    TaskKind kind = TaskKind::Objective;
    // Latent: read by the environment and evaluators, never encoded for the policy.
    Alignment alignment = Alignment::NoPersona;
    int objective_answer = kUnsetAnswer;  // answer-vocab id, defined for Objective
    int persona_answer = kUnsetAnswer;    // answer-vocab id, defined for PersonalizedQA
    int decoy_answer = kUnsetAnswer;      // answer-vocab id, defined for Objective+Unaligned

    void validate() const;  // throws std::invalid_argument on any broken invariant
};

// Slice key used by evaluators and reports: objective instances split by
// alignment, personalized-QA instances form a single slice.
std::string slice_name(TaskKind kind, Alignment alignment);
std::string slice_name(const TaskInstance& inst);

// ---- trajectories ----

struct Trajectory {
    Mode mode = Mode::General;
    std::vector<int> answer_tokens;      // full-vocab token ids, length L >= 1
    std::vector<double> token_logprobs;  // length L+1: prefix token, then answers; natural log
    double reward = 0.0;                 // in [0, 1]; 0 until scored

    void validate() const;
};

// ---- rollout groups ----

// The 2n trajectories for one input under prefix-forced sampling. The
// constructor checks balance and computes the per-mode reward means.
struct RolloutGroup {
    long long instance_id = 0;
    std::vector<Trajectory> general_trajectories;
    std::vector<Trajectory> personalized_trajectories;
    double mu_general = 0.0;
    double mu_personalized = 0.0;

    RolloutGroup(long long instance_id_, std::vector<Trajectory> general, std::vector<Trajectory> personalized);

    int n_per_mode() const { return static_cast<int>(general_trajectories.size()); }
    // Trajectory i in [0, 2n): general first, then personalized.
    const Trajectory& trajectory(int i) const {
        const int n = n_per_mode();
        return i < n ? general_trajectories[static_cast<size_t>(i)] : personalized_trajectories[static_cast<size_t>(i - n)];
    }
};

// ---- advantage assignments ----

// Per-trajectory advantages after intra/inter composition, with the prefix
// position amplified by beta. Indexing follows RolloutGroup::trajectory.
struct AdvantageAssignment {
    std::vector<double> intra;
    std::vector<double> inter;
    std::vector<double> composed;                // intra + inter, exactly
    std::vector<std::vector<double>> per_token;  // [i][0] = beta * composed[i]; [i][t>=1] = composed[i]
    double beta_prefix = 1.0;

    AdvantageAssignment(std::vector<double> intra_, std::vector<double> inter_, std::vector<double> composed_,
                        std::vector<std::vector<double>> per_token_, double beta_prefix_, int n_per_mode);
};

// ---- dataset serialization ----

// Line-delimited records, one JSON object per instance; field names are part
// of the format contract.
void save_dataset_jsonl(const std::string& path, const std::vector<TaskInstance>& instances);
std::vector<TaskInstance> load_dataset_jsonl(const std::string& path);

}  // namespace dualmode
