#include "dualmode/core.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace dualmode {

namespace {

constexpr double kFeatureBoundTol = 1e-12;
constexpr double kComposeTol = 1e-12;
constexpr double kSumTol = 1e-9;

void check(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

void check_feature_vector(const std::vector<double>& v, const char* name) {
    check(!v.empty(), std::string(name) + " must be non-empty");
    for (double x : v) {
        check(std::isfinite(x), std::string(name) + " has a non-finite component");
        check(std::abs(x) <= 1.0 + kFeatureBoundTol, std::string(name) + " component outside [-1, 1]");
    }
}

}  // namespace

const std::string& to_string(Mode m) {
    static const std::string general = "General", personalized = "Personalized";
    return m == Mode::General ? general : personalized;
}

const std::string& to_string(TaskKind k) {
    static const std::string objective = "Objective", pqa = "PersonalizedQA";
    return k == TaskKind::Objective ? objective : pqa;
}

const std::string& to_string(Alignment a) {
    static const std::string none = "NoPersona", unaligned = "Unaligned", aligned = "Aligned";
    switch (a) {
        case Alignment::NoPersona: return none;
        case Alignment::Unaligned: return unaligned;
        default: return aligned;
    }
}

Mode mode_from_string(const std::string& s) {
    if (s == "General") return Mode::General;
    if (s == "Personalized") return Mode::Personalized;
    throw std::invalid_argument("unknown mode: " + s);
}

TaskKind kind_from_string(const std::string& s) {
    if (s == "Objective") return TaskKind::Objective;
    if (s == "PersonalizedQA") return TaskKind::PersonalizedQA;
    throw std::invalid_argument("unknown task kind: " + s);
}

Alignment alignment_from_string(const std::string& s) {
    if (s == "NoPersona") return Alignment::NoPersona;
    if (s == "Unaligned") return Alignment::Unaligned;
    if (s == "Aligned") return Alignment::Aligned;
    throw std::invalid_argument("unknown alignment: " + s);
}

void TaskInstance::validate() const {
    check_feature_vector(query_features, "query_features");
    check_feature_vector(persona_features, "persona_features");
    if (alignment == Alignment::NoPersona) {
        for (double x : persona_features) check(x == 0.0, "NoPersona instance must carry a zero persona");
    }
    if (kind == TaskKind::Objective) {
        check(objective_answer >= 0, "Objective instance needs objective_answer");
        if (alignment == Alignment::Unaligned) {
            check(decoy_answer >= 0, "Unaligned instance needs decoy_answer");
            check(decoy_answer != objective_answer, "decoy_answer must differ from objective_answer");
        }
    } else {
        check(persona_answer >= 0, "PersonalizedQA instance needs persona_answer");
        check(alignment == Alignment::Aligned, "PersonalizedQA instances are always Aligned");
    }
    if (decoy_answer >= 0 && objective_answer >= 0) {
        check(decoy_answer != objective_answer, "decoy_answer must differ from objective_answer");
    }
    check(objective_answer >= kUnsetAnswer && persona_answer >= kUnsetAnswer && decoy_answer >= kUnsetAnswer,
          "answer ids must be >= -1");
}

std::string slice_name(TaskKind kind, Alignment alignment) {
    if (kind == TaskKind::PersonalizedQA) return "personalized";
    switch (alignment) {
        case Alignment::NoPersona: return "objective_nopersona";
        case Alignment::Unaligned: return "objective_unaligned";
        default: return "objective_aligned";
    }
}

std::string slice_name(const TaskInstance& inst) { return slice_name(inst.kind, inst.alignment); }

void Trajectory::validate() const {
    check(!answer_tokens.empty(), "trajectory needs at least one answer token");
    check(token_logprobs.size() == answer_tokens.size() + 1, "token_logprobs must cover prefix plus answers");
    for (double lp : token_logprobs) {
        check(std::isfinite(lp), "non-finite log-probability");
        check(lp <= 0.0, "log-probability above 0");
    }
    for (int t : answer_tokens) check(t >= 0, "negative token id");
    check(reward >= 0.0 && reward <= 1.0, "reward outside [0, 1]");
}

namespace {

double mean_reward(const std::vector<Trajectory>& ts) {
    double s = 0.0;
    for (const Trajectory& t : ts) s += t.reward;
    return s / static_cast<double>(ts.size());
}

}  // namespace

RolloutGroup::RolloutGroup(long long instance_id_, std::vector<Trajectory> general, std::vector<Trajectory> personalized)
    : instance_id(instance_id_), general_trajectories(std::move(general)), personalized_trajectories(std::move(personalized)) {
    check(!general_trajectories.empty(), "rollout group needs n >= 1");
    check(general_trajectories.size() == personalized_trajectories.size(),
          "rollout group must hold equally many trajectories per mode");
    for (const Trajectory& t : general_trajectories) {
        t.validate();
        check(t.mode == Mode::General, "general side holds a personalized trajectory");
    }
    for (const Trajectory& t : personalized_trajectories) {
        t.validate();
        check(t.mode == Mode::Personalized, "personalized side holds a general trajectory");
    }
    mu_general = mean_reward(general_trajectories);
    mu_personalized = mean_reward(personalized_trajectories);
}

AdvantageAssignment::AdvantageAssignment(std::vector<double> intra_, std::vector<double> inter_,
                                         std::vector<double> composed_, std::vector<std::vector<double>> per_token_,
                                         double beta_prefix_, int n_per_mode)
    : intra(std::move(intra_)), inter(std::move(inter_)), composed(std::move(composed_)),
      per_token(std::move(per_token_)), beta_prefix(beta_prefix_) {
    check(n_per_mode >= 1, "advantage assignment needs n >= 1");
    const size_t total = 2 * static_cast<size_t>(n_per_mode);
    check(intra.size() == total && inter.size() == total && composed.size() == total && per_token.size() == total,
          "advantage vectors must cover all 2n trajectories");
    check(beta_prefix >= 1.0, "beta_prefix must be >= 1");
    double intra_gm = 0.0, intra_pm = 0.0, composed_sum = 0.0;
    for (size_t i = 0; i < total; ++i) {
        check(std::abs(composed[i] - (intra[i] + inter[i])) <= kComposeTol, "composed must equal intra + inter");
        (i < total / 2 ? intra_gm : intra_pm) += intra[i];
        composed_sum += composed[i];
        check(per_token[i].size() >= 2, "per_token needs a prefix entry and at least one answer entry");
        check(std::abs(per_token[i][0] - beta_prefix * composed[i]) <= kComposeTol,
              "prefix per-token advantage must equal beta * composed");
        for (size_t t = 1; t < per_token[i].size(); ++t) {
            check(std::abs(per_token[i][t] - composed[i]) <= kComposeTol,
                  "answer per-token advantage must equal composed");
        }
    }
    check(std::abs(intra_gm) <= kSumTol && std::abs(intra_pm) <= kSumTol, "per-mode intra advantages must sum to 0");
    check(std::abs(composed_sum) <= kSumTol, "composed advantages must sum to 0 across the group");
}

// ---- dataset serialization ----

void save_dataset_jsonl(const std::string& path, const std::vector<TaskInstance>& instances) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const TaskInstance& inst : instances) {
        nlohmann::json rec;
        rec["id"] = inst.id;
        rec["query_features"] = inst.query_features;
        rec["persona_features"] = inst.persona_features;
        rec["kind"] = to_string(inst.kind);
        rec["alignment"] = to_string(inst.alignment);
        rec["objective_answer"] = inst.objective_answer;
        rec["persona_answer"] = inst.persona_answer;
        rec["decoy_answer"] = inst.decoy_answer;
        out << rec.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<TaskInstance> load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<TaskInstance> instances;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        TaskInstance inst;
        inst.id = rec.at("id").get<long long>();
        inst.query_features = rec.at("query_features").get<std::vector<double>>();
        inst.persona_features = rec.at("persona_features").get<std::vector<double>>();
        inst.kind = kind_from_string(rec.at("kind").get<std::string>());
        inst.alignment = alignment_from_string(rec.at("alignment").get<std::string>());
        inst.objective_answer = rec.at("objective_answer").get<int>();
        inst.persona_answer = rec.at("persona_answer").get<int>();
        inst.decoy_answer = rec.at("decoy_answer").get<int>();
        inst.validate();
        instances.push_back(std::move(inst));
    }
    return instances;
}

}  // namespace dualmode
