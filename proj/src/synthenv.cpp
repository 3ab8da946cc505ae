#include "dualmode/synthenv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dualmode {

namespace {

// Objective queries put their first component below this band, personalized
// ones above it, so task kind is recoverable from the query itself.
constexpr double kKindCueGap = 0.2;
constexpr double kProvenanceReliability = 0.975;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

std::vector<std::vector<double>> random_rows(Rng& rng, int rows, int cols) {
    std::vector<std::vector<double>> out(static_cast<size_t>(rows));
    for (auto& row : out) {
        row.resize(static_cast<size_t>(cols));
        for (double& v : row) v = rng.uniform(-1.0, 1.0);
    }
    return out;
}

int dot_sign_count(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return static_cast<int>(std::lround(s));
}

// Greedy +-1 codebook with low pairwise cross-correlation so codewords stay
// decodable under the default noise level. The acceptance threshold starts at
// d_p/2 and relaxes only if a row cannot be placed.
std::vector<std::vector<double>> make_codebook(Rng& rng, int rows, int d_p) {
    std::vector<std::vector<double>> book;
    book.reserve(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        int threshold = d_p / 2;
        for (int attempt = 0;; ++attempt) {
            std::vector<double> cand(static_cast<size_t>(d_p));
            for (double& v : cand) v = rng.u01() < 0.5 ? -1.0 : 1.0;
            bool ok = true;
            for (const auto& row : book) {
                // Duplicate rows would make two answers indistinguishable, so
                // they stay banned even after the threshold relaxes.
                if (row == cand || std::abs(dot_sign_count(row, cand)) > threshold) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                book.push_back(std::move(cand));
                break;
            }
            if (attempt > 0 && attempt % 500 == 0) threshold += 2;  // relax rather than spin forever
        }
    }
    return book;
}

}  // namespace

void EnvConfig::validate() const {
    // d_p reserves component 0 for provenance; the codeword needs >= 2 dims.
    require(d_q >= 2 && d_p >= 3, "feature dimensions must be at least 2 (persona: provenance + codeword)");
    require(vocab_answers >= 2, "need at least two answer tokens");
    // Each answer needs its own +-1 codeword, so the codeword width must offer
    // enough distinct patterns.
    require(d_p - 1 >= 30 || vocab_answers <= (1 << (d_p - 1)),
            "answer vocabulary exceeds the distinct codewords expressible in d_p - 1 components");
    double total = 0.0;
    for (double m : mix) {
        require(m >= 0.0, "mix components must be non-negative");
        total += m;
    }
    require(std::abs(total - 1.0) <= 1e-12, "mix must sum to 1");
    require(hint_strength >= 0.0 && hint_strength <= 1.0, "hint_strength must be in [0, 1]");
}

EnvTables make_env_tables(const EnvConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, hash_tag("env-tables")));
    EnvTables t;
    t.query_proj = random_rows(rng, config.vocab_answers, config.d_q);
    t.codebook = make_codebook(rng, config.vocab_answers, config.d_p - 1);
    return t;
}

int project_argmax(const std::vector<std::vector<double>>& rows, const std::vector<double>& v) {
    int best = 0;
    double best_score = -1e300;
    for (size_t a = 0; a < rows.size(); ++a) {
        double s = 0.0;
        for (size_t i = 0; i < v.size(); ++i) s += rows[a][i] * v[i];
        if (s > best_score) {
            best_score = s;
            best = static_cast<int>(a);
        }
    }
    return best;
}

std::vector<TaskInstance> generate_dataset(const EnvConfig& config, int count, std::uint64_t stream) {
    config.validate();
    require(count >= 1, "count must be at least 1");
    const EnvTables tables = make_env_tables(config);
    Rng rng(derive_seed(config.seed, hash_tag("env-instances") ^ (stream * 0x9e3779b97f4a7c15ULL + stream)));

    std::vector<TaskInstance> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        TaskInstance inst;
        inst.id = i;

        const double pick = rng.u01();
        if (pick < config.mix[0]) {
            inst.kind = TaskKind::Objective;
            inst.alignment = Alignment::Unaligned;
        } else if (pick < config.mix[0] + config.mix[1]) {
            inst.kind = TaskKind::Objective;
            inst.alignment = Alignment::Aligned;
        } else {
            inst.kind = TaskKind::PersonalizedQA;
            inst.alignment = Alignment::Aligned;
        }

        inst.query_features.resize(static_cast<size_t>(config.d_q));
        for (double& v : inst.query_features) v = rng.uniform(-1.0, 1.0);
        // Kind cue: component 0 encodes objective vs personalized.
        inst.query_features[0] = inst.kind == TaskKind::Objective ? rng.uniform(-1.0, -kKindCueGap)
                                                                  : rng.uniform(kKindCueGap, 1.0);

        // Persona layout: component 0 carries provenance (trusted +, untrusted -),
        // components 1..d_p-1 carry a codeword. Every persona is decodable; only
        // provenance separates hints from decoys, so a reader that decodes the
        // codeword without checking it walks straight into the trap.
        int codeword = 0;
        double trust = 1.0;
        if (inst.kind == TaskKind::Objective) {
            inst.objective_answer = project_argmax(tables.query_proj, inst.query_features);
            if (inst.alignment == Alignment::Aligned) {
                codeword = inst.objective_answer;
            } else {
                // Decoy: any wrong answer, uniformly.
                int d = rng.uniform_int(config.vocab_answers - 1);
                if (d >= inst.objective_answer) ++d;
                inst.decoy_answer = d;
                codeword = d;
                trust = -1.0;
            }
        } else {
            inst.persona_answer = rng.uniform_int(config.vocab_answers);
            codeword = inst.persona_answer;
        }
        const std::vector<double>& code = tables.codebook[static_cast<size_t>(codeword)];
        inst.persona_features.resize(static_cast<size_t>(config.d_p));
        // Provenance is occasionally mislabeled, so no reader can gate on it
        // perfectly; the flip rate bounds how well any policy can separate
        // hints from decoys without consulting the query.
        if (rng.u01() >= kProvenanceReliability) trust = -trust;
        inst.persona_features[0] =
            config.hint_strength * trust + (1.0 - config.hint_strength) * rng.uniform(-1.0, 1.0);
        for (size_t j = 1; j < inst.persona_features.size(); ++j) {
            inst.persona_features[j] =
                config.hint_strength * code[j - 1] + (1.0 - config.hint_strength) * rng.uniform(-1.0, 1.0);
        }

        inst.validate();
        out.push_back(std::move(inst));
    }
    return out;
}

double score(const TaskInstance& instance, const Trajectory& trajectory) {
    if (trajectory.answer_tokens.empty()) throw std::invalid_argument("trajectory has no answer token");
    const int key = instance.kind == TaskKind::Objective ? instance.objective_answer : instance.persona_answer;
    return trajectory.answer_tokens[0] == answer_token_id(key) ? 1.0 : 0.0;
}

Mode oracle_mode(const TaskInstance& instance) {
    if (instance.kind == TaskKind::PersonalizedQA) return Mode::Personalized;
    return instance.alignment == Alignment::Aligned ? Mode::Personalized : Mode::General;
}

}  // namespace dualmode
