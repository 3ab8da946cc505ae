#include "dualmode/warmup.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "dualmode/synthenv.hpp"
#include "json.hpp"

namespace dualmode {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// A demonstration as a one-answer trajectory, so the policy's likelihood and
// gradient machinery applies unchanged.
Trajectory demo_trajectory(const Demonstration& demo) {
    Trajectory t;
    t.mode = demo.mode;
    t.answer_tokens = {answer_token_id(demo.target_answer)};
    t.token_logprobs = {0.0, 0.0};
    return t;
}

using InstanceIndex = std::unordered_map<long long, const TaskInstance*>;

InstanceIndex index_instances(const std::vector<TaskInstance>& instances) {
    InstanceIndex idx;
    idx.reserve(instances.size());
    for (const TaskInstance& inst : instances) idx[inst.id] = &inst;
    return idx;
}

const TaskInstance& lookup(const InstanceIndex& idx, long long id) {
    auto it = idx.find(id);
    if (it == idx.end()) throw std::invalid_argument("demonstration references unknown instance id " + std::to_string(id));
    return *it->second;
}

double demo_set_loss(const PolicyParams& params, const std::vector<Demonstration>& demos, const InstanceIndex& idx) {
    double total = 0.0;
    for (const Demonstration& demo : demos) {
        const TaskInstance& inst = lookup(idx, demo.instance_id);
        const std::vector<double> lps = sequence_logprob(params, inst, demo_trajectory(demo));
        total -= lps[0] + lps[1];
    }
    return total / static_cast<double>(demos.size());
}

}  // namespace

void WarmupConfig::validate() const {
    require(probe_epochs >= 0 && epochs >= 0, "epoch counts must be non-negative");
    require(probe_lr >= 0.0 && lr >= 0.0, "learning rates must be non-negative");
    require(gain_samples >= 1, "gain_samples must be at least 1");
    require(gain_temperature > 0.0, "gain_temperature must be positive");
}

int demo_target(const TaskInstance& instance) {
    const int target = instance.kind == TaskKind::Objective ? instance.objective_answer : instance.persona_answer;
    require(target >= 0, "instance has no answer key for its kind");
    return target;
}

PolicyParams build_probe(const std::vector<TaskInstance>& instances, const PolicyDims& dims,
                         const WarmupConfig& config) {
    config.validate();
    require(!instances.empty(), "probe needs a non-empty instance set");
    std::vector<Demonstration> demos;
    demos.reserve(instances.size() * 2);
    for (const TaskInstance& inst : instances) {
        const int target = demo_target(inst);
        demos.push_back({inst.id, Mode::General, target});
        demos.push_back({inst.id, Mode::Personalized, target});
    }
    PolicyParams probe = init_params(derive_seed(config.seed, hash_tag("warmup-probe")), dims);
    return sft_fit(probe, demos, instances, config.probe_epochs, config.probe_lr);
}

Mode gain_based_label(const TaskInstance& instance, const PolicyParams& probe, int k, double temperature, Rng& rng) {
    require(k >= 1, "gain test needs k >= 1");
    if (instance.kind == TaskKind::PersonalizedQA) return Mode::Personalized;
    int wins_general = 0, wins_personalized = 0;
    std::vector<double> us(static_cast<size_t>(probe.dims.horizon));
    for (int s = 0; s < k; ++s) {
        // Common draws for both modes: the comparison sees the hint's effect,
        // not sampling luck.
        for (double& u : us) u = rng.u01();
        const Trajectory general = sample_trajectory_with_uniforms(probe, instance, Mode::General, temperature, us);
        const Trajectory personalized =
            sample_trajectory_with_uniforms(probe, instance, Mode::Personalized, temperature, us);
        wins_general += score(instance, general) > 0.5 ? 1 : 0;
        wins_personalized += score(instance, personalized) > 0.5 ? 1 : 0;
    }
    // Ties mean no clear benefit from the persona.
    return wins_personalized > wins_general ? Mode::Personalized : Mode::General;
}

std::vector<Demonstration> build_demonstrations(const std::vector<TaskInstance>& instances, const PolicyParams& probe,
                                                const WarmupConfig& config) {
    config.validate();
    std::vector<Demonstration> demos;
    demos.reserve(instances.size());
    for (const TaskInstance& inst : instances) {
        Rng rng(derive_seed(config.seed,
                            hash_tag("gain-label") ^ (static_cast<std::uint64_t>(inst.id) * 0x100000001b3ULL)));
        const Mode mode = gain_based_label(inst, probe, config.gain_samples, config.gain_temperature, rng);
        demos.push_back({inst.id, mode, demo_target(inst)});
    }
    return demos;
}

double sft_loss(const PolicyParams& params, const std::vector<Demonstration>& demos,
                const std::vector<TaskInstance>& instances) {
    require(!demos.empty(), "demo set is empty");
    return demo_set_loss(params, demos, index_instances(instances));
}

PolicyParams sft_fit(const PolicyParams& params, const std::vector<Demonstration>& demos,
                     const std::vector<TaskInstance>& instances, int epochs, double lr,
                     std::vector<double>* loss_curve) {
    require(!demos.empty(), "demo set is empty");
    require(lr >= 0.0, "lr must be non-negative");
    const InstanceIndex idx = index_instances(instances);
    const double inv_n = 1.0 / static_cast<double>(demos.size());
    const std::vector<double> weights{1.0, 1.0};

    PolicyParams current = params;
    double current_loss = demo_set_loss(current, demos, idx);
    if (loss_curve) loss_curve->push_back(current_loss);
    if (lr == 0.0 || epochs == 0) return current;

    std::vector<double> grad(static_cast<size_t>(params.dims.theta_length()));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (const Demonstration& demo : demos) {
            // grad of mean NLL: minus the mean log-likelihood gradient.
            accumulate_grad_weighted_logprob(current, lookup(idx, demo.instance_id), demo_trajectory(demo), weights,
                                             -inv_n, grad);
        }
        // Backoff: halve the step until the full-batch loss stops increasing.
        PolicyParams candidate = current;
        double candidate_loss = current_loss;
        for (int tries = 0; tries < 60; ++tries) {
            for (size_t i = 0; i < candidate.theta.size(); ++i) candidate.theta[i] = current.theta[i] - lr * grad[i];
            candidate_loss = demo_set_loss(candidate, demos, idx);
            if (candidate_loss <= current_loss) break;
            lr *= 0.5;
        }
        if (candidate_loss <= current_loss) {
            current.theta.swap(candidate.theta);
            current_loss = candidate_loss;
        }
        if (loss_curve) loss_curve->push_back(current_loss);
    }
    return current;
}

void save_demos_jsonl(const std::string& path, const std::vector<Demonstration>& demos) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const Demonstration& demo : demos) {
        nlohmann::json rec;
        rec["instance_id"] = demo.instance_id;
        rec["mode"] = to_string(demo.mode);
        rec["target_answer"] = demo.target_answer;
        out << rec.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Demonstration> load_demos_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<Demonstration> demos;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line);
        Demonstration demo;
        demo.instance_id = rec.at("instance_id").get<long long>();
        demo.mode = mode_from_string(rec.at("mode").get<std::string>());
        demo.target_answer = rec.at("target_answer").get<int>();
        demos.push_back(demo);
    }
    return demos;
}

}  // namespace dualmode
