#include "dualmode/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualmode/io.hpp"
#include "json.hpp"

namespace dualmode {

namespace {

constexpr double kRegressionL2 = 1e-3;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

Rng instance_stream(std::uint64_t seed, const char* tag, long long instance_id) {
    return Rng(derive_seed(seed, hash_tag(tag) ^ (static_cast<std::uint64_t>(instance_id) * 0x100000001b3ULL)));
}

struct SliceAccum {
    long long samples = 0;
    long long correct = 0;
    long long upper = 0;
    long long personalized = 0;
};

}  // namespace

void EvalSettings::validate() const {
    require(samples_per_instance >= 1, "samples_per_instance must be at least 1");
    require(temperature > 0.0, "temperature must be positive");
}

EvalReport evaluate(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                    const EvalSettings& settings) {
    settings.validate();
    require(!dataset.empty(), "evaluation dataset is empty");

    std::map<std::string, SliceAccum> slices;
    long long total = 0, total_correct = 0, oracle_hits = 0;
    std::vector<double> us(static_cast<size_t>(params.dims.horizon));

    for (const TaskInstance& inst : dataset) {
        Rng rng = instance_stream(settings.seed, "eval", inst.id);
        const auto [p_gm, p_pm] = mode_distribution(params, inst, settings.temperature);
        (void)p_pm;
        const Mode oracle = oracle_mode(inst);
        SliceAccum& acc = slices[slice_name(inst)];

        for (int s = 0; s < settings.samples_per_instance; ++s) {
            const double u_mode = rng.u01();
            for (double& u : us) u = rng.u01();
            // Both forced branches consume the same answer draws; the free
            // sample is whichever branch the selector picks.
            const Trajectory general =
                sample_trajectory_with_uniforms(params, inst, Mode::General, settings.temperature, us);
            const Trajectory personalized =
                sample_trajectory_with_uniforms(params, inst, Mode::Personalized, settings.temperature, us);
            const double r_gm = score(inst, general);
            const double r_pm = score(inst, personalized);
            const Mode chosen = u_mode < p_gm ? Mode::General : Mode::Personalized;
            const double r_free = chosen == Mode::General ? r_gm : r_pm;

            ++acc.samples;
            ++total;
            acc.correct += r_free > 0.5 ? 1 : 0;
            total_correct += r_free > 0.5 ? 1 : 0;
            acc.upper += std::max(r_gm, r_pm) > 0.5 ? 1 : 0;
            acc.personalized += chosen == Mode::Personalized ? 1 : 0;
            oracle_hits += chosen == oracle ? 1 : 0;
        }
    }

    EvalReport report;
    for (const auto& [name, acc] : slices) {
        const double n = static_cast<double>(acc.samples);
        report.accuracy_by_slice[name] = static_cast<double>(acc.correct) / n;
        report.upper_bound_by_slice[name] = static_cast<double>(acc.upper) / n;
        report.mode_proportion_by_slice[name] = static_cast<double>(acc.personalized) / n;
        report.slice_counts[name] = acc.samples;
    }
    report.oracle_agreement = static_cast<double>(oracle_hits) / static_cast<double>(total);
    report.overall_accuracy = static_cast<double>(total_correct) / static_cast<double>(total);
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["accuracy_by_slice"] = report.accuracy_by_slice;
    j["mode_proportion_by_slice"] = report.mode_proportion_by_slice;
    j["upper_bound_by_slice"] = report.upper_bound_by_slice;
    j["slice_counts"] = report.slice_counts;
    j["oracle_agreement"] = report.oracle_agreement;
    j["overall_accuracy"] = report.overall_accuracy;
    return j.dump(2) + "\n";
}

void save_eval_report(const std::string& path, const EvalReport& report) {
    write_text_file(path, eval_report_to_json(report));
}

double forced_mode_accuracy(const PolicyParams& params, const std::vector<TaskInstance>& dataset, Mode mode,
                            const EvalSettings& settings) {
    settings.validate();
    require(!dataset.empty(), "evaluation dataset is empty");
    long long correct = 0, total = 0;
    std::vector<double> us(static_cast<size_t>(params.dims.horizon));
    for (const TaskInstance& inst : dataset) {
        Rng rng = instance_stream(settings.seed, "eval", inst.id);
        for (int s = 0; s < settings.samples_per_instance; ++s) {
            rng.u01();  // keep draws aligned with evaluate()
            for (double& u : us) u = rng.u01();
            const Trajectory t = sample_trajectory_with_uniforms(params, inst, mode, settings.temperature, us);
            correct += score(inst, t) > 0.5 ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<SweepPoint> mixed_ratio_sweep(const PolicyParams& params, const EnvConfig& env_config,
                                          const std::vector<double>& ratios, int count, const EvalSettings& settings,
                                          std::optional<Mode> forced_mode) {
    settings.validate();
    require(count >= 1, "sweep needs count >= 1");
    std::vector<SweepPoint> out;
    out.reserve(ratios.size());
    for (double ratio : ratios) {
        require(ratio >= 0.0 && ratio <= 1.0, "ratios must lie in [0, 1]");
        EnvConfig cfg = env_config;
        cfg.mix = {(1.0 - ratio) / 2.0, (1.0 - ratio) / 2.0, ratio};
        // Stream tag keyed to the ratio value, so each ratio reuses its eval
        // set regardless of list order, over the same environment tables.
        const std::uint64_t stream = 1000000 + static_cast<std::uint64_t>(std::llround(ratio * 1e6));
        const std::vector<TaskInstance> dataset = generate_dataset(cfg, count, stream);
        EvalSettings local = settings;
        local.seed = derive_seed(settings.seed, hash_tag("sweep") ^ stream);
        const double acc = forced_mode.has_value() ? forced_mode_accuracy(params, dataset, *forced_mode, local)
                                                   : evaluate(params, dataset, local).overall_accuracy;
        out.push_back({ratio, acc});
    }
    return out;
}

const std::string& to_string(TurnOrder order) {
    static const std::string general_first = "GeneralFirst", personalized_first = "PersonalizedFirst";
    return order == TurnOrder::GeneralFirst ? general_first : personalized_first;
}

TwoTurnReport two_turn_consistency(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                                   TurnOrder order, const EvalSettings& settings) {
    settings.validate();
    require(!dataset.empty(), "two-turn evaluation needs a non-empty dataset");
    bool has_objective = false, has_pqa = false;
    for (const TaskInstance& inst : dataset) {
        (inst.kind == TaskKind::Objective ? has_objective : has_pqa) = true;
    }
    require(has_objective && has_pqa, "two-turn evaluation needs both task kinds");

    const TurnFlags flags = order == TurnOrder::GeneralFirst ? TurnFlags{1.0, 0.0} : TurnFlags{0.0, 1.0};
    std::map<std::string, long long> deviations, samples;
    long long total = 0, aligned = 0;

    for (const TaskInstance& inst : dataset) {
        Rng rng = instance_stream(settings.seed, "two-turn", inst.id);
        const auto single = mode_distribution(params, inst, settings.temperature);
        const auto second = mode_distribution(params, inst, settings.temperature, flags);
        const std::string slice = slice_name(inst);
        for (int s = 0; s < settings.samples_per_instance; ++s) {
            // One draw decides both turns: deviation happens only where the
            // turn flag actually moved the selector's threshold.
            const double u = rng.u01();
            const Mode m_single = u < single.first ? Mode::General : Mode::Personalized;
            const Mode m_second = u < second.first ? Mode::General : Mode::Personalized;
            ++samples[slice];
            ++total;
            if (m_single == m_second) {
                ++aligned;
            } else {
                ++deviations[slice];
            }
        }
    }

    TwoTurnReport report;
    report.mode_alignment_rate = static_cast<double>(aligned) / static_cast<double>(total);
    for (const auto& [slice, n] : samples) {
        report.samples_by_slice[slice] = n;
        report.deviation_by_slice[slice] = 100.0 * static_cast<double>(deviations[slice]) / static_cast<double>(n);
    }
    return report;
}

std::map<std::string, double> deviation_ratio(const PolicyParams& params, const std::vector<TaskInstance>& dataset,
                                              const EvalSettings& settings) {
    const TwoTurnReport general_first = two_turn_consistency(params, dataset, TurnOrder::GeneralFirst, settings);
    const TwoTurnReport personalized_first = two_turn_consistency(params, dataset, TurnOrder::PersonalizedFirst, settings);
    std::map<std::string, double> out;
    for (const auto& [slice, pct] : general_first.deviation_by_slice) {
        out[slice] = 0.5 * (pct + personalized_first.deviation_by_slice.at(slice));
    }
    return out;
}

ModeRegressionResult mode_regression(const PolicyParams& params, const std::vector<TaskInstance>& dataset, int top_k,
                                     const EvalSettings& settings) {
    settings.validate();
    require(dataset.size() >= 2, "mode regression needs at least two instances");
    require(top_k >= 1, "top_k must be at least 1");

    const size_t dim = dataset[0].query_features.size() + dataset[0].persona_features.size();
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    xs.reserve(dataset.size());
    ys.reserve(dataset.size());
    for (const TaskInstance& inst : dataset) {
        std::vector<double> x;
        x.reserve(dim);
        x.insert(x.end(), inst.query_features.begin(), inst.query_features.end());
        x.insert(x.end(), inst.persona_features.begin(), inst.persona_features.end());
        require(x.size() == dim, "feature dimensions vary across the dataset");
        xs.push_back(std::move(x));

        Rng rng = instance_stream(settings.seed, "mode-regression", inst.id);
        const auto [p_gm, p_pm] = mode_distribution(params, inst, settings.temperature);
        (void)p_pm;
        ys.push_back(rng.u01() < p_gm ? 0 : 1);
    }
    const long long positives = std::count(ys.begin(), ys.end(), 1);
    if (positives == 0 || positives == static_cast<long long>(ys.size()))
        throw std::runtime_error("mode regression: sampled labels contain a single class");

    const double n = static_cast<double>(xs.size());
    std::vector<double> w(dim, 0.0);
    double bias = 0.0;

    // L2-penalized logistic loss (bias unregularized); the loss at (w, b).
    const auto loss_at = [&](const std::vector<double>& wv, double b) {
        double loss = 0.0;
        for (size_t i = 0; i < xs.size(); ++i) {
            double z = b;
            for (size_t j = 0; j < dim; ++j) z += wv[j] * xs[i][j];
            // -log p(y) in a softplus form that is stable for large |z|
            const double margin = ys[i] == 1 ? z : -z;
            loss += margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
        }
        loss /= n;
        double reg = 0.0;
        for (double v : wv) reg += v * v;
        return loss + 0.5 * kRegressionL2 * reg;
    };

    ModeRegressionResult result;
    double lr = 1.0;
    double current = loss_at(w, bias);
    result.loss_curve.push_back(current);
    std::vector<double> gw(dim);
    for (int iter = 0; iter < 300; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (size_t i = 0; i < xs.size(); ++i) {
            double z = bias;
            for (size_t j = 0; j < dim; ++j) z += w[j] * xs[i][j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(ys[i]);
            for (size_t j = 0; j < dim; ++j) gw[j] += err * xs[i][j];
            gb += err;
        }
        for (size_t j = 0; j < dim; ++j) gw[j] = gw[j] / n + kRegressionL2 * w[j];
        gb /= n;

        std::vector<double> w_next(dim);
        double bias_next = 0.0, next = current;
        for (int tries = 0; tries < 60; ++tries) {
            for (size_t j = 0; j < dim; ++j) w_next[j] = w[j] - lr * gw[j];
            bias_next = bias - lr * gb;
            next = loss_at(w_next, bias_next);
            if (next <= current) break;
            lr *= 0.5;
        }
        if (next <= current) {
            w.swap(w_next);
            bias = bias_next;
            current = next;
        }
        result.loss_curve.push_back(current);
    }

    result.weights = w;
    result.bias = bias;
    std::vector<int> order(dim);
    for (size_t j = 0; j < dim; ++j) order[j] = static_cast<int>(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(w[static_cast<size_t>(a)]) > std::abs(w[static_cast<size_t>(b)]); });
    order.resize(std::min<size_t>(static_cast<size_t>(top_k), dim));
    result.top_features = std::move(order);
    return result;
}

}  // namespace dualmode
