#include "dualmode/experiment.hpp"

#include <filesystem>
#include <iostream>
#include <set>
#include <stdexcept>

#include "dualmode/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace dualmode {

namespace {

// ---- artifact names ----
const char* kConfigFile = "config.resolved.json";
const char* kDataSft = "data_sft.jsonl";
const char* kDataRl = "data_rl.jsonl";
const char* kDataEval = "data_eval.jsonl";
const char* kDemosFile = "demos.jsonl";
const char* kWarmupLoss = "warmup_loss.csv";
const char* kCheckpointWarmup = "checkpoint_warmup.bin";
const char* kRlMetrics = "rl_metrics.csv";
const char* kCheckpointFinal = "checkpoint_final.bin";
const char* kEvalReport = "eval_report.json";
const char* kTwoTurn = "twoturn.csv";
const char* kDeviation = "deviation.csv";
const char* kSweep = "sweep.csv";
const char* kManifest = "manifest.json";

// Independent instance streams per dataset role, shared environment tables.
constexpr std::uint64_t kStreamSft = 1, kStreamRl = 2, kStreamEval = 3;

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error("missing required artifact: " + path);
}

void require_config(bool ok, const std::string& field) {
    if (!ok) throw std::invalid_argument("invalid config field: " + field);
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw std::invalid_argument("unknown config field: " + where + "." + key);
    }
}

}  // namespace

void DataConfig::validate() const {
    require_config(sft_count >= 1, "data.sft_count");
    require_config(rl_count >= 1, "data.rl_count");
    require_config(eval_count >= 1, "data.eval_count");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

PolicyDims policy_dims(const ExperimentConfig& config) {
    return PolicyDims{config.env.d_q, config.env.d_p, config.policy.hidden,
                      config.env.vocab_answers + kNumPrefixTokens, config.policy.horizon};
}

ExperimentConfig load_config(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(path));
    ExperimentConfig c = default_config();
    reject_unknown(j, {"run_name", "seed", "env", "data", "policy", "warmup", "rl", "eval", "sweep"}, "config");

    read_field(j, "run_name", c.run_name);
    read_field(j, "seed", c.seed);
    if (j.contains("env")) {
        const auto& e = j.at("env");
        reject_unknown(e, {"d_q", "d_p", "vocab_answers", "mix", "hint_strength", "seed"}, "env");
        read_field(e, "d_q", c.env.d_q);
        read_field(e, "d_p", c.env.d_p);
        read_field(e, "vocab_answers", c.env.vocab_answers);
        read_field(e, "mix", c.env.mix);
        read_field(e, "hint_strength", c.env.hint_strength);
        read_field(e, "seed", c.env.seed);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"sft_count", "rl_count", "eval_count"}, "data");
        read_field(d, "sft_count", c.data.sft_count);
        read_field(d, "rl_count", c.data.rl_count);
        read_field(d, "eval_count", c.data.eval_count);
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        reject_unknown(p, {"hidden", "horizon"}, "policy");
        read_field(p, "hidden", c.policy.hidden);
        read_field(p, "horizon", c.policy.horizon);
    }
    if (j.contains("warmup")) {
        const auto& w = j.at("warmup");
        reject_unknown(w, {"probe_epochs", "probe_lr", "gain_samples", "gain_temperature", "epochs", "lr", "seed"},
                       "warmup");
        read_field(w, "probe_epochs", c.warmup.probe_epochs);
        read_field(w, "probe_lr", c.warmup.probe_lr);
        read_field(w, "gain_samples", c.warmup.gain_samples);
        read_field(w, "gain_temperature", c.warmup.gain_temperature);
        read_field(w, "epochs", c.warmup.epochs);
        read_field(w, "lr", c.warmup.lr);
        read_field(w, "seed", c.warmup.seed);
    }
    if (j.contains("rl")) {
        const auto& r = j.at("rl");
        reject_unknown(r,
                       {"n_per_mode", "beta_prefix", "kl_coeff", "clip_eps", "temperature", "lr", "steps",
                        "batch_size", "seed", "variant", "normalize_advantages", "checkpoint_interval"},
                       "rl");
        read_field(r, "n_per_mode", c.rl.n_per_mode);
        read_field(r, "beta_prefix", c.rl.beta_prefix);
        read_field(r, "kl_coeff", c.rl.kl_coeff);
        read_field(r, "clip_eps", c.rl.clip_eps);
        read_field(r, "temperature", c.rl.temperature);
        read_field(r, "lr", c.rl.lr);
        read_field(r, "steps", c.rl.steps);
        read_field(r, "batch_size", c.rl.batch_size);
        read_field(r, "seed", c.rl.seed);
        if (r.contains("variant")) c.rl.variant = variant_from_string(r.at("variant").get<std::string>());
        read_field(r, "normalize_advantages", c.rl.normalize_advantages);
        read_field(r, "checkpoint_interval", c.rl.checkpoint_interval);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, {"samples_per_instance", "temperature", "seed"}, "eval");
        read_field(e, "samples_per_instance", c.eval.samples_per_instance);
        read_field(e, "temperature", c.eval.temperature);
        read_field(e, "seed", c.eval.seed);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        reject_unknown(s, {"ratios", "count"}, "sweep");
        read_field(s, "ratios", c.sweep.ratios);
        read_field(s, "count", c.sweep.count);
    }
    return c;
}

ExperimentConfig resolve_config(ExperimentConfig config, std::optional<std::uint64_t> seed_override,
                                const std::string& variant_override) {
    if (seed_override.has_value()) config.seed = *seed_override;
    if (!variant_override.empty()) config.rl.variant = variant_from_string(variant_override);
    if (config.env.seed == 0) config.env.seed = derive_seed(config.seed, hash_tag("env"));
    if (config.warmup.seed == 0) config.warmup.seed = derive_seed(config.seed, hash_tag("warmup"));
    if (config.rl.seed == 0) config.rl.seed = derive_seed(config.seed, hash_tag("rl"));
    if (config.eval.seed == 0) config.eval.seed = derive_seed(config.seed, hash_tag("eval"));

    config.env.validate();
    config.data.validate();
    config.warmup.validate();
    config.rl.validate();
    config.eval.validate();
    policy_dims(config).validate();
    require_config(config.sweep.count >= 1, "sweep.count");
    for (double r : config.sweep.ratios) require_config(r >= 0.0 && r <= 1.0, "sweep.ratios");
    return config;
}

std::string config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["run_name"] = c.run_name;
    j["seed"] = c.seed;
    j["env"] = {{"d_q", c.env.d_q},
                {"d_p", c.env.d_p},
                {"vocab_answers", c.env.vocab_answers},
                {"mix", c.env.mix},
                {"hint_strength", c.env.hint_strength},
                {"seed", c.env.seed}};
    j["data"] = {{"sft_count", c.data.sft_count}, {"rl_count", c.data.rl_count}, {"eval_count", c.data.eval_count}};
    j["policy"] = {{"hidden", c.policy.hidden}, {"horizon", c.policy.horizon}};
    j["warmup"] = {{"probe_epochs", c.warmup.probe_epochs}, {"probe_lr", c.warmup.probe_lr},
                   {"gain_samples", c.warmup.gain_samples}, {"gain_temperature", c.warmup.gain_temperature},
                   {"epochs", c.warmup.epochs},             {"lr", c.warmup.lr},
                   {"seed", c.warmup.seed}};
    j["rl"] = {{"n_per_mode", c.rl.n_per_mode},
               {"beta_prefix", c.rl.beta_prefix},
               {"kl_coeff", c.rl.kl_coeff},
               {"clip_eps", c.rl.clip_eps},
               {"temperature", c.rl.temperature},
               {"lr", c.rl.lr},
               {"steps", c.rl.steps},
               {"batch_size", c.rl.batch_size},
               {"seed", c.rl.seed},
               {"variant", to_string(c.rl.variant)},
               {"normalize_advantages", c.rl.normalize_advantages},
               {"checkpoint_interval", c.rl.checkpoint_interval}};
    j["eval"] = {{"samples_per_instance", c.eval.samples_per_instance},
                 {"temperature", c.eval.temperature},
                 {"seed", c.eval.seed}};
    j["sweep"] = {{"ratios", c.sweep.ratios}, {"count", c.sweep.count}};
    return j.dump(2) + "\n";
}

// ---- stages ----

void stage_generate(const ExperimentConfig& config, const std::string& run_dir) {
    save_dataset_jsonl(join(run_dir, kDataSft), generate_dataset(config.env, config.data.sft_count, kStreamSft));
    save_dataset_jsonl(join(run_dir, kDataRl), generate_dataset(config.env, config.data.rl_count, kStreamRl));
    save_dataset_jsonl(join(run_dir, kDataEval), generate_dataset(config.env, config.data.eval_count, kStreamEval));
    std::cout << "[generate] wrote " << config.data.sft_count << "/" << config.data.rl_count << "/"
              << config.data.eval_count << " instances\n";
}

void stage_warmup(const ExperimentConfig& config, const std::string& run_dir) {
    require_file(join(run_dir, kDataSft));
    const std::vector<TaskInstance> instances = load_dataset_jsonl(join(run_dir, kDataSft));
    const PolicyDims dims = policy_dims(config);

    const PolicyParams probe = build_probe(instances, dims, config.warmup);
    const std::vector<Demonstration> demos = build_demonstrations(instances, probe, config.warmup);
    save_demos_jsonl(join(run_dir, kDemosFile), demos);

    PolicyParams init = init_params(derive_seed(config.warmup.seed, hash_tag("sft-init")), dims);
    std::vector<double> losses;
    const PolicyParams fitted = sft_fit(init, demos, instances, config.warmup.epochs, config.warmup.lr, &losses);

    CsvWriter csv(join(run_dir, kWarmupLoss), {"epoch", "loss"});
    for (size_t e = 0; e < losses.size(); ++e) csv.row({std::to_string(e), format_double(losses[e])});
    save_checkpoint(join(run_dir, kCheckpointWarmup), fitted, config.warmup.seed, "warmup");
    std::cout << "[warmup] " << demos.size() << " demos, final loss " << losses.back() << "\n";
}

void stage_train(const ExperimentConfig& config, const std::string& run_dir) {
    require_file(join(run_dir, kDataRl));
    require_file(join(run_dir, kCheckpointWarmup));
    const std::vector<TaskInstance> dataset = load_dataset_jsonl(join(run_dir, kDataRl));
    const Checkpoint warm = load_checkpoint(join(run_dir, kCheckpointWarmup));
    if (!(warm.params.dims == policy_dims(config)))
        throw std::runtime_error("warmup checkpoint dims do not match the config");

    CsvWriter csv(join(run_dir, kRlMetrics),
                  {"step", "mean_reward_gm", "mean_reward_pm", "p_personalized_mean", "kl", "loss"});
    const auto observer = [&](int step, const StepMetrics& m, const PolicyParams& p) {
        csv.row({std::to_string(step), format_double(m.mean_reward_gm), format_double(m.mean_reward_pm),
                 format_double(m.p_personalized_mean), format_double(m.kl), format_double(m.loss)});
        if (config.rl.checkpoint_interval > 0 && (step + 1) % config.rl.checkpoint_interval == 0) {
            save_checkpoint(join(run_dir, "checkpoint_step_" + std::to_string(step + 1) + ".bin"), p, config.rl.seed,
                            "rl-step-" + std::to_string(step + 1));
        }
    };
    // The warm-up snapshot doubles as the frozen KL reference.
    const PolicyParams final_params = train(warm.params, dataset, warm.params, config.rl, observer);
    save_checkpoint(join(run_dir, kCheckpointFinal), final_params, config.rl.seed, "final");
    std::cout << "[train] " << to_string(config.rl.variant) << ", " << config.rl.steps << " steps\n";
}

namespace {

PolicyParams load_eval_params(const std::string& run_dir) {
    const std::string final_path = join(run_dir, kCheckpointFinal);
    const std::string warm_path = join(run_dir, kCheckpointWarmup);
    if (fs::exists(final_path)) return load_checkpoint(final_path).params;
    if (fs::exists(warm_path)) return load_checkpoint(warm_path).params;
    throw std::runtime_error("no checkpoint to evaluate in " + run_dir);
}

}  // namespace

void stage_evaluate(const ExperimentConfig& config, const std::string& run_dir) {
    require_file(join(run_dir, kDataEval));
    const std::vector<TaskInstance> dataset = load_dataset_jsonl(join(run_dir, kDataEval));
    const PolicyParams params = load_eval_params(run_dir);

    const EvalReport report = evaluate(params, dataset, config.eval);
    save_eval_report(join(run_dir, kEvalReport), report);

    CsvWriter twoturn(join(run_dir, kTwoTurn), {"order", "mode_alignment_rate"});
    for (TurnOrder order : {TurnOrder::GeneralFirst, TurnOrder::PersonalizedFirst}) {
        const TwoTurnReport tt = two_turn_consistency(params, dataset, order, config.eval);
        twoturn.row({to_string(order), format_double(tt.mode_alignment_rate)});
    }
    CsvWriter deviation(join(run_dir, kDeviation), {"slice", "deviation_pct"});
    for (const auto& [slice, pct] : deviation_ratio(params, dataset, config.eval)) {
        deviation.row({slice, format_double(pct)});
    }
    std::cout << "[eval] overall accuracy " << report.overall_accuracy << ", oracle agreement "
              << report.oracle_agreement << "\n";
}

void stage_sweep(const ExperimentConfig& config, const std::string& run_dir) {
    const PolicyParams params = load_eval_params(run_dir);
    CsvWriter csv(join(run_dir, kSweep), {"ratio", "accuracy"});
    for (const SweepPoint& point :
         mixed_ratio_sweep(params, config.env, config.sweep.ratios, config.sweep.count, config.eval)) {
        csv.row({format_double(point.ratio), format_double(point.accuracy)});
    }
    std::cout << "[sweep] " << config.sweep.ratios.size() << " ratios\n";
}

void run_experiment(const ExperimentConfig& config, const std::string& run_dir) {
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec || !fs::is_directory(run_dir)) throw std::runtime_error("cannot create run directory: " + run_dir);
    write_text_file(join(run_dir, kConfigFile), config_to_json(config));

    stage_generate(config, run_dir);
    stage_warmup(config, run_dir);
    stage_train(config, run_dir);
    stage_evaluate(config, run_dir);
    stage_sweep(config, run_dir);

    nlohmann::json manifest;
    manifest["run_name"] = config.run_name;
    manifest["variant"] = to_string(config.rl.variant);
    manifest["artifacts"] = {kConfigFile, kDataSft,      kDataRl,   kDataEval,   kDemosFile, kWarmupLoss,
                             kCheckpointWarmup, kRlMetrics, kCheckpointFinal, kEvalReport, kTwoTurn,   kDeviation,
                             kSweep};
    write_text_file(join(run_dir, kManifest), manifest.dump(2) + "\n");
}

// ---- ablation table ----

std::string compare_runs(const std::vector<std::string>& run_dirs) {
    if (run_dirs.size() < 2) throw std::invalid_argument("compare needs at least two run directories");

    struct Row {
        std::string run, variant;
        nlohmann::json report;
    };
    std::vector<Row> rows;
    std::vector<std::string> slices;
    for (const std::string& dir : run_dirs) {
        if (!fs::is_directory(dir)) throw std::runtime_error("missing run directory: " + dir);
        const std::string report_path = join(dir, kEvalReport);
        const std::string config_path = join(dir, kConfigFile);
        if (!fs::exists(report_path)) throw std::runtime_error("missing run artifact: " + report_path);
        if (!fs::exists(config_path)) throw std::runtime_error("missing run artifact: " + config_path);
        const nlohmann::json cfg = nlohmann::json::parse(read_text_file(config_path));
        Row row;
        row.run = cfg.at("run_name").get<std::string>();
        row.variant = cfg.at("rl").at("variant").get<std::string>();
        row.report = nlohmann::json::parse(read_text_file(report_path));

        std::vector<std::string> these;
        for (const auto& [slice, acc] : row.report.at("accuracy_by_slice").items()) {
            (void)acc;
            these.push_back(slice);
        }
        if (slices.empty()) {
            slices = these;
        } else if (slices != these) {
            throw std::runtime_error("incompatible eval slices between runs: " + dir);
        }
        rows.push_back(std::move(row));
    }

    // Column order follows the ablation-table convention: unaligned, aligned,
    // personalized, then anything else.
    std::vector<std::string> ordered;
    for (const char* preferred : {"objective_unaligned", "objective_aligned", "personalized"}) {
        for (const std::string& s : slices) {
            if (s == preferred) ordered.push_back(s);
        }
    }
    for (const std::string& s : slices) {
        if (std::find(ordered.begin(), ordered.end(), s) == ordered.end()) ordered.push_back(s);
    }

    std::string csv = "run,variant";
    for (const std::string& s : ordered) csv += ",acc_" + s;
    csv += ",overall_accuracy,oracle_agreement\n";
    for (const Row& row : rows) {
        csv += row.run + "," + row.variant;
        for (const std::string& s : ordered) csv += "," + format_double(row.report.at("accuracy_by_slice").at(s).get<double>());
        csv += "," + format_double(row.report.at("overall_accuracy").get<double>());
        csv += "," + format_double(row.report.at("oracle_agreement").get<double>());
        csv += "\n";
    }
    return csv;
}

}  // namespace dualmode
