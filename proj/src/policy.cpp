#include "dualmode/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dualmode {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr double kArgmaxTemperature = 1e-6;  // below this, sampling degenerates to argmax

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// ---- encoding ----

void encode_input(const PolicyDims& dims, const std::vector<double>& query, const TurnFlags& turn_flags,
                  const std::vector<double>& persona_eff, const std::vector<int>& history, std::vector<double>& x) {
    require(static_cast<int>(query.size()) == dims.d_q, "query length does not match d_q");
    require(static_cast<int>(persona_eff.size()) == dims.d_p, "persona length does not match d_p");
    require(static_cast<int>(history.size()) <= dims.horizon, "history longer than horizon");
    x.assign(static_cast<size_t>(dims.input_dim()), 0.0);
    size_t at = 0;
    for (double v : query) x[at++] = v;
    x[at++] = turn_flags[0];
    x[at++] = turn_flags[1];
    for (double v : persona_eff) x[at++] = v;
    for (size_t j = 0; j < history.size(); ++j) {
        require(history[j] >= 0 && history[j] < dims.vocab_size, "history token outside vocabulary");
        x[at + j * static_cast<size_t>(dims.vocab_size) + static_cast<size_t>(history[j])] = 1.0;
    }
}

struct Forward {
    std::vector<double> x;
    std::vector<double> a;  // tanh activations
    std::vector<double> logits;
};

// theta layout: W1 (h x D), b1 (h), W2 (V x h), b2 (V)
struct ThetaView {
    const double* w1;
    const double* b1;
    const double* w2;
    const double* b2;
    explicit ThetaView(const PolicyParams& p) {
        const auto& d = p.dims;
        const double* t = p.theta.data();
        w1 = t;
        b1 = w1 + static_cast<size_t>(d.hidden) * static_cast<size_t>(d.input_dim());
        w2 = b1 + static_cast<size_t>(d.hidden);
        b2 = w2 + static_cast<size_t>(d.vocab_size) * static_cast<size_t>(d.hidden);
    }
};

Forward run_forward(const PolicyParams& params, std::vector<double> x) {
    const auto& d = params.dims;
    const ThetaView th(params);
    const int D = d.input_dim();
    Forward f;
    f.a.resize(static_cast<size_t>(d.hidden));
    for (int j = 0; j < d.hidden; ++j) {
        const double* row = th.w1 + static_cast<size_t>(j) * static_cast<size_t>(D);
        double z = th.b1[j];
        for (int i = 0; i < D; ++i) z += row[i] * x[static_cast<size_t>(i)];
        f.a[static_cast<size_t>(j)] = std::tanh(z);
    }
    f.logits.resize(static_cast<size_t>(d.vocab_size));
    for (int v = 0; v < d.vocab_size; ++v) {
        const double* row = th.w2 + static_cast<size_t>(v) * static_cast<size_t>(d.hidden);
        double s = th.b2[v];
        for (int j = 0; j < d.hidden; ++j) s += row[j] * f.a[static_cast<size_t>(j)];
        f.logits[static_cast<size_t>(v)] = s;
    }
    f.x = std::move(x);
    return f;
}

Forward forward_at_position(const PolicyParams& params, const TaskInstance& instance, const TurnFlags& turn_flags,
                            std::optional<Mode> mask_mode, const std::vector<int>& history) {
    const bool masked = mask_mode.has_value() && *mask_mode == Mode::General;
    std::vector<double> zeros;
    const std::vector<double>* persona = &instance.persona_features;
    if (masked) {
        zeros.assign(instance.persona_features.size(), 0.0);
        persona = &zeros;
    }
    std::vector<double> x;
    encode_input(params.dims, instance.query_features, turn_flags, *persona, history, x);
    return run_forward(params, std::move(x));
}

// Renormalized probabilities of the two prefix tokens at the given temperature.
std::pair<double, double> prefix_probs(const std::vector<double>& logits, double temperature) {
    const double s0 = logits[0] / temperature, s1 = logits[1] / temperature;
    const double m = std::max(s0, s1);
    const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

// Inverse-CDF draw over the answer tokens of a temperature-scaled softmax
// restricted to the answer region. u in [0, 1).
int draw_answer_token(const std::vector<double>& logits, double temperature, double u, int vocab_size) {
    double m = -1e300;
    for (int v = kNumPrefixTokens; v < vocab_size; ++v) m = std::max(m, logits[static_cast<size_t>(v)] / temperature);
    double total = 0.0;
    for (int v = kNumPrefixTokens; v < vocab_size; ++v) total += std::exp(logits[static_cast<size_t>(v)] / temperature - m);
    const double target = u * total;
    double cum = 0.0;
    for (int v = kNumPrefixTokens; v < vocab_size; ++v) {
        cum += std::exp(logits[static_cast<size_t>(v)] / temperature - m);
        if (cum > target) return v;
    }
    return vocab_size - 1;
}

int argmax_answer_token(const std::vector<double>& logits, int vocab_size) {
    int best = kNumPrefixTokens;
    for (int v = kNumPrefixTokens + 1; v < vocab_size; ++v) {
        if (logits[static_cast<size_t>(v)] > logits[static_cast<size_t>(best)]) best = v;
    }
    return best;
}

}  // namespace

// ---- dims and initialization ----

void PolicyDims::validate() const {
    require(d_q > 0 && d_p > 0 && hidden > 0, "policy dimensions must be positive");
    require(vocab_size > kNumPrefixTokens, "vocab_size must exceed the two prefix tokens");
    require(horizon >= 1 && horizon <= 4, "horizon must be in [1, 4]");
}

int PolicyDims::theta_length() const {
    const int D = input_dim();
    return hidden * D + hidden + vocab_size * hidden + vocab_size;
}

PolicyParams init_params(std::uint64_t seed, const PolicyDims& dims) {
    dims.validate();
    PolicyParams p;
    p.dims = dims;
    p.theta.resize(static_cast<size_t>(dims.theta_length()));
    Rng rng(derive_seed(seed, hash_tag("policy-init")));
    for (double& w : p.theta) w = rng.uniform(-0.05, 0.05);
    return p;
}

// ---- forward passes ----

std::vector<double> forward_logits(const PolicyParams& params, const std::vector<double>& query,
                                   const TurnFlags& turn_flags, const std::vector<double>& persona_eff,
                                   const std::vector<int>& history) {
    std::vector<double> x;
    encode_input(params.dims, query, turn_flags, persona_eff, history, x);
    return run_forward(params, std::move(x)).logits;
}

std::vector<double> log_softmax(const std::vector<double>& logits, double temperature) {
    require(temperature > 0.0, "temperature must be positive");
    std::vector<double> s(logits.size());
    double m = -1e300;
    for (size_t i = 0; i < logits.size(); ++i) {
        s[i] = logits[i] / temperature;
        m = std::max(m, s[i]);
    }
    double total = 0.0;
    for (double v : s) total += std::exp(v - m);
    const double lse = m + std::log(total);
    for (double& v : s) v -= lse;
    return s;
}

std::pair<double, double> mode_distribution(const PolicyParams& params, const TaskInstance& instance,
                                            double temperature, const TurnFlags& turn_flags) {
    require(temperature > 0.0, "temperature must be positive");
    const Forward f = forward_at_position(params, instance, turn_flags, std::nullopt, {});
    return prefix_probs(f.logits, temperature);
}

// ---- sampling ----

Trajectory sample_trajectory_with_uniforms(const PolicyParams& params, const TaskInstance& instance, Mode mode,
                                           double temperature, const std::vector<double>& answer_uniforms,
                                           const TurnFlags& turn_flags) {
    require(temperature > 0.0, "temperature must be positive");
    require(static_cast<int>(answer_uniforms.size()) == params.dims.horizon,
            "need one uniform draw per answer position");
    Trajectory traj;
    traj.mode = mode;
    std::vector<int> history;

    const Forward f0 = forward_at_position(params, instance, turn_flags, std::nullopt, history);
    const int prefix = prefix_token_id(mode);
    traj.token_logprobs.push_back(std::min(log_softmax(f0.logits)[static_cast<size_t>(prefix)], 0.0));
    history.push_back(prefix);

    for (int t = 0; t < params.dims.horizon; ++t) {
        const Forward f = forward_at_position(params, instance, turn_flags, mode, history);
        const int token = temperature < kArgmaxTemperature
                              ? argmax_answer_token(f.logits, params.dims.vocab_size)
                              : draw_answer_token(f.logits, temperature, answer_uniforms[static_cast<size_t>(t)],
                                                  params.dims.vocab_size);
        traj.answer_tokens.push_back(token);
        traj.token_logprobs.push_back(std::min(log_softmax(f.logits)[static_cast<size_t>(token)], 0.0));
        history.push_back(token);
    }
    traj.validate();
    return traj;
}

Trajectory sample_trajectory(const PolicyParams& params, const TaskInstance& instance, std::optional<Mode> forced_mode,
                             double temperature, Rng& rng, const TurnFlags& turn_flags) {
    require(temperature > 0.0, "temperature must be positive");
    Mode mode;
    if (forced_mode.has_value()) {
        mode = *forced_mode;
    } else {
        const Forward f0 = forward_at_position(params, instance, turn_flags, std::nullopt, {});
        if (temperature < kArgmaxTemperature) {
            mode = f0.logits[0] >= f0.logits[1] ? Mode::General : Mode::Personalized;
        } else {
            const auto [p_gm, p_pm] = prefix_probs(f0.logits, temperature);
            (void)p_pm;
            mode = rng.u01() < p_gm ? Mode::General : Mode::Personalized;
        }
    }
    std::vector<double> us(static_cast<size_t>(params.dims.horizon), 0.0);
    if (temperature >= kArgmaxTemperature) {
        for (double& u : us) u = rng.u01();
    }
    return sample_trajectory_with_uniforms(params, instance, mode, temperature, us, turn_flags);
}

// ---- exact log-probabilities and gradients ----

std::vector<double> sequence_logprob(const PolicyParams& params, const TaskInstance& instance,
                                     const Trajectory& trajectory, const TurnFlags& turn_flags) {
    trajectory.validate();
    const int L = static_cast<int>(trajectory.answer_tokens.size());
    require(L <= params.dims.horizon, "trajectory longer than the policy horizon");
    for (int token : trajectory.answer_tokens) {
        if (token < 0 || token >= params.dims.vocab_size) throw std::invalid_argument("token outside vocabulary");
    }
    std::vector<double> lps;
    lps.reserve(static_cast<size_t>(L) + 1);
    std::vector<int> history;

    const Forward f0 = forward_at_position(params, instance, turn_flags, std::nullopt, history);
    const int prefix = prefix_token_id(trajectory.mode);
    lps.push_back(log_softmax(f0.logits)[static_cast<size_t>(prefix)]);
    history.push_back(prefix);

    for (int t = 0; t < L; ++t) {
        const Forward f = forward_at_position(params, instance, turn_flags, trajectory.mode, history);
        lps.push_back(log_softmax(f.logits)[static_cast<size_t>(trajectory.answer_tokens[static_cast<size_t>(t)])]);
        history.push_back(trajectory.answer_tokens[static_cast<size_t>(t)]);
    }
    return lps;
}

namespace {

// Adds scale * d/dtheta of g_logits . logits(x) for one position, where
// g_logits is the upstream gradient at the logit layer.
void backprop_position(const PolicyParams& params, const Forward& f, const std::vector<double>& g_logits,
                       double scale, std::vector<double>& grad) {
    const auto& d = params.dims;
    const ThetaView th(params);
    const int D = d.input_dim();
    const size_t w1_len = static_cast<size_t>(d.hidden) * static_cast<size_t>(D);
    double* g_w1 = grad.data();
    double* g_b1 = g_w1 + w1_len;
    double* g_w2 = g_b1 + static_cast<size_t>(d.hidden);
    double* g_b2 = g_w2 + static_cast<size_t>(d.vocab_size) * static_cast<size_t>(d.hidden);

    std::vector<double> g_a(static_cast<size_t>(d.hidden), 0.0);
    for (int v = 0; v < d.vocab_size; ++v) {
        const double gv = g_logits[static_cast<size_t>(v)];
        if (gv == 0.0) continue;
        const double* row = th.w2 + static_cast<size_t>(v) * static_cast<size_t>(d.hidden);
        double* grow = g_w2 + static_cast<size_t>(v) * static_cast<size_t>(d.hidden);
        for (int j = 0; j < d.hidden; ++j) {
            g_a[static_cast<size_t>(j)] += gv * row[j];
            grow[j] += scale * gv * f.a[static_cast<size_t>(j)];
        }
        g_b2[v] += scale * gv;
    }
    for (int j = 0; j < d.hidden; ++j) {
        const double aj = f.a[static_cast<size_t>(j)];
        const double gz = g_a[static_cast<size_t>(j)] * (1.0 - aj * aj);
        if (gz == 0.0) continue;
        double* grow = g_w1 + static_cast<size_t>(j) * static_cast<size_t>(D);
        for (int i = 0; i < D; ++i) grow[i] += scale * gz * f.x[static_cast<size_t>(i)];
        g_b1[j] += scale * gz;
    }
}

}  // namespace

void accumulate_grad_weighted_logprob(const PolicyParams& params, const TaskInstance& instance,
                                      const Trajectory& trajectory, const std::vector<double>& weights, double scale,
                                      std::vector<double>& grad, const TurnFlags& turn_flags) {
    const int L = static_cast<int>(trajectory.answer_tokens.size());
    if (static_cast<int>(weights.size()) != L + 1) throw std::invalid_argument("weights must cover prefix plus answers");
    if (static_cast<int>(grad.size()) != params.dims.theta_length()) throw std::invalid_argument("gradient buffer size mismatch");
    require(L <= params.dims.horizon, "trajectory longer than the policy horizon");

    std::vector<int> history;
    std::vector<double> g_logits(static_cast<size_t>(params.dims.vocab_size));
    for (int t = 0; t <= L; ++t) {
        const int token = t == 0 ? prefix_token_id(trajectory.mode) : trajectory.answer_tokens[static_cast<size_t>(t - 1)];
        if (token < 0 || token >= params.dims.vocab_size) throw std::invalid_argument("token outside vocabulary");
        const double w = weights[static_cast<size_t>(t)];
        if (w != 0.0) {
            const Forward f = forward_at_position(params, instance, turn_flags,
                                                  t == 0 ? std::optional<Mode>() : std::optional<Mode>(trajectory.mode),
                                                  history);
            // d/dlogits of log softmax(logits)[token] = onehot(token) - softmax
            const std::vector<double> lp = log_softmax(f.logits);
            for (int v = 0; v < params.dims.vocab_size; ++v) {
                g_logits[static_cast<size_t>(v)] = w * ((v == token ? 1.0 : 0.0) - std::exp(lp[static_cast<size_t>(v)]));
            }
            backprop_position(params, f, g_logits, scale, grad);
        }
        history.push_back(token);
    }
}

std::vector<double> grad_weighted_logprob(const PolicyParams& params, const TaskInstance& instance,
                                          const Trajectory& trajectory, const std::vector<double>& weights,
                                          const TurnFlags& turn_flags) {
    std::vector<double> grad(static_cast<size_t>(params.dims.theta_length()), 0.0);
    accumulate_grad_weighted_logprob(params, instance, trajectory, weights, 1.0, grad, turn_flags);
    return grad;
}

std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& theta, double step) {
    std::vector<double> g(theta.size());
    std::vector<double> probe = theta;
    for (size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + step;
        const double hi = f(probe);
        probe[i] = theta[i] - step;
        const double lo = f(probe);
        probe[i] = theta[i];
        g[i] = (hi - lo) / (2.0 * step);
    }
    return g;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("gradient size mismatch");
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

// ---- checkpoints ----

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'M', 'P', 'O', 'L', 'C', 'K', '1'};

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint");
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& params, std::uint64_t seed,
                     const std::string& stage) {
    params.dims.validate();
    if (static_cast<int>(params.theta.size()) != params.dims.theta_length())
        throw std::invalid_argument("theta length does not match dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_raw(out, static_cast<std::int32_t>(params.dims.d_q));
    write_raw(out, static_cast<std::int32_t>(params.dims.d_p));
    write_raw(out, static_cast<std::int32_t>(params.dims.hidden));
    write_raw(out, static_cast<std::int32_t>(params.dims.vocab_size));
    write_raw(out, static_cast<std::int32_t>(params.dims.horizon));
    write_raw(out, seed);
    write_raw(out, static_cast<std::uint32_t>(stage.size()));
    out.write(stage.data(), static_cast<std::streamsize>(stage.size()));
    write_raw(out, static_cast<std::uint64_t>(params.theta.size()));
    out.write(reinterpret_cast<const char*>(params.theta.data()),
              static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a policy checkpoint: " + path);
    Checkpoint ck;
    std::int32_t d_q, d_p, hidden, vocab, horizon;
    read_raw(in, d_q);
    read_raw(in, d_p);
    read_raw(in, hidden);
    read_raw(in, vocab);
    read_raw(in, horizon);
    ck.params.dims = PolicyDims{d_q, d_p, hidden, vocab, horizon};
    ck.params.dims.validate();
    read_raw(in, ck.seed);
    std::uint32_t stage_len;
    read_raw(in, stage_len);
    if (stage_len > (1u << 20)) throw std::runtime_error("corrupt checkpoint header: " + path);
    ck.stage.resize(stage_len);
    in.read(ck.stage.data(), static_cast<std::streamsize>(stage_len));
    std::uint64_t theta_len;
    read_raw(in, theta_len);
    if (theta_len != static_cast<std::uint64_t>(ck.params.dims.theta_length()))
        throw std::runtime_error("checkpoint theta length does not match dims: " + path);
    ck.params.theta.resize(theta_len);
    in.read(reinterpret_cast<char*>(ck.params.theta.data()), static_cast<std::streamsize>(theta_len * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    return ck;
}

}  // namespace dualmode
