#pragma once

// Trainable feedforward classification head over frozen embedding vectors.
// Three loss regimes (categorical CE, BCE with logits, multitask CE sum),
// analytic gradients, decoupled AdamW, and a deterministic training loop
// with linear warm-up. An optional one-hidden-layer tanh variant sits behind
// TrainConfig::hidden_width.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moma/core.hpp"
#include "moma/detail/rng.hpp"
#include "moma/encounter.hpp"
#include "moma/matrix.hpp"

namespace moma {

enum class LossKind { categorical_ce, bce_with_logits, multitask_ce_sum };

inline std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::categorical_ce: return "categorical_ce";
        case LossKind::bce_with_logits: return "bce_with_logits";
        case LossKind::multitask_ce_sum: return "multitask_ce_sum";
    }
    return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "categorical_ce") return LossKind::categorical_ce;
    if (s == "bce_with_logits") return LossKind::bce_with_logits;
    if (s == "multitask_ce_sum") return LossKind::multitask_ce_sum;
    throw ConfigError("unknown loss kind '" + s + "'");
}

inline LossKind loss_kind_for(TaskKind kind) {
    switch (kind) {
        case TaskKind::binary: return LossKind::bce_with_logits;
        case TaskKind::multiclass: return LossKind::categorical_ce;
        case TaskKind::multitask: return LossKind::multitask_ce_sum;
    }
    throw ConfigError("unknown task kind");
}

using SubtaskSlice = std::pair<std::size_t, std::size_t>; // (offset, length)

// Logit slices per subtask, derived from a task. Binary tasks get one logit.
inline std::vector<SubtaskSlice> subtask_slices_for(const TaskSpec& task) {
    std::vector<SubtaskSlice> slices;
    std::size_t offset = 0;
    for (const auto& classes : task.classes) {
        std::size_t len = task.kind == TaskKind::binary ? 1 : classes.size();
        slices.emplace_back(offset, len);
        offset += len;
    }
    return slices;
}

struct FeedForwardHead {
    std::size_t input_dim = 0;
    // hidden layer present iff hidden_weights has rows
    Mat hidden_weights;  // [hidden_width x input_dim]
    Vec hidden_bias;
    Mat weights;         // [num_logits x (hidden_width or input_dim)]
    Vec bias;
    std::vector<SubtaskSlice> subtask_slices;

    bool has_hidden() const { return hidden_weights.rows() > 0; }
    std::size_t num_logits() const { return weights.rows(); }

    void validate() const {
        std::size_t feature_dim = has_hidden() ? hidden_weights.rows() : input_dim;
        if (has_hidden()) {
            if (hidden_weights.cols() != input_dim)
                throw ValidationError("head: hidden layer width mismatch");
            if (hidden_bias.size() != hidden_weights.rows())
                throw ValidationError("head: hidden bias length mismatch");
        }
        if (weights.cols() != feature_dim) throw ValidationError("head: weight shape mismatch");
        if (bias.size() != weights.rows()) throw ValidationError("head: bias length mismatch");
        std::size_t at = 0;
        for (const auto& [offset, length] : subtask_slices) {
            if (offset != at || length == 0)
                throw ValidationError("head: subtask slices must tile the logit vector");
            at = offset + length;
        }
        if (at != weights.rows())
            throw ValidationError("head: subtask slices must cover all logits");
    }
};

namespace detail_head {

inline Vec tanh_vec(const Vec& v) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
    return out;
}

} // namespace detail_head

inline Vec forward(const FeedForwardHead& head, const Vec& x) {
    if (x.size() != head.input_dim)
        throw ValidationError("head forward: input has dim " + std::to_string(x.size()) +
                              ", expected " + std::to_string(head.input_dim));
    if (!head.has_hidden()) return matvec(head.weights, x, head.bias);
    Vec h = detail_head::tanh_vec(matvec(head.hidden_weights, x, head.hidden_bias));
    return matvec(head.weights, h, head.bias);
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// Softmax of one logit slice with max subtraction.
inline Vec softmax(const Vec& logits) {
    if (logits.empty()) return {};
    double mx = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

// Loss and d(loss)/d(logits) for one instance. `labels` holds one entry per
// subtask slice (binary: a single 0/1).
inline double loss_and_dlogits(const Vec& logits, const std::vector<SubtaskSlice>& slices,
                               const std::vector<int>& labels, LossKind kind, Vec& dlogits) {
    if (labels.size() != slices.size())
        throw ValidationError("loss: got " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(slices.size()) + " subtasks");
    switch (kind) {
        case LossKind::categorical_ce:
        case LossKind::multitask_ce_sum:
            if (kind == LossKind::categorical_ce && slices.size() != 1)
                throw ValidationError("categorical loss expects exactly one subtask");
            break;
        case LossKind::bce_with_logits:
            if (slices.size() != 1 || slices[0].second != 1)
                throw ValidationError("binary loss expects a single one-logit slice");
            break;
    }
    dlogits.assign(logits.size(), 0.0);
    double total = 0.0;
    for (std::size_t s = 0; s < slices.size(); ++s) {
        auto [offset, length] = slices[s];
        int y = labels[s];
        if (kind == LossKind::bce_with_logits) {
            if (y != 0 && y != 1) throw ValidationError("binary label must be 0 or 1");
            double z = logits[offset];
            // max(z,0) - z*y + log(1 + exp(-|z|)) is the stable logit form
            total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            dlogits[offset] = sigmoid(z) - y;
        } else {
            if (y < 0 || static_cast<std::size_t>(y) >= length)
                throw ValidationError("label " + std::to_string(y) + " outside subtask of size " +
                                      std::to_string(length));
            Vec slice(logits.begin() + static_cast<std::ptrdiff_t>(offset),
                      logits.begin() + static_cast<std::ptrdiff_t>(offset + length));
            Vec p = softmax(slice);
            total += -std::log(p[static_cast<std::size_t>(y)]);
            for (std::size_t i = 0; i < length; ++i)
                dlogits[offset + i] = p[i] - (static_cast<std::size_t>(y) == i ? 1.0 : 0.0);
        }
    }
    if (!std::isfinite(total))
        throw ValidationError("loss: non-finite value encountered (loss=" +
                              std::to_string(total) + ")");
    return total;
}

struct HeadGradients {
    Mat d_hidden_weights;
    Vec d_hidden_bias;
    Mat d_weights;
    Vec d_bias;
};

// Loss plus analytic gradients w.r.t. every head parameter for one instance.
inline double head_loss(const FeedForwardHead& head, const Vec& x, const std::vector<int>& labels,
                        LossKind kind, HeadGradients* grads = nullptr) {
    if (x.size() != head.input_dim) throw ValidationError("head loss: input dim mismatch");
    Vec h, logits;
    if (head.has_hidden()) {
        h = detail_head::tanh_vec(matvec(head.hidden_weights, x, head.hidden_bias));
        logits = matvec(head.weights, h, head.bias);
    } else {
        logits = matvec(head.weights, x, head.bias);
    }
    Vec dlogits;
    double loss = loss_and_dlogits(logits, head.subtask_slices, labels, kind, dlogits);
    if (grads) {
        const Vec& features = head.has_hidden() ? h : x;
        grads->d_weights = outer(dlogits, features);
        grads->d_bias = dlogits;
        if (head.has_hidden()) {
            Vec dh(h.size(), 0.0);
            for (std::size_t i = 0; i < head.weights.rows(); ++i)
                for (std::size_t j = 0; j < h.size(); ++j)
                    dh[j] += dlogits[i] * head.weights(i, j);
            Vec dpre(h.size());
            for (std::size_t j = 0; j < h.size(); ++j) dpre[j] = dh[j] * (1.0 - h[j] * h[j]);
            grads->d_hidden_weights = outer(dpre, x);
            grads->d_hidden_bias = dpre;
        } else {
            grads->d_hidden_weights = Mat();
            grads->d_hidden_bias.clear();
        }
        for (double v : grads->d_weights.values())
            if (!std::isfinite(v)) throw ValidationError("head loss: non-finite gradient");
    }
    return loss;
}

// ---------------------------------------------------------------------------
// AdamW over a flat parameter vector.

struct AdamWState {
    Vec first_moment;
    Vec second_moment;
    std::int64_t step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;

    static AdamWState for_size(std::size_t n, double lr = 1e-4, double wd = 0.01) {
        AdamWState s;
        s.first_moment.assign(n, 0.0);
        s.second_moment.assign(n, 0.0);
        s.learning_rate = lr;
        s.weight_decay = wd;
        return s;
    }

    void validate() const {
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adamw: betas must lie in [0, 1)");
        if (epsilon <= 0) throw ConfigError("adamw: epsilon must be positive");
        if (step_count < 0) throw ConfigError("adamw: step_count must be >= 0");
        for (double v : first_moment)
            if (!std::isfinite(v)) throw ValidationError("adamw: non-finite first moment");
        for (double v : second_moment)
            if (!std::isfinite(v)) throw ValidationError("adamw: non-finite second moment");
    }
};

// Decoupled update: theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
inline void adamw_step(AdamWState& state, Vec& params, const Vec& grads) {
    state.validate();
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw ValidationError("adamw: parameter/gradient/moment sizes differ");
    state.step_count += 1;
    double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        double m_hat = state.first_moment[i] / b1t;
        double v_hat = state.second_moment[i] / b2t;
        params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon) +
                     state.learning_rate * state.weight_decay * params[i];
    }
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int max_steps = 4500;
    int batch_size = 8;
    int warmup_steps = 0;
    std::uint64_t seed = 0;
    LossKind loss_kind = LossKind::categorical_ce;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int hidden_width = 0; // 0 = plain affine head

    void validate() const {
        if (max_steps <= 0) throw ConfigError("train: max_steps must be positive");
        if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
        if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
        if (hidden_width < 0) throw ConfigError("train: hidden_width must be >= 0");
        if (learning_rate <= 0) throw ConfigError("train: learning_rate must be positive");
        if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
    }
};

struct TrainResult {
    FeedForwardHead head;
    Vec loss_history;
    std::vector<std::string> warnings;
};

namespace detail_head {

inline void flatten_params(const FeedForwardHead& head, Vec& out) {
    out.clear();
    out.reserve(head.hidden_weights.values().size() + head.hidden_bias.size() +
                head.weights.values().size() + head.bias.size());
    out.insert(out.end(), head.hidden_weights.values().begin(), head.hidden_weights.values().end());
    out.insert(out.end(), head.hidden_bias.begin(), head.hidden_bias.end());
    out.insert(out.end(), head.weights.values().begin(), head.weights.values().end());
    out.insert(out.end(), head.bias.begin(), head.bias.end());
}

inline void unflatten_params(const Vec& flat, FeedForwardHead& head) {
    std::size_t at = 0;
    auto take = [&](double* dst, std::size_t n) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
                  flat.begin() + static_cast<std::ptrdiff_t>(at + n), dst);
        at += n;
    };
    if (!head.hidden_weights.values().empty())
        take(head.hidden_weights.values().data(), head.hidden_weights.values().size());
    if (!head.hidden_bias.empty()) take(head.hidden_bias.data(), head.hidden_bias.size());
    take(head.weights.values().data(), head.weights.values().size());
    take(head.bias.data(), head.bias.size());
}

inline void flatten_grads(const HeadGradients& g, const FeedForwardHead& head, Vec& out) {
    out.clear();
    if (head.has_hidden()) {
        out.insert(out.end(), g.d_hidden_weights.values().begin(), g.d_hidden_weights.values().end());
        out.insert(out.end(), g.d_hidden_bias.begin(), g.d_hidden_bias.end());
    }
    out.insert(out.end(), g.d_weights.values().begin(), g.d_weights.values().end());
    out.insert(out.end(), g.d_bias.begin(), g.d_bias.end());
}

} // namespace detail_head

// Seeded init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
inline FeedForwardHead init_head(std::size_t input_dim, const std::vector<SubtaskSlice>& slices,
                                 int hidden_width, std::uint64_t seed) {
    FeedForwardHead head;
    head.input_dim = input_dim;
    head.subtask_slices = slices;
    std::size_t num_logits = 0;
    for (const auto& [offset, length] : slices) num_logits = offset + length;
    std::mt19937_64 rng(detail::splitmix64(seed));
    auto fill = [&](Mat& m, std::size_t rows, std::size_t cols) {
        m = Mat(rows, cols);
        double bound = 1.0 / std::sqrt(static_cast<double>(cols ? cols : 1));
        for (auto& v : m.values()) v = detail::next_uniform(rng, -bound, bound);
    };
    if (hidden_width > 0) {
        fill(head.hidden_weights, static_cast<std::size_t>(hidden_width), input_dim);
        head.hidden_bias.assign(static_cast<std::size_t>(hidden_width), 0.0);
        fill(head.weights, num_logits, static_cast<std::size_t>(hidden_width));
    } else {
        fill(head.weights, num_logits, input_dim);
    }
    head.bias.assign(num_logits, 0.0);
    head.validate();
    return head;
}

// Deterministic minibatch training: epoch-shuffled batches, AdamW with linear
// warm-up then constant learning rate, per-step batch-mean loss recorded.
inline TrainResult train_head(const std::vector<Vec>& embeddings,
                              const std::vector<std::vector<int>>& labels, const TaskSpec& task,
                              const TrainConfig& cfg) {
    cfg.validate();
    task.validate();
    if (cfg.loss_kind != loss_kind_for(task.kind))
        throw ConfigError("train: loss kind " + to_string(cfg.loss_kind) +
                          " does not match task kind " + to_string(task.kind));
    if (embeddings.empty()) throw ValidationError("train: empty dataset");
    if (embeddings.size() != labels.size())
        throw ValidationError("train: embeddings and labels differ in length");
    std::size_t dim = embeddings[0].size();
    for (const auto& e : embeddings)
        if (e.size() != dim) throw ValidationError("train: inconsistent embedding dimensions");

    TrainResult result;
    auto slices = subtask_slices_for(task);

    // absent-class check per subtask: warn, do not fail
    for (std::size_t s = 0; s < slices.size(); ++s) {
        std::size_t n_classes = task.classes[s].size();
        std::vector<bool> seen(n_classes, false);
        for (const auto& row : labels) {
            if (row.size() != slices.size())
                throw ValidationError("train: label row has wrong subtask count");
            seen[static_cast<std::size_t>(row[s])] = true;
        }
        for (std::size_t c = 0; c < n_classes; ++c)
            if (!seen[c])
                result.warnings.push_back("subtask '" + task.subtask_names[s] + "': class '" +
                                          task.classes[s][c] + "' absent from training labels");
    }

    FeedForwardHead head = init_head(dim, slices, cfg.hidden_width, cfg.seed);
    Vec params;
    detail_head::flatten_params(head, params);
    AdamWState state = AdamWState::for_size(params.size(), cfg.learning_rate, cfg.weight_decay);
    state.beta1 = cfg.beta1;
    state.beta2 = cfg.beta2;
    state.epsilon = cfg.epsilon;

    std::mt19937_64 shuffle_rng(detail::derive_seed(cfg.seed, 1));
    std::vector<std::size_t> order(embeddings.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::size_t cursor = 0;

    Vec grad_sum, grad_flat;
    HeadGradients grads;
    result.loss_history.reserve(static_cast<std::size_t>(cfg.max_steps));
    for (int step = 0; step < cfg.max_steps; ++step) {
        grad_sum.assign(params.size(), 0.0);
        double batch_loss = 0.0;
        int batch_n = static_cast<int>(
            std::min(static_cast<std::size_t>(cfg.batch_size), embeddings.size()));
        for (int b = 0; b < batch_n; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), shuffle_rng);
                cursor = 0;
            }
            std::size_t idx = order[cursor++];
            batch_loss += head_loss(head, embeddings[idx], labels[idx], cfg.loss_kind, &grads);
            detail_head::flatten_grads(grads, head, grad_flat);
            for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += grad_flat[i];
        }
        double inv = 1.0 / batch_n;
        for (auto& g : grad_sum) g *= inv;
        double warm = cfg.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps)
                          : 1.0;
        state.learning_rate = cfg.learning_rate * warm;
        adamw_step(state, params, grad_sum);
        detail_head::unflatten_params(params, head);
        result.loss_history.push_back(batch_loss * inv);
    }
    result.head = std::move(head);
    return result;
}

// ---------------------------------------------------------------------------
// Prediction helpers

// Per-subtask predicted class indices; argmax ties break to the lowest index,
// binary threshold is 0.5 on the sigmoid probability.
inline std::vector<int> predict_labels(const FeedForwardHead& head, const Vec& x, LossKind kind) {
    Vec logits = forward(head, x);
    std::vector<int> out;
    for (const auto& [offset, length] : head.subtask_slices) {
        if (kind == LossKind::bce_with_logits) {
            out.push_back(sigmoid(logits[offset]) > 0.5 ? 1 : 0);
        } else {
            std::size_t best = 0;
            for (std::size_t i = 1; i < length; ++i)
                if (logits[offset + i] > logits[offset + best]) best = i;
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

// Per-subtask class probabilities (binary: {1-p, p}).
inline std::vector<Vec> predict_probs(const FeedForwardHead& head, const Vec& x, LossKind kind) {
    Vec logits = forward(head, x);
    std::vector<Vec> out;
    for (const auto& [offset, length] : head.subtask_slices) {
        if (kind == LossKind::bce_with_logits) {
            double p = sigmoid(logits[offset]);
            out.push_back(Vec{1.0 - p, p});
        } else {
            Vec slice(logits.begin() + static_cast<std::ptrdiff_t>(offset),
                      logits.begin() + static_cast<std::ptrdiff_t>(offset + length));
            out.push_back(softmax(slice));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json head_to_json(const FeedForwardHead& head, const TrainConfig& cfg) {
    nlohmann::json slices = nlohmann::json::array();
    for (const auto& [offset, length] : head.subtask_slices)
        slices.push_back({{"offset", offset}, {"length", length}});
    nlohmann::json j{
        {"input_dim", head.input_dim},
        {"num_logits", head.num_logits()},
        {"subtask_slices", slices},
        {"weights", head.weights.values()},
        {"bias", head.bias},
        {"train_config",
         {{"max_steps", cfg.max_steps},
          {"batch_size", cfg.batch_size},
          {"warmup_steps", cfg.warmup_steps},
          {"seed", cfg.seed},
          {"loss_kind", to_string(cfg.loss_kind)},
          {"learning_rate", cfg.learning_rate},
          {"weight_decay", cfg.weight_decay},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon},
          {"hidden_width", cfg.hidden_width}}},
    };
    if (head.has_hidden()) {
        j["hidden_width"] = head.hidden_weights.rows();
        j["hidden_weights"] = head.hidden_weights.values();
        j["hidden_bias"] = head.hidden_bias;
    }
    return j;
}

inline std::pair<FeedForwardHead, TrainConfig> head_from_json(const nlohmann::json& j) {
    FeedForwardHead head;
    head.input_dim = j.at("input_dim").get<std::size_t>();
    std::size_t num_logits = j.at("num_logits").get<std::size_t>();
    for (const auto& s : j.at("subtask_slices"))
        head.subtask_slices.emplace_back(s.at("offset").get<std::size_t>(),
                                         s.at("length").get<std::size_t>());
    std::size_t feature_dim = head.input_dim;
    if (j.contains("hidden_width")) {
        std::size_t hw = j.at("hidden_width").get<std::size_t>();
        head.hidden_weights = Mat(hw, head.input_dim, j.at("hidden_weights").get<Vec>());
        head.hidden_bias = j.at("hidden_bias").get<Vec>();
        feature_dim = hw;
    }
    head.weights = Mat(num_logits, feature_dim, j.at("weights").get<Vec>());
    head.bias = j.at("bias").get<Vec>();
    TrainConfig cfg;
    const auto& tc = j.at("train_config");
    cfg.max_steps = tc.at("max_steps").get<int>();
    cfg.batch_size = tc.at("batch_size").get<int>();
    cfg.warmup_steps = tc.at("warmup_steps").get<int>();
    cfg.seed = tc.at("seed").get<std::uint64_t>();
    cfg.loss_kind = loss_kind_from_string(tc.at("loss_kind").get<std::string>());
    cfg.learning_rate = tc.at("learning_rate").get<double>();
    cfg.weight_decay = tc.at("weight_decay").get<double>();
    cfg.beta1 = tc.at("beta1").get<double>();
    cfg.beta2 = tc.at("beta2").get<double>();
    cfg.epsilon = tc.at("epsilon").get<double>();
    cfg.hidden_width = tc.at("hidden_width").get<int>();
    head.validate();
    return {std::move(head), cfg};
}

} // namespace moma
