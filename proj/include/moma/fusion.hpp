#pragma once

// The two comparison fusers: single-head cross-attention fusion with a
// residual connection, and sparse mixture-of-experts fusion over pooled
// modality vectors. Both come with analytic gradients for a linear-probe
// categorical readout, verified against finite differences in tests.
//
// Cross-attention computes F = back_project(softmax_rows(QK^T/sqrt(d)) V) + U_a.
// The residual requires width dim; when the projection width d differs from
// dim, a learned back-projection W_O [d x dim] restores it (with d == dim the
// identity is used and W_O stays empty).
//
// MoE routes each pooled modality vector through its top_k experts by gate
// score, renormalizes the selected gate weights to sum 1, and sums expert
// outputs over modalities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "moma/core.hpp"
#include "moma/detail/rng.hpp"
#include "moma/head.hpp"
#include "moma/matrix.hpp"

namespace moma {

// Row-wise softmax with per-row max subtraction. Empty matrices pass through.
inline Mat softmax_rows(const Mat& m) {
    Mat out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (m.cols() == 0) continue;
        double mx = m(i, 0);
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, m(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = std::exp(m(i, j) - mx);
            sum += out(i, j);
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-attention fusion

struct CrossAttnParams {
    Mat W_Q; // [dim x d]
    Mat W_K; // [dim x d]
    Mat W_V; // [dim x d]
    Mat W_O; // [d x dim] back-projection; empty means identity (requires d == dim)

    std::size_t proj_width() const { return W_Q.cols(); }
    bool has_back_projection() const { return W_O.rows() > 0; }

    void validate(std::size_t dim) const {
        std::size_t d = proj_width();
        if (d < 1) throw ValidationError("cross-attention: projection width must be >= 1");
        auto check = [&](const Mat& w, const char* name) {
            if (w.rows() != dim || w.cols() != d)
                throw ValidationError(std::string("cross-attention: ") + name + " must be [" +
                                      std::to_string(dim) + " x " + std::to_string(d) + "]");
        };
        check(W_Q, "W_Q");
        check(W_K, "W_K");
        check(W_V, "W_V");
        if (has_back_projection()) {
            if (W_O.rows() != d || W_O.cols() != dim)
                throw ValidationError("cross-attention: W_O must be [" + std::to_string(d) +
                                      " x " + std::to_string(dim) + "]");
        } else if (d != dim) {
            throw ValidationError(
                "cross-attention: projection width " + std::to_string(d) + " differs from dim " +
                std::to_string(dim) + "; a back-projection W_O [d x dim] is required");
        }
    }
};

struct CrossAttnCache {
    Mat Q, K, V;
    Mat A;     // [U_a.rows() x U_b.rows()]
    Mat F_att; // A*V, width d
    Mat F;     // fused output, width dim
};

inline CrossAttnCache cross_attention_forward(const Mat& U_a, const Mat& U_b,
                                              const CrossAttnParams& p) {
    if (U_a.cols() != U_b.cols())
        throw ValidationError("cross-attention: modality widths differ (" +
                              std::to_string(U_a.cols()) + " vs " + std::to_string(U_b.cols()) + ")");
    p.validate(U_a.cols());
    if (U_b.rows() == 0) throw ValidationError("cross-attention: U_b has no rows to attend over");
    if (!U_a.all_finite() || !U_b.all_finite())
        throw ValidationError("cross-attention: non-finite input");
    CrossAttnCache c;
    c.Q = matmul(U_a, p.W_Q);
    c.K = matmul(U_b, p.W_K);
    c.V = matmul(U_b, p.W_V);
    double scale = 1.0 / std::sqrt(static_cast<double>(p.proj_width()));
    c.A = softmax_rows(scale * matmul(c.Q, transpose(c.K)));
    c.F_att = matmul(c.A, c.V);
    c.F = p.has_back_projection() ? matmul(c.F_att, p.W_O) + U_a : c.F_att + U_a;
    return c;
}

struct CrossAttnResult {
    Mat F;
    Mat A;
};

inline CrossAttnResult cross_attention_fuse(const Mat& U_a, const Mat& U_b,
                                            const CrossAttnParams& p) {
    auto c = cross_attention_forward(U_a, U_b, p);
    return {std::move(c.F), std::move(c.A)};
}

struct CrossAttnGradients {
    Mat dW_Q, dW_K, dW_V, dW_O;
};

// Backward pass given d(loss)/dF. Softmax rows backpropagate as
// dS_ij = A_ij (dA_ij - sum_k dA_ik A_ik).
inline CrossAttnGradients cross_attention_backward(const Mat& U_a, const Mat& U_b,
                                                   const CrossAttnParams& p,
                                                   const CrossAttnCache& c, const Mat& dF) {
    if (dF.rows() != c.F.rows() || dF.cols() != c.F.cols())
        throw ValidationError("cross-attention backward: dF shape mismatch");
    CrossAttnGradients g;
    Mat dF_att;
    if (p.has_back_projection()) {
        g.dW_O = matmul(transpose(c.F_att), dF);
        dF_att = matmul(dF, transpose(p.W_O));
    } else {
        dF_att = dF;
    }
    Mat dA = matmul(dF_att, transpose(c.V));
    Mat dV = matmul(transpose(c.A), dF_att);
    Mat dS(c.A.rows(), c.A.cols());
    for (std::size_t i = 0; i < c.A.rows(); ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < c.A.cols(); ++j) inner += dA(i, j) * c.A(i, j);
        for (std::size_t j = 0; j < c.A.cols(); ++j) dS(i, j) = c.A(i, j) * (dA(i, j) - inner);
    }
    double scale = 1.0 / std::sqrt(static_cast<double>(p.proj_width()));
    Mat dQ = scale * matmul(dS, c.K);
    Mat dK = scale * matmul(transpose(dS), c.Q);
    g.dW_Q = matmul(transpose(U_a), dQ);
    g.dW_K = matmul(transpose(U_b), dK);
    g.dW_V = matmul(transpose(U_b), dV);
    for (const Mat* m : {&g.dW_Q, &g.dW_K, &g.dW_V, &g.dW_O})
        if (!m->all_finite())
            throw ValidationError("cross-attention backward: non-finite gradient");
    return g;
}

// ---------------------------------------------------------------------------
// Sparse mixture-of-experts fusion

struct Expert {
    Mat W1; // [h x dim]
    Vec b1; // [h]
    Mat W2; // [dim x h]
    Vec b2; // [dim]
};

struct MoEParams {
    std::vector<Expert> experts;
    Mat gate_w; // [K x dim]
    Vec gate_b; // [K]
    int top_k = 2;

    std::size_t num_experts() const { return experts.size(); }

    void validate(std::size_t dim) const {
        if (experts.empty()) throw ValidationError("moe: at least one expert required");
        if (top_k < 1 || static_cast<std::size_t>(top_k) > experts.size())
            throw ValidationError("moe: top_k must lie in [1, " +
                                  std::to_string(experts.size()) + "], got " +
                                  std::to_string(top_k));
        if (gate_w.rows() != experts.size() || gate_w.cols() != dim)
            throw ValidationError("moe: gate must map dim -> K");
        if (gate_b.size() != experts.size()) throw ValidationError("moe: gate bias length mismatch");
        for (std::size_t k = 0; k < experts.size(); ++k) {
            const auto& e = experts[k];
            if (e.W1.cols() != dim || e.b1.size() != e.W1.rows() || e.W2.rows() != dim ||
                e.W2.cols() != e.W1.rows() || e.b2.size() != dim)
                throw ValidationError("moe: expert " + std::to_string(k) + " has bad shapes");
        }
    }
};

// Expert output plus its tanh activations (needed for backward).
inline Vec expert_forward(const Expert& e, const Vec& u, Vec* activations = nullptr) {
    Vec a = matvec(e.W1, u, e.b1);
    for (auto& v : a) v = std::tanh(v);
    Vec out = matvec(e.W2, a, e.b2);
    if (activations) *activations = std::move(a);
    return out;
}

struct MoERouting {
    // per modality: selected expert indices (descending score, ties to the
    // lowest index) and renormalized gate weights aligned with them
    std::vector<std::vector<std::size_t>> active;
    std::vector<Vec> gate_weights;
    std::vector<Vec> full_softmax;
};

inline Vec moe_fuse(const std::vector<Vec>& inputs, const MoEParams& p,
                    MoERouting* routing = nullptr) {
    if (inputs.empty()) throw ValidationError("moe: at least one modality input required");
    std::size_t dim = inputs[0].size();
    for (const auto& u : inputs)
        if (u.size() != dim) throw ValidationError("moe: inconsistent input dimensions");
    p.validate(dim);
    if (routing) *routing = MoERouting{};
    Vec fused(dim, 0.0);
    for (const auto& u : inputs) {
        Vec scores = softmax(matvec(p.gate_w, u, p.gate_b));
        std::vector<std::size_t> idx(scores.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        idx.resize(static_cast<std::size_t>(p.top_k));
        double z = 0.0;
        for (auto k : idx) z += scores[k];
        Vec weights;
        for (auto k : idx) {
            double g = scores[k] / z;
            weights.push_back(g);
            Vec ek = expert_forward(p.experts[k], u);
            for (std::size_t i = 0; i < dim; ++i) fused[i] += g * ek[i];
        }
        if (routing) {
            routing->active.push_back(idx);
            routing->gate_weights.push_back(std::move(weights));
            routing->full_softmax.push_back(std::move(scores));
        }
    }
    return fused;
}

struct MoEGradients {
    std::vector<Expert> d_experts; // same shapes as params.experts
    Mat d_gate_w;
    Vec d_gate_b;
};

// Backward pass given d(loss)/dF. Within the routing region picked by the
// forward pass the map is smooth; selection itself carries no gradient.
inline MoEGradients moe_backward(const std::vector<Vec>& inputs, const MoEParams& p,
                                 const Vec& dF) {
    std::size_t dim = inputs[0].size();
    if (dF.size() != dim) throw ValidationError("moe backward: dF length mismatch");
    MoEGradients g;
    g.d_gate_w = Mat(p.gate_w.rows(), p.gate_w.cols());
    g.d_gate_b.assign(p.gate_b.size(), 0.0);
    g.d_experts.resize(p.experts.size());
    for (std::size_t k = 0; k < p.experts.size(); ++k) {
        const auto& e = p.experts[k];
        g.d_experts[k].W1 = Mat(e.W1.rows(), e.W1.cols());
        g.d_experts[k].b1.assign(e.b1.size(), 0.0);
        g.d_experts[k].W2 = Mat(e.W2.rows(), e.W2.cols());
        g.d_experts[k].b2.assign(e.b2.size(), 0.0);
    }
    for (const auto& u : inputs) {
        Vec scores = softmax(matvec(p.gate_w, u, p.gate_b));
        std::vector<std::size_t> idx(scores.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        idx.resize(static_cast<std::size_t>(p.top_k));
        double z = 0.0;
        for (auto k : idx) z += scores[k];

        // d(loss)/d(renormalized gate) and expert backward
        Vec d_tilde(idx.size(), 0.0);
        for (std::size_t t = 0; t < idx.size(); ++t) {
            std::size_t k = idx[t];
            double g_k = scores[k] / z;
            Vec a;
            Vec ek = expert_forward(p.experts[k], u, &a);
            d_tilde[t] = dot(dF, ek);
            Vec dE(dim);
            for (std::size_t i = 0; i < dim; ++i) dE[i] = g_k * dF[i];
            auto& ge = g.d_experts[k];
            const auto& e = p.experts[k];
            // dW2 += dE a^T, db2 += dE
            for (std::size_t i = 0; i < dim; ++i) {
                ge.b2[i] += dE[i];
                for (std::size_t j = 0; j < a.size(); ++j) ge.W2(i, j) += dE[i] * a[j];
            }
            Vec da(a.size(), 0.0);
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < a.size(); ++j) da[j] += e.W2(i, j) * dE[i];
            for (std::size_t j = 0; j < a.size(); ++j) {
                double dpre = da[j] * (1.0 - a[j] * a[j]);
                ge.b1[j] += dpre;
                for (std::size_t i = 0; i < dim; ++i) ge.W1(j, i) += dpre * u[i];
            }
        }

        // renormalization backward: ds_k = (d_tilde_k - sum_j d_tilde_j g_j) / z
        Vec ds(scores.size(), 0.0);
        double inner = 0.0;
        for (std::size_t t = 0; t < idx.size(); ++t) inner += d_tilde[t] * (scores[idx[t]] / z);
        for (std::size_t t = 0; t < idx.size(); ++t) ds[idx[t]] = (d_tilde[t] - inner) / z;

        // softmax backward
        double sinner = 0.0;
        for (std::size_t k = 0; k < scores.size(); ++k) sinner += ds[k] * scores[k];
        for (std::size_t k = 0; k < scores.size(); ++k) {
            double dz_k = scores[k] * (ds[k] - sinner);
            g.d_gate_b[k] += dz_k;
            for (std::size_t i = 0; i < dim; ++i) g.d_gate_w(k, i) += dz_k * u[i];
        }
    }
    if (!g.d_gate_w.all_finite()) throw ValidationError("moe backward: non-finite gradient");
    return g;
}

// ---------------------------------------------------------------------------
// Linear-probe readout instances: mean-pooled F -> affine probe -> categorical
// cross-entropy. These are the training surfaces for the baselines and the
// targets of the finite-difference checks.

struct LinearProbe {
    Mat W; // [num_classes x dim]
    Vec b;
};

struct CrossAttnInstance {
    Mat U_a, U_b;
    CrossAttnParams params;
    LinearProbe probe;
    int label = 0;
};

struct CrossAttnProbeGradients {
    CrossAttnGradients fuse;
    Mat d_probe_w;
    Vec d_probe_b;
};

inline double fuse_gradients(const CrossAttnInstance& inst,
                             CrossAttnProbeGradients* grads = nullptr) {
    auto cache = cross_attention_forward(inst.U_a, inst.U_b, inst.params);
    if (cache.F.rows() == 0) throw ValidationError("cross-attention probe: empty fused output");
    Vec f = mean_rows(cache.F);
    Vec logits = matvec(inst.probe.W, f, inst.probe.b);
    Vec dlogits;
    double loss = loss_and_dlogits(logits, {{0, logits.size()}}, {inst.label},
                                   LossKind::categorical_ce, dlogits);
    if (grads) {
        grads->d_probe_w = outer(dlogits, f);
        grads->d_probe_b = dlogits;
        Vec df(f.size(), 0.0);
        for (std::size_t i = 0; i < inst.probe.W.rows(); ++i)
            for (std::size_t j = 0; j < f.size(); ++j) df[j] += dlogits[i] * inst.probe.W(i, j);
        Mat dF(cache.F.rows(), cache.F.cols());
        double inv = 1.0 / static_cast<double>(cache.F.rows());
        for (std::size_t i = 0; i < dF.rows(); ++i)
            for (std::size_t j = 0; j < dF.cols(); ++j) dF(i, j) = df[j] * inv;
        grads->fuse = cross_attention_backward(inst.U_a, inst.U_b, inst.params, cache, dF);
    }
    return loss;
}

struct MoEInstance {
    std::vector<Vec> inputs;
    MoEParams params;
    LinearProbe probe;
    int label = 0;
};

struct MoEProbeGradients {
    MoEGradients fuse;
    Mat d_probe_w;
    Vec d_probe_b;
};

inline double fuse_gradients(const MoEInstance& inst, MoEProbeGradients* grads = nullptr) {
    Vec f = moe_fuse(inst.inputs, inst.params);
    Vec logits = matvec(inst.probe.W, f, inst.probe.b);
    Vec dlogits;
    double loss = loss_and_dlogits(logits, {{0, logits.size()}}, {inst.label},
                                   LossKind::categorical_ce, dlogits);
    if (grads) {
        grads->d_probe_w = outer(dlogits, f);
        grads->d_probe_b = dlogits;
        Vec df(f.size(), 0.0);
        for (std::size_t i = 0; i < inst.probe.W.rows(); ++i)
            for (std::size_t j = 0; j < f.size(); ++j) df[j] += dlogits[i] * inst.probe.W(i, j);
        grads->fuse = moe_backward(inst.inputs, inst.params, df);
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Seeded initialization and JSON checkpoints

inline Mat random_mat(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
    Mat m(rows, cols);
    for (auto& v : m.values()) v = detail::next_uniform(rng, -scale, scale);
    return m;
}

inline CrossAttnParams init_cross_attn(std::size_t dim, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(detail::splitmix64(seed));
    double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    CrossAttnParams p;
    p.W_Q = random_mat(dim, d, rng, scale);
    p.W_K = random_mat(dim, d, rng, scale);
    p.W_V = random_mat(dim, d, rng, scale);
    if (d != dim) p.W_O = random_mat(d, dim, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return p;
}

inline MoEParams init_moe(std::size_t dim, std::size_t num_experts, int top_k, std::uint64_t seed,
                          std::size_t hidden_width = 0) {
    if (hidden_width == 0) hidden_width = 2 * dim;
    std::mt19937_64 rng(detail::splitmix64(seed));
    MoEParams p;
    p.top_k = top_k;
    double in_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    double hid_scale = 1.0 / std::sqrt(static_cast<double>(hidden_width));
    for (std::size_t k = 0; k < num_experts; ++k) {
        Expert e;
        e.W1 = random_mat(hidden_width, dim, rng, in_scale);
        e.b1.assign(hidden_width, 0.0);
        e.W2 = random_mat(dim, hidden_width, rng, hid_scale);
        e.b2.assign(dim, 0.0);
        p.experts.push_back(std::move(e));
    }
    p.gate_w = random_mat(num_experts, dim, rng, in_scale);
    p.gate_b.assign(num_experts, 0.0);
    return p;
}

inline nlohmann::json mat_to_json(const Mat& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", m.values()}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
    return Mat(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
               j.at("values").get<Vec>());
}

inline nlohmann::json cross_attn_to_json(const CrossAttnParams& p, std::uint64_t seed) {
    nlohmann::json j{{"kind", "cross_attention"},
                     {"seed", seed},
                     {"W_Q", mat_to_json(p.W_Q)},
                     {"W_K", mat_to_json(p.W_K)},
                     {"W_V", mat_to_json(p.W_V)}};
    if (p.has_back_projection()) j["W_O"] = mat_to_json(p.W_O);
    return j;
}

inline CrossAttnParams cross_attn_from_json(const nlohmann::json& j) {
    CrossAttnParams p;
    p.W_Q = mat_from_json(j.at("W_Q"));
    p.W_K = mat_from_json(j.at("W_K"));
    p.W_V = mat_from_json(j.at("W_V"));
    if (j.contains("W_O")) p.W_O = mat_from_json(j.at("W_O"));
    return p;
}

inline nlohmann::json moe_to_json(const MoEParams& p, std::uint64_t seed) {
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& e : p.experts)
        experts.push_back({{"W1", mat_to_json(e.W1)},
                           {"b1", e.b1},
                           {"W2", mat_to_json(e.W2)},
                           {"b2", e.b2}});
    return {{"kind", "moe"},        {"seed", seed},       {"top_k", p.top_k},
            {"experts", experts},   {"gate_w", mat_to_json(p.gate_w)},
            {"gate_b", p.gate_b}};
}

inline MoEParams moe_from_json(const nlohmann::json& j) {
    MoEParams p;
    p.top_k = j.at("top_k").get<int>();
    for (const auto& ej : j.at("experts")) {
        Expert e;
        e.W1 = mat_from_json(ej.at("W1"));
        e.b1 = ej.at("b1").get<Vec>();
        e.W2 = mat_from_json(ej.at("W2"));
        e.b2 = ej.at("b2").get<Vec>();
        p.experts.push_back(std::move(e));
    }
    p.gate_w = mat_from_json(j.at("gate_w"));
    p.gate_b = j.at("gate_b").get<Vec>();
    return p;
}

} // namespace moma
