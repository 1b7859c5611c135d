#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "velsplat/encoding.hpp"
#include "velsplat/gaussian.hpp"
#include "velsplat/quat.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

inline constexpr double kLayerNormEps = 1e-5;
// Floor for (deformed) scales. Its square must clear kTemporalVarEps with
// margin: a fully floored Gaussian still has temporal variance >= 1e-10, so
// slicing it stays well-defined instead of throwing.
inline constexpr double kScaleFloor = 1e-5;

struct DeformNetConfig {
    EncodingConfig enc;
    int anchor_count = 6;     // velocity feature is anchor_count * 3 values
    int hidden_width = 64;
    int hidden_layers = 3;

    static constexpr int kOutputDim = 12; // ds (4), dq (4), dq_r (4)

    int input_dim() const {
        return encoded_dim(3, enc.L_mu3) + encoded_dim(1, enc.L_mut) + encoded_dim(1, enc.L_tq) +
               encoded_dim(3 * anchor_count, enc.L_vel);
    }
};

/// Weights of the residual-deformation MLP. Hidden layers are
/// Linear -> LayerNorm -> ReLU; the head is a plain linear layer whose
/// zero initialization makes the whole network an exact no-op at start.
struct DeformNetParams {
    struct Linear {
        int in = 0;
        int out = 0;
        std::vector<double> w; // row-major, out x in
        std::vector<double> b;
    };

    DeformNetConfig config;
    std::vector<Linear> linear;              // hidden layers then head
    std::vector<std::vector<double>> gain;   // layer-norm gains, per hidden layer
    std::vector<std::vector<double>> offset; // layer-norm offsets, per hidden layer

    static DeformNetParams init(const DeformNetConfig& config, std::uint64_t seed);
    static DeformNetParams zeros_like(const DeformNetParams& shape);

    std::size_t param_count() const;
};

/// Applies fn to every parameter in a fixed canonical order (layer by layer:
/// weights, biases, then all gains, then all offsets). The same order is used
/// for optimizer state and serialization.
template <class Fn>
void visit_params(DeformNetParams& p, Fn&& fn) {
    for (auto& layer : p.linear) {
        for (double& v : layer.w) fn(v);
        for (double& v : layer.b) fn(v);
    }
    for (auto& g : p.gain)
        for (double& v : g) fn(v);
    for (auto& o : p.offset)
        for (double& v : o) fn(v);
}

template <class Fn>
void visit_params(const DeformNetParams& p, Fn&& fn) {
    for (const auto& layer : p.linear) {
        for (double v : layer.w) fn(v);
        for (double v : layer.b) fn(v);
    }
    for (const auto& g : p.gain)
        for (double v : g) fn(v);
    for (const auto& o : p.offset)
        for (double v : o) fn(v);
}

/// Per-call scratch holding the activations the backward pass needs.
/// Reusable across calls; buffers are sized on first use.
struct DeformCache {
    std::vector<double> input;
    std::vector<std::vector<double>> z;         // pre-norm linear outputs
    std::vector<std::vector<double>> xhat;      // normalized, pre-gain
    std::vector<double> inv_sigma;              // 1/sqrt(var + eps) per hidden layer
    std::vector<std::vector<double>> act;       // post-ReLU activations
};

struct DeformOut {
    std::array<double, 4> ds{};
    Quat dq{0, 0, 0, 0};   // raw head output; identity is added downstream
    Quat dq_r{0, 0, 0, 0};
};

/// Gradients of a scalar loss with respect to the network inputs.
struct DeformInputGrads {
    Vec3 mu3{};
    double mu_t = 0.0;
    double t_q = 0.0;
    std::vector<double> vel_feat; // sized 3 * anchor_count
};

DeformOut deform_forward(const DeformNetParams& params, Vec3 mu3, double mu_t, double t_q,
                         const std::vector<double>& vel_feat, DeformCache& cache);

/// Accumulates parameter and input gradients given the upstream gradient on
/// the 12 head outputs (ds, dq, dq_r in head order).
void deform_backward(const DeformNetParams& params, Vec3 mu3, double mu_t, double t_q,
                     const std::vector<double>& vel_feat, const DeformCache& cache,
                     const std::array<double, 12>& g_out, DeformNetParams& grads,
                     DeformInputGrads& g_in);

/// Geometry after the residual update: scales get the additive residual
/// (floored to stay positive), quaternions compose with identity + raw.
struct DeformedGeometry {
    Vec4 scales;
    Quat q_l;
    Quat q_r;
};

DeformedGeometry apply_deformation(const Gaussian4D& g, const std::array<double, 4>& ds, Quat dq,
                                   Quat dq_r);

/// Reverse of apply_deformation: maps gradients on (scales, q_l', q_r') to
/// gradients on the Gaussian's log_scales/q_l/q_r and on the residuals.
struct DeformedGeometryGrads {
    Vec4 log_scales{};
    Quat q_l{0, 0, 0, 0};
    Quat q_r{0, 0, 0, 0};
    std::array<double, 4> ds{};
    Quat dq{0, 0, 0, 0};
    Quat dq_r{0, 0, 0, 0};
};

DeformedGeometryGrads apply_deformation_backward(const Gaussian4D& g,
                                                 const std::array<double, 4>& ds, Quat dq,
                                                 Quat dq_r, Vec4 g_scales, Quat g_ql, Quat g_qr);

} // namespace velsplat
