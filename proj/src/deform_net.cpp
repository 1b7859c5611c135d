#include "velsplat/deform_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "velsplat/errors.hpp"

namespace velsplat {

namespace {

void check_shapes(const DeformNetParams& params, const std::vector<double>& vel_feat) {
    const DeformNetConfig& cfg = params.config;
    if (static_cast<int>(vel_feat.size()) != 3 * cfg.anchor_count)
        throw ConfigError("deform_forward: velocity feature size does not match anchor count");
    if (static_cast<int>(params.linear.size()) != cfg.hidden_layers + 1 ||
        static_cast<int>(params.gain.size()) != cfg.hidden_layers)
        throw ConfigError("deform_forward: parameter layout does not match configuration");
    int in = cfg.input_dim();
    for (int l = 0; l <= cfg.hidden_layers; ++l) {
        const auto& lin = params.linear[static_cast<std::size_t>(l)];
        const int out = l == cfg.hidden_layers ? DeformNetConfig::kOutputDim : cfg.hidden_width;
        if (lin.in != in || lin.out != out)
            throw ConfigError("deform_forward: layer shape mismatch");
        in = out;
    }
}

void build_input(const DeformNetConfig& cfg, Vec3 mu3, double mu_t, double t_q,
                 const std::vector<double>& vel_feat, std::vector<double>& input) {
    input.resize(static_cast<std::size_t>(cfg.input_dim()));
    double* out = input.data();
    const double mu3v[3] = {mu3.x, mu3.y, mu3.z};
    encode(mu3v, 3, cfg.enc.L_mu3, out);
    out += encoded_dim(3, cfg.enc.L_mu3);
    encode(&mu_t, 1, cfg.enc.L_mut, out);
    out += encoded_dim(1, cfg.enc.L_mut);
    encode(&t_q, 1, cfg.enc.L_tq, out);
    out += encoded_dim(1, cfg.enc.L_tq);
    encode(vel_feat.data(), 3 * cfg.anchor_count, cfg.enc.L_vel, out);
}

void linear_forward(const DeformNetParams::Linear& lin, const std::vector<double>& x,
                    std::vector<double>& y) {
    y.resize(static_cast<std::size_t>(lin.out));
    for (int r = 0; r < lin.out; ++r) {
        const double* row = lin.w.data() + static_cast<std::size_t>(r) * lin.in;
        double acc = lin.b[static_cast<std::size_t>(r)];
        for (int c = 0; c < lin.in; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
}

} // namespace

DeformNetParams DeformNetParams::init(const DeformNetConfig& config, std::uint64_t seed) {
    DeformNetParams p;
    p.config = config;
    std::mt19937_64 rng(seed);
    int in = config.input_dim();
    for (int l = 0; l < config.hidden_layers; ++l) {
        Linear lin;
        lin.in = in;
        lin.out = config.hidden_width;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        lin.w.resize(static_cast<std::size_t>(lin.in) * lin.out);
        lin.b.resize(static_cast<std::size_t>(lin.out));
        for (double& v : lin.w) v = u(rng);
        for (double& v : lin.b) v = u(rng);
        p.linear.push_back(std::move(lin));
        p.gain.emplace_back(static_cast<std::size_t>(config.hidden_width), 1.0);
        p.offset.emplace_back(static_cast<std::size_t>(config.hidden_width), 0.0);
        in = config.hidden_width;
    }
    Linear head;
    head.in = in;
    head.out = DeformNetConfig::kOutputDim;
    head.w.assign(static_cast<std::size_t>(head.in) * head.out, 0.0);
    head.b.assign(static_cast<std::size_t>(head.out), 0.0);
    p.linear.push_back(std::move(head));
    return p;
}

DeformNetParams DeformNetParams::zeros_like(const DeformNetParams& shape) {
    DeformNetParams p;
    p.config = shape.config;
    for (const auto& lin : shape.linear) {
        Linear z;
        z.in = lin.in;
        z.out = lin.out;
        z.w.assign(lin.w.size(), 0.0);
        z.b.assign(lin.b.size(), 0.0);
        p.linear.push_back(std::move(z));
    }
    for (const auto& g : shape.gain) p.gain.emplace_back(g.size(), 0.0);
    for (const auto& o : shape.offset) p.offset.emplace_back(o.size(), 0.0);
    return p;
}

std::size_t DeformNetParams::param_count() const {
    std::size_t n = 0;
    visit_params(*this, [&n](double) { ++n; });
    return n;
}

DeformOut deform_forward(const DeformNetParams& params, Vec3 mu3, double mu_t, double t_q,
                         const std::vector<double>& vel_feat, DeformCache& cache) {
    check_shapes(params, vel_feat);
    const DeformNetConfig& cfg = params.config;
    build_input(cfg, mu3, mu_t, t_q, vel_feat, cache.input);

    const int h = cfg.hidden_layers;
    cache.z.resize(static_cast<std::size_t>(h));
    cache.xhat.resize(static_cast<std::size_t>(h));
    cache.act.resize(static_cast<std::size_t>(h));
    cache.inv_sigma.resize(static_cast<std::size_t>(h));

    const std::vector<double>* x = &cache.input;
    for (int l = 0; l < h; ++l) {
        auto& z = cache.z[static_cast<std::size_t>(l)];
        linear_forward(params.linear[static_cast<std::size_t>(l)], *x, z);

        const int n = cfg.hidden_width;
        double mean = 0.0;
        for (double v : z) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : z) var += (v - mean) * (v - mean);
        var /= n;
        const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_sigma[static_cast<std::size_t>(l)] = inv_sigma;

        auto& xhat = cache.xhat[static_cast<std::size_t>(l)];
        auto& act = cache.act[static_cast<std::size_t>(l)];
        xhat.resize(static_cast<std::size_t>(n));
        act.resize(static_cast<std::size_t>(n));
        const auto& gain = params.gain[static_cast<std::size_t>(l)];
        const auto& offset = params.offset[static_cast<std::size_t>(l)];
        for (int i = 0; i < n; ++i) {
            const double xh = (z[static_cast<std::size_t>(i)] - mean) * inv_sigma;
            xhat[static_cast<std::size_t>(i)] = xh;
            act[static_cast<std::size_t>(i)] = std::max(
                0.0, gain[static_cast<std::size_t>(i)] * xh + offset[static_cast<std::size_t>(i)]);
        }
        x = &act;
    }

    std::vector<double> head;
    linear_forward(params.linear.back(), *x, head);
    DeformOut out;
    out.ds = {head[0], head[1], head[2], head[3]};
    out.dq = {head[4], head[5], head[6], head[7]};
    out.dq_r = {head[8], head[9], head[10], head[11]};
    return out;
}

void deform_backward(const DeformNetParams& params, Vec3 mu3, double mu_t, double t_q,
                     const std::vector<double>& vel_feat, const DeformCache& cache,
                     const std::array<double, 12>& g_out, DeformNetParams& grads,
                     DeformInputGrads& g_in) {
    const DeformNetConfig& cfg = params.config;
    const int h = cfg.hidden_layers;

    // Head: z_head = W a_h + b.
    const auto& head = params.linear.back();
    auto& g_head = grads.linear.back();
    const auto& a_last = h > 0 ? cache.act[static_cast<std::size_t>(h - 1)] : cache.input;
    std::vector<double> g_act(a_last.size(), 0.0);
    for (int r = 0; r < head.out; ++r) {
        const double g = g_out[static_cast<std::size_t>(r)];
        g_head.b[static_cast<std::size_t>(r)] += g;
        const double* row = head.w.data() + static_cast<std::size_t>(r) * head.in;
        double* grow = g_head.w.data() + static_cast<std::size_t>(r) * head.in;
        for (int c = 0; c < head.in; ++c) {
            grow[c] += g * a_last[static_cast<std::size_t>(c)];
            g_act[static_cast<std::size_t>(c)] += g * row[c];
        }
    }

    for (int l = h - 1; l >= 0; --l) {
        const int n = cfg.hidden_width;
        const auto& xhat = cache.xhat[static_cast<std::size_t>(l)];
        const auto& act = cache.act[static_cast<std::size_t>(l)];
        const auto& gain = params.gain[static_cast<std::size_t>(l)];
        const double inv_sigma = cache.inv_sigma[static_cast<std::size_t>(l)];

        // ReLU then layer-norm affine.
        std::vector<double> g_xhat(static_cast<std::size_t>(n));
        auto& g_gain = grads.gain[static_cast<std::size_t>(l)];
        auto& g_offset = grads.offset[static_cast<std::size_t>(l)];
        for (int i = 0; i < n; ++i) {
            const double g = act[static_cast<std::size_t>(i)] > 0.0
                                 ? g_act[static_cast<std::size_t>(i)]
                                 : 0.0;
            g_gain[static_cast<std::size_t>(i)] += g * xhat[static_cast<std::size_t>(i)];
            g_offset[static_cast<std::size_t>(i)] += g;
            g_xhat[static_cast<std::size_t>(i)] = g * gain[static_cast<std::size_t>(i)];
        }

        // Normalization: dz = inv_sigma (g_xhat - mean(g_xhat) - xhat * mean(g_xhat .* xhat)).
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < n; ++i) {
            m1 += g_xhat[static_cast<std::size_t>(i)];
            m2 += g_xhat[static_cast<std::size_t>(i)] * xhat[static_cast<std::size_t>(i)];
        }
        m1 /= n;
        m2 /= n;
        std::vector<double> g_z(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            g_z[static_cast<std::size_t>(i)] =
                inv_sigma * (g_xhat[static_cast<std::size_t>(i)] - m1 -
                             xhat[static_cast<std::size_t>(i)] * m2);

        // Linear layer l.
        const auto& lin = params.linear[static_cast<std::size_t>(l)];
        auto& g_lin = grads.linear[static_cast<std::size_t>(l)];
        const auto& x = l > 0 ? cache.act[static_cast<std::size_t>(l - 1)] : cache.input;
        std::vector<double> g_x(x.size(), 0.0);
        for (int r = 0; r < lin.out; ++r) {
            const double g = g_z[static_cast<std::size_t>(r)];
            g_lin.b[static_cast<std::size_t>(r)] += g;
            const double* row = lin.w.data() + static_cast<std::size_t>(r) * lin.in;
            double* grow = g_lin.w.data() + static_cast<std::size_t>(r) * lin.in;
            for (int c = 0; c < lin.in; ++c) {
                grow[c] += g * x[static_cast<std::size_t>(c)];
                g_x[static_cast<std::size_t>(c)] += g * row[c];
            }
        }
        g_act = std::move(g_x);
    }

    // g_act now holds the gradient on the encoded input; peel it apart.
    if (g_in.vel_feat.size() != vel_feat.size()) g_in.vel_feat.assign(vel_feat.size(), 0.0);
    const double* g = g_act.data();
    const double mu3v[3] = {mu3.x, mu3.y, mu3.z};
    double g_mu3[3] = {0, 0, 0};
    encode_backward(mu3v, 3, cfg.enc.L_mu3, g, g_mu3);
    g_in.mu3 += Vec3{g_mu3[0], g_mu3[1], g_mu3[2]};
    g += encoded_dim(3, cfg.enc.L_mu3);
    encode_backward(&mu_t, 1, cfg.enc.L_mut, g, &g_in.mu_t);
    g += encoded_dim(1, cfg.enc.L_mut);
    encode_backward(&t_q, 1, cfg.enc.L_tq, g, &g_in.t_q);
    g += encoded_dim(1, cfg.enc.L_tq);
    encode_backward(vel_feat.data(), 3 * cfg.anchor_count, cfg.enc.L_vel, g, g_in.vel_feat.data());
}

DeformedGeometry apply_deformation(const Gaussian4D& g, const std::array<double, 4>& ds, Quat dq,
                                   Quat dq_r) {
    DeformedGeometry out;
    const Vec4 s = scales(g);
    for (int i = 0; i < 4; ++i) out.scales[i] = std::max(s[i] + ds[static_cast<std::size_t>(i)], kScaleFloor);
    out.q_l = hamilton(g.q_l, Quat::identity() + dq);
    out.q_r = hamilton(g.q_r, Quat::identity() + dq_r);
    return out;
}

namespace {

// d(a ⊗ b)/da is right multiplication by b; d(a ⊗ b)/db is left multiplication by a.
Quat mat4_transpose_apply(const Mat4& m, Quat g) {
    return {m(0, 0) * g.w + m(1, 0) * g.x + m(2, 0) * g.y + m(3, 0) * g.z,
            m(0, 1) * g.w + m(1, 1) * g.x + m(2, 1) * g.y + m(3, 1) * g.z,
            m(0, 2) * g.w + m(1, 2) * g.x + m(2, 2) * g.y + m(3, 2) * g.z,
            m(0, 3) * g.w + m(1, 3) * g.x + m(2, 3) * g.y + m(3, 3) * g.z};
}

} // namespace

DeformedGeometryGrads apply_deformation_backward(const Gaussian4D& g,
                                                 const std::array<double, 4>& ds, Quat dq,
                                                 Quat dq_r, Vec4 g_scales, Quat g_ql, Quat g_qr) {
    DeformedGeometryGrads out;
    const Vec4 s = scales(g);
    for (int i = 0; i < 4; ++i) {
        const bool active = s[i] + ds[static_cast<std::size_t>(i)] > kScaleFloor;
        out.ds[static_cast<std::size_t>(i)] = active ? g_scales[i] : 0.0;
        out.log_scales[i] = active ? g_scales[i] * s[i] : 0.0;
    }
    out.q_l = mat4_transpose_apply(right_isoclinic(Quat::identity() + dq), g_ql);
    out.dq = mat4_transpose_apply(left_isoclinic(g.q_l), g_ql);
    out.q_r = mat4_transpose_apply(right_isoclinic(Quat::identity() + dq_r), g_qr);
    out.dq_r = mat4_transpose_apply(left_isoclinic(g.q_r), g_qr);
    return out;
}

} // namespace velsplat
