#include "velsplat/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "velsplat/parallel.hpp"

namespace velsplat {

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void add(std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    }
};

std::vector<double> velocity_feature(const VelocityTrack& track, bool velocity_enabled) {
    std::vector<double> feat(track.anchors.size() * 3, 0.0);
    if (velocity_enabled)
        for (std::size_t k = 0; k < track.anchors.size(); ++k)
            for (int c = 0; c < 3; ++c) feat[3 * k + static_cast<std::size_t>(c)] = track.anchors[k][c];
    return feat;
}

// Full slice with every intermediate the backward pass needs. Returns false
// when the Gaussian is culled by the temporal kernel.
bool slice_full(const Gaussian4D& g, const VelocityTrack& track, const DeformNetParams* net,
                double t, bool velocity_enabled, bool modulated_opacity,
                RenderCache::PerGaussian& out) {
    if (net != nullptr) {
        const std::vector<double> feat = velocity_feature(track, velocity_enabled);
        out.residuals = deform_forward(*net, g.mean4.xyz(), g.mean4.w, t, feat, out.net_cache);
        const DeformedGeometry geom =
            apply_deformation(g, out.residuals.ds, out.residuals.dq, out.residuals.dq_r);
        out.scales4 = geom.scales;
        out.q_l_def = geom.q_l;
        out.q_r_def = geom.q_r;
    } else {
        out.residuals = DeformOut{};
        out.scales4 = scales(g);
        out.q_l_def = g.q_l;
        out.q_r_def = g.q_r;
    }
    out.cov4 = assemble_cov4(out.q_l_def, out.q_r_def, out.scales4);
    out.kernel = temporal_marginal(g.mean4, out.cov4, t);
    out.culled = out.kernel < kTemporalCullThreshold;
    if (out.culled) return false;

    const double tt = out.cov4.tt();
    const double dt = t - g.mean4.w;
    Vec3 mean3 = g.mean4.xyz() + (dt / tt) * out.cov4.cross_column();
    if (velocity_enabled) mean3 += displacement(track, g.mean4.w, t);

    out.sliced.mean3 = mean3;
    out.sliced.cov3 = schur_tt(out.cov4);
    out.sliced.eff_opacity = opacity(g) * (modulated_opacity ? out.kernel : 1.0);
    for (int c = 0; c < 3; ++c) out.sliced.rgb[c] = std::clamp(g.rgb[c], 0.0, 1.0);
    return true;
}

struct PreSplat {
    Sym2 inv; // inverse of the dilated 2x2 covariance
    double rx = 0.0;
    double ry = 0.0;
};

PreSplat precompute(const RenderSplat& s, double truncation_sigmas) {
    PreSplat p;
    const double det = s.cov2.det();
    p.inv = {s.cov2.c / det, -s.cov2.b / det, s.cov2.a / det};
    p.rx = truncation_sigmas * std::sqrt(s.cov2.a);
    p.ry = truncation_sigmas * std::sqrt(s.cov2.c);
    return p;
}

struct TileGrid {
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<int>> lists; // splat indices in composite order
};

// Conservative tile assignment; the per-pixel bounding-box test makes the
// final image independent of tile size.
TileGrid build_tiles(const std::vector<RenderSplat>& splats, const std::vector<int>& order,
                     const std::vector<PreSplat>& pre, int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
    for (const int sid : order) {
        const RenderSplat& s = splats[static_cast<std::size_t>(sid)];
        const PreSplat& p = pre[static_cast<std::size_t>(sid)];
        const int px0 = std::max(0, static_cast<int>(std::floor(s.mean2.x - p.rx - 0.5)));
        const int px1 = std::min(width - 1, static_cast<int>(std::ceil(s.mean2.x + p.rx - 0.5)));
        const int py0 = std::max(0, static_cast<int>(std::floor(s.mean2.y - p.ry - 0.5)));
        const int py1 = std::min(height - 1, static_cast<int>(std::ceil(s.mean2.y + p.ry - 0.5)));
        if (px0 > px1 || py0 > py1) continue;
        for (int ty = py0 / kTileSize; ty <= py1 / kTileSize; ++ty)
            for (int tx = px0 / kTileSize; tx <= px1 / kTileSize; ++tx)
                grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(sid);
    }
    return grid;
}

std::vector<int> depth_order(const std::vector<RenderSplat>& splats) {
    std::vector<int> order(splats.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&splats](int a, int b) {
        return splats[static_cast<std::size_t>(a)].depth < splats[static_cast<std::size_t>(b)].depth;
    });
    return order;
}

} // namespace

std::optional<SlicedGaussian> slice_gaussian(const Gaussian4D& g, const VelocityTrack& track,
                                             const DeformNetParams* net, double t,
                                             bool velocity_enabled, bool modulated_opacity) {
    RenderCache::PerGaussian state;
    if (!slice_full(g, track, net, t, velocity_enabled, modulated_opacity, state))
        return std::nullopt;
    return state.sliced;
}

std::optional<ProjectedSplat> project(Vec3 mean3, const Mat3& cov3, const Camera& cam) {
    const Vec3 p = world_to_cam(cam, mean3);
    if (p.z < cam.near) return std::nullopt;
    const double invz = 1.0 / p.z;
    ProjectedSplat out;
    out.depth = p.z;
    out.mean2 = {cam.fx * p.x * invz + cam.cx, cam.fy * p.y * invz + cam.cy};

    const Mat3 v = cam.rot * cov3 * cam.rot.transposed();
    const double j00 = cam.fx * invz;
    const double j02 = -cam.fx * p.x * invz * invz;
    const double j11 = cam.fy * invz;
    const double j12 = -cam.fy * p.y * invz * invz;
    // rows of J V with J = [[j00, 0, j02], [0, j11, j12]]
    const double r0[3] = {j00 * v(0, 0) + j02 * v(2, 0), j00 * v(0, 1) + j02 * v(2, 1),
                          j00 * v(0, 2) + j02 * v(2, 2)};
    const double r1[3] = {j11 * v(1, 0) + j12 * v(2, 0), j11 * v(1, 1) + j12 * v(2, 1),
                          j11 * v(1, 2) + j12 * v(2, 2)};
    out.cov2 = {r0[0] * j00 + r0[2] * j02 + kCovDilation, r1[0] * j00 + r1[2] * j02,
                r1[1] * j11 + r1[2] * j12 + kCovDilation};
    return out;
}

Frame rasterize(const std::vector<RenderSplat>& splats, const Camera& cam, Vec3 background,
                RasterCache* cache, double truncation_sigmas, int threads) {
    Frame frame(cam.width, cam.height);
    std::vector<PreSplat> pre(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) pre[i] = precompute(splats[i], truncation_sigmas);
    const std::vector<int> order = depth_order(splats);
    const TileGrid grid = build_tiles(splats, order, pre, cam.width, cam.height);

    if (cache != nullptr) {
        cache->order = order;
        cache->final_t.assign(static_cast<std::size_t>(cam.width) * cam.height, 1.0);
        cache->n_contrib.assign(static_cast<std::size_t>(cam.width) * cam.height, 0);
    }

    std::vector<std::uint64_t> chunk_hash(static_cast<std::size_t>(grid.tiles_y), 0);
    parallel_chunks(grid.tiles_y, threads, [&](int ty) {
        Fnv hash;
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx];
            const int y1 = std::min(cam.height, (ty + 1) * kTileSize);
            const int x1 = std::min(cam.width, (tx + 1) * kTileSize);
            for (int py = ty * kTileSize; py < y1; ++py) {
                for (int px = tx * kTileSize; px < x1; ++px) {
                    double trans = 1.0;
                    Vec3 color{};
                    int consumed = 0;
                    for (const int sid : list) {
                        ++consumed;
                        const RenderSplat& s = splats[static_cast<std::size_t>(sid)];
                        const PreSplat& p = pre[static_cast<std::size_t>(sid)];
                        const double dx = px + 0.5 - s.mean2.x;
                        const double dy = py + 0.5 - s.mean2.y;
                        const bool inside = std::abs(dx) <= p.rx && std::abs(dy) <= p.ry;
                        hash.add(inside ? 3u : 2u);
                        if (!inside) continue;
                        const double q =
                            p.inv.a * dx * dx + 2.0 * p.inv.b * dx * dy + p.inv.c * dy * dy;
                        const double a_raw = s.eff_opacity * std::exp(-0.5 * q);
                        const bool clamped = a_raw > kAlphaClamp;
                        const double alpha = clamped ? kAlphaClamp : a_raw;
                        const bool skip = alpha < kAlphaSkip;
                        hash.add((clamped ? 4u : 0u) | (skip ? 1u : 0u));
                        if (skip) continue;
                        color += (trans * alpha) * s.rgb;
                        trans *= 1.0 - alpha;
                        if (trans < kTransmittanceStop) break;
                    }
                    color += trans * background;
                    for (int c = 0; c < 3; ++c) frame.at(px, py, c) = color[c];
                    if (cache != nullptr) {
                        const std::size_t pix = static_cast<std::size_t>(py) * cam.width + px;
                        cache->final_t[pix] = trans;
                        cache->n_contrib[pix] = consumed;
                    }
                }
            }
        }
        chunk_hash[static_cast<std::size_t>(ty)] = hash.h;
    });

    if (cache != nullptr) {
        Fnv combined;
        // The composite order is itself a discrete outcome: depth ties flipping
        // under perturbation must show up as a decision change.
        for (const int sid : order) combined.add(static_cast<std::uint64_t>(sid));
        for (const std::uint64_t h : chunk_hash) combined.add(h);
        cache->decision_hash = combined.h;
    }
    return frame;
}

std::vector<SplatGrads> rasterize_backward(const std::vector<RenderSplat>& splats,
                                           const Camera& cam, Vec3 background,
                                           const RasterCache& cache, const Frame& dframe,
                                           double truncation_sigmas, int threads) {
    std::vector<PreSplat> pre(splats.size());
    for (std::size_t i = 0; i < splats.size(); ++i) pre[i] = precompute(splats[i], truncation_sigmas);
    const TileGrid grid = build_tiles(splats, cache.order, pre, cam.width, cam.height);

    struct RawGrads {
        Vec2 mean2{};
        Sym2 g_inv{}; // full-matrix gradient with respect to inv_cov2
        double eff = 0.0;
        Vec3 rgb{};
    };
    std::vector<std::vector<RawGrads>> chunk_grads(static_cast<std::size_t>(grid.tiles_y));

    parallel_chunks(grid.tiles_y, threads, [&](int ty) {
        auto& acc = chunk_grads[static_cast<std::size_t>(ty)];
        acc.assign(splats.size(), RawGrads{});
        for (int tx = 0; tx < grid.tiles_x; ++tx) {
            const auto& list = grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx];
            const int y1 = std::min(cam.height, (ty + 1) * kTileSize);
            const int x1 = std::min(cam.width, (tx + 1) * kTileSize);
            for (int py = ty * kTileSize; py < y1; ++py) {
                for (int px = tx * kTileSize; px < x1; ++px) {
                    const std::size_t pix = static_cast<std::size_t>(py) * cam.width + px;
                    const Vec3 g{dframe.at(px, py, 0), dframe.at(px, py, 1), dframe.at(px, py, 2)};
                    double t_after = cache.final_t[pix];
                    Vec3 suffix = t_after * background;
                    for (int pos = cache.n_contrib[pix] - 1; pos >= 0; --pos) {
                        const int sid = list[static_cast<std::size_t>(pos)];
                        const RenderSplat& s = splats[static_cast<std::size_t>(sid)];
                        const PreSplat& p = pre[static_cast<std::size_t>(sid)];
                        const double dx = px + 0.5 - s.mean2.x;
                        const double dy = py + 0.5 - s.mean2.y;
                        if (!(std::abs(dx) <= p.rx && std::abs(dy) <= p.ry)) continue;
                        const double q =
                            p.inv.a * dx * dx + 2.0 * p.inv.b * dx * dy + p.inv.c * dy * dy;
                        const double weight = std::exp(-0.5 * q);
                        const double a_raw = s.eff_opacity * weight;
                        const bool clamped = a_raw > kAlphaClamp;
                        const double alpha = clamped ? kAlphaClamp : a_raw;
                        if (alpha < kAlphaSkip) continue;

                        const double t_i = t_after / (1.0 - alpha);
                        RawGrads& grad = acc[static_cast<std::size_t>(sid)];
                        grad.rgb += (alpha * t_i) * g;
                        const double dalpha = g.x * (s.rgb.x * t_i - suffix.x / (1.0 - alpha)) +
                                              g.y * (s.rgb.y * t_i - suffix.y / (1.0 - alpha)) +
                                              g.z * (s.rgb.z * t_i - suffix.z / (1.0 - alpha));
                        if (!clamped) {
                            grad.eff += dalpha * weight;
                            const double dq = -0.5 * alpha * dalpha;
                            grad.mean2.x += dq * (-2.0 * (p.inv.a * dx + p.inv.b * dy));
                            grad.mean2.y += dq * (-2.0 * (p.inv.b * dx + p.inv.c * dy));
                            grad.g_inv.a += dq * dx * dx;
                            grad.g_inv.b += dq * dx * dy;
                            grad.g_inv.c += dq * dy * dy;
                        }
                        suffix += (alpha * t_i) * s.rgb;
                        t_after = t_i;
                    }
                }
            }
        }
    });

    // merge chunks in tile-row order, then map inv-covariance gradients back
    // to covariance gradients: dSigma = -inv G inv.
    std::vector<SplatGrads> out(splats.size());
    for (const auto& acc : chunk_grads) {
        if (acc.empty()) continue;
        for (std::size_t i = 0; i < splats.size(); ++i) {
            out[i].mean2.x += acc[i].mean2.x;
            out[i].mean2.y += acc[i].mean2.y;
            out[i].eff_opacity += acc[i].eff;
            out[i].rgb += acc[i].rgb;
            out[i].cov2.a += acc[i].g_inv.a;
            out[i].cov2.b += acc[i].g_inv.b;
            out[i].cov2.c += acc[i].g_inv.c;
        }
    }
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const Sym2 m = pre[i].inv;
        const Sym2 gm = out[i].cov2;
        const double p00 = m.a * gm.a + m.b * gm.b;
        const double p01 = m.a * gm.b + m.b * gm.c;
        const double p10 = m.b * gm.a + m.c * gm.b;
        const double p11 = m.b * gm.b + m.c * gm.c;
        const double d00 = p00 * m.a + p01 * m.b;
        const double d01 = p00 * m.b + p01 * m.c;
        const double d10 = p10 * m.a + p11 * m.b;
        const double d11 = p10 * m.b + p11 * m.c;
        out[i].cov2 = {-d00, -0.5 * (d01 + d10), -d11};
    }
    return out;
}

Frame render(const SceneModel& model, const Camera& cam, double t, Vec3 background,
             RenderCache* cache, int threads) {
    model.validate();
    RenderCache local;
    RenderCache& rc = cache != nullptr ? *cache : local;
    rc.gaussians.assign(model.gaussians.size(), RenderCache::PerGaussian{});
    rc.splats.clear();
    rc.splat_to_gaussian.clear();
    rc.background = background;

    const DeformNetParams* net = model.net_enabled ? &model.net : nullptr;
    Fnv hash;
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        const Gaussian4D& g = model.gaussians[i];
        RenderCache::PerGaussian& state = rc.gaussians[i];
        const bool live = slice_full(g, model.track_for(i), net, t, model.velocity_enabled,
                                     model.modulated_opacity, state);
        hash.add(live ? 1u : 0u);
        if (!live) continue;
        // discrete gates whose flips invalidate finite-difference probes
        for (int c = 0; c < 3; ++c) hash.add(g.rgb[c] > 0.0 && g.rgb[c] < 1.0 ? 1u : 0u);
        if (net != nullptr) {
            const Vec4 s = scales(g);
            for (int c = 0; c < 4; ++c)
                hash.add(s[c] + state.residuals.ds[static_cast<std::size_t>(c)] > kScaleFloor ? 1u
                                                                                              : 0u);
        }
        const auto splat = project(state.sliced.mean3, state.sliced.cov3, cam);
        state.projected = splat.has_value();
        hash.add(state.projected ? 1u : 0u);
        if (!state.projected) continue;
        state.splat = *splat;
        state.splat_index = static_cast<int>(rc.splats.size());
        rc.splats.push_back({splat->mean2, splat->cov2, splat->depth, state.sliced.eff_opacity,
                             state.sliced.rgb});
        rc.splat_to_gaussian.push_back(static_cast<int>(i));
    }

    Frame frame = rasterize(rc.splats, cam, background, &rc.raster, kTruncationSigmas, threads);
    hash.add(rc.raster.decision_hash);
    rc.decision_hash = hash.h;
    return frame;
}

namespace {

// Gradient of the isoclinic-pair rotation with respect to the two (normalized)
// quaternions: both isoclinic maps are linear in their quaternion, so project
// the matrix gradient onto the four basis matrices.
Quat isoclinic_grad(const Mat4& dmat, bool left) {
    Quat out{0, 0, 0, 0};
    const Quat basis[4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    double* slots[4] = {&out.w, &out.x, &out.y, &out.z};
    for (int c = 0; c < 4; ++c) {
        const Mat4 bm = left ? left_isoclinic(basis[c]) : right_isoclinic(basis[c]);
        double acc = 0.0;
        for (int i = 0; i < 16; ++i) acc += dmat.m[static_cast<std::size_t>(i)] * bm.m[static_cast<std::size_t>(i)];
        *slots[c] = acc;
    }
    return out;
}

Quat normalize_backward(Quat pre, Quat g_hat) {
    const double n = pre.norm();
    const Quat hat = {pre.w / n, pre.x / n, pre.y / n, pre.z / n};
    const double proj = hat.w * g_hat.w + hat.x * g_hat.x + hat.y * g_hat.y + hat.z * g_hat.z;
    return {(g_hat.w - hat.w * proj) / n, (g_hat.x - hat.x * proj) / n,
            (g_hat.y - hat.y * proj) / n, (g_hat.z - hat.z * proj) / n};
}

} // namespace

ModelGrads render_backward(const SceneModel& model, const Camera& cam, double t,
                           const Frame& dframe, const RenderCache& cache, int threads) {
    ModelGrads grads = ModelGrads::zeros_like(model);
    const std::vector<SplatGrads> splat_grads = rasterize_backward(
        cache.splats, cam, cache.background, cache.raster, dframe, kTruncationSigmas, threads);

    std::vector<double> anchor_w;
    DeformInputGrads net_in;
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        const RenderCache::PerGaussian& state = cache.gaussians[i];
        if (state.culled || !state.projected) continue;
        const Gaussian4D& g = model.gaussians[i];
        const VelocityTrack& track = model.track_for(i);
        const SplatGrads& sg = splat_grads[static_cast<std::size_t>(state.splat_index)];
        GaussianGrads& gg = grads.gaussians[i];

        // projection backward
        const Vec3 p = world_to_cam(cam, state.sliced.mean3);
        const double invz = 1.0 / p.z;
        const double j00 = cam.fx * invz;
        const double j02 = -cam.fx * p.x * invz * invz;
        const double j11 = cam.fy * invz;
        const double j12 = -cam.fy * p.y * invz * invz;
        const Mat3 vc = cam.rot * state.sliced.cov3 * cam.rot.transposed();

        // dV = J^T G J with G the symmetric 2x2 gradient
        const double ga = sg.cov2.a, gb = sg.cov2.b, gc = sg.cov2.c;
        Mat3 dv;
        dv(0, 0) = j00 * ga * j00;
        dv(0, 1) = j00 * gb * j11;
        dv(0, 2) = j00 * (ga * j02 + gb * j12);
        dv(1, 0) = j11 * gb * j00;
        dv(1, 1) = j11 * gc * j11;
        dv(1, 2) = j11 * (gb * j02 + gc * j12);
        dv(2, 0) = j02 * ga * j00 + j12 * gb * j00;
        dv(2, 1) = j02 * gb * j11 + j12 * gc * j11;
        dv(2, 2) = j02 * (ga * j02 + gb * j12) + j12 * (gb * j02 + gc * j12);

        // dJ = 2 G J V (2x3); only the four structural entries matter
        const double jv0[3] = {j00 * vc(0, 0) + j02 * vc(2, 0), j00 * vc(0, 1) + j02 * vc(2, 1),
                               j00 * vc(0, 2) + j02 * vc(2, 2)};
        const double jv1[3] = {j11 * vc(1, 0) + j12 * vc(2, 0), j11 * vc(1, 1) + j12 * vc(2, 1),
                               j11 * vc(1, 2) + j12 * vc(2, 2)};
        const double dj00 = 2.0 * (ga * jv0[0] + gb * jv1[0]);
        const double dj02 = 2.0 * (ga * jv0[2] + gb * jv1[2]);
        const double dj11 = 2.0 * (gb * jv0[1] + gc * jv1[1]);
        const double dj12 = 2.0 * (gb * jv0[2] + gc * jv1[2]);

        Vec3 dp{};
        dp.x = sg.mean2.x * j00 + dj02 * (-cam.fx * invz * invz);
        dp.y = sg.mean2.y * j11 + dj12 * (-cam.fy * invz * invz);
        dp.z = sg.mean2.x * (-cam.fx * p.x * invz * invz) +
               sg.mean2.y * (-cam.fy * p.y * invz * invz) + dj00 * (-cam.fx * invz * invz) +
               dj11 * (-cam.fy * invz * invz) + dj02 * (2.0 * cam.fx * p.x * invz * invz * invz) +
               dj12 * (2.0 * cam.fy * p.y * invz * invz * invz);

        const Mat3 rot_t = cam.rot.transposed();
        const Vec3 dmean3 = rot_t * dp;
        const Mat3 dcov3 = rot_t * dv * cam.rot;

        // slice backward
        const double sig = opacity(g);
        double dkern = 0.0;
        if (model.modulated_opacity) {
            gg.opacity_logit += sg.eff_opacity * state.kernel * sig * (1.0 - sig);
            dkern = sg.eff_opacity * sig;
        } else {
            gg.opacity_logit += sg.eff_opacity * sig * (1.0 - sig);
        }
        for (int c = 0; c < 3; ++c)
            if (g.rgb[c] > 0.0 && g.rgb[c] < 1.0) gg.rgb[c] += sg.rgb[c];

        Mat4 g4{};
        Vec4 dmean4{};
        const double tt = state.cov4.tt();
        const double dt = t - g.mean4.w;
        const Vec3 xt = state.cov4.cross_column();

        // mean3 = mu_xyz + (dt / tt) xt (+ displacement)
        dmean4.x += dmean3.x;
        dmean4.y += dmean3.y;
        dmean4.z += dmean3.z;
        const double s_drift = dt / tt;
        for (int k = 0; k < 3; ++k) g4(k, 3) += dmean3[k] * s_drift;
        dmean4.w += -dot(dmean3, xt) / tt;
        g4(3, 3) += -(s_drift / tt) * dot(dmean3, xt);
        if (model.velocity_enabled) {
            dmean4.w += -dot(dmean3, velocity_at(track, g.mean4.w));
            anchor_w.assign(track.anchors.size(), 0.0);
            accumulate_displacement_anchor_weights(track, g.mean4.w, t, 1.0, anchor_w);
            auto& tg = grads.track_anchors[model.per_gaussian_tracks ? i : 0];
            for (std::size_t k = 0; k < anchor_w.size(); ++k) tg[k] += anchor_w[k] * dmean3;
        }

        // temporal kernel exp(-dt^2 / (2 tt))
        dmean4.w += dkern * state.kernel * dt / tt;
        g4(3, 3) += dkern * state.kernel * 0.5 * dt * dt / (tt * tt);

        // Schur complement cov3 = xx - xt xt^T / tt
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) g4(a, b) += dcov3(a, b);
        for (int k = 0; k < 3; ++k) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) acc += (dcov3(k, j) + dcov3(j, k)) * xt[j];
            g4(k, 3) += -acc / tt;
        }
        double quad = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) quad += dcov3(a, b) * xt[a] * xt[b];
        g4(3, 3) += quad / (tt * tt);

        // assemble backward: Sigma = M M^T, M = R diag(s)
        const Quat ql_hat = normalized(state.q_l_def);
        const Quat qr_hat = normalized(state.q_r_def);
        const Mat4 lmat = left_isoclinic(ql_hat);
        const Mat4 rmat = right_isoclinic(qr_hat);
        const Mat4 rot4 = lmat * rmat;
        Mat4 mmat;
        for (int r = 0; r < 4; ++r)
            for (int k = 0; k < 4; ++k) mmat(r, k) = rot4(r, k) * state.scales4[k];
        Mat4 dm;
        for (int r = 0; r < 4; ++r)
            for (int k = 0; k < 4; ++k) {
                double acc = 0.0;
                for (int j = 0; j < 4; ++j) acc += (g4(r, j) + g4(j, r)) * mmat(j, k);
                dm(r, k) = acc;
            }
        Vec4 ds4{};
        Mat4 dr4;
        for (int k = 0; k < 4; ++k) {
            double acc = 0.0;
            for (int r = 0; r < 4; ++r) {
                acc += dm(r, k) * rot4(r, k);
                dr4(r, k) = dm(r, k) * state.scales4[k];
            }
            ds4[k] = acc;
        }
        const Mat4 dlmat = dr4 * rmat.transposed();
        const Mat4 drmat = lmat.transposed() * dr4;
        const Quat dql_hat = isoclinic_grad(dlmat, true);
        const Quat dqr_hat = isoclinic_grad(drmat, false);
        const Quat dql_def = normalize_backward(state.q_l_def, dql_hat);
        const Quat dqr_def = normalize_backward(state.q_r_def, dqr_hat);

        if (model.net_enabled) {
            const DeformedGeometryGrads dg = apply_deformation_backward(
                g, state.residuals.ds, state.residuals.dq, state.residuals.dq_r, ds4, dql_def,
                dqr_def);
            gg.log_scales += dg.log_scales;
            gg.q_l = gg.q_l + dg.q_l;
            gg.q_r = gg.q_r + dg.q_r;
            const std::array<double, 12> g_out = {
                dg.ds[0],   dg.ds[1],   dg.ds[2],   dg.ds[3],   dg.dq.w,   dg.dq.x,
                dg.dq.y,    dg.dq.z,    dg.dq_r.w,  dg.dq_r.x,  dg.dq_r.y, dg.dq_r.z};
            net_in.mu3 = Vec3{};
            net_in.mu_t = 0.0;
            net_in.t_q = 0.0;
            net_in.vel_feat.assign(track.anchors.size() * 3, 0.0);
            const std::vector<double> feat = velocity_feature(track, model.velocity_enabled);
            deform_backward(model.net, g.mean4.xyz(), g.mean4.w, t, feat, state.net_cache, g_out,
                            grads.net, net_in);
            dmean4.x += net_in.mu3.x;
            dmean4.y += net_in.mu3.y;
            dmean4.z += net_in.mu3.z;
            dmean4.w += net_in.mu_t;
            if (model.velocity_enabled) {
                auto& tg = grads.track_anchors[model.per_gaussian_tracks ? i : 0];
                for (std::size_t k = 0; k < track.anchors.size(); ++k)
                    for (int c = 0; c < 3; ++c)
                        tg[k][c] += net_in.vel_feat[3 * k + static_cast<std::size_t>(c)];
            }
        } else {
            for (int k = 0; k < 4; ++k) gg.log_scales[k] += ds4[k] * state.scales4[k];
            gg.q_l = gg.q_l + dql_def;
            gg.q_r = gg.q_r + dqr_def;
        }
        gg.mean4 += dmean4;
    }
    return grads;
}

Frame render_reference(const SceneModel& model, const Camera& cam, double t, Vec3 background) {
    model.validate();
    const DeformNetParams* net = model.net_enabled ? &model.net : nullptr;
    std::vector<RenderSplat> splats;
    for (std::size_t i = 0; i < model.gaussians.size(); ++i) {
        const auto sliced = slice_gaussian(model.gaussians[i], model.track_for(i), net, t,
                                           model.velocity_enabled, model.modulated_opacity);
        if (!sliced) continue;
        const auto splat = project(sliced->mean3, sliced->cov3, cam);
        if (!splat) continue;
        splats.push_back({splat->mean2, splat->cov2, splat->depth, sliced->eff_opacity,
                          sliced->rgb});
    }
    const std::vector<int> order = depth_order(splats);

    Frame frame(cam.width, cam.height);
    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            double trans = 1.0;
            Vec3 color{};
            for (const int sid : order) {
                const RenderSplat& s = splats[static_cast<std::size_t>(sid)];
                const double det = s.cov2.det();
                const double dx = px + 0.5 - s.mean2.x;
                const double dy = py + 0.5 - s.mean2.y;
                const double q = (s.cov2.c * dx * dx - 2.0 * s.cov2.b * dx * dy +
                                  s.cov2.a * dy * dy) /
                                 det;
                const double alpha = std::min(s.eff_opacity * std::exp(-0.5 * q), kAlphaClamp);
                color += (trans * alpha) * s.rgb;
                trans *= 1.0 - alpha;
            }
            color += trans * background;
            for (int c = 0; c < 3; ++c) frame.at(px, py, c) = color[c];
        }
    }
    return frame;
}

} // namespace velsplat
