#include "velsplat/metrics.hpp"

#include <cmath>
#include <vector>

#include "velsplat/errors.hpp"

namespace velsplat {

namespace {

void check_pair(const Frame& a, const Frame& b) {
    if (a.width != b.width || a.height != b.height)
        throw ConfigError("frame dimensions do not match");
    if (a.width <= 0 || a.height <= 0) throw ConfigError("empty frame");
}

void check_ssim_config(const Frame& a, const LossConfig& cfg) {
    if (cfg.ssim_window < 3 || cfg.ssim_window % 2 == 0)
        throw ConfigError("ssim window must be odd and at least 3");
    if (a.width < cfg.ssim_window || a.height < cfg.ssim_window)
        throw ConfigError("frame smaller than the ssim window");
    if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw ConfigError("lambda outside [0,1]");
}

std::vector<double> gaussian_taps(int window, double sigma) {
    const int half = window / 2;
    std::vector<double> w(static_cast<std::size_t>(window));
    double total = 0.0;
    for (int i = 0; i < window; ++i) {
        const double d = i - half;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += w[static_cast<std::size_t>(i)];
    }
    for (double& v : w) v /= total;
    return w;
}

// Valid-mode 1D correlation along x: out is w - (window-1) columns wide.
void corr_x(const std::vector<double>& in, int w, int h, const std::vector<double>& taps,
            std::vector<double>& out) {
    const int k = static_cast<int>(taps.size());
    const int ow = w - k + 1;
    out.assign(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i)
                acc += taps[static_cast<std::size_t>(i)] *
                       in[static_cast<std::size_t>(y) * w + x + i];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
}

// Valid-mode 1D correlation along y.
void corr_y(const std::vector<double>& in, int w, int h, const std::vector<double>& taps,
            std::vector<double>& out) {
    const int k = static_cast<int>(taps.size());
    const int oh = h - k + 1;
    out.assign(static_cast<std::size_t>(w) * oh, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i)
                acc += taps[static_cast<std::size_t>(i)] *
                       in[static_cast<std::size_t>(y + i) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
}

// Separable valid-mode Gaussian window means: E[plane] per window center.
void window_means(const std::vector<double>& plane, int w, int h,
                  const std::vector<double>& taps, std::vector<double>& scratch,
                  std::vector<double>& out) {
    corr_x(plane, w, h, taps, scratch);
    corr_y(scratch, w - static_cast<int>(taps.size()) + 1, h, taps, out);
}

// Adjoint of window_means: scatters one value per window center back over the
// window support with the same separable weights.
void scatter_windows(const std::vector<double>& centers, int w, int h,
                     const std::vector<double>& taps, std::vector<double>& out) {
    const int k = static_cast<int>(taps.size());
    const int ow = w - k + 1;
    const int oh = h - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int i = 0; i < k; ++i) {
            const double t = taps[static_cast<std::size_t>(i)];
            for (int x = 0; x < ow; ++x)
                rows[static_cast<std::size_t>(y + i) * ow + x] +=
                    t * centers[static_cast<std::size_t>(y) * ow + x];
        }
    out.assign(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = rows[static_cast<std::size_t>(y) * ow + x];
            if (v == 0.0) continue;
            for (int i = 0; i < k; ++i)
                out[static_cast<std::size_t>(y) * w + x + i] +=
                    taps[static_cast<std::size_t>(i)] * v;
        }
}

// Mean SSIM over valid windows for one channel plane; optionally accumulates
// d(mean SSIM)/dx into grad_x (scaled by grad_scale).
double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int w, int h,
                  const LossConfig& cfg, std::vector<double>* grad_x, double grad_scale) {
    const std::vector<double> taps = gaussian_taps(cfg.ssim_window, cfg.ssim_sigma);
    const int ow = w - cfg.ssim_window + 1;
    const int oh = h - cfg.ssim_window + 1;
    const std::size_t n = static_cast<std::size_t>(ow) * oh;

    std::vector<double> scratch, mu_x, mu_y, e_xx, e_yy, e_xy;
    window_means(x, w, h, taps, scratch, mu_x);
    window_means(y, w, h, taps, scratch, mu_y);
    std::vector<double> plane(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) plane[i] = x[i] * x[i];
    window_means(plane, w, h, taps, scratch, e_xx);
    for (std::size_t i = 0; i < y.size(); ++i) plane[i] = y[i] * y[i];
    window_means(plane, w, h, taps, scratch, e_yy);
    for (std::size_t i = 0; i < x.size(); ++i) plane[i] = x[i] * y[i];
    window_means(plane, w, h, taps, scratch, e_xy);

    // Per-window SSIM plus the window-constant pieces of its x-gradient:
    // dS/dx_i = w_i * (P + Q x_i + R y_i).
    std::vector<double> pmap, qmap, rmap;
    if (grad_x != nullptr) {
        pmap.assign(n, 0.0);
        qmap.assign(n, 0.0);
        rmap.assign(n, 0.0);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double mx = mu_x[i];
        const double my = mu_y[i];
        const double vx = e_xx[i] - mx * mx;
        const double vy = e_yy[i] - my * my;
        const double vxy = e_xy[i] - mx * my;
        const double a1 = 2.0 * mx * my + cfg.ssim_c1;
        const double a2 = 2.0 * vxy + cfg.ssim_c2;
        const double b1 = mx * mx + my * my + cfg.ssim_c1;
        const double b2 = vx + vy + cfg.ssim_c2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (grad_x != nullptr) {
            const double inv_bb = 1.0 / (b1 * b2);
            const double q = -2.0 * s / b2;
            const double r = 2.0 * a1 * inv_bb;
            const double p = 2.0 * my * a2 * inv_bb - 2.0 * mx * s / b1 - q * mx - r * my;
            pmap[i] = p;
            qmap[i] = q;
            rmap[i] = r;
        }
    }

    if (grad_x != nullptr) {
        const double scale = grad_scale / static_cast<double>(n);
        std::vector<double> acc;
        scatter_windows(pmap, w, h, taps, acc);
        for (std::size_t i = 0; i < x.size(); ++i) (*grad_x)[i] += scale * acc[i];
        scatter_windows(qmap, w, h, taps, acc);
        for (std::size_t i = 0; i < x.size(); ++i) (*grad_x)[i] += scale * acc[i] * x[i];
        scatter_windows(rmap, w, h, taps, acc);
        for (std::size_t i = 0; i < x.size(); ++i) (*grad_x)[i] += scale * acc[i] * y[i];
    }
    return total / static_cast<double>(n);
}

std::vector<double> channel_plane(const Frame& f, int c) {
    std::vector<double> out(static_cast<std::size_t>(f.width) * f.height);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
            out[static_cast<std::size_t>(y) * f.width + x] = f.at(x, y, c);
    return out;
}

double ssim_impl(const Frame& a, const Frame& b, const LossConfig& cfg, Frame* grad,
                 double grad_scale) {
    check_pair(a, b);
    check_ssim_config(a, cfg);
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        const std::vector<double> x = channel_plane(a, c);
        const std::vector<double> y = channel_plane(b, c);
        std::vector<double> gx;
        std::vector<double>* gp = nullptr;
        if (grad != nullptr) {
            gx.assign(x.size(), 0.0);
            gp = &gx;
        }
        total += ssim_plane(x, y, a.width, a.height, cfg, gp, grad_scale / 3.0);
        if (grad != nullptr)
            for (int yy = 0; yy < a.height; ++yy)
                for (int xx = 0; xx < a.width; ++xx)
                    grad->at(xx, yy, c) += gx[static_cast<std::size_t>(yy) * a.width + xx];
    }
    return total / 3.0;
}

} // namespace

double l1_loss(const Frame& a, const Frame& b) {
    check_pair(a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) acc += std::abs(a.rgb[i] - b.rgb[i]);
    return acc / static_cast<double>(a.rgb.size());
}

double ssim(const Frame& a, const Frame& b, const LossConfig& cfg) {
    return ssim_impl(a, b, cfg, nullptr, 0.0);
}

double psnr(const Frame& a, const Frame& b) {
    check_pair(a, b);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

LossResult loss(const Frame& a, const Frame& b, const LossConfig& cfg) {
    check_pair(a, b);
    check_ssim_config(a, cfg);
    LossResult out;
    out.dframe = Frame(a.width, a.height);

    const double n = static_cast<double>(a.rgb.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        l1 += std::abs(d);
        out.dframe.rgb[i] = cfg.lambda * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
    }
    l1 /= n;

    // d(1 - SSIM)/da = -dSSIM/da, folded in via grad_scale
    const double s = ssim_impl(a, b, cfg, &out.dframe, -(1.0 - cfg.lambda));
    out.value = cfg.lambda * l1 + (1.0 - cfg.lambda) * (1.0 - s);
    return out;
}

} // namespace velsplat
