#pragma once

#include "velsplat/frame.hpp"

namespace velsplat {

/// Photometric loss: lambda * L1 + (1 - lambda) * (1 - SSIM).
struct LossConfig {
    double lambda = 0.8;
    int ssim_window = 11;   // odd, >= 3
    double ssim_sigma = 1.5;
    double ssim_c1 = 0.01 * 0.01; // stabilizers on unit dynamic range
    double ssim_c2 = 0.03 * 0.03;

    bool operator==(const LossConfig&) const = default;
};

/// Mean absolute difference over all channel values.
double l1_loss(const Frame& a, const Frame& b);

/// Mean local SSIM over valid (fully interior) Gaussian windows, per channel
/// then averaged. Symmetric in its arguments.
double ssim(const Frame& a, const Frame& b, const LossConfig& cfg = {});

/// 10 log10(1 / MSE) on unit range, capped at 100 dB when MSE < 1e-10.
double psnr(const Frame& a, const Frame& b);

struct LossResult {
    double value = 0.0;
    Frame dframe; // gradient with respect to the first image
};

LossResult loss(const Frame& a, const Frame& b, const LossConfig& cfg = {});

} // namespace velsplat
