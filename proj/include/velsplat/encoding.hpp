#pragma once

#include <cmath>
#include <cstddef>

#include "velsplat/errors.hpp"

namespace velsplat {

/// Frequency band counts per deformation-network input feature.
struct EncodingConfig {
    int L_mu3 = 6;
    int L_mut = 4;
    int L_tq = 4;
    int L_vel = 0;
};

inline int encoded_dim(int d, int L) { return d * (2 * L + 1); }

/// Positional encoding [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)],
/// each term a block of d components. Writes encoded_dim(d, L) values to out.
inline void encode(const double* x, int d, int L, double* out) {
    if (L < 0) throw InvalidParameterError("encode: negative band count");
    for (int i = 0; i < d; ++i) out[i] = x[i];
    double freq = 1.0;
    for (int l = 0; l < L; ++l) {
        double* s = out + d * (1 + 2 * l);
        double* c = s + d;
        for (int i = 0; i < d; ++i) {
            s[i] = std::sin(freq * x[i]);
            c[i] = std::cos(freq * x[i]);
        }
        freq *= 2.0;
    }
}

/// Accumulates d(encoded)/dx^T g_enc into g_x.
inline void encode_backward(const double* x, int d, int L, const double* g_enc, double* g_x) {
    for (int i = 0; i < d; ++i) g_x[i] += g_enc[i];
    double freq = 1.0;
    for (int l = 0; l < L; ++l) {
        const double* gs = g_enc + d * (1 + 2 * l);
        const double* gc = gs + d;
        for (int i = 0; i < d; ++i)
            g_x[i] += freq * (gs[i] * std::cos(freq * x[i]) - gc[i] * std::sin(freq * x[i]));
        freq *= 2.0;
    }
}

} // namespace velsplat
