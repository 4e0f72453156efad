#pragma once

#include <cmath>
#include <stdexcept>

namespace bsk::analytic {

inline double binomial_coeff(int n, int k) {
    double c = 1.0;
    for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
    return c;
}

/// Per-bit error rate after majority fusion of R independent readings on a
/// binary symmetric channel with parameter p: P(more than R/2 readings err).
inline double fused_bit_error_rate(double p, int R) {
    if (R < 1 || R % 2 == 0) throw std::invalid_argument("fused_bit_error_rate: R must be odd and positive");
    double q = 0.0;
    for (int k = R / 2 + 1; k <= R; ++k)
        q += binomial_coeff(R, k) * std::pow(p, k) * std::pow(1.0 - p, R - k);
    return q;
}

/// Per-bit mismatch rate between two independently fused witnesses of the
/// same ground truth, each at per-bit error rate q.
inline double witness_mismatch_rate(double q) { return 2.0 * q * (1.0 - q); }

/// Probability a D-bit repetition block decodes to the committed bit when
/// each position mismatches independently with rate mu: at most
/// e = (D-1)/2 mismatches.
inline double block_success_rate(double mu, int D) {
    if (D < 1 || D % 2 == 0) throw std::invalid_argument("block_success_rate: D must be odd and positive");
    const int e = (D - 1) / 2;
    double s = 0.0;
    for (int i = 0; i <= e; ++i)
        s += binomial_coeff(D, i) * std::pow(mu, i) * std::pow(1.0 - mu, D - i);
    return s;
}

/// Probability a single key-transport attempt succeeds end to end for a
/// repetition-D code over K payload bits: every block within capability.
inline double establishment_success_rate(double p, int R, int D, int K) {
    const double q = fused_bit_error_rate(p, R);
    const double mu = witness_mismatch_rate(q);
    return std::pow(block_success_rate(mu, D), K);
}

} // namespace bsk::analytic
