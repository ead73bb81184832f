#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace mberil {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Floor applied to log-densities before they enter exponentiated logits.
inline constexpr double kLogFloor = -30.0;

inline double floored_log(double p) {
    if (p <= 0.0) return kLogFloor;
    return std::max(std::log(p), kLogFloor);
}

/// Max-shifted log(sum(exp(v))). Returns -inf for an empty input.
inline double logsumexp(const Vec& v) {
    if (v.size() == 0) return -std::numeric_limits<double>::infinity();
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

/// Shortest decimal form that round-trips a double (17 significant digits).
inline std::string fmt_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline int sa_index(int x, int u, int n_actions) { return x * n_actions + u; }

}  // namespace mberil
