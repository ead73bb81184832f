#pragma once

#include "mberil/common.hpp"

namespace mberil {

/// Entropy/KL regularization weights. `beta` is always derived from kappa and
/// eta, never stored, so the identity beta = kappa*eta/(kappa+eta) holds by
/// construction.
struct RegularizationConfig {
    double kappa = 2.0;
    double eta = 2.0;
    double gamma = 0.9;
    double lambda_model = 1.0;
    double lambda_policy = 1.0;
    double lambda_qv = 1.0;
    double lambda_vq = 1.0;

    double beta() const { return kappa * eta / (kappa + eta); }

    void validate() const {
        if (!(kappa > 0.0)) throw std::invalid_argument("RegularizationConfig: kappa must be positive");
        if (!(eta > 0.0)) throw std::invalid_argument("RegularizationConfig: eta must be positive");
        if (!(gamma > 0.0 && gamma < 1.0))
            throw std::invalid_argument("RegularizationConfig: gamma must lie strictly inside (0,1)");
        if (lambda_model < 0.0 || lambda_policy < 0.0 || lambda_qv < 0.0 || lambda_vq < 0.0)
            throw std::invalid_argument("RegularizationConfig: lambda weights must be nonnegative");
    }
};

}  // namespace mberil
