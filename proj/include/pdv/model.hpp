#pragma once

#include <stdexcept>

#include "pdv/history.hpp"
#include "pdv/kernel.hpp"

namespace pdv {

// sigma = beta0 + beta1 R1 + beta2 sqrt(R2), with R1 (K1 against sigma dW) and
// R2 (K2 against sigma^2 ds) integrated from -Delta.
struct ModelParams {
  Betas betas;
  KernelSpec k1;
  KernelSpec k2;
  double s0 = 1.0;
  double history_length = kInf;

  void validate() const {
    if (!(betas.beta0 >= 0.0)) throw std::invalid_argument("beta0 must be >= 0");
    if (!(betas.beta2 >= 0.0)) throw std::invalid_argument("beta2 must be >= 0");
    if (!std::isfinite(betas.beta1)) throw std::invalid_argument("beta1 must be finite");
    if (!(s0 > 0.0) || !std::isfinite(s0)) throw std::invalid_argument("s0 must be > 0");
    if (!(history_length >= 0.0)) throw std::invalid_argument("history length must be >= 0");
  }
};

}  // namespace pdv
