#pragma once

#include "fbc/tensor.hpp"

namespace fbc {

/// Maps real latent activations to (0,1): (tanh(e)+1)/2 entrywise.
Tensor squash(const Tensor& e);
double squash(double e);

/// Soft relaxation of rounding. For each entry,
///   zdot = exp(-sigma (zbar-1)^2) / (exp(-sigma (zbar-1)^2) + exp(-sigma zbar^2)),
/// which reduces to logistic(sigma (2 zbar - 1)).
Tensor soft_binarize(const Tensor& zbar, double sigma);
double soft_binarize(double zbar, double sigma);

/// Entrywise nearest integer in {0,1}; exactly 0.5 rounds up.
Tensor hard_binarize(const Tensor& zbar);
double hard_binarize(double zbar);

/// Derivative of the soft relaxation: 2 sigma zdot (1 - zdot).
double soft_binarize_grad(double zbar, double sigma);

}  // namespace fbc
