#include "fbc/binarizer.hpp"

#include <cmath>
#include <stdexcept>

namespace fbc {

double squash(double e) { return (std::tanh(e) + 1.0) * 0.5; }

Tensor squash(const Tensor& e) {
    Tensor out = e;
    for (double& x : out.data) x = squash(x);
    return out;
}

double soft_binarize(double zbar, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("soft_binarize: sigma must be positive");
    double a = zbar - 1.0;
    double num = std::exp(-sigma * a * a);
    double den = num + std::exp(-sigma * zbar * zbar);
    return num / den;
}

Tensor soft_binarize(const Tensor& zbar, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("soft_binarize: sigma must be positive");
    Tensor out = zbar;
    for (double& x : out.data) x = soft_binarize(x, sigma);
    return out;
}

double hard_binarize(double zbar) { return std::floor(zbar + 0.5); }

Tensor hard_binarize(const Tensor& zbar) {
    Tensor out = zbar;
    for (double& x : out.data) x = hard_binarize(x);
    return out;
}

double soft_binarize_grad(double zbar, double sigma) {
    double zdot = soft_binarize(zbar, sigma);
    return 2.0 * sigma * zdot * (1.0 - zdot);
}

}  // namespace fbc
