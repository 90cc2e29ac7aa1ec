#pragma once

#include <Eigen/Dense>

#include <functional>

namespace mbsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Scalar function of a chart point.
using ScalarField = std::function<double(const Vec&)>;

namespace fd {

/// Fourth-order central first derivative of s -> f(s) at 0.
inline double first(const std::function<double(double)>& f, double h) {
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

/// Fourth-order central second derivative of s -> f(s) at 0.
inline double second(const std::function<double(double)>& f, double h) {
    return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h);
}

/// Directional derivative of `f` at `x` along `dir`.
inline double directional(const ScalarField& f, const Vec& x, const Vec& dir, double h) {
    return first([&](double s) { return f(x + s * dir); }, h);
}

/// Second directional derivative d^2/ds^2 f(x + s dir) at s = 0.
inline double directional2(const ScalarField& f, const Vec& x, const Vec& dir, double h) {
    return second([&](double s) { return f(x + s * dir); }, h);
}

/// Gradient by fourth-order central differences.
inline Vec gradient(const ScalarField& f, const Vec& x, double h) {
    Vec g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        g[i] = directional(f, x, Vec::Unit(x.size(), i), h);
    }
    return g;
}

}  // namespace fd

}  // namespace mbsde
