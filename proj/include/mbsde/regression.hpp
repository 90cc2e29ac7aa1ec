#pragma once

#include "mbsde/linalg.hpp"

#include <Eigen/QR>

#include <vector>

namespace mbsde {

/// Least-squares projection on polynomials of total degree <= `degree` in the
/// standardized regressors. Regressors with (numerically) zero spread carry no
/// information and are dropped, so a deterministic B_0 reduces to the sample mean.
class Regression {
public:
    /// `regressors` is samples × d. Throws BasisError when the design is rank deficient
    /// or has fewer rows than columns.
    Regression(const Mat& regressors, int degree);

    /// Fitted values (samples × k) of the conditional expectation of each target column.
    /// A constant column is reproduced exactly.
    Mat fit(const Mat& targets) const;
    /// Coefficients in the internal basis (columns × k).
    Mat coefficients(const Mat& targets) const;

    int columns() const { return static_cast<int>(design_.cols()); }
    int degree() const { return degree_; }
    const Mat& design() const { return design_; }

private:
    int degree_;
    Mat design_;
    Eigen::ColPivHouseholderQR<Mat> qr_;
};

/// Exponent tuples of all monomials in `vars` variables with total degree <= degree,
/// constant first.
std::vector<std::vector<int>> monomial_exponents(int vars, int degree);

}  // namespace mbsde
