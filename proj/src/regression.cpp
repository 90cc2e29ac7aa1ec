#include "mbsde/regression.hpp"

#include "mbsde/errors.hpp"

#include <cmath>
#include <sstream>

namespace mbsde {

std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> e(vars, 0);
    // Grade by total degree so the constant comes first.
    for (int total = 0; total <= degree; ++total) {
        auto rec = [&](auto&& self, int k, int left) -> void {
            if (k == vars - 1) {
                e[k] = left;
                out.push_back(e);
                return;
            }
            for (int a = left; a >= 0; --a) {
                e[k] = a;
                self(self, k + 1, left - a);
            }
        };
        if (vars == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(rec, 0, total);
        }
    }
    return out;
}

Regression::Regression(const Mat& regressors, int degree) : degree_(degree) {
    if (degree < 0) throw BasisError("basis degree must be nonnegative");
    const Eigen::Index rows = regressors.rows();
    if (rows < 1) throw BasisError("regression needs at least one sample");

    std::vector<Vec> standardized;
    for (Eigen::Index c = 0; c < regressors.cols(); ++c) {
        const Vec col = regressors.col(c);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().mean());
        if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
        standardized.push_back(((col.array() - mean) / sd).matrix());
    }

    const auto exps = monomial_exponents(static_cast<int>(standardized.size()), degree);
    design_.resize(rows, static_cast<Eigen::Index>(exps.size()));
    for (std::size_t j = 0; j < exps.size(); ++j) {
        Vec column = Vec::Ones(rows);
        for (std::size_t v = 0; v < standardized.size(); ++v) {
            for (int p = 0; p < exps[j][v]; ++p) column.array() *= standardized[v].array();
        }
        design_.col(static_cast<Eigen::Index>(j)) = column;
    }
    if (rows < design_.cols()) {
        std::ostringstream os;
        os << "regression has " << rows << " samples for " << design_.cols() << " basis functions";
        throw BasisError(os.str());
    }
    qr_.compute(design_);
    if (qr_.rank() < design_.cols()) {
        std::ostringstream os;
        os << "rank-deficient regression design: rank " << qr_.rank() << " of " << design_.cols();
        throw BasisError(os.str());
    }
}

Mat Regression::coefficients(const Mat& targets) const { return qr_.solve(targets); }

Mat Regression::fit(const Mat& targets) const {
    Mat fitted = design_ * coefficients(targets);
    for (Eigen::Index c = 0; c < targets.cols(); ++c) {
        const double first = targets(0, c);
        if ((targets.col(c).array() == first).all()) fitted.col(c).setConstant(first);
    }
    return fitted;
}

}  // namespace mbsde
