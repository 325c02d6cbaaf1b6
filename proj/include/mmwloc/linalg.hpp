#pragma once

// Small dense helpers shared by the filters and the smoother. All inversions
// go through a diagonally equilibrated Cholesky factorization so that mixed
// units (seconds of ToA next to m/s of Doppler) do not look ill-conditioned.

#include "mmwloc/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace mmwloc::linalg {

inline constexpr double kMaxCondition = 1e12;

template <typename Derived>
void symmetrize(Eigen::MatrixBase<Derived>& m) {
    m = (0.5 * (m + m.transpose())).eval();
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline bool is_symmetric_psd(const Eigen::MatrixXd& m, double tol = 1e-9) {
    if (m.rows() != m.cols()) return false;
    if (!((m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff())))
        return false;
    return min_eigenvalue(m) >= -tol;
}

/// Cholesky factorization of a symmetric positive-definite matrix after
/// scaling it to unit diagonal. Solves A x = b without forming A^-1.
class SpdSolver {
public:
    explicit SpdSolver(const Eigen::MatrixXd& a) {
        if (a.rows() != a.cols()) throw InvalidArgument("SpdSolver: matrix is not square");
        const auto n = a.rows();
        scale_.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = a(i, i);
            if (!(d > 0.0) || !std::isfinite(d))
                throw NumericalFailure("SpdSolver: non-positive diagonal entry");
            scale_(i) = 1.0 / std::sqrt(d);
        }
        llt_.compute(scale_.asDiagonal() * a * scale_.asDiagonal());
        if (llt_.info() != Eigen::Success)
            throw NumericalFailure("SpdSolver: matrix is not positive definite");
        if (n > 0 && llt_.rcond() * kMaxCondition < 1.0)
            throw NumericalFailure("SpdSolver: condition number exceeds 1e12");
    }

    template <typename Rhs>
    Eigen::MatrixXd solve(const Eigen::MatrixBase<Rhs>& b) const {
        Eigen::MatrixXd scaled = scale_.asDiagonal() * b;
        return scale_.asDiagonal() * llt_.solve(scaled);
    }

    /// b^T A^-1 b for a single vector.
    double quadratic_form(const Eigen::VectorXd& b) const {
        const Eigen::VectorXd w = llt_.matrixL().solve(scale_.asDiagonal() * b);
        return w.squaredNorm();
    }

private:
    Eigen::VectorXd scale_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Indices whose diagonal entry is strictly positive. Pinned states (flat
/// terrain) have exactly zero rows and columns and are excluded.
inline std::vector<Eigen::Index> active_indices(const Eigen::MatrixXd& m) {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        if (m(i, i) > 0.0) out.push_back(i);
    return out;
}

inline Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                              const std::vector<Eigen::Index>& cols) {
    Eigen::MatrixXd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
    return out;
}

/// Lower-triangular L with L L^T = m on the active subspace, zero elsewhere.
/// Retries once with 1e-12 I added when the first factorization fails.
inline Eigen::MatrixXd lower_sqrt(const Eigen::MatrixXd& m) {
    const auto act = active_indices(m);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    if (act.empty()) return out;
    Eigen::MatrixXd sub = gather(m, act, act);
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) {
        sub.diagonal().array() += 1e-12;
        llt.compute(sub);
        if (llt.info() != Eigen::Success)
            throw NumericalFailure("lower_sqrt: factorization failed after jitter");
    }
    const Eigen::MatrixXd l = llt.matrixL();
    for (std::size_t i = 0; i < act.size(); ++i)
        for (std::size_t j = 0; j < act.size(); ++j) out(act[i], act[j]) = l(i, j);
    return out;
}

/// Right division A * B^-1 for symmetric B restricted to B's active subspace:
/// columns of the result belonging to pinned indices are zero.
inline Eigen::MatrixXd right_solve_active(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const auto act = active_indices(b);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a.rows(), b.cols());
    if (act.empty()) return out;
    std::vector<Eigen::Index> all_rows(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) all_rows[i] = i;
    const SpdSolver solver(gather(b, act, act));
    const Eigen::MatrixXd sub = solver.solve(gather(a, all_rows, act).transpose()).transpose();
    for (std::size_t j = 0; j < act.size(); ++j) out.col(act[j]) = sub.col(j);
    return out;
}

}  // namespace mmwloc::linalg
