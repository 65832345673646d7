#pragma once

#include "mekiv/kernel.hpp"

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <optional>
#include <stdexcept>

namespace mekiv {

using Complex = std::complex<double>;

/// Denominator modulus below which a cf ratio is treated as degenerate.
inline constexpr double kDegenerateDenominator = 1e-8;

/// Raised when the denominator of w_X or w_MN is numerically zero.
class DegenerateRatioError : public std::runtime_error {
public:
    DegenerateRatioError(double alpha, double modulus);
    double alpha() const { return alpha_; }
    double modulus() const { return modulus_; }

private:
    double alpha_;
    double modulus_;
};

/// Weighted empirical characteristic function psi(a) = sum_j w_j exp(i a x_j) of
/// 1-D anchors, optionally paired with companion anchors m_j for the joint (M, N) law.
class EmpiricalCF {
public:
    EmpiricalCF(Eigen::VectorXd weights, Eigen::VectorXd anchors);
    EmpiricalCF(Eigen::VectorXd weights, Eigen::VectorXd anchors, Eigen::VectorXd companions);

    const Eigen::VectorXd& weights() const { return weights_; }
    const Eigen::VectorXd& anchors() const { return anchors_; }
    const std::optional<Eigen::VectorXd>& companions() const { return companions_; }

private:
    Eigen::VectorXd weights_;
    Eigen::VectorXd anchors_;
    std::optional<Eigen::VectorXd> companions_;
};

Complex ecf(const EmpiricalCF& cf, double alpha);

/// d/da of ecf: sum_j i x_j w_j exp(i a x_j).
Complex ecf_dalpha(const EmpiricalCF& cf, double alpha);

/// Partial in the companion frequency at zero: sum_j i m_j w_j exp(i a n_j).
Complex joint_partial(const EmpiricalCF& cf, double alpha);

/// sum x_j g_j e^{i a x_j} / sum g_j e^{i a x_j}.
Complex w_x(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& gamma_x,
            double alpha);

/// sum m_j g^{MN}_j e^{i a n_j} / sum g^N_j e^{i a n_j}.
Complex w_mn(const Eigen::Ref<const Eigen::VectorXd>& m, const Eigen::Ref<const Eigen::VectorXd>& n,
             const Eigen::Ref<const Eigen::VectorXd>& gamma_mn,
             const Eigen::Ref<const Eigen::VectorXd>& gamma_n, double alpha);

using CfEvaluator = std::function<Complex(double)>;

/// Monte-Carlo L2(q) distance: mean over alpha draws of |cf1(a) - cf2(a)|^2.
double l2q_distance_sq(const CfEvaluator& cf1, const CfEvaluator& cf2,
                       const Eigen::Ref<const Eigen::VectorXd>& alpha_samples);

/// Closed-form squared RKHS distance between two weighted embeddings.
double rkhs_distance_sq(const Eigen::Ref<const Eigen::VectorXd>& w1, const Eigen::Ref<const PointList>& a1,
                        const Eigen::Ref<const Eigen::VectorXd>& w2, const Eigen::Ref<const PointList>& a2,
                        const KernelSpec& kernel);

}  // namespace mekiv
