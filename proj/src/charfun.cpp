#include "mekiv/charfun.hpp"

#include "mekiv/errors.hpp"

#include <cmath>
#include <string>

namespace mekiv {

namespace {

constexpr Complex kI{0.0, 1.0};

inline Complex cis(double t) { return {std::cos(t), std::sin(t)}; }

void check_lengths(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": weight and anchor lengths differ");
}

}  // namespace

DegenerateRatioError::DegenerateRatioError(double alpha, double modulus)
    : std::runtime_error("degenerate cf ratio: |denominator| = " + std::to_string(modulus) +
                         " at alpha = " + std::to_string(alpha)),
      alpha_(alpha),
      modulus_(modulus) {}

EmpiricalCF::EmpiricalCF(Eigen::VectorXd weights, Eigen::VectorXd anchors)
    : weights_(std::move(weights)), anchors_(std::move(anchors)) {
    check_lengths(weights_.size(), anchors_.size(), "EmpiricalCF");
}

EmpiricalCF::EmpiricalCF(Eigen::VectorXd weights, Eigen::VectorXd anchors, Eigen::VectorXd companions)
    : weights_(std::move(weights)), anchors_(std::move(anchors)), companions_(std::move(companions)) {
    check_lengths(weights_.size(), anchors_.size(), "EmpiricalCF");
    check_lengths(weights_.size(), companions_->size(), "EmpiricalCF companions");
}

Complex ecf(const EmpiricalCF& cf, double alpha) {
    Complex acc{0.0, 0.0};
    for (Eigen::Index j = 0; j < cf.anchors().size(); ++j) {
        acc += cf.weights()[j] * cis(alpha * cf.anchors()[j]);
    }
    return acc;
}

Complex ecf_dalpha(const EmpiricalCF& cf, double alpha) {
    Complex acc{0.0, 0.0};
    for (Eigen::Index j = 0; j < cf.anchors().size(); ++j) {
        acc += cf.anchors()[j] * cf.weights()[j] * cis(alpha * cf.anchors()[j]);
    }
    return kI * acc;
}

Complex joint_partial(const EmpiricalCF& cf, double alpha) {
    if (!cf.companions()) {
        throw PreconditionError("joint_partial: cf has no companion anchors");
    }
    const Eigen::VectorXd& m = *cf.companions();
    Complex acc{0.0, 0.0};
    for (Eigen::Index j = 0; j < cf.anchors().size(); ++j) {
        acc += m[j] * cf.weights()[j] * cis(alpha * cf.anchors()[j]);
    }
    return kI * acc;
}

Complex w_x(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& gamma_x,
            double alpha) {
    check_lengths(gamma_x.size(), x.size(), "w_X");
    Complex num{0.0, 0.0};
    Complex den{0.0, 0.0};
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const Complex e = gamma_x[j] * cis(alpha * x[j]);
        num += x[j] * e;
        den += e;
    }
    if (std::abs(den) < kDegenerateDenominator) throw DegenerateRatioError(alpha, std::abs(den));
    return num / den;
}

Complex w_mn(const Eigen::Ref<const Eigen::VectorXd>& m, const Eigen::Ref<const Eigen::VectorXd>& n,
             const Eigen::Ref<const Eigen::VectorXd>& gamma_mn,
             const Eigen::Ref<const Eigen::VectorXd>& gamma_n, double alpha) {
    check_lengths(gamma_mn.size(), m.size(), "w_MN");
    check_lengths(gamma_n.size(), n.size(), "w_MN");
    check_lengths(m.size(), n.size(), "w_MN");
    Complex num{0.0, 0.0};
    Complex den{0.0, 0.0};
    for (Eigen::Index j = 0; j < n.size(); ++j) {
        const Complex e = cis(alpha * n[j]);
        num += m[j] * gamma_mn[j] * e;
        den += gamma_n[j] * e;
    }
    if (std::abs(den) < kDegenerateDenominator) throw DegenerateRatioError(alpha, std::abs(den));
    return num / den;
}

double l2q_distance_sq(const CfEvaluator& cf1, const CfEvaluator& cf2,
                       const Eigen::Ref<const Eigen::VectorXd>& alpha_samples) {
    if (alpha_samples.size() == 0) throw PreconditionError("l2q_distance_sq: no alpha samples");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < alpha_samples.size(); ++i) {
        acc += std::norm(cf1(alpha_samples[i]) - cf2(alpha_samples[i]));
    }
    return acc / static_cast<double>(alpha_samples.size());
}

double rkhs_distance_sq(const Eigen::Ref<const Eigen::VectorXd>& w1, const Eigen::Ref<const PointList>& a1,
                        const Eigen::Ref<const Eigen::VectorXd>& w2, const Eigen::Ref<const PointList>& a2,
                        const KernelSpec& kernel) {
    check_lengths(w1.size(), a1.rows(), "rkhs_distance_sq");
    check_lengths(w2.size(), a2.rows(), "rkhs_distance_sq");
    const double d = w1.dot(gram(a1, a1, kernel) * w1) - 2.0 * w1.dot(gram(a1, a2, kernel) * w2) +
                     w2.dot(gram(a2, a2, kernel) * w2);
    return std::max(d, 0.0);
}

}  // namespace mekiv
