#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace mekiv {

/// Points are stored one per row: an s x d matrix holds s points of dimension d.
using PointList = Eigen::MatrixXd;

/// Gaussian RBF kernel with one lengthscale per input dimension,
/// k(x, y) = exp(-sum_d (x_d - y_d)^2 / (2 l_d^2)).
class KernelSpec {
public:
    explicit KernelSpec(Eigen::VectorXd lengthscales);
    static KernelSpec isotropic(Eigen::Index dimension, double lengthscale);

    Eigen::Index dimension() const { return lengthscales_.size(); }
    const Eigen::VectorXd& lengthscales() const { return lengthscales_; }

    /// Kernel over a subset of this kernel's coordinates.
    KernelSpec slice(Eigen::Index first, Eigen::Index count) const;

private:
    Eigen::VectorXd lengthscales_;
};

double rbf_eval(const Eigen::Ref<const Eigen::VectorXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& y,
                const KernelSpec& spec);

/// Entry (j, l) = k(a_j, b_l).
Eigen::MatrixXd gram(const Eigen::Ref<const PointList>& a,
                     const Eigen::Ref<const PointList>& b,
                     const KernelSpec& spec);

/// Per-dimension median of the nonzero pairwise absolute differences; 1.0 when a
/// dimension is constant.
Eigen::VectorXd median_heuristic(const Eigen::Ref<const PointList>& samples);

/// Draws frequencies from the normalized spectral density of an RBF kernel,
/// a zero-mean Gaussian with standard deviation 1/l per dimension.
class SpectralSampler {
public:
    SpectralSampler(KernelSpec kernel, std::uint64_t seed);

    /// count x d matrix of draws.
    Eigen::MatrixXd sample(Eigen::Index count);

    const KernelSpec& kernel() const { return kernel_; }

private:
    KernelSpec kernel_;
    std::mt19937_64 rng_;
};

/// Affine per-dimension map to zero mean and unit variance. A dimension with zero
/// spread keeps unit scale so it maps to zero without dividing by zero.
class Standardizer {
public:
    Standardizer() = default;
    Standardizer(Eigen::RowVectorXd mean, Eigen::RowVectorXd scale);

    static Standardizer fit(const Eigen::Ref<const PointList>& samples);
    static Standardizer identity(Eigen::Index dimension);

    PointList apply(const Eigen::Ref<const PointList>& points) const;
    PointList invert(const Eigen::Ref<const PointList>& points) const;

    const Eigen::RowVectorXd& mean() const { return mean_; }
    const Eigen::RowVectorXd& scale() const { return scale_; }
    Eigen::Index dimension() const { return mean_.size(); }

private:
    Eigen::RowVectorXd mean_;
    Eigen::RowVectorXd scale_;
};

}  // namespace mekiv
