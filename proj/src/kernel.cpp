#include "mekiv/kernel.hpp"

#include "mekiv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mekiv {

KernelSpec::KernelSpec(Eigen::VectorXd lengthscales) : lengthscales_(std::move(lengthscales)) {
    if (lengthscales_.size() == 0) {
        throw PreconditionError("KernelSpec: dimension must be positive");
    }
    for (Eigen::Index d = 0; d < lengthscales_.size(); ++d) {
        const double l = lengthscales_[d];
        if (!std::isfinite(l) || l <= 0.0) {
            throw PreconditionError("KernelSpec: lengthscale " + std::to_string(d) +
                                    " must be positive and finite, got " + std::to_string(l));
        }
    }
}

KernelSpec KernelSpec::isotropic(Eigen::Index dimension, double lengthscale) {
    return KernelSpec(Eigen::VectorXd::Constant(dimension, lengthscale));
}

KernelSpec KernelSpec::slice(Eigen::Index first, Eigen::Index count) const {
    if (first < 0 || count <= 0 || first + count > dimension()) {
        throw ShapeError("KernelSpec::slice out of range");
    }
    return KernelSpec(lengthscales_.segment(first, count));
}

double rbf_eval(const Eigen::Ref<const Eigen::VectorXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& y,
                const KernelSpec& spec) {
    if (x.size() != spec.dimension() || y.size() != spec.dimension()) {
        throw ShapeError("rbf_eval: point dimension does not match kernel dimension " +
                         std::to_string(spec.dimension()));
    }
    const auto scaled = (x - y).cwiseQuotient(spec.lengthscales());
    return std::exp(-0.5 * scaled.squaredNorm());
}

Eigen::MatrixXd gram(const Eigen::Ref<const PointList>& a,
                     const Eigen::Ref<const PointList>& b,
                     const KernelSpec& spec) {
    const Eigen::Index d = spec.dimension();
    if (a.cols() != d || b.cols() != d) {
        throw ShapeError("gram: point dimension does not match kernel dimension " +
                         std::to_string(d));
    }
    const Eigen::RowVectorXd inv = spec.lengthscales().cwiseInverse().transpose();
    const Eigen::MatrixXd as = a.array().rowwise() * inv.array();
    const Eigen::MatrixXd bs = b.array().rowwise() * inv.array();

    // Direct differences keep k(x, x) == 1 exactly, unlike the norm expansion.
    Eigen::MatrixXd k(a.rows(), b.rows());
    for (Eigen::Index l = 0; l < b.rows(); ++l) {
        for (Eigen::Index j = 0; j < a.rows(); ++j) {
            double r = 0.0;
            for (Eigen::Index c = 0; c < d; ++c) {
                const double diff = as(j, c) - bs(l, c);
                r += diff * diff;
            }
            k(j, l) = std::exp(-0.5 * r);
        }
    }
    return k;
}

Eigen::VectorXd median_heuristic(const Eigen::Ref<const PointList>& samples) {
    if (samples.rows() < 2) {
        throw PreconditionError("median_heuristic: need at least 2 samples");
    }
    const Eigen::Index n = samples.rows();
    Eigen::VectorXd out(samples.cols());
    std::vector<double> gaps;
    gaps.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index d = 0; d < samples.cols(); ++d) {
        gaps.clear();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double g = std::abs(samples(i, d) - samples(j, d));
                if (g > 0.0) gaps.push_back(g);
            }
        }
        if (gaps.empty()) {
            out[d] = 1.0;
            continue;
        }
        // Lower median for even counts keeps the result an observed gap.
        const auto mid = gaps.begin() + static_cast<std::ptrdiff_t>((gaps.size() - 1) / 2);
        std::nth_element(gaps.begin(), mid, gaps.end());
        out[d] = *mid;
    }
    return out;
}

SpectralSampler::SpectralSampler(KernelSpec kernel, std::uint64_t seed)
    : kernel_(std::move(kernel)), rng_(seed) {}

Eigen::MatrixXd SpectralSampler::sample(Eigen::Index count) {
    if (count <= 0) {
        throw PreconditionError("sample_spectral: count must be positive");
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd draws(count, kernel_.dimension());
    for (Eigen::Index i = 0; i < count; ++i) {
        for (Eigen::Index d = 0; d < kernel_.dimension(); ++d) {
            draws(i, d) = normal(rng_) / kernel_.lengthscales()[d];
        }
    }
    return draws;
}

Standardizer::Standardizer(Eigen::RowVectorXd mean, Eigen::RowVectorXd scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
    if (mean_.size() != scale_.size()) {
        throw ShapeError("Standardizer: mean and scale lengths differ");
    }
}

Standardizer Standardizer::fit(const Eigen::Ref<const PointList>& samples) {
    if (samples.rows() < 1) {
        throw PreconditionError("Standardizer::fit: no samples");
    }
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    Eigen::RowVectorXd scale(samples.cols());
    const double denom = samples.rows() > 1 ? static_cast<double>(samples.rows() - 1) : 1.0;
    for (Eigen::Index d = 0; d < samples.cols(); ++d) {
        const double var = (samples.col(d).array() - mean[d]).square().sum() / denom;
        const double sd = std::sqrt(var);
        scale[d] = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;
    }
    return Standardizer(mean, scale);
}

Standardizer Standardizer::identity(Eigen::Index dimension) {
    return Standardizer(Eigen::RowVectorXd::Zero(dimension), Eigen::RowVectorXd::Ones(dimension));
}

PointList Standardizer::apply(const Eigen::Ref<const PointList>& points) const {
    if (points.cols() != dimension()) {
        throw ShapeError("Standardizer::apply: dimension mismatch");
    }
    return (points.rowwise() - mean_).array().rowwise() / scale_.array();
}

PointList Standardizer::invert(const Eigen::Ref<const PointList>& points) const {
    if (points.cols() != dimension()) {
        throw ShapeError("Standardizer::invert: dimension mismatch");
    }
    return (points.array().rowwise() * scale_.array()).rowwise() + mean_.array();
}

}  // namespace mekiv
