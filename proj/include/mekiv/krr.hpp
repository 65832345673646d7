#pragma once

#include "mekiv/kernel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <vector>

namespace mekiv {

/// Kernel ridge regressor for a conditional mean embedding. Holds the Cholesky
/// factor of (K_ZZ + s*lambda*I) so each gamma() query is two triangular solves.
class CmeSolver {
public:
    /// Throws NumericalError when the factorization fails even after jitter.
    static CmeSolver fit(const Eigen::Ref<const PointList>& train_inputs, KernelSpec kernel_z,
                         double lambda);

    /// (K_ZZ + s*lambda*I)^{-1} K_Zz.
    Eigen::VectorXd gamma(const Eigen::Ref<const Eigen::VectorXd>& z) const;

    /// One gamma column per query row.
    Eigen::MatrixXd gamma_matrix(const Eigen::Ref<const PointList>& queries) const;

    /// Apply (K_ZZ + s*lambda*I)^{-1} to the columns of rhs.
    Eigen::MatrixXd solve(const Eigen::Ref<const Eigen::MatrixXd>& rhs) const;

    const PointList& train_inputs() const { return train_inputs_; }
    const KernelSpec& kernel() const { return kernel_; }
    double lambda() const { return lambda_; }
    /// Extra diagonal added on top of s*lambda, zero unless jitter was needed.
    double jitter() const { return jitter_; }
    Eigen::Index size() const { return train_inputs_.rows(); }

private:
    CmeSolver(PointList train_inputs, KernelSpec kernel, double lambda);

    PointList train_inputs_;
    KernelSpec kernel_;
    double lambda_;
    double jitter_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// mu(z)(y) = sum_j gamma_j(z) k(o_j, y) for anchor points o_j.
class CmeEmbedding {
public:
    CmeEmbedding(CmeSolver solver, PointList output_samples, KernelSpec kernel_out);

    double eval(const Eigen::Ref<const Eigen::VectorXd>& z,
                const Eigen::Ref<const Eigen::VectorXd>& y) const;

    const CmeSolver& solver() const { return solver_; }
    const PointList& output_samples() const { return output_samples_; }
    const KernelSpec& kernel_out() const { return kernel_out_; }

private:
    CmeSolver solver_;
    PointList output_samples_;
    KernelSpec kernel_out_;
};

double embed_eval(const CmeEmbedding& emb, const Eigen::Ref<const Eigen::VectorXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& y);

/// count values spaced evenly in log10 between lo and hi inclusive.
std::vector<double> log_grid(double lo, double hi, int count);

/// 10 values in [1e-7, 1].
std::vector<double> default_ridge_grid();

/// Holdout indices used by validate_lambda: training rows are spread evenly
/// through the sample so a sorted input is not split into disjoint ranges.
struct HoldoutSplit {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> validation;
};
HoldoutSplit holdout_split(Eigen::Index count, double train_fraction);

/// Sum over held-out pairs of the squared RKHS error of the embedding,
/// k(o~,o~) - 2 sum_j gamma_j k(o_j,o~) + sum_jl gamma_j gamma_l k(o_j,o_l).
double holdout_embedding_loss(const Eigen::Ref<const PointList>& train_z,
                              const Eigen::Ref<const PointList>& train_out,
                              const Eigen::Ref<const PointList>& val_z,
                              const Eigen::Ref<const PointList>& val_out,
                              const KernelSpec& kernel_z, const KernelSpec& kernel_out,
                              double lambda);

/// Ridge parameter from grid minimizing the holdout embedding loss. Ties go to the
/// larger lambda.
double validate_lambda(const Eigen::Ref<const PointList>& z, const Eigen::Ref<const PointList>& outputs,
                       const KernelSpec& kernel_z, const KernelSpec& kernel_out,
                       const std::vector<double>& grid, double split_fraction = 0.5);

/// Grid-search update: true when `score` beats `best_score`, or ties it (relative
/// 1e-12) with a larger `value`. An infinite best_score always loses.
bool prefer_candidate(double score, double value, double best_score, double best_value);

/// Cholesky of a symmetric matrix with diagonal jitter escalating from 1e-10 to
/// 1e-6 (relative to the mean diagonal). Returns the jitter that was applied.
double robust_llt(const Eigen::Ref<const Eigen::MatrixXd>& a, Eigen::LLT<Eigen::MatrixXd>& llt);

}  // namespace mekiv
