#pragma once

#include "mekiv/charfun.hpp"
#include "mekiv/datagen.hpp"
#include "mekiv/kernel.hpp"
#include "mekiv/krr.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mekiv {

struct Step2Config {
    int alpha_count = 64;
    std::size_t pair_cap = 20000;
    double initial_step = 0.1;
    int max_iters = 2000;
    /// Stop once the relative loss improvement over `patience` iterations falls below tol.
    double tol = 1e-6;
    int patience = 20;
};

struct MekivConfig {
    std::vector<double> lambda_grid = default_ridge_grid();
    std::vector<double> xi_grid = default_ridge_grid();
    Step2Config step2;
    std::uint64_t seed = 0;
};

/// Stage-1 embeddings of N|Z and (M,N)|Z on the standardized scale. Only the
/// corrupted treatment coordinate enters the embeddings; the remaining treatment
/// coordinates are carried in init_x.
struct Stage1Output {
    Standardizer z_std;
    Standardizer x_std;
    PointList z1;
    Eigen::VectorXd m1;
    Eigen::VectorXd n1;
    /// Standardized (M1 + N1) / 2, all treatment coordinates.
    PointList init_x;
    KernelSpec kernel_z;
    KernelSpec kernel_x;
    CmeEmbedding embedding_n;
    CmeEmbedding embedding_mn;
    double lambda_n;
    double lambda_mn;
};

/// Fits standardization and both embeddings from raw stage-1 arrays. Requires at
/// least 20 rows.
Stage1Output step1(const Eigen::Ref<const PointList>& z1, const Eigen::Ref<const PointList>& m1,
                   const Eigen::Ref<const PointList>& n1, const std::vector<double>& lambda_grid);

struct TrainingPair {
    double alpha;
    Eigen::Index zcheck_index;
    Complex label;
};

/// Step-2 supervision stored densely over the alpha x z-check cross product. A pair
/// participates when its mask entry is 1.
struct TrainingSet {
    Eigen::VectorXd alphas;
    PointList zcheck;
    Eigen::MatrixXd gamma_n;
    Eigen::MatrixXd gamma_mn;
    Eigen::MatrixXcd labels;
    Eigen::MatrixXd mask;
    std::size_t dropped_pairs = 0;

    std::size_t size() const;
    std::vector<TrainingPair> pairs() const;
};

/// Draws alpha_count frequencies from the X-kernel spectral measure, forms the
/// cross product with zcheck (standardized), subsamples uniformly to pair_cap and
/// labels every kept pair with w_MN. Degenerate labels are dropped and counted.
TrainingSet make_training_pairs(const Stage1Output& stage1, const Eigen::Ref<const PointList>& zcheck,
                                int alpha_count, std::size_t pair_cap, std::uint64_t seed);

/// Empirical Step-2 objective mean_p |w_X(alpha_p, z_p) - label_p|^2 as a function
/// of the latent samples x and log(lambda_X). gamma_X is recomputed for every lambda
/// from one eigendecomposition of K_ZZ.
class LatentObjective {
public:
    LatentObjective(const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z, const TrainingSet& pairs);

    struct Evaluation {
        double loss = 0.0;
        Eigen::VectorXd grad_x;
        double grad_log_lambda = 0.0;
        std::size_t used_pairs = 0;
        std::size_t dropped_pairs = 0;
    };

    Evaluation evaluate(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda, bool with_gradient) const;

    /// s1 x |zcheck| matrix of gamma_X(zcheck) at ridge lambda.
    Eigen::MatrixXd gamma(double lambda) const;

    Eigen::Index sample_count() const { return s_; }
    /// Number of retained eigenpairs of K_ZZ.
    Eigen::Index rank() const { return eigenvalues_.size(); }

private:
    const TrainingSet& pairs_;
    Eigen::Index s_;
    Eigen::MatrixXd basis_;       // retained eigenvectors of K_ZZ
    Eigen::VectorXd eigenvalues_;
    Eigen::MatrixXd projected_;   // basis' K_{Z zcheck}
};

double step2_loss(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda, const TrainingSet& pairs,
                  const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z);

struct Step2Gradient {
    Eigen::VectorXd grad_x;
    double grad_log_lambda;
};

Step2Gradient step2_grad(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda, const TrainingSet& pairs,
                         const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z);

struct LatentRecovery {
    /// Standardized scale.
    Eigen::VectorXd x_hat;
    double lambda_x;
    std::vector<double> loss_trace;
    std::size_t dropped_pair_count = 0;
    int iterations = 0;
};

/// Gradient descent with backtracking from x = (M1 + N1)/2, lambda_X = lambda_N.
LatentRecovery optimize_latents(const Stage1Output& stage1, const TrainingSet& pairs, const Step2Config& config);

/// f(x) = beta' K_{anchors, x} fitted on standardized data; predict() takes and
/// returns raw-scale values.
class StructuralFn {
public:
    StructuralFn(PointList anchors, Eigen::VectorXd beta, KernelSpec kernel_x, Standardizer x_std, double y_mean,
                 double y_scale, double lambda, double xi);

    double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    Eigen::VectorXd predict_many(const Eigen::Ref<const PointList>& xs) const;

    const PointList& anchors() const { return anchors_; }
    const Eigen::VectorXd& beta() const { return beta_; }
    const KernelSpec& kernel_x() const { return kernel_x_; }
    const Standardizer& x_std() const { return x_std_; }
    double y_mean() const { return y_mean_; }
    double y_scale() const { return y_scale_; }
    double lambda() const { return lambda_; }
    double xi() const { return xi_; }

private:
    PointList anchors_;
    Eigen::VectorXd beta_;
    KernelSpec kernel_x_;
    Standardizer x_std_;
    double y_mean_;
    double y_scale_;
    double lambda_;
    double xi_;
};

/// Inputs to the second-stage structural regression, all on the standardized
/// scale except the outcomes.
struct Stage2Inputs {
    PointList anchors;  // s1 treatment samples (observed, proxy or recovered)
    KernelSpec kernel_x;
    Standardizer x_std;
    double lambda;
    PointList z1;
    KernelSpec kernel_z;
    PointList z2;
    Eigen::VectorXd y1;
    Eigen::VectorXd y2;
};

/// Squared stage-1 prediction error of <f, mu_{X|z}> for a beta fitted with ridge xi.
struct XiScore {
    double xi;
    double loss;
};

/// beta = (V V' + s2 xi K_XX)^{-1} V y2 with V = K_XX (K_ZZ + s1 lambda I)^{-1} K_{Z Z2};
/// xi picked from the grid by stage-1 validation, ties toward larger xi.
StructuralFn step3(const Stage2Inputs& in, const std::vector<double>& xi_grid,
                   std::vector<XiScore>* scores = nullptr);

struct MekivFit {
    StructuralFn structural;
    LatentRecovery latents;
    double lambda_n;
    double lambda_mn;
};

MekivFit mekiv_fit(const DesignSplits& splits, const MekivConfig& config);

}  // namespace mekiv
