#include "mekiv/krr.hpp"

#include "mekiv/errors.hpp"

#include <cmath>
#include <string>

namespace mekiv {

double robust_llt(const Eigen::Ref<const Eigen::MatrixXd>& a, Eigen::LLT<Eigen::MatrixXd>& llt) {
    if (!a.allFinite()) {
        throw NumericalError("factorization: matrix has non-finite entries (check kernel inputs)");
    }
    llt.compute(a);
    if (llt.info() == Eigen::Success) return 0.0;

    const double diag_scale = std::max(1.0, a.diagonal().cwiseAbs().mean());
    for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
        Eigen::MatrixXd shifted = a;
        shifted.diagonal().array() += jitter * diag_scale;
        llt.compute(shifted);
        if (llt.info() == Eigen::Success) return jitter * diag_scale;
    }
    throw NumericalError("factorization: matrix of size " + std::to_string(a.rows()) +
                         " is not positive definite even with jitter 1e-6");
}

CmeSolver::CmeSolver(PointList train_inputs, KernelSpec kernel, double lambda)
    : train_inputs_(std::move(train_inputs)), kernel_(std::move(kernel)), lambda_(lambda) {}

CmeSolver CmeSolver::fit(const Eigen::Ref<const PointList>& train_inputs, KernelSpec kernel_z,
                         double lambda) {
    if (train_inputs.rows() < 1) {
        throw PreconditionError("CmeSolver::fit: need at least one training input");
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw PreconditionError("CmeSolver::fit: lambda must be positive and finite");
    }
    CmeSolver solver(train_inputs, std::move(kernel_z), lambda);
    const auto s = static_cast<double>(train_inputs.rows());
    Eigen::MatrixXd a = gram(solver.train_inputs_, solver.train_inputs_, solver.kernel_);
    a.diagonal().array() += s * lambda;
    solver.jitter_ = robust_llt(a, solver.llt_);
    return solver;
}

Eigen::MatrixXd CmeSolver::solve(const Eigen::Ref<const Eigen::MatrixXd>& rhs) const {
    if (rhs.rows() != size()) {
        throw ShapeError("CmeSolver::solve: rhs has wrong number of rows");
    }
    return llt_.solve(rhs);
}

Eigen::VectorXd CmeSolver::gamma(const Eigen::Ref<const Eigen::VectorXd>& z) const {
    if (z.size() != kernel_.dimension()) {
        throw ShapeError("CmeSolver::gamma: query dimension mismatch");
    }
    return gamma_matrix(z.transpose());
}

Eigen::MatrixXd CmeSolver::gamma_matrix(const Eigen::Ref<const PointList>& queries) const {
    if (queries.cols() != kernel_.dimension()) {
        throw ShapeError("CmeSolver::gamma_matrix: query dimension mismatch");
    }
    return llt_.solve(gram(train_inputs_, queries, kernel_));
}

CmeEmbedding::CmeEmbedding(CmeSolver solver, PointList output_samples, KernelSpec kernel_out)
    : solver_(std::move(solver)), output_samples_(std::move(output_samples)), kernel_out_(std::move(kernel_out)) {
    if (output_samples_.rows() != solver_.size()) {
        throw ShapeError("CmeEmbedding: output sample count must equal solver size");
    }
    if (output_samples_.cols() != kernel_out_.dimension()) {
        throw ShapeError("CmeEmbedding: output dimension does not match output kernel");
    }
}

double CmeEmbedding::eval(const Eigen::Ref<const Eigen::VectorXd>& z,
                          const Eigen::Ref<const Eigen::VectorXd>& y) const {
    if (y.size() != kernel_out_.dimension()) {
        throw ShapeError("embed_eval: output point dimension mismatch");
    }
    const Eigen::VectorXd g = solver_.gamma(z);
    const Eigen::VectorXd ky = gram(output_samples_, y.transpose(), kernel_out_).col(0);
    return g.dot(ky);
}

double embed_eval(const CmeEmbedding& emb, const Eigen::Ref<const Eigen::VectorXd>& z,
                  const Eigen::Ref<const Eigen::VectorXd>& y) {
    return emb.eval(z, y);
}

std::vector<double> log_grid(double lo, double hi, int count) {
    if (count < 1 || !(lo > 0.0) || !(hi >= lo)) {
        throw PreconditionError("log_grid: need count >= 1 and 0 < lo <= hi");
    }
    std::vector<double> grid(static_cast<std::size_t>(count));
    if (count == 1) {
        grid[0] = lo;
        return grid;
    }
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < count; ++i) {
        grid[static_cast<std::size_t>(i)] = std::pow(10.0, a + (b - a) * i / (count - 1));
    }
    return grid;
}

std::vector<double> default_ridge_grid() { return log_grid(1e-7, 1.0, 10); }

HoldoutSplit holdout_split(Eigen::Index count, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw PreconditionError("holdout split: fraction must lie in (0, 1)");
    }
    HoldoutSplit split;
    for (Eigen::Index i = 0; i < count; ++i) {
        const auto before = static_cast<long long>(std::floor(static_cast<double>(i) * train_fraction));
        const auto after = static_cast<long long>(std::floor(static_cast<double>(i + 1) * train_fraction));
        (after > before ? split.train : split.validation).push_back(i);
    }
    if (split.train.empty() || split.validation.empty()) {
        throw PreconditionError("holdout split: degenerate split (empty train or validation set)");
    }
    return split;
}

double holdout_embedding_loss(const Eigen::Ref<const PointList>& train_z,
                              const Eigen::Ref<const PointList>& train_out,
                              const Eigen::Ref<const PointList>& val_z,
                              const Eigen::Ref<const PointList>& val_out,
                              const KernelSpec& kernel_z, const KernelSpec& kernel_out,
                              double lambda) {
    const CmeSolver solver = CmeSolver::fit(train_z, kernel_z, lambda);
    const Eigen::MatrixXd g = solver.gamma_matrix(val_z);
    const Eigen::MatrixXd k_cross = gram(train_out, val_out, kernel_out);
    const Eigen::MatrixXd k_train = gram(train_out, train_out, kernel_out);
    // k(o~, o~) = 1 for the RBF kernel.
    const double self = static_cast<double>(val_out.rows());
    const double cross = (g.array() * k_cross.array()).sum();
    const double quad = (g.array() * (k_train * g).array()).sum();
    return self - 2.0 * cross + quad;
}

bool prefer_candidate(double score, double value, double best_score, double best_value) {
    if (!std::isfinite(score)) return false;
    if (!std::isfinite(best_score)) return true;
    const double slack = 1e-12 * std::abs(best_score);
    if (score < best_score - slack) return true;
    return std::abs(score - best_score) <= slack && value > best_value;
}

namespace {

PointList take_rows(const Eigen::Ref<const PointList>& m, const std::vector<Eigen::Index>& idx) {
    PointList out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    return out;
}

}  // namespace

double validate_lambda(const Eigen::Ref<const PointList>& z, const Eigen::Ref<const PointList>& outputs,
                       const KernelSpec& kernel_z, const KernelSpec& kernel_out,
                       const std::vector<double>& grid, double split_fraction) {
    if (grid.empty()) throw PreconditionError("validate_lambda: empty grid");
    if (z.rows() != outputs.rows()) throw ShapeError("validate_lambda: z and outputs differ in length");
    if (grid.size() == 1) return grid.front();
    if (z.rows() < 4) throw PreconditionError("validate_lambda: need at least 4 samples");

    const HoldoutSplit split = holdout_split(z.rows(), split_fraction);
    const PointList tz = take_rows(z, split.train);
    const PointList to = take_rows(outputs, split.train);
    const PointList vz = take_rows(z, split.validation);
    const PointList vo = take_rows(outputs, split.validation);

    double best_lambda = grid.front();
    double best_score = std::numeric_limits<double>::infinity();
    for (double lambda : grid) {
        const double score = holdout_embedding_loss(tz, to, vz, vo, kernel_z, kernel_out, lambda);
        if (prefer_candidate(score, lambda, best_score, best_lambda)) {
            best_score = std::min(score, best_score);
            best_lambda = lambda;
        }
    }
    if (!std::isfinite(best_score)) {
        throw NumericalError("validate_lambda: no grid value produced a finite score");
    }
    return best_lambda;
}

}  // namespace mekiv
