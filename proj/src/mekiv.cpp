#include "mekiv/mekiv.hpp"

#include "mekiv/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace mekiv {

namespace {

// Eigenpairs of K_ZZ below this fraction of the largest eigenvalue are dropped.
constexpr double kEigenFloor = 1e-13;

// Step-2 losses below this are rounding noise; improvements smaller than it do not count.
constexpr double kLossFloor = 1e-16;

PointList column(const Eigen::Ref<const PointList>& m, Eigen::Index c) { return m.col(c); }

}  // namespace

Stage1Output step1(const Eigen::Ref<const PointList>& z1, const Eigen::Ref<const PointList>& m1,
                   const Eigen::Ref<const PointList>& n1, const std::vector<double>& lambda_grid) {
    if (z1.rows() < 20) {
        throw PreconditionError("step1: need at least 20 stage-1 samples, got " + std::to_string(z1.rows()));
    }
    if (m1.rows() != z1.rows() || n1.rows() != z1.rows()) {
        throw ShapeError("step1: Z1, M1 and N1 must have equal lengths");
    }
    if (m1.cols() != n1.cols() || m1.cols() < 1) {
        throw ShapeError("step1: M1 and N1 must share a positive treatment dimension");
    }

    const Standardizer z_std = Standardizer::fit(z1);
    const PointList z = z_std.apply(z1);
    const PointList proxy = 0.5 * (m1 + n1);
    const Standardizer x_std = Standardizer::fit(proxy);
    const PointList ms = x_std.apply(m1);
    const PointList ns = x_std.apply(n1);
    const PointList init = x_std.apply(proxy);

    const Eigen::VectorXd m = ms.col(kCorruptedDim);
    const Eigen::VectorXd n = ns.col(kCorruptedDim);
    PointList mn(z.rows(), 2);
    mn << m, n;

    KernelSpec kernel_z(median_heuristic(z));
    KernelSpec kernel_x(median_heuristic(init));
    KernelSpec kernel_n(median_heuristic(column(ns, kCorruptedDim)));
    const Eigen::VectorXd lm = median_heuristic(column(ms, kCorruptedDim));
    KernelSpec kernel_mn(Eigen::Vector2d(lm[0], kernel_n.lengthscales()[0]));

    const double lambda_n = validate_lambda(z, n, kernel_z, kernel_n, lambda_grid);
    const double lambda_mn = validate_lambda(z, mn, kernel_z, kernel_mn, lambda_grid);

    CmeEmbedding emb_n(CmeSolver::fit(z, kernel_z, lambda_n), n, kernel_n);
    CmeEmbedding emb_mn(CmeSolver::fit(z, kernel_z, lambda_mn), mn, kernel_mn);

    return Stage1Output{z_std,    x_std,   z,     m,      n,      init,     kernel_z,
                        kernel_x, emb_n,   emb_mn, lambda_n, lambda_mn};
}

std::size_t TrainingSet::size() const { return static_cast<std::size_t>(mask.sum()); }

std::vector<TrainingPair> TrainingSet::pairs() const {
    std::vector<TrainingPair> out;
    out.reserve(size());
    for (Eigen::Index k = 0; k < mask.cols(); ++k) {
        for (Eigen::Index a = 0; a < mask.rows(); ++a) {
            if (mask(a, k) != 0.0) out.push_back({alphas[a], k, labels(a, k)});
        }
    }
    return out;
}

TrainingSet make_training_pairs(const Stage1Output& stage1, const Eigen::Ref<const PointList>& zcheck,
                                int alpha_count, std::size_t pair_cap, std::uint64_t seed) {
    if (zcheck.rows() < 1) throw PreconditionError("make_training_pairs: empty z-check list");
    if (alpha_count < 1) throw PreconditionError("make_training_pairs: alpha_count must be >= 1");
    if (pair_cap < 1) throw PreconditionError("make_training_pairs: pair_cap must be >= 1");

    TrainingSet set;
    const double lx = stage1.kernel_x.lengthscales()[kCorruptedDim];
    SpectralSampler sampler(KernelSpec::isotropic(1, lx), seed);
    set.alphas = sampler.sample(alpha_count).col(0);
    set.zcheck = zcheck;
    set.gamma_n = stage1.embedding_n.solver().gamma_matrix(zcheck);
    set.gamma_mn = stage1.embedding_mn.solver().gamma_matrix(zcheck);

    const Eigen::Index na = set.alphas.size();
    const Eigen::Index nz = zcheck.rows();
    const auto total = static_cast<std::size_t>(na * nz);
    set.mask = Eigen::MatrixXd::Zero(na, nz);
    if (total <= pair_cap) {
        set.mask.setOnes();
    } else {
        std::vector<std::size_t> all(total);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::vector<std::size_t> kept;
        kept.reserve(pair_cap);
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        std::sample(all.begin(), all.end(), std::back_inserter(kept), pair_cap, rng);
        for (std::size_t idx : kept) {
            set.mask(static_cast<Eigen::Index>(idx) % na, static_cast<Eigen::Index>(idx) / na) = 1.0;
        }
    }

    // Labels over the whole cross product by matrix products; unmasked entries are unused.
    const Eigen::VectorXd& m = stage1.m1;
    const Eigen::RowVectorXd nrow = stage1.n1.transpose();
    const Eigen::MatrixXd phase = set.alphas * nrow;
    const Eigen::MatrixXd c = phase.array().cos();
    const Eigen::MatrixXd s = phase.array().sin();
    const Eigen::MatrixXd cm = c.array().rowwise() * m.transpose().array();
    const Eigen::MatrixXd sm = s.array().rowwise() * m.transpose().array();
    const Eigen::MatrixXd num_re = cm * set.gamma_mn;
    const Eigen::MatrixXd num_im = sm * set.gamma_mn;
    const Eigen::MatrixXd den_re = c * set.gamma_n;
    const Eigen::MatrixXd den_im = s * set.gamma_n;

    set.labels = Eigen::MatrixXcd::Zero(na, nz);
    for (Eigen::Index k = 0; k < nz; ++k) {
        for (Eigen::Index a = 0; a < na; ++a) {
            if (set.mask(a, k) == 0.0) continue;
            const Complex den(den_re(a, k), den_im(a, k));
            if (std::abs(den) < kDegenerateDenominator) {
                set.mask(a, k) = 0.0;
                ++set.dropped_pairs;
                continue;
            }
            set.labels(a, k) = Complex(num_re(a, k), num_im(a, k)) / den;
        }
    }
    if (set.size() == 0) {
        throw NumericalError("make_training_pairs: every pair has a degenerate w_MN denominator; "
                             "stage-1 embeddings are unusable");
    }
    return set;
}

LatentObjective::LatentObjective(const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z,
                                 const TrainingSet& pairs)
    : pairs_(pairs), s_(z1.rows()) {
    if (pairs.gamma_n.rows() != 0 && pairs.gamma_n.rows() != s_) {
        throw ShapeError("LatentObjective: training set was built for a different stage-1 size");
    }
    if (pairs.labels.rows() != pairs.alphas.size() || pairs.labels.cols() != pairs.zcheck.rows() ||
        pairs.mask.rows() != pairs.labels.rows() || pairs.mask.cols() != pairs.labels.cols()) {
        throw ShapeError("LatentObjective: inconsistent training set shapes");
    }
    const Eigen::MatrixXd kzz = gram(z1, z1, kernel_z);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(kzz);
    if (eig.info() != Eigen::Success) throw NumericalError("LatentObjective: eigendecomposition of K_ZZ failed");
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double top = ev.maxCoeff();
    Eigen::Index first = 0;
    while (first < ev.size() && ev[first] <= kEigenFloor * top) ++first;
    const Eigen::Index rank = ev.size() - first;
    basis_ = eig.eigenvectors().rightCols(rank);
    eigenvalues_ = ev.tail(rank);
    projected_ = basis_.transpose() * gram(z1, pairs.zcheck, kernel_z);
}

Eigen::MatrixXd LatentObjective::gamma(double lambda) const {
    const Eigen::ArrayXd denom = eigenvalues_.array() + static_cast<double>(s_) * lambda;
    return basis_ * (projected_.array().colwise() / denom).matrix();
}

LatentObjective::Evaluation LatentObjective::evaluate(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda,
                                                      bool with_gradient) const {
    if (x.size() != s_) throw ShapeError("step-2 objective: latent vector has wrong length");
    const double lambda = std::exp(log_lambda);
    // gamma = U diag(1/(e + s lambda)) P; every product below goes through the
    // retained eigenbasis so its cost scales with the rank of K_ZZ.
    const Eigen::ArrayXd denom = eigenvalues_.array() + static_cast<double>(s_) * lambda;
    const Eigen::RowVectorXd inv_denom = denom.inverse().matrix().transpose();

    const Eigen::MatrixXd phase = pairs_.alphas * x.transpose();
    const Eigen::MatrixXd c = phase.array().cos();
    const Eigen::MatrixXd s = phase.array().sin();
    const Eigen::MatrixXd xc = c.array().rowwise() * x.transpose().array();
    const Eigen::MatrixXd xs = s.array().rowwise() * x.transpose().array();
    const Eigen::MatrixXd eu_re = c * basis_;
    const Eigen::MatrixXd eu_im = s * basis_;
    const Eigen::MatrixXd xeu_re = xc * basis_;
    const Eigen::MatrixXd xeu_im = xs * basis_;
    const auto scaled = [&](const Eigen::MatrixXd& m) -> Eigen::MatrixXd {
        return m.array().rowwise() * inv_denom.array();
    };
    const Eigen::MatrixXd d_re = scaled(eu_re) * projected_;
    const Eigen::MatrixXd d_im = scaled(eu_im) * projected_;
    const Eigen::MatrixXd n_re = scaled(xeu_re) * projected_;
    const Eigen::MatrixXd n_im = scaled(xeu_im) * projected_;

    const Eigen::Index na = pairs_.alphas.size();
    const Eigen::Index nz = pairs_.zcheck.rows();
    Evaluation out;
    // sens = conj(r) / D and ratio = w_X, per pair.
    Eigen::MatrixXcd sens = Eigen::MatrixXcd::Zero(na, nz);
    Eigen::MatrixXcd ratio = Eigen::MatrixXcd::Zero(na, nz);
    double total = 0.0;
    for (Eigen::Index k = 0; k < nz; ++k) {
        for (Eigen::Index a = 0; a < na; ++a) {
            if (pairs_.mask(a, k) == 0.0) continue;
            const Complex den(d_re(a, k), d_im(a, k));
            if (std::abs(den) < kDegenerateDenominator) {
                ++out.dropped_pairs;
                continue;
            }
            const Complex w = Complex(n_re(a, k), n_im(a, k)) / den;
            const Complex r = w - pairs_.labels(a, k);
            total += std::norm(r);
            ++out.used_pairs;
            sens(a, k) = std::conj(r) / den;
            ratio(a, k) = w;
        }
    }
    if (out.used_pairs == 0) {
        out.loss = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    const double inv = 1.0 / static_cast<double>(out.used_pairs);
    out.loss = total * inv;
    if (!with_gradient) return out;

    sens *= inv;
    const Complex i_unit(0.0, 1.0);
    Eigen::MatrixXcd q1(na, nz);
    Eigen::MatrixXcd q2(na, nz);
    for (Eigen::Index k = 0; k < nz; ++k) {
        for (Eigen::Index a = 0; a < na; ++a) {
            const Complex ia = i_unit * pairs_.alphas[a];
            q1(a, k) = sens(a, k) * (1.0 - ia * ratio(a, k));
            q2(a, k) = ia * sens(a, k);
        }
    }
    // R = Q gamma' = ((Q P') diag) U'.
    const Eigen::MatrixXd pt = projected_.transpose();
    const Eigen::MatrixXd bt = basis_.transpose();
    const Eigen::MatrixXd r1_re = scaled(q1.real() * pt) * bt;
    const Eigen::MatrixXd r1_im = scaled(q1.imag() * pt) * bt;
    const Eigen::MatrixXd r2_re = scaled(q2.real() * pt) * bt;
    const Eigen::MatrixXd r2_im = scaled(q2.imag() * pt) * bt;
    const Eigen::ArrayXd term1 = (c.array() * r1_re.array() - s.array() * r1_im.array()).colwise().sum().transpose();
    const Eigen::ArrayXd term2 = (c.array() * r2_re.array() - s.array() * r2_im.array()).colwise().sum().transpose();
    out.grad_x = 2.0 * (term1 + x.array() * term2).matrix();

    // dL/dgamma_j(z) = 2 Re sum_a e^{i a x_j} S (x_j - w), needed only in the eigenbasis.
    const Eigen::MatrixXcd sw = sens.cwiseProduct(ratio);
    const Eigen::MatrixXd proj_g =
        2.0 * ((xeu_re.transpose() * sens.real() - xeu_im.transpose() * sens.imag()) -
               (eu_re.transpose() * sw.real() - eu_im.transpose() * sw.imag()));

    // dgamma/dlambda = -s (K + s lambda I)^{-1} gamma.
    const double dl_dlambda = -static_cast<double>(s_) *
                              (proj_g.array() * (projected_.array().colwise() / denom.square())).sum();
    out.grad_log_lambda = lambda * dl_dlambda;
    return out;
}

double step2_loss(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda, const TrainingSet& pairs,
                  const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z) {
    return LatentObjective(z1, kernel_z, pairs).evaluate(x, log_lambda, false).loss;
}

Step2Gradient step2_grad(const Eigen::Ref<const Eigen::VectorXd>& x, double log_lambda, const TrainingSet& pairs,
                         const Eigen::Ref<const PointList>& z1, const KernelSpec& kernel_z) {
    auto e = LatentObjective(z1, kernel_z, pairs).evaluate(x, log_lambda, true);
    return {std::move(e.grad_x), e.grad_log_lambda};
}

LatentRecovery optimize_latents(const Stage1Output& stage1, const TrainingSet& pairs, const Step2Config& config) {
    if (pairs.size() == 0) throw PreconditionError("optimize_latents: no training pairs");
    const LatentObjective objective(stage1.z1, stage1.kernel_z, pairs);

    LatentRecovery rec;
    rec.x_hat = stage1.init_x.col(kCorruptedDim);
    double log_lambda = std::log(stage1.lambda_n);
    auto current = objective.evaluate(rec.x_hat, log_lambda, true);
    if (!std::isfinite(current.loss)) {
        throw NumericalError("optimize_latents: non-finite loss at initialization (" +
                             std::to_string(current.dropped_pairs) + " of " + std::to_string(pairs.size()) +
                             " pairs degenerate)");
    }
    rec.loss_trace.push_back(current.loss);

    double step = config.initial_step;
    const auto window = static_cast<std::size_t>(std::max(config.patience, 1));
    for (int iter = 0; iter < config.max_iters && current.loss > 0.0; ++iter) {
        bool accepted = false;
        while (step >= 1e-12) {
            const Eigen::VectorXd x_try = rec.x_hat - step * current.grad_x;
            const double l_try = log_lambda - step * current.grad_log_lambda;
            const auto trial = objective.evaluate(x_try, l_try, false);
            if (std::isfinite(trial.loss) && trial.loss <= current.loss) {
                rec.x_hat = x_try;
                log_lambda = l_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        current = objective.evaluate(rec.x_hat, log_lambda, true);
        rec.loss_trace.push_back(current.loss);
        rec.iterations = iter + 1;

        if (rec.loss_trace.size() > window) {
            const double past = rec.loss_trace[rec.loss_trace.size() - 1 - window];
            if (past - current.loss <= config.tol * past + kLossFloor) break;
        }
    }
    rec.lambda_x = std::exp(log_lambda);
    rec.dropped_pair_count = pairs.dropped_pairs + current.dropped_pairs;
    return rec;
}

StructuralFn::StructuralFn(PointList anchors, Eigen::VectorXd beta, KernelSpec kernel_x, Standardizer x_std,
                           double y_mean, double y_scale, double lambda, double xi)
    : anchors_(std::move(anchors)),
      beta_(std::move(beta)),
      kernel_x_(std::move(kernel_x)),
      x_std_(std::move(x_std)),
      y_mean_(y_mean),
      y_scale_(y_scale),
      lambda_(lambda),
      xi_(xi) {
    if (beta_.size() != anchors_.rows()) throw ShapeError("StructuralFn: beta length must equal anchor count");
}

double StructuralFn::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != kernel_x_.dimension()) throw ShapeError("predict: treatment dimension mismatch");
    return predict_many(x.transpose())[0];
}

Eigen::VectorXd StructuralFn::predict_many(const Eigen::Ref<const PointList>& xs) const {
    if (xs.cols() != kernel_x_.dimension()) throw ShapeError("predict: treatment dimension mismatch");
    const Eigen::MatrixXd k = gram(anchors_, x_std_.apply(xs), kernel_x_);
    return ((k.transpose() * beta_).array() * y_scale_ + y_mean_).matrix();
}

StructuralFn step3(const Stage2Inputs& in, const std::vector<double>& xi_grid, std::vector<XiScore>* scores) {
    const Eigen::Index s1 = in.anchors.rows();
    const Eigen::Index s2 = in.z2.rows();
    if (xi_grid.empty()) throw PreconditionError("step3: empty xi grid");
    if (s1 < 1 || in.z1.rows() != s1) throw ShapeError("step3: anchors and Z1 must have equal length");
    if (s2 < 1 || in.y2.size() != s2) throw ShapeError("step3: Z2 and Y2 must have equal, nonzero length");
    if (xi_grid.size() > 1 && in.y1.size() != s1) throw ShapeError("step3: xi validation needs Y1 of length s1");

    const Standardizer y_std = Standardizer::fit(in.y2);
    const double y_mean = y_std.mean()[0];
    const double y_scale = y_std.scale()[0];
    const Eigen::VectorXd y2 = (in.y2.array() - y_mean) / y_scale;

    const Eigen::MatrixXd kxx = gram(in.anchors, in.anchors, in.kernel_x);
    const CmeSolver solver = CmeSolver::fit(in.z1, in.kernel_z, in.lambda);
    const Eigen::MatrixXd v = kxx * solver.solve(gram(in.z1, in.z2, in.kernel_z));
    const Eigen::MatrixXd vvt = v * v.transpose();
    const Eigen::VectorXd vy = v * y2;

    const auto fit_beta = [&](double xi) {
        Eigen::MatrixXd a = vvt + static_cast<double>(s2) * xi * kxx;
        Eigen::LLT<Eigen::MatrixXd> llt;
        robust_llt(a, llt);
        return Eigen::VectorXd(llt.solve(vy));
    };

    double best_xi = xi_grid.front();
    if (xi_grid.size() > 1) {
        // <f, mu_{X|z}> at the stage-1 instruments against stage-1 outcomes.
        const Eigen::VectorXd y1 = (in.y1.array() - y_mean) / y_scale;
        const Eigen::MatrixXd v1 = kxx * solver.solve(gram(in.z1, in.z1, in.kernel_z));
        double best_loss = std::numeric_limits<double>::infinity();
        for (double xi : xi_grid) {
            const Eigen::VectorXd beta = fit_beta(xi);
            const double loss = (y1 - v1.transpose() * beta).squaredNorm() / static_cast<double>(s1);
            if (scores) scores->push_back({xi, loss});
            if (prefer_candidate(loss, xi, best_loss, best_xi)) {
                best_loss = std::min(loss, best_loss);
                best_xi = xi;
            }
        }
        if (!std::isfinite(best_loss)) throw NumericalError("step3: no xi produced a finite validation loss");
    }
    Eigen::VectorXd beta = fit_beta(best_xi);
    if (!beta.allFinite()) throw NumericalError("step3: non-finite stage-2 coefficients");
    return StructuralFn(in.anchors, std::move(beta), in.kernel_x, in.x_std, y_mean, y_scale, in.lambda, best_xi);
}

MekivFit mekiv_fit(const DesignSplits& splits, const MekivConfig& config) {
    if (splits.stage2.size() < 1) throw PreconditionError("mekiv_fit: stage-2 split is empty");
    const Dataset& d1 = splits.stage1;
    const Stage1Output st1 = step1(d1.z, d1.m, d1.n, config.lambda_grid);
    const PointList zcheck = st1.z_std.apply(splits.stage2.z);
    const TrainingSet pairs = make_training_pairs(st1, zcheck, config.step2.alpha_count, config.step2.pair_cap,
                                                  config.seed);
    LatentRecovery rec = optimize_latents(st1, pairs, config.step2);

    PointList anchors = st1.init_x;
    anchors.col(kCorruptedDim) = rec.x_hat;
    const Stage2Inputs in{anchors, st1.kernel_x, st1.x_std, rec.lambda_x, st1.z1,
                          st1.kernel_z, zcheck, d1.y, splits.stage2.y};
    StructuralFn fn = step3(in, config.xi_grid);
    return MekivFit{std::move(fn), std::move(rec), st1.lambda_n, st1.lambda_mn};
}

}  // namespace mekiv
