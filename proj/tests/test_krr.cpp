#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mekiv/errors.hpp"
#include "mekiv/krr.hpp"

#include <Eigen/LU>

#include <cmath>
#include <random>

using namespace mekiv;

namespace {

Eigen::MatrixXd points1d(std::initializer_list<double> v) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

// Independent scoring path: explicit inverse and scalar loops.
double brute_force_score(const Eigen::MatrixXd& z, const Eigen::MatrixXd& o, const KernelSpec& kz,
                         const KernelSpec& ko, double lambda) {
    const HoldoutSplit split = holdout_split(z.rows(), 0.5);
    const auto nt = static_cast<Eigen::Index>(split.train.size());
    Eigen::MatrixXd a(nt, nt);
    for (Eigen::Index i = 0; i < nt; ++i)
        for (Eigen::Index j = 0; j < nt; ++j)
            a(i, j) = rbf_eval(z.row(split.train[i]).transpose(), z.row(split.train[j]).transpose(), kz) +
                      (i == j ? nt * lambda : 0.0);
    const Eigen::MatrixXd inv = a.fullPivLu().inverse();
    double total = 0.0;
    for (Eigen::Index v : split.validation) {
        Eigen::VectorXd kv(nt);
        for (Eigen::Index i = 0; i < nt; ++i)
            kv[i] = rbf_eval(z.row(split.train[i]).transpose(), z.row(v).transpose(), kz);
        const Eigen::VectorXd g = inv * kv;
        double score = rbf_eval(o.row(v).transpose(), o.row(v).transpose(), ko);
        for (Eigen::Index j = 0; j < nt; ++j) {
            score -= 2.0 * g[j] * rbf_eval(o.row(split.train[j]).transpose(), o.row(v).transpose(), ko);
            for (Eigen::Index l = 0; l < nt; ++l)
                score += g[j] * g[l] *
                         rbf_eval(o.row(split.train[j]).transpose(), o.row(split.train[l]).transpose(), ko);
        }
        total += score;
    }
    return total;
}

double brute_force_argmin(const Eigen::MatrixXd& z, const Eigen::MatrixXd& o, const KernelSpec& kz,
                          const KernelSpec& ko, const std::vector<double>& grid) {
    double best = grid.front();
    double best_score = brute_force_score(z, o, kz, ko, best);
    for (double l : grid) {
        const double s = brute_force_score(z, o, kz, ko, l);
        if (s <= best_score) {
            best_score = s;
            best = l;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("gamma closed forms") {
    const KernelSpec k = KernelSpec::isotropic(1, 1.0);
    for (double lambda : {1e-3, 0.5, 2.0}) {
        const CmeSolver one = CmeSolver::fit(points1d({0.3}), k, lambda);
        CHECK(one.gamma(Eigen::VectorXd::Constant(1, 0.3))[0] == doctest::Approx(1.0 / (1.0 + lambda)).epsilon(1e-14));
    }

    const CmeSolver huge = CmeSolver::fit(points1d({0.0, 0.5, 1.0}), k, 1e12);
    CHECK(huge.gamma(Eigen::VectorXd::Constant(1, 0.2)).cwiseAbs().maxCoeff() < 1e-11);

    // k(z1, z2) = exp(-50) < 1e-6 makes the 2x2 system nearly diagonal.
    const double lambda = 1e-3;
    const CmeSolver two = CmeSolver::fit(points1d({0.0, 10.0}), k, lambda);
    const Eigen::VectorXd g = two.gamma(Eigen::VectorXd::Constant(1, 0.0));
    CHECK(std::abs(g[0] - 1.0 / (1.0 + 2.0 * lambda)) < 1e-3);
    CHECK(std::abs(g[1]) < 1e-3);
}

TEST_CASE("gamma solves the ridge system") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(-6.0, -1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int s = 2 + rep % 19;
        Eigen::MatrixXd z(s, 2);
        for (int i = 0; i < s; ++i) z.row(i) << normal(rng), normal(rng);
        const KernelSpec k(Eigen::Vector2d(0.9, 1.4));
        const double lambda = std::pow(10.0, unif(rng));
        const CmeSolver solver = CmeSolver::fit(z, k, lambda);
        const Eigen::Vector2d q(normal(rng), normal(rng));
        const Eigen::VectorXd g = solver.gamma(q);
        Eigen::MatrixXd a = gram(z, z, k);
        a.diagonal().array() += s * lambda;
        const Eigen::VectorXd rhs = gram(z, q.transpose(), k).col(0);
        CHECK((a * g - rhs).norm() <= 1e-8 * rhs.norm());
        CHECK(g.size() == s);
    }
}

TEST_CASE("gamma interpolates training points as lambda vanishes") {
    const Eigen::MatrixXd z = points1d({-2.0, -1.0, 0.0, 1.0, 2.0, 3.0});
    const CmeSolver solver = CmeSolver::fit(z, KernelSpec::isotropic(1, 0.5), 1e-10);
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
        const Eigen::VectorXd g = solver.gamma(z.row(j).transpose());
        CHECK((g - Eigen::VectorXd::Unit(z.rows(), j)).cwiseAbs().maxCoeff() < 1e-3);
    }
}

TEST_CASE("gamma is continuous in the query") {
    const CmeSolver solver = CmeSolver::fit(points1d({-1.0, 0.2, 0.9, 1.7}), KernelSpec::isotropic(1, 0.8), 1e-2);
    const Eigen::VectorXd base = solver.gamma(Eigen::VectorXd::Constant(1, 0.5));
    double prev = 1.0;
    for (double h : {1e-1, 1e-2, 1e-3, 1e-4}) {
        const double d = (solver.gamma(Eigen::VectorXd::Constant(1, 0.5 + h)) - base).norm();
        CHECK(d < prev);
        prev = d;
    }
    CHECK(prev < 1e-3);
}

TEST_CASE("fit and gamma error paths") {
    const KernelSpec k = KernelSpec::isotropic(1, 1.0);
    CHECK_THROWS_AS(CmeSolver::fit(points1d({0.0}), k, 0.0), PreconditionError);
    CHECK_THROWS_AS(CmeSolver::fit(Eigen::MatrixXd(0, 1), k, 1.0), PreconditionError);
    CHECK_THROWS_AS(CmeSolver::fit(points1d({0.0, std::nan("")}), k, 1.0), NumericalError);
    const CmeSolver solver = CmeSolver::fit(points1d({0.0, 1.0}), k, 0.1);
    CHECK_THROWS_AS(solver.gamma(Eigen::Vector2d(0.0, 0.0)), ShapeError);
}

TEST_CASE("robust_llt escalates jitter on singular input") {
    Eigen::LLT<Eigen::MatrixXd> llt;
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
    Eigen::MatrixXd rank_deficient = ones;
    rank_deficient(3, 3) = 1.0 - 1e-12;  // slightly indefinite
    const double jitter = robust_llt(rank_deficient, llt);
    CHECK(jitter > 0.0);
    CHECK(jitter <= 1e-6);
    CHECK(robust_llt(Eigen::MatrixXd::Identity(3, 3), llt) == 0.0);
    CHECK_THROWS_AS(robust_llt(-Eigen::MatrixXd::Identity(3, 3), llt), NumericalError);
}

TEST_CASE("embed_eval closed forms and limits") {
    const KernelSpec kz = KernelSpec::isotropic(1, 1.0);
    const KernelSpec ko = KernelSpec::isotropic(1, 0.7);
    const double lambda = 0.25;
    const CmeEmbedding one(CmeSolver::fit(points1d({0.1}), kz, lambda), points1d({2.0}), ko);
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.1);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 2.4);
    CHECK(embed_eval(one, z, y) == doctest::Approx(rbf_eval(points1d({2.0}).row(0).transpose(), y, ko) / (1.0 + lambda)));

    const CmeEmbedding ridge(CmeSolver::fit(points1d({0.0, 1.0}), kz, 1e12), points1d({0.0, 1.0}), ko);
    CHECK(std::abs(embed_eval(ridge, z, y)) < 1e-11);

    const CmeEmbedding emb(CmeSolver::fit(points1d({0.0, 1.0, 2.0}), kz, 1e-3), points1d({0.0, 1.0, 2.0}), ko);
    CHECK(std::abs(embed_eval(emb, z, Eigen::VectorXd::Constant(1, 50.0))) < 1e-100);
    CHECK_THROWS_AS(embed_eval(emb, z, Eigen::Vector2d(0, 0)), ShapeError);
}

TEST_CASE("embedding is linear in gamma") {
    const KernelSpec kz = KernelSpec::isotropic(1, 1.0);
    const KernelSpec ko = KernelSpec::isotropic(1, 0.5);
    const Eigen::MatrixXd anchors = points1d({-1.0, 0.3, 0.8});
    const CmeEmbedding emb(CmeSolver::fit(points1d({0.0, 1.0, 2.0}), kz, 1e-2), anchors, ko);
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.7);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.1);
    const Eigen::VectorXd g = emb.solver().gamma(z);
    const Eigen::VectorXd ky = gram(anchors, y.transpose(), ko).col(0);
    CHECK(embed_eval(emb, z, y) == doctest::Approx(g.dot(ky)).epsilon(1e-13));
    for (double c : {-2.0, 0.5, 3.0}) CHECK((c * g).dot(ky) == doctest::Approx(c * embed_eval(emb, z, y)));
}

TEST_CASE("holdout split spreads training rows") {
    const HoldoutSplit s = holdout_split(10, 0.5);
    CHECK(s.train.size() == 5);
    CHECK(s.validation.size() == 5);
    CHECK(s.validation.front() == 0);
    CHECK(s.train.front() == 1);
    CHECK_THROWS_AS(holdout_split(1, 0.5), PreconditionError);
    CHECK_THROWS_AS(holdout_split(10, 1.0), PreconditionError);
}

TEST_CASE("validate_lambda agrees with the brute-force score") {
    const std::vector<double> grid = default_ridge_grid();
    const KernelSpec kz = KernelSpec::isotropic(1, 0.3);

    // Noiseless o = z on a shared kernel.
    Eigen::MatrixXd z(50, 1);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int i = 0; i < 50; ++i) z(i, 0) = unif(rng);
    for (double l : {1e-7, 1e-3, 1.0}) {
        const HoldoutSplit split = holdout_split(50, 0.5);
        Eigen::MatrixXd tz(25, 1), vz(25, 1);
        for (int i = 0; i < 25; ++i) {
            tz(i, 0) = z(split.train[static_cast<std::size_t>(i)], 0);
            vz(i, 0) = z(split.validation[static_cast<std::size_t>(i)], 0);
        }
        CHECK(holdout_embedding_loss(tz, tz, vz, vz, kz, kz, l) ==
              doctest::Approx(brute_force_score(z, z, kz, kz, l)).epsilon(1e-6));
    }
    const double chosen = validate_lambda(z, z, kz, kz, grid);
    CHECK(chosen == brute_force_argmin(z, z, kz, kz, grid));
    CHECK(chosen == grid.front());

    // Outputs independent of z with a narrow output kernel: any nonzero weight only adds error.
    std::normal_distribution<double> normal;
    Eigen::MatrixXd noise(50, 1);
    for (int i = 0; i < 50; ++i) noise(i, 0) = 10.0 * normal(rng);
    const KernelSpec narrow = KernelSpec::isotropic(1, 0.01);
    const double chosen_noise = validate_lambda(z, noise, kz, narrow, grid);
    CHECK(chosen_noise == brute_force_argmin(z, noise, kz, narrow, grid));
    CHECK(chosen_noise == grid.back());

    CHECK(validate_lambda(z, noise, kz, narrow, {0.37}) == 0.37);
}

TEST_CASE("validate_lambda error paths") {
    const KernelSpec k = KernelSpec::isotropic(1, 1.0);
    CHECK_THROWS_AS(validate_lambda(points1d({0, 1, 2, 3}), points1d({0, 1, 2, 3}), k, k, {}), PreconditionError);
    CHECK_THROWS_AS(validate_lambda(points1d({0, 1, 2}), points1d({0, 1, 2}), k, k, {0.1, 1.0}), PreconditionError);
    CHECK_THROWS_AS(validate_lambda(points1d({0, 1, 2, 3}), points1d({0, 1, 2}), k, k, {0.1, 1.0}), ShapeError);
    CHECK_THROWS_AS(validate_lambda(points1d({0, 1, 2, 3}), points1d({0, 1, 2, 3}), k, k, {0.1, 1.0}, 0.0),
                    PreconditionError);
}

TEST_CASE("log_grid endpoints") {
    const auto g = default_ridge_grid();
    CHECK(g.size() == 10);
    CHECK(g.front() == doctest::Approx(1e-7));
    CHECK(g.back() == doctest::Approx(1.0));
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == doctest::Approx(std::pow(10.0, 7.0 / 9.0)));
}
