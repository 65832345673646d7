#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mekiv/baselines.hpp"
#include "mekiv/datagen.hpp"
#include "mekiv/errors.hpp"
#include "mekiv/mekiv.hpp"

#include <cmath>
#include <random>

using namespace mekiv;

namespace {

struct Instance {
    PointList z1;
    KernelSpec kz = KernelSpec::isotropic(1, 1.0);
    TrainingSet set;
    Eigen::VectorXd x;
    double log_lambda = 0.0;
};

// s1 stage-1 points, 4 alphas x 5 z-checks = 20 pairs with random labels.
Instance random_instance(std::uint64_t seed, Eigen::Index s1 = 10) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit(0.5, 1.5);
    Instance in;
    in.z1 = PointList(s1, 1);
    for (Eigen::Index i = 0; i < s1; ++i) in.z1(i, 0) = normal(rng);
    in.kz = KernelSpec::isotropic(1, unit(rng));
    in.set.alphas = Eigen::VectorXd(4);
    for (int a = 0; a < 4; ++a) in.set.alphas[a] = 0.8 * normal(rng);
    in.set.zcheck = PointList(5, 1);
    for (int k = 0; k < 5; ++k) in.set.zcheck(k, 0) = normal(rng);
    in.set.labels = Eigen::MatrixXcd(4, 5);
    for (int a = 0; a < 4; ++a)
        for (int k = 0; k < 5; ++k) in.set.labels(a, k) = Complex(normal(rng), normal(rng));
    in.set.mask = Eigen::MatrixXd::Ones(4, 5);
    in.x = Eigen::VectorXd(s1);
    for (Eigen::Index i = 0; i < s1; ++i) in.x[i] = normal(rng);
    in.log_lambda = std::log(0.05 + 0.2 * unit(rng));
    return in;
}

// Reference loss by explicit inversion and direct sums.
double oracle_loss(const Instance& in, const Eigen::VectorXd& x, double log_lambda) {
    const Eigen::Index s = in.z1.rows();
    Eigen::MatrixXd k(s, s);
    for (Eigen::Index i = 0; i < s; ++i)
        for (Eigen::Index j = 0; j < s; ++j) {
            const double d = (in.z1(i, 0) - in.z1(j, 0)) / in.kz.lengthscales()[0];
            k(i, j) = std::exp(-0.5 * d * d);
        }
    const Eigen::MatrixXd inv =
        (k + static_cast<double>(s) * std::exp(log_lambda) * Eigen::MatrixXd::Identity(s, s)).inverse();
    double total = 0.0;
    int used = 0;
    for (Eigen::Index kk = 0; kk < in.set.zcheck.rows(); ++kk) {
        Eigen::VectorXd kz(s);
        for (Eigen::Index i = 0; i < s; ++i) {
            const double d = (in.z1(i, 0) - in.set.zcheck(kk, 0)) / in.kz.lengthscales()[0];
            kz[i] = std::exp(-0.5 * d * d);
        }
        const Eigen::VectorXd g = inv * kz;
        for (Eigen::Index a = 0; a < in.set.alphas.size(); ++a) {
            if (in.set.mask(a, kk) == 0.0) continue;
            Complex num{0.0, 0.0}, den{0.0, 0.0};
            for (Eigen::Index i = 0; i < s; ++i) {
                const Complex e = std::exp(Complex(0.0, in.set.alphas[a] * x[i]));
                num += x[i] * g[i] * e;
                den += g[i] * e;
            }
            total += std::norm(num / den - in.set.labels(a, kk));
            ++used;
        }
    }
    return total / used;
}

DesignSpec small_spec(Design d, double level, std::uint64_t seed) {
    DesignSpec s;
    s.design = d;
    s.merror_kind = MerrorKind::gaussian;
    s.merror_level = level;
    s.sample_size = 200;
    s.seed = seed;
    return s;
}

}  // namespace

TEST_CASE("step1 preconditions") {
    const PointList tiny = PointList::Random(1, 1);
    CHECK_THROWS_AS(step1(tiny, tiny, tiny, default_ridge_grid()), PreconditionError);
    const PointList z = PointList::Random(30, 1);
    CHECK_THROWS_AS(step1(z, PointList::Random(29, 1), PointList::Random(30, 1), default_ridge_grid()), ShapeError);
}

TEST_CASE("step1 fits standardization and embeddings") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 1.0, 3), 100, 100);
    const Stage1Output st = step1(sp.stage1.z, sp.stage1.m, sp.stage1.n, default_ridge_grid());
    CHECK(st.z1.rows() == 100);
    CHECK(std::abs(st.init_x.col(0).mean()) < 1e-12);
    CHECK(st.kernel_x.dimension() == 1);
    CHECK(st.embedding_mn.kernel_out().dimension() == 2);
    CHECK(st.embedding_n.solver().lambda() == st.lambda_n);
}

TEST_CASE("training pairs: count, labels and subsampling") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 1.0, 5), 60, 60);
    const Stage1Output st = step1(sp.stage1.z, sp.stage1.m, sp.stage1.n, default_ridge_grid());
    const PointList zc = st.z_std.apply(sp.stage2.z.topRows(4));
    const TrainingSet set = make_training_pairs(st, zc, 3, 1000, 11);
    CHECK(set.size() + set.dropped_pairs == 12);
    CHECK(set.pairs().size() == set.size());

    for (const auto& p : set.pairs()) {
        const Complex want = w_mn(st.m1, st.n1, set.gamma_mn.col(p.zcheck_index), set.gamma_n.col(p.zcheck_index),
                                  p.alpha);
        CHECK(std::abs(p.label - want) < 1e-10 * std::max(1.0, std::abs(want)));
    }

    const TrainingSet capped = make_training_pairs(st, zc, 3, 5, 11);
    CHECK(capped.size() + capped.dropped_pairs == 5);
    const TrainingSet again = make_training_pairs(st, zc, 3, 5, 11);
    CHECK(capped.mask == again.mask);
    CHECK_THROWS_AS(make_training_pairs(st, zc, 0, 10, 1), PreconditionError);
}

TEST_CASE("label at alpha zero is the ratio of weighted means") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 0.5, 8), 60, 60);
    const Stage1Output st = step1(sp.stage1.z, sp.stage1.m, sp.stage1.n, default_ridge_grid());
    TrainingSet set = make_training_pairs(st, st.z_std.apply(sp.stage2.z.topRows(3)), 1, 10, 2);
    set.alphas[0] = 0.0;
    for (Eigen::Index k = 0; k < 3; ++k) {
        const Complex w = w_mn(st.m1, st.n1, set.gamma_mn.col(k), set.gamma_n.col(k), 0.0);
        CHECK(w.imag() == 0.0);
        CHECK(w.real() == doctest::Approx(st.m1.dot(set.gamma_mn.col(k)) / set.gamma_n.col(k).sum()));
    }
}

TEST_CASE("objective agrees with the direct-inverse reference") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Instance in = random_instance(seed);
        const LatentObjective obj(in.z1, in.kz, in.set);
        const auto ev = obj.evaluate(in.x, in.log_lambda, false);
        CHECK(ev.loss == doctest::Approx(oracle_loss(in, in.x, in.log_lambda)).epsilon(1e-6));
        CHECK(ev.used_pairs == 20);
        CHECK(ev.loss >= 0.0);
        CHECK(step2_loss(in.x, in.log_lambda, in.set, in.z1, in.kz) == ev.loss);
    }
}

TEST_CASE("analytic gradient matches central differences of the reference loss") {
    const double h = 1e-5;
    double worst = 0.0;
    for (std::uint64_t seed = 100; seed < 150; ++seed) {
        const Instance in = random_instance(seed);
        const Step2Gradient g = step2_grad(in.x, in.log_lambda, in.set, in.z1, in.kz);
        Eigen::VectorXd fd(in.x.size() + 1), an(in.x.size() + 1);
        for (Eigen::Index i = 0; i < in.x.size(); ++i) {
            Eigen::VectorXd xp = in.x, xm = in.x;
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (oracle_loss(in, xp, in.log_lambda) - oracle_loss(in, xm, in.log_lambda)) / (2 * h);
            an[i] = g.grad_x[i];
        }
        fd[in.x.size()] =
            (oracle_loss(in, in.x, in.log_lambda + h) - oracle_loss(in, in.x, in.log_lambda - h)) / (2 * h);
        an[in.x.size()] = g.grad_log_lambda;
        worst = std::max(worst, (an - fd).norm() / fd.norm());
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("self-generated labels give zero loss and zero gradient") {
    Instance in = random_instance(42);
    const LatentObjective probe(in.z1, in.kz, in.set);
    const Eigen::MatrixXd g = probe.gamma(std::exp(in.log_lambda));
    for (Eigen::Index k = 0; k < 5; ++k)
        for (Eigen::Index a = 0; a < 4; ++a) in.set.labels(a, k) = w_x(in.x, g.col(k), in.set.alphas[a]);
    const LatentObjective obj(in.z1, in.kz, in.set);
    const auto ev = obj.evaluate(in.x, in.log_lambda, true);
    CHECK(ev.loss < 1e-24);
    CHECK(ev.grad_x.norm() < 1e-10);
    CHECK(std::abs(ev.grad_log_lambda) < 1e-10);
}

TEST_CASE("gamma matches the CME solver") {
    const Instance in = random_instance(9, 30);
    const LatentObjective obj(in.z1, in.kz, in.set);
    const CmeSolver solver = CmeSolver::fit(in.z1, in.kz, 0.03);
    CHECK((obj.gamma(0.03) - solver.gamma_matrix(in.set.zcheck)).norm() < 1e-6);
    CHECK(obj.rank() <= 30);
    CHECK(obj.sample_count() == 30);
}

TEST_CASE("masked pairs are ignored") {
    Instance in = random_instance(3);
    const double full = LatentObjective(in.z1, in.kz, in.set).evaluate(in.x, in.log_lambda, false).loss;
    in.set.mask(0, 0) = 0.0;
    in.set.labels(0, 0) = Complex(1e6, 0.0);
    const auto ev = LatentObjective(in.z1, in.kz, in.set).evaluate(in.x, in.log_lambda, false);
    CHECK(ev.used_pairs == 19);
    CHECK(ev.loss < 10.0 * full + 10.0);
}

TEST_CASE("optimizer decreases the loss monotonically") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 1.0, 21), 80, 80);
    const Stage1Output st = step1(sp.stage1.z, sp.stage1.m, sp.stage1.n, default_ridge_grid());
    const TrainingSet set = make_training_pairs(st, st.z_std.apply(sp.stage2.z), 16, 20000, 21);
    Step2Config cfg;
    cfg.max_iters = 100;
    const LatentRecovery rec = optimize_latents(st, set, cfg);
    REQUIRE(rec.loss_trace.size() >= 2);
    for (std::size_t i = 1; i < rec.loss_trace.size(); ++i) CHECK(rec.loss_trace[i] <= rec.loss_trace[i - 1]);
    CHECK(rec.loss_trace.back() < rec.loss_trace.front());
    CHECK(rec.iterations <= 100);

    cfg.max_iters = 0;
    const LatentRecovery none = optimize_latents(st, set, cfg);
    CHECK(none.x_hat == st.init_x.col(0));
    CHECK(none.lambda_x == doctest::Approx(st.lambda_n));
    CHECK(none.iterations == 0);
}

TEST_CASE("step3 limits") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 0.0, 4), 60, 60);
    Stage2Inputs in = kiv_stage2_inputs(BaselineKind::oracle, sp, default_ridge_grid());

    SUBCASE("constant outcome") {
        in.y1.setConstant(3.0);
        in.y2.setConstant(3.0);
        const StructuralFn f = step3(in, default_ridge_grid());
        CHECK(f.predict(Eigen::VectorXd::Constant(1, 0.4)) == doctest::Approx(3.0));
    }
    SUBCASE("huge xi returns the stage-2 mean") {
        const StructuralFn f = step3(in, {1e12});
        CHECK(f.predict(Eigen::VectorXd::Constant(1, 0.4)) == doctest::Approx(in.y2.mean()).epsilon(1e-6));
        CHECK(f.xi() == 1e12);
    }
    SUBCASE("scores cover the grid and the winner is minimal") {
        std::vector<XiScore> scores;
        const StructuralFn f = step3(in, default_ridge_grid(), &scores);
        REQUIRE(scores.size() == default_ridge_grid().size());
        double best = scores.front().loss;
        for (const auto& s : scores) best = std::min(best, s.loss);
        for (const auto& s : scores)
            if (s.xi == f.xi()) CHECK(s.loss == best);
    }
    SUBCASE("predictions are deterministic") {
        const StructuralFn a = step3(in, default_ridge_grid());
        const StructuralFn b = step3(in, default_ridge_grid());
        const PointList xs = Eigen::VectorXd::LinSpaced(7, 0.1, 0.9);
        CHECK(a.predict_many(xs) == b.predict_many(xs));
    }
    CHECK_THROWS_AS(step3(in, {}), PreconditionError);
}

TEST_CASE("step3 on true treatments is the oracle KIV fit") {
    const DesignSplits sp = generate_splits(small_spec(Design::sigmoid, 1.0, 6), 60, 60);
    const Stage2Inputs in = kiv_stage2_inputs(BaselineKind::oracle, sp, default_ridge_grid());
    const StructuralFn a = step3(in, default_ridge_grid());
    const StructuralFn b = kiv_fit(BaselineKind::oracle, sp, default_ridge_grid(), default_ridge_grid());
    CHECK(a.beta() == b.beta());
    CHECK(a.xi() == b.xi());
}

TEST_CASE("mekiv_fit end to end and empty stage 2") {
    const DesignSplits sp = generate_splits(small_spec(Design::linear, 1.0, 13), 60, 60);
    MekivConfig cfg;
    cfg.step2.max_iters = 30;
    cfg.step2.alpha_count = 8;
    const MekivFit fit = mekiv_fit(sp, cfg);
    CHECK(fit.latents.x_hat.size() == 60);
    CHECK(fit.structural.anchors().rows() == 60);
    CHECK(std::isfinite(fit.structural.predict(Eigen::VectorXd::Constant(1, 0.5))));
    const MekivFit again = mekiv_fit(sp, cfg);
    CHECK(fit.structural.beta() == again.structural.beta());

    DesignSplits empty = sp;
    empty.stage2 = sp.stage2.rows(0, 0);
    CHECK_THROWS_AS(mekiv_fit(empty, cfg), PreconditionError);
}
