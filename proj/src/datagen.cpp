#include "mekiv/datagen.hpp"

#include "mekiv/errors.hpp"

#include <cmath>
#include <numbers>

namespace mekiv {

std::string to_string(Design d) {
    switch (d) {
        case Design::linear: return "linear";
        case Design::sigmoid: return "sigmoid";
        case Design::demand: return "demand";
    }
    return "unknown";
}

std::string to_string(MerrorKind k) {
    return k == MerrorKind::gaussian ? "gaussian" : "mog";
}

Design parse_design(const std::string& s) {
    if (s == "linear") return Design::linear;
    if (s == "sigmoid") return Design::sigmoid;
    if (s == "demand") return Design::demand;
    throw PreconditionError("unknown design '" + s + "' (expected linear, sigmoid or demand)");
}

MerrorKind parse_merror_kind(const std::string& s) {
    if (s == "gaussian") return MerrorKind::gaussian;
    if (s == "mog") return MerrorKind::mog;
    throw PreconditionError("unknown merror kind '" + s + "' (expected gaussian or mog)");
}

void DesignSpec::validate() const {
    if (design == Design::demand) {
        if (!rho || !(*rho > 0.0 && *rho < 1.0)) {
            throw PreconditionError("demand design requires rho in (0, 1)");
        }
    } else if (rho) {
        throw PreconditionError("rho is only meaningful for the demand design");
    }
    if (!(merror_level >= 0.0) || !std::isfinite(merror_level)) {
        throw PreconditionError("merror_level must be finite and non-negative");
    }
    if (sample_size < 1) throw PreconditionError("sample_size must be at least 1");
}

Dataset Dataset::rows(Eigen::Index first, Eigen::Index count) const {
    return Dataset{z.middleRows(first, count), x.middleRows(first, count), m.middleRows(first, count),
                   n.middleRows(first, count), y.segment(first, count)};
}

double standard_normal_cdf(double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); }

double linear_truth(double x) { return 4.0 * x - 2.0; }

double sigmoid_truth(double x) {
    const double sgn = (x > 0.5) - (x < 0.5);
    return std::log(std::abs(16.0 * x - 8.0) + 1.0) * sgn;
}

double demand_psi(double t) {
    const double u = t - 5.0;
    return 2.0 * (std::pow(u, 4) / 600.0 + std::exp(-4.0 * u * u) + t / 10.0 - 2.0);
}

double demand_truth(double p, double t, double s) { return 100.0 + (10.0 + p) * s * demand_psi(t) - 2.0 * p; }

double structural_truth(Design design, const Eigen::Ref<const Eigen::VectorXd>& x) {
    switch (design) {
        case Design::linear:
        case Design::sigmoid:
            if (x.size() != 1) throw ShapeError("structural_truth: linear/sigmoid treatment is 1-D");
            if (!std::isfinite(x[0])) throw PreconditionError("structural_truth: non-finite treatment");
            return design == Design::linear ? linear_truth(x[0]) : sigmoid_truth(x[0]);
        case Design::demand:
            if (x.size() != 3) throw ShapeError("structural_truth: demand treatment is (p, t, s)");
            if (!x.allFinite()) throw PreconditionError("structural_truth: non-finite treatment");
            return demand_truth(x[0], x[1], x[2]);
    }
    throw PreconditionError("structural_truth: unknown design");
}

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

Dataset gen_copula(const DesignSpec& spec, double (*truth)(double)) {
    spec.validate();
    auto rng = make_rng(spec.seed, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index n = spec.sample_size;
    Dataset d{PointList(n, 1), PointList(n, 1), PointList(n, 1), PointList(n, 1), Eigen::VectorXd(n)};
    const double norm = std::sqrt(1.0 + 0.8 * 0.8 + 0.6 * 0.6);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double w = normal(rng);
        const double u = normal(rng);
        const double v = normal(rng);
        const double e = normal(rng);
        const double x = standard_normal_cdf((w + 0.8 * u + 0.6 * v) / norm);
        d.z(i, 0) = standard_normal_cdf(w);
        d.x(i, 0) = x;
        d.y[i] = truth(x) + 1.0 * u + 0.1 * e;
    }
    d.m = d.x;
    d.n = d.x;
    return d;
}

double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

Dataset gen_linear(const DesignSpec& spec) { return gen_copula(spec, &linear_truth); }

Dataset gen_sigmoid(const DesignSpec& spec) { return gen_copula(spec, &sigmoid_truth); }

Dataset gen_demand(const DesignSpec& spec) {
    spec.validate();
    if (spec.design != Design::demand) throw PreconditionError("gen_demand: spec is not a demand design");
    const double rho = *spec.rho;
    auto rng = make_rng(spec.seed, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> sentiment(1, 7);
    std::uniform_real_distribution<double> time(0.0, 10.0);
    const Eigen::Index n = spec.sample_size;
    Dataset d{PointList(n, 3), PointList(n, 3), PointList(n, 3), PointList(n, 3), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = sentiment(rng);
        const double t = time(rng);
        const double c = normal(rng);
        const double v = normal(rng);
        const double e = rho * v + std::sqrt(1.0 - rho * rho) * normal(rng);
        const double p = 25.0 + (c + 3.0) * demand_psi(t) + v;
        d.z.row(i) << c, t, s;
        d.x.row(i) << p, t, s;
        d.y[i] = demand_truth(p, t, s) + e;
    }
    d.m = d.x;
    d.n = d.x;
    return d;
}

Measurements apply_merror(const Eigen::Ref<const Eigen::VectorXd>& x, MerrorKind kind, double level,
                          double sigma_x, std::mt19937_64& rng) {
    if (!(level >= 0.0) || !std::isfinite(level)) throw PreconditionError("apply_merror: level must be >= 0");
    if (!(sigma_x > 0.0) || !std::isfinite(sigma_x)) throw PreconditionError("apply_merror: sigma_x must be > 0");
    Measurements out{x, x};
    if (level == 0.0) return out;

    std::normal_distribution<double> normal(0.0, level * sigma_x);
    std::bernoulli_distribution side(0.5);
    const auto draw = [&]() {
        const double spread = normal(rng);
        if (kind == MerrorKind::gaussian) return spread;
        return (side(rng) ? 2.0 : -2.0) * sigma_x + spread;
    };
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        out.m[i] += draw();
        out.n[i] += draw();
    }
    return out;
}

Dataset generate(const DesignSpec& spec) {
    spec.validate();
    Dataset d;
    switch (spec.design) {
        case Design::linear: d = gen_linear(spec); break;
        case Design::sigmoid: d = gen_sigmoid(spec); break;
        case Design::demand: d = gen_demand(spec); break;
    }
    const Eigen::VectorXd xc = d.x.col(kCorruptedDim);
    const double sigma_x = sample_sd(xc);
    if (spec.merror_level > 0.0) {
        auto rng = make_rng(spec.seed, 2);
        const Measurements meas = apply_merror(xc, spec.merror_kind, spec.merror_level, sigma_x, rng);
        d.m.col(kCorruptedDim) = meas.m;
        d.n.col(kCorruptedDim) = meas.n;
    }
    return d;
}

DesignSplits generate_splits(DesignSpec spec, Eigen::Index n_stage1, Eigen::Index n_stage2) {
    if (n_stage1 < 1 || n_stage2 < 0) throw PreconditionError("generate_splits: invalid split sizes");
    spec.sample_size = n_stage1 + n_stage2;
    const Dataset all = generate(spec);
    return DesignSplits{spec, all.rows(0, n_stage1), all.rows(n_stage1, n_stage2)};
}

Eigen::VectorXd outcome_noise(Design design, const Dataset& data) {
    Eigen::VectorXd eps(data.size());
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        eps[i] = data.y[i] - structural_truth(design, data.x.row(i).transpose());
    }
    return eps;
}

}  // namespace mekiv
