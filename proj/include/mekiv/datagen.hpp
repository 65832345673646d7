#pragma once

#include "mekiv/kernel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>

namespace mekiv {

enum class Design { linear, sigmoid, demand };
enum class MerrorKind { gaussian, mog };

std::string to_string(Design d);
std::string to_string(MerrorKind k);
Design parse_design(const std::string& s);
MerrorKind parse_merror_kind(const std::string& s);

/// One synthetic experiment configuration. merror_level is a multiple of the
/// empirical standard deviation of the corrupted treatment coordinate; a level of
/// exactly zero leaves M = N = X.
struct DesignSpec {
    Design design = Design::linear;
    std::optional<double> rho;
    MerrorKind merror_kind = MerrorKind::gaussian;
    double merror_level = 1.0;
    Eigen::Index sample_size = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Column-aligned samples: row i of every member is one DesignSample. For the
/// demand design z = (c, t, s) and x = (p, t, s); linear and sigmoid are 1-D.
struct Dataset {
    PointList z;
    PointList x;
    PointList m;
    PointList n;
    Eigen::VectorXd y;

    Eigen::Index size() const { return y.size(); }
    Dataset rows(Eigen::Index first, Eigen::Index count) const;
};

/// Disjoint stage-1 and stage-2 samples drawn from one seed.
struct DesignSplits {
    DesignSpec spec;
    Dataset stage1;
    Dataset stage2;
};

/// Index of the corrupted treatment coordinate (P for demand).
inline constexpr Eigen::Index kCorruptedDim = 0;

double standard_normal_cdf(double v);

double linear_truth(double x);
double sigmoid_truth(double x);
double demand_psi(double t);
double demand_truth(double p, double t, double s);

/// Ground-truth structural function at a treatment point.
double structural_truth(Design design, const Eigen::Ref<const Eigen::VectorXd>& x);

/// Noise-free samples (m = n = x); apply_merror adds the corruption.
Dataset gen_linear(const DesignSpec& spec);
Dataset gen_sigmoid(const DesignSpec& spec);
Dataset gen_demand(const DesignSpec& spec);

struct Measurements {
    Eigen::VectorXd m;
    Eigen::VectorXd n;
};

/// m = x + dM, n = x + dN with independent draws from the configured law scaled by
/// level * sigma_x.
Measurements apply_merror(const Eigen::Ref<const Eigen::VectorXd>& x, MerrorKind kind, double level,
                          double sigma_x, std::mt19937_64& rng);

/// Full corrupted dataset of spec.sample_size rows.
Dataset generate(const DesignSpec& spec);

/// generate() with n_stage1 + n_stage2 rows, split in order.
DesignSplits generate_splits(DesignSpec spec, Eigen::Index n_stage1, Eigen::Index n_stage2);

/// Outcome noise eps = y - f(x_true) per row.
Eigen::VectorXd outcome_noise(Design design, const Dataset& data);

}  // namespace mekiv
