#pragma once

#include "mekiv/datagen.hpp"
#include "mekiv/mekiv.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mekiv {

inline constexpr const char* kResultsHeader =
    "design,method,merror_kind,merror_level,rho,seed,mse,log10_mse,wall_time_seconds,dropped_pairs,status";

enum class Method { mekiv, kiv_oracle, kiv_m, kiv_mn };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct ExperimentConfig {
    /// sample_size and seed of each entry are overridden per run.
    std::vector<DesignSpec> designs;
    std::vector<Method> methods;
    std::vector<std::uint64_t> seeds;
    Eigen::Index n_stage1 = 500;
    Eigen::Index n_stage2 = 500;
    Eigen::Index test_grid_size = 400;
    std::vector<double> lambda_grid = default_ridge_grid();
    std::vector<double> xi_grid = default_ridge_grid();
    Step2Config step2;
    std::string output_dir = "results";
    int workers = 1;

    void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

nlohmann::json design_spec_to_json(const DesignSpec& s);
DesignSpec design_spec_from_json(const nlohmann::json& j);

struct ResultRow {
    Design design = Design::linear;
    Method method = Method::mekiv;
    MerrorKind merror_kind = MerrorKind::gaussian;
    double merror_level = 0.0;
    std::optional<double> rho;
    std::uint64_t seed = 0;
    double mse = 0.0;
    double log10_mse = 0.0;
    double wall_time_seconds = 0.0;
    std::optional<std::size_t> dropped_pairs;
    std::string status = "ok";

    bool ok() const { return status == "ok"; }
};

/// Batch predictor on raw-scale treatment points (one per row).
using Predictor = std::function<Eigen::VectorXd(const PointList&)>;

/// Evenly spaced grid of grid_size points on [0.05, 0.95].
PointList central_grid(Eigen::Index grid_size);

/// Treatment draws used to score demand fits.
PointList demand_test_points(double rho, std::uint64_t seed);

/// Out-of-sample MSE against the true structural function: a grid on the central
/// support for linear/sigmoid, 2500 Monte-Carlo treatment draws for demand.
double mse_out_of_sample(const Predictor& f, Design design, std::optional<double> rho, Eigen::Index grid_size,
                         std::uint64_t seed);

struct FitOutcome {
    StructuralFn structural;
    std::optional<LatentRecovery> latents;
    std::optional<double> lambda_n;
    std::optional<double> lambda_mn;
};

FitOutcome fit_method(Method method, const DesignSplits& splits, const ExperimentConfig& config, std::uint64_t seed);

/// One grid cell; failures become rows with a non-"ok" status.
ResultRow run_cell(const ExperimentConfig& config, const DesignSpec& design, Method method, std::uint64_t seed);

/// Runs every (design, method, seed) cell, appending rows to
/// <output_dir>/results.csv as they finish and rewriting the file in stable
/// (design entry, method, seed) order at the end.
std::vector<ResultRow> run_experiment(const ExperimentConfig& config, bool write_files = true);

/// MEKIV_WORKERS if set, else config.workers; at least 1.
int worker_count(const ExperimentConfig& config);

std::string format_double(double v);
std::string results_csv_line(const ResultRow& r);
void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

struct SummaryRow {
    std::vector<std::string> key;
    std::size_t count = 0;
    double median = 0.0;
    double mean = 0.0;
    double iqr = 0.0;
};

/// Keys come from design, method, merror_kind, merror_level, rho, seed. Error rows
/// are skipped.
std::vector<SummaryRow> report(const std::vector<ResultRow>& rows, const std::vector<std::string>& group_by);

void write_summary_csv(const std::filesystem::path& path, const std::vector<std::string>& group_by,
                       const std::vector<SummaryRow>& summary);
/// One row per seed: design,method,merror_kind,merror_level,rho,seed,log10_mse.
void write_long_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

/// Median, mean and interquartile range with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace mekiv
