#include "mekiv/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using mekiv::ExperimentConfig;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return nlohmann::json::parse(in);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

template <typename T>
std::vector<double> to_vec(const T& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json model_summary(mekiv::Method method, const mekiv::FitOutcome& fit) {
    const auto& f = fit.structural;
    nlohmann::json j;
    j["method"] = mekiv::to_string(method);
    j["lambda"] = f.lambda();
    j["xi"] = f.xi();
    j["kernel_lengthscales"] = to_vec(f.kernel_x().lengthscales());
    j["x_mean"] = to_vec(f.x_std().mean());
    j["x_scale"] = to_vec(f.x_std().scale());
    j["y_mean"] = f.y_mean();
    j["y_scale"] = f.y_scale();
    j["anchor_count"] = f.anchors().rows();
    j["beta"] = to_vec(f.beta());
    nlohmann::json anchors = nlohmann::json::array();
    for (Eigen::Index i = 0; i < f.anchors().rows(); ++i) anchors.push_back(to_vec(Eigen::RowVectorXd(f.anchors().row(i))));
    j["anchors_standardized"] = anchors;
    if (fit.latents) {
        const auto& l = *fit.latents;
        j["lambda_n"] = *fit.lambda_n;
        j["lambda_mn"] = *fit.lambda_mn;
        j["lambda_x"] = l.lambda_x;
        j["step2_iterations"] = l.iterations;
        j["step2_initial_loss"] = l.loss_trace.front();
        j["step2_final_loss"] = l.loss_trace.back();
        j["dropped_pairs"] = l.dropped_pair_count;
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Measurement-error kernel instrumental variable regression benchmarks"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Write stage-1/stage-2 dataset CSVs and a spec sidecar");
    std::string design = "linear", kind = "gaussian", gen_out = "data";
    double level = 1.0;
    std::optional<double> rho;
    Eigen::Index n1 = 500, n2 = 500;
    std::uint64_t gen_seed = 0;
    gen->add_option("--design", design, "linear, sigmoid or demand")->capture_default_str();
    gen->add_option("--merror-kind", kind, "gaussian or mog")->capture_default_str();
    gen->add_option("--merror-level", level, "noise sd as a multiple of sd(X); 0 disables")->capture_default_str();
    gen->add_option("--rho", rho, "confounding level (demand only)");
    gen->add_option("--n-stage1", n1)->capture_default_str();
    gen->add_option("--n-stage2", n2)->capture_default_str();
    gen->add_option("--seed", gen_seed)->required();
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();

    // fit
    auto* fit = app.add_subcommand("fit", "Fit one method on a generated dataset and write a model summary");
    std::string data_dir, method = "mekiv", fit_out = "model.json", fit_config;
    std::uint64_t fit_seed = 0;
    fit->add_option("--data", data_dir, "directory written by `generate`")->required();
    fit->add_option("--method", method, "mekiv, kiv-oracle, kiv-m or kiv-mn")->capture_default_str();
    fit->add_option("--config", fit_config, "experiment config JSON supplying grids and step-2 settings");
    fit->add_option("--seed", fit_seed, "seed for the step-2 frequency draws")->capture_default_str();
    fit->add_option("--out", fit_out)->capture_default_str();

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "Run the method x design x seed grid from a config file");
    std::string bench_config, bench_out;
    bench->add_option("--config", bench_config)->required();
    bench->add_option("--output-dir", bench_out, "overrides output_dir from the config");

    // report
    auto* rep = app.add_subcommand("report", "Aggregate a results CSV");
    std::string results_path, rep_out = ".";
    std::vector<std::string> group_by{"design", "method", "merror_kind", "merror_level", "rho"};
    rep->add_option("--results", results_path)->required();
    rep->add_option("--group-by", group_by)->delimiter(',')->capture_default_str();
    rep->add_option("--out", rep_out, "directory for summary.csv and long.csv")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            mekiv::DesignSpec spec;
            spec.design = mekiv::parse_design(design);
            spec.merror_kind = mekiv::parse_merror_kind(kind);
            spec.merror_level = level;
            spec.rho = rho;
            spec.seed = gen_seed;
            const auto splits = mekiv::generate_splits(spec, n1, n2);
            fs::create_directories(gen_out);
            mekiv::write_dataset_csv(fs::path(gen_out) / "stage1.csv", splits.stage1);
            mekiv::write_dataset_csv(fs::path(gen_out) / "stage2.csv", splits.stage2);
            auto sidecar = mekiv::design_spec_to_json(splits.spec);
            sidecar["n_stage1"] = n1;
            sidecar["n_stage2"] = n2;
            write_json(fs::path(gen_out) / "spec.json", sidecar);
            std::cout << "wrote " << n1 << " + " << n2 << " rows to " << gen_out << '\n';
        } else if (*fit) {
            ExperimentConfig config;
            if (!fit_config.empty()) config = mekiv::config_from_json(read_json(fit_config));
            mekiv::DesignSplits splits;
            splits.stage1 = mekiv::read_dataset_csv(fs::path(data_dir) / "stage1.csv");
            splits.stage2 = mekiv::read_dataset_csv(fs::path(data_dir) / "stage2.csv");
            const fs::path spec_path = fs::path(data_dir) / "spec.json";
            std::optional<mekiv::DesignSpec> spec;
            if (fs::exists(spec_path)) spec = mekiv::design_spec_from_json(read_json(spec_path));
            if (spec) splits.spec = *spec;

            const auto m = mekiv::parse_method(method);
            const auto start = std::chrono::steady_clock::now();
            const auto outcome = mekiv::fit_method(m, splits, config, fit_seed);
            auto summary = model_summary(m, outcome);
            summary["wall_time_seconds"] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (spec) {
                const auto& f = outcome.structural;
                summary["mse"] = mekiv::mse_out_of_sample(
                    [&](const mekiv::PointList& xs) { return f.predict_many(xs); }, spec->design, spec->rho,
                    config.test_grid_size, spec->seed);
            }
            write_json(fit_out, summary);
            std::cout << "wrote " << fit_out << '\n';
        } else if (*bench) {
            ExperimentConfig config = mekiv::config_from_json(read_json(bench_config));
            if (!bench_out.empty()) config.output_dir = bench_out;
            const auto rows = mekiv::run_experiment(config);
            std::size_t failed = 0;
            for (const auto& r : rows) failed += r.ok() ? 0 : 1;
            const fs::path dir(config.output_dir);
            const std::vector<std::string> keys{"design", "method", "merror_kind", "merror_level", "rho"};
            mekiv::write_summary_csv(dir / "summary.csv", keys, mekiv::report(rows, keys));
            mekiv::write_long_csv(dir / "long.csv", rows);
            write_json(dir / "config.json", mekiv::config_to_json(config));
            std::cout << rows.size() << " cells (" << failed << " failed), results in " << dir / "results.csv" << '\n';
        } else if (*rep) {
            const auto rows = mekiv::read_results_csv(results_path);
            fs::create_directories(rep_out);
            mekiv::write_summary_csv(fs::path(rep_out) / "summary.csv", group_by, mekiv::report(rows, group_by));
            mekiv::write_long_csv(fs::path(rep_out) / "long.csv", rows);
            std::cout << "wrote " << fs::path(rep_out) / "summary.csv" << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
