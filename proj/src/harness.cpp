#include "mekiv/harness.hpp"

#include "mekiv/baselines.hpp"
#include "mekiv/errors.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace mekiv {

std::string to_string(Method m) {
    switch (m) {
        case Method::mekiv: return "mekiv";
        case Method::kiv_oracle: return "kiv-oracle";
        case Method::kiv_m: return "kiv-m";
        case Method::kiv_mn: return "kiv-mn";
    }
    return "unknown";
}

Method parse_method(const std::string& s) {
    if (s == "mekiv") return Method::mekiv;
    if (s == "kiv-oracle") return Method::kiv_oracle;
    if (s == "kiv-m") return Method::kiv_m;
    if (s == "kiv-mn") return Method::kiv_mn;
    throw PreconditionError("unknown method '" + s + "' (expected mekiv, kiv-oracle, kiv-m or kiv-mn)");
}

void ExperimentConfig::validate() const {
    if (designs.empty()) throw PreconditionError("config: designs must be nonempty");
    if (methods.empty()) throw PreconditionError("config: methods must be nonempty");
    if (seeds.empty()) throw PreconditionError("config: seeds must be nonempty");
    if (n_stage1 < 20 || n_stage2 < 1) throw PreconditionError("config: need n_stage1 >= 20 and n_stage2 >= 1");
    if (test_grid_size < 2) throw PreconditionError("config: test_grid_size must be >= 2");
    if (lambda_grid.empty() || xi_grid.empty()) throw PreconditionError("config: hyperparameter grids must be nonempty");
    for (const auto& d : designs) {
        DesignSpec probe = d;
        probe.sample_size = n_stage1 + n_stage2;
        probe.validate();
    }
}

nlohmann::json design_spec_to_json(const DesignSpec& s) {
    nlohmann::json j;
    j["design"] = to_string(s.design);
    j["rho"] = s.rho ? nlohmann::json(*s.rho) : nlohmann::json(nullptr);
    j["merror_kind"] = to_string(s.merror_kind);
    j["merror_level"] = s.merror_level;
    j["sample_size"] = s.sample_size;
    j["seed"] = s.seed;
    return j;
}

DesignSpec design_spec_from_json(const nlohmann::json& j) {
    DesignSpec s;
    s.design = parse_design(j.at("design").get<std::string>());
    if (j.contains("rho") && !j.at("rho").is_null()) s.rho = j.at("rho").get<double>();
    s.merror_kind = parse_merror_kind(j.value("merror_kind", std::string("gaussian")));
    s.merror_level = j.value("merror_level", 1.0);
    s.sample_size = j.value("sample_size", Eigen::Index{1000});
    s.seed = j.value("seed", std::uint64_t{0});
    return s;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    for (const auto& d : j.at("designs")) c.designs.push_back(design_spec_from_json(d));
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.n_stage1 = j.value("n_stage1", c.n_stage1);
    c.n_stage2 = j.value("n_stage2", c.n_stage2);
    c.test_grid_size = j.value("test_grid_size", c.test_grid_size);
    c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
    c.xi_grid = j.value("xi_grid", c.xi_grid);
    if (j.contains("step2")) {
        const auto& s = j.at("step2");
        c.step2.alpha_count = s.value("alpha_count", c.step2.alpha_count);
        c.step2.pair_cap = s.value("pair_cap", c.step2.pair_cap);
        c.step2.initial_step = s.value("initial_step", c.step2.initial_step);
        c.step2.max_iters = s.value("max_iters", c.step2.max_iters);
        c.step2.tol = s.value("tol", c.step2.tol);
        c.step2.patience = s.value("patience", c.step2.patience);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.workers = j.value("workers", c.workers);
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["designs"] = nlohmann::json::array();
    for (const auto& d : c.designs) {
        auto dj = design_spec_to_json(d);
        dj.erase("sample_size");
        dj.erase("seed");
        j["designs"].push_back(dj);
    }
    j["methods"] = nlohmann::json::array();
    for (auto m : c.methods) j["methods"].push_back(to_string(m));
    j["seeds"] = c.seeds;
    j["n_stage1"] = c.n_stage1;
    j["n_stage2"] = c.n_stage2;
    j["test_grid_size"] = c.test_grid_size;
    j["lambda_grid"] = c.lambda_grid;
    j["xi_grid"] = c.xi_grid;
    j["step2"] = {{"alpha_count", c.step2.alpha_count}, {"pair_cap", c.step2.pair_cap},
                  {"initial_step", c.step2.initial_step}, {"max_iters", c.step2.max_iters},
                  {"tol", c.step2.tol},                 {"patience", c.step2.patience}};
    j["output_dir"] = c.output_dir;
    j["workers"] = c.workers;
    return j;
}

PointList central_grid(Eigen::Index grid_size) {
    if (grid_size < 2) throw PreconditionError("central_grid: need at least 2 points");
    return Eigen::VectorXd::LinSpaced(grid_size, 0.05, 0.95);
}

PointList demand_test_points(double rho, std::uint64_t seed) {
    DesignSpec spec;
    spec.design = Design::demand;
    spec.rho = rho;
    spec.sample_size = 2500;
    spec.seed = seed ^ 0x7e57da7aULL;
    return gen_demand(spec).x;
}

double mse_out_of_sample(const Predictor& f, Design design, std::optional<double> rho, Eigen::Index grid_size,
                         std::uint64_t seed) {
    const PointList pts = design == Design::demand ? demand_test_points(rho.value_or(0.5), seed)
                                                   : central_grid(grid_size);
    const Eigen::VectorXd pred = f(pts);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const double diff = pred[i] - structural_truth(design, pts.row(i).transpose());
        acc += diff * diff;
    }
    return acc / static_cast<double>(pts.rows());
}

FitOutcome fit_method(Method method, const DesignSplits& splits, const ExperimentConfig& config, std::uint64_t seed) {
    switch (method) {
        case Method::mekiv: {
            MekivConfig mc;
            mc.lambda_grid = config.lambda_grid;
            mc.xi_grid = config.xi_grid;
            mc.step2 = config.step2;
            mc.seed = seed;
            MekivFit fit = mekiv_fit(splits, mc);
            return FitOutcome{std::move(fit.structural), std::move(fit.latents), fit.lambda_n, fit.lambda_mn};
        }
        case Method::kiv_oracle:
            return FitOutcome{kiv_fit(BaselineKind::oracle, splits, config.lambda_grid, config.xi_grid), {}, {}, {}};
        case Method::kiv_m:
            return FitOutcome{kiv_fit(BaselineKind::m_as_x, splits, config.lambda_grid, config.xi_grid), {}, {}, {}};
        case Method::kiv_mn:
            return FitOutcome{kiv_fit(BaselineKind::mn_average, splits, config.lambda_grid, config.xi_grid), {}, {},
                              {}};
    }
    throw PreconditionError("fit_method: unknown method");
}

namespace {

std::string sanitize(std::string s) {
    for (char& ch : s) {
        if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
    }
    return s;
}

}  // namespace

ResultRow run_cell(const ExperimentConfig& config, const DesignSpec& design, Method method, std::uint64_t seed) {
    ResultRow row;
    row.design = design.design;
    row.method = method;
    row.merror_kind = design.merror_kind;
    row.merror_level = design.merror_level;
    row.rho = design.rho;
    row.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    try {
        DesignSpec spec = design;
        spec.seed = seed;
        const DesignSplits splits = generate_splits(spec, config.n_stage1, config.n_stage2);
        const FitOutcome fit = fit_method(method, splits, config, seed);
        const StructuralFn& fn = fit.structural;
        row.mse = mse_out_of_sample([&](const PointList& xs) { return fn.predict_many(xs); }, spec.design, spec.rho,
                                    config.test_grid_size, seed);
        row.log10_mse = std::log10(row.mse);
        if (fit.latents) row.dropped_pairs = fit.latents->dropped_pair_count;
        if (!std::isfinite(row.mse)) row.status = "error: non-finite mse";
    } catch (const std::exception& e) {
        row.mse = std::numeric_limits<double>::quiet_NaN();
        row.log10_mse = std::numeric_limits<double>::quiet_NaN();
        row.status = "error: " + sanitize(e.what());
    }
    row.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

int worker_count(const ExperimentConfig& config) {
    if (const char* env = std::getenv("MEKIV_WORKERS")) {
        int value = 0;
        const char* end = env + std::char_traits<char>::length(env);
        if (std::from_chars(env, end, value).ec == std::errc{} && value > 0) return value;
    }
    return std::max(config.workers, 1);
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& config, bool write_files) {
    config.validate();
    struct Cell {
        std::size_t design_index;
        std::size_t method_index;
        std::size_t seed_index;
    };
    std::vector<Cell> cells;
    for (std::size_t d = 0; d < config.designs.size(); ++d)
        for (std::size_t m = 0; m < config.methods.size(); ++m)
            for (std::size_t s = 0; s < config.seeds.size(); ++s) cells.push_back({d, m, s});

    std::filesystem::path results_path;
    std::ofstream appender;
    if (write_files) {
        std::error_code ec;
        std::filesystem::create_directories(config.output_dir, ec);
        results_path = std::filesystem::path(config.output_dir) / "results.csv";
        appender.open(results_path, std::ios::out | std::ios::trunc);
        if (!appender) throw std::runtime_error("cannot write results to " + results_path.string());
        appender << kResultsHeader << '\n' << std::flush;
    }

    std::vector<std::optional<ResultRow>> rows(cells.size());
    std::mutex write_mutex;
    std::atomic<std::size_t> next{0};
    const auto work = [&]() {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            const Cell& c = cells[i];
            ResultRow row = run_cell(config, config.designs[c.design_index], config.methods[c.method_index],
                                     config.seeds[c.seed_index]);
            std::lock_guard lock(write_mutex);
            if (appender) appender << results_csv_line(row) << '\n' << std::flush;
            rows[i] = std::move(row);
        }
    };
    const int workers = std::min<int>(worker_count(config), static_cast<int>(cells.size()));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    // cells were enumerated in (design, method, seed) order.
    std::vector<ResultRow> out;
    out.reserve(rows.size());
    for (auto& r : rows) out.push_back(std::move(*r));
    if (write_files) {
        appender.close();
        write_results_csv(results_path, out);
    }
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string results_csv_line(const ResultRow& r) {
    std::ostringstream os;
    os << to_string(r.design) << ',' << to_string(r.method) << ',' << to_string(r.merror_kind) << ','
       << format_double(r.merror_level) << ',' << (r.rho ? format_double(*r.rho) : "") << ',' << r.seed << ','
       << format_double(r.mse) << ',' << format_double(r.log10_mse) << ',' << format_double(r.wall_time_seconds)
       << ',' << (r.dropped_pairs ? std::to_string(*r.dropped_pairs) : "") << ',' << r.status;
    return os.str();
}

void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::out | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << kResultsHeader << '\n';
    for (const auto& r : rows) out << results_csv_line(r) << '\n';
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw PreconditionError("CSV: cannot parse number '" + s + "'");
    }
    return v;
}

}  // namespace

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv(line) != split_csv(kResultsHeader)) {
        throw PreconditionError("results CSV header mismatch in " + path.string());
    }
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 11) throw PreconditionError("results CSV: expected 11 fields in line: " + line);
        ResultRow r;
        r.design = parse_design(f[0]);
        r.method = parse_method(f[1]);
        r.merror_kind = parse_merror_kind(f[2]);
        r.merror_level = parse_double(f[3]);
        if (!f[4].empty()) r.rho = parse_double(f[4]);
        r.seed = std::stoull(f[5]);
        r.mse = parse_double(f[6]);
        r.log10_mse = parse_double(f[7]);
        r.wall_time_seconds = parse_double(f[8]);
        if (!f[9].empty()) r.dropped_pairs = std::stoull(f[9]);
        r.status = f[10];
        rows.push_back(std::move(r));
    }
    return rows;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("quantile: no values");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

std::string key_field(const ResultRow& r, const std::string& key) {
    if (key == "design") return to_string(r.design);
    if (key == "method") return to_string(r.method);
    if (key == "merror_kind") return to_string(r.merror_kind);
    if (key == "merror_level") return format_double(r.merror_level);
    if (key == "rho") return r.rho ? format_double(*r.rho) : "";
    if (key == "seed") return std::to_string(r.seed);
    throw PreconditionError("report: unknown group-by key '" + key + "'");
}

}  // namespace

std::vector<SummaryRow> report(const std::vector<ResultRow>& rows, const std::vector<std::string>& group_by) {
    if (rows.empty()) throw PreconditionError("report: no result rows");
    std::vector<std::vector<std::string>> order;
    std::map<std::vector<std::string>, std::vector<double>> groups;
    for (const auto& r : rows) {
        std::vector<std::string> key;
        for (const auto& k : group_by) key.push_back(key_field(r, k));
        if (!r.ok() || !std::isfinite(r.log10_mse)) continue;
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) order.push_back(key);
        it->second.push_back(r.log10_mse);
    }
    std::vector<SummaryRow> out;
    for (const auto& key : order) {
        const auto& v = groups.at(key);
        SummaryRow s;
        s.key = key;
        s.count = v.size();
        s.median = quantile(v, 0.5);
        double sum = 0.0;
        for (double x : v) sum += x;
        s.mean = sum / static_cast<double>(v.size());
        s.iqr = quantile(v, 0.75) - quantile(v, 0.25);
        out.push_back(std::move(s));
    }
    return out;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<std::string>& group_by,
                       const std::vector<SummaryRow>& summary) {
    std::ofstream out(path, std::ios::out | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& k : group_by) out << k << ',';
    out << "count,median_log10_mse,mean_log10_mse,iqr_log10_mse\n";
    for (const auto& s : summary) {
        for (const auto& k : s.key) out << k << ',';
        out << s.count << ',' << format_double(s.median) << ',' << format_double(s.mean) << ','
            << format_double(s.iqr) << '\n';
    }
}

void write_long_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::out | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "design,method,merror_kind,merror_level,rho,seed,log10_mse\n";
    for (const auto& r : rows) {
        if (!r.ok()) continue;
        out << to_string(r.design) << ',' << to_string(r.method) << ',' << to_string(r.merror_kind) << ','
            << format_double(r.merror_level) << ',' << (r.rho ? format_double(*r.rho) : "") << ',' << r.seed << ','
            << format_double(r.log10_mse) << '\n';
    }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const auto header = [&](const char* prefix, Eigen::Index cols) {
        for (Eigen::Index c = 0; c < cols; ++c) out << prefix << c << ',';
    };
    header("z_", data.z.cols());
    header("x_", data.x.cols());
    header("m_", data.m.cols());
    header("n_", data.n.cols());
    out << "y\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (const PointList* block : {&data.z, &data.x, &data.m, &data.n}) {
            for (Eigen::Index c = 0; c < block->cols(); ++c) out << format_double((*block)(i, c)) << ',';
        }
        out << format_double(data.y[i]) << '\n';
    }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw PreconditionError("dataset CSV is empty: " + path.string());
    const auto names = split_csv(line);
    std::map<char, Eigen::Index> width;
    for (std::size_t i = 0; i + 1 < names.size(); ++i) {
        const auto& nm = names[i];
        if (nm.size() < 3 || nm[1] != '_' || std::string("zxmn").find(nm[0]) == std::string::npos) {
            throw PreconditionError("dataset CSV: unexpected column '" + nm + "'");
        }
        ++width[nm[0]];
    }
    if (names.empty() || names.back() != "y") throw PreconditionError("dataset CSV: last column must be y");

    std::vector<std::vector<double>> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != names.size()) throw PreconditionError("dataset CSV: ragged row");
        std::vector<double> rec;
        rec.reserve(f.size());
        for (const auto& v : f) rec.push_back(parse_double(v));
        records.push_back(std::move(rec));
    }
    const auto n = static_cast<Eigen::Index>(records.size());
    Dataset d{PointList(n, width['z']), PointList(n, width['x']), PointList(n, width['m']),
              PointList(n, width['n']), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& rec = records[static_cast<std::size_t>(i)];
        std::size_t col = 0;
        for (PointList* block : {&d.z, &d.x, &d.m, &d.n}) {
            for (Eigen::Index c = 0; c < block->cols(); ++c) (*block)(i, c) = rec[col++];
        }
        d.y[i] = rec[col];
    }
    return d;
}

}  // namespace mekiv
