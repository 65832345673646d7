#include "mekiv/baselines.hpp"

#include "mekiv/errors.hpp"

namespace mekiv {

std::string to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::oracle: return "kiv-oracle";
        case BaselineKind::m_as_x: return "kiv-m";
        case BaselineKind::mn_average: return "kiv-mn";
    }
    return "unknown";
}

BaselineKind parse_baseline(const std::string& s) {
    if (s == "kiv-oracle") return BaselineKind::oracle;
    if (s == "kiv-m") return BaselineKind::m_as_x;
    if (s == "kiv-mn") return BaselineKind::mn_average;
    throw PreconditionError("unknown baseline '" + s + "'");
}

PointList baseline_proxy(BaselineKind kind, const Dataset& data) {
    const auto require = [&](const PointList& col, const char* name) {
        if (col.rows() != data.size() || col.cols() == 0) {
            throw PreconditionError(std::string(to_string(kind)) + " requires column " + name);
        }
    };
    switch (kind) {
        case BaselineKind::oracle:
            require(data.x, "x");
            return data.x;
        case BaselineKind::m_as_x:
            require(data.m, "m");
            return data.m;
        case BaselineKind::mn_average:
            require(data.m, "m");
            require(data.n, "n");
            return 0.5 * (data.m + data.n);
    }
    throw PreconditionError("unknown baseline kind");
}

Stage2Inputs kiv_stage2_inputs(BaselineKind kind, const DesignSplits& splits,
                               const std::vector<double>& lambda_grid) {
    const Dataset& d1 = splits.stage1;
    if (splits.stage2.size() < 1) throw PreconditionError("kiv_fit: stage-2 split is empty");
    const PointList proxy = baseline_proxy(kind, d1);

    const Standardizer z_std = Standardizer::fit(d1.z);
    const PointList z1 = z_std.apply(d1.z);
    const Standardizer x_std = Standardizer::fit(proxy);
    const PointList x1 = x_std.apply(proxy);
    KernelSpec kernel_z(median_heuristic(z1));
    KernelSpec kernel_x(median_heuristic(x1));
    const double lambda = validate_lambda(z1, x1, kernel_z, kernel_x, lambda_grid);
    return Stage2Inputs{x1, kernel_x, x_std, lambda, z1, kernel_z, z_std.apply(splits.stage2.z), d1.y,
                        splits.stage2.y};
}

StructuralFn kiv_fit(BaselineKind kind, const DesignSplits& splits, const std::vector<double>& lambda_grid,
                     const std::vector<double>& xi_grid) {
    return step3(kiv_stage2_inputs(kind, splits, lambda_grid), xi_grid);
}

}  // namespace mekiv
