#pragma once

#include "mekiv/datagen.hpp"
#include "mekiv/mekiv.hpp"

#include <string>
#include <vector>

namespace mekiv {

/// Treatment proxy handed to plain KIV: the true X, M alone, or (M + N)/2.
enum class BaselineKind { oracle, m_as_x, mn_average };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline(const std::string& s);

/// Stage-1 treatment proxy for the chosen baseline.
PointList baseline_proxy(BaselineKind kind, const Dataset& data);

/// Everything kiv_fit decides before the structural regression, exposed so callers
/// can reproduce its stage-2 inputs.
Stage2Inputs kiv_stage2_inputs(BaselineKind kind, const DesignSplits& splits,
                               const std::vector<double>& lambda_grid);

StructuralFn kiv_fit(BaselineKind kind, const DesignSplits& splits, const std::vector<double>& lambda_grid,
                     const std::vector<double>& xi_grid);

}  // namespace mekiv
