#pragma once

#include <string>

#include "ctree/consistency.hpp"

namespace ctree {

std::string consistency_matrix_json(const ConsistencyMatrix& matrix);

/// Annotated SVG heatmap of a consistency matrix.
std::string render_heatmap_svg(const ConsistencyMatrix& matrix);

}  // namespace ctree
