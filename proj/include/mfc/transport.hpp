#pragma once

#include <span>
#include <vector>

namespace mfc {

struct TransportPlanEntry {
    int source;
    int sink;
    double flow;
};

struct TransportSolution {
    double cost = 0.0;
    std::vector<TransportPlanEntry> plan;
    long pivots = 0;
};

/// Balanced transportation problem solved by the primal network simplex on
/// the bipartite spanning-tree basis, with block-search pricing.
///
/// `cost` is row-major n x m. Supplies and demands must be nonnegative; the
/// demands are rescaled to the supply total.
TransportSolution solve_transport(std::span<const double> supply, std::span<const double> demand,
                                  std::span<const double> cost);

}  // namespace mfc
