#include "mfc/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mfc/error.hpp"

namespace mfc {
namespace {

struct Edge {
    int row;
    int col;
    double flow;
};

// Spanning-tree basis over n row nodes [0, n) and m column nodes [n, n+m).
class NetworkSimplex {
public:
    NetworkSimplex(std::vector<double> supply, std::vector<double> demand,
                   std::span<const double> cost)
        : n_(static_cast<int>(supply.size())),
          m_(static_cast<int>(demand.size())),
          supply_(std::move(supply)),
          demand_(std::move(demand)),
          cost_(cost),
          adj_(n_ + m_),
          parent_edge_(n_ + m_),
          depth_(n_ + m_),
          potential_(n_ + m_) {}

    TransportSolution run() {
        northwest_corner();
        rebuild_tree();

        double cmax = 0.0;
        for (double c : cost_) cmax = std::max(cmax, std::abs(c));
        const double eps = 1e-13 * (1.0 + cmax);

        const long total = static_cast<long>(n_) * m_;
        const long block = std::max<long>(16, static_cast<long>(std::sqrt(double(total))));
        const long max_pivots = 200L * (n_ + m_) + 100000L;

        long cursor = 0;
        long pivots = 0;
        while (true) {
            long best = -1;
            double best_rc = -eps;
            long scanned = 0;
            // Block search: stop at the first block holding an improving cell.
            while (scanned < total) {
                const long stop = std::min(total, scanned + block);
                for (; scanned < stop; ++scanned) {
                    const long cell = cursor;
                    cursor = (cursor + 1 == total) ? 0 : cursor + 1;
                    const int i = static_cast<int>(cell / m_);
                    const int j = static_cast<int>(cell % m_);
                    const double rc = cost_[cell] - potential_[i] - potential_[n_ + j];
                    if (rc < best_rc) {
                        best_rc = rc;
                        best = cell;
                    }
                }
                if (best >= 0) break;
            }
            if (best < 0) break;
            pivot(static_cast<int>(best / m_), static_cast<int>(best % m_));
            if (++pivots > max_pivots)
                fail(ErrorCode::NotConverged, "network simplex exceeded pivot budget");
        }

        TransportSolution sol;
        sol.pivots = pivots;
        for (const Edge& e : edges_) {
            if (e.flow <= 0.0) continue;
            sol.cost += e.flow * cost_[static_cast<std::size_t>(e.row) * m_ + e.col];
            sol.plan.push_back({e.row, e.col, e.flow});
        }
        return sol;
    }

private:
    void northwest_corner() {
        std::vector<double> ra = supply_;
        std::vector<double> rb = demand_;
        int i = 0;
        int j = 0;
        while (true) {
            const double f = std::min(ra[i], rb[j]);
            add_edge(i, j, f);
            ra[i] -= f;
            rb[j] -= f;
            if (i == n_ - 1 && j == m_ - 1) break;
            if (i == n_ - 1) {
                ++j;
            } else if (j == m_ - 1) {
                ++i;
            } else if (ra[i] <= rb[j]) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    void add_edge(int i, int j, double flow) {
        const int id = static_cast<int>(edges_.size());
        edges_.push_back({i, j, flow});
        adj_[i].push_back(id);
        adj_[n_ + j].push_back(id);
    }

    int other_end(const Edge& e, int node) const {
        return node < n_ ? n_ + e.col : e.row;
    }

    void rebuild_tree() {
        std::fill(parent_edge_.begin(), parent_edge_.end(), -2);
        std::vector<int> queue;
        queue.reserve(n_ + m_);
        queue.push_back(0);
        parent_edge_[0] = -1;
        depth_[0] = 0;
        potential_[0] = 0.0;
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const int node = queue[q];
            for (int id : adj_[node]) {
                const Edge& e = edges_[id];
                const int next = other_end(e, node);
                if (parent_edge_[next] != -2) continue;
                parent_edge_[next] = id;
                depth_[next] = depth_[node] + 1;
                const double c = cost_[static_cast<std::size_t>(e.row) * m_ + e.col];
                // u_i + v_j = c_ij on basic cells.
                potential_[next] = c - potential_[node];
                queue.push_back(next);
            }
        }
        if (static_cast<int>(queue.size()) != n_ + m_)
            fail(ErrorCode::NotConverged, "network simplex basis is not a spanning tree");
    }

    void pivot(int row, int col) {
        // Tree path from column node back to the row node closes the cycle.
        int a = n_ + col;
        int b = row;
        std::vector<int> from_a;
        std::vector<int> from_b;
        while (a != b) {
            if (depth_[a] >= depth_[b]) {
                const int id = parent_edge_[a];
                from_a.push_back(id);
                a = other_end(edges_[id], a);
            } else {
                const int id = parent_edge_[b];
                from_b.push_back(id);
                b = other_end(edges_[id], b);
            }
        }
        std::vector<int> cycle = std::move(from_a);
        cycle.insert(cycle.end(), from_b.rbegin(), from_b.rend());

        // Entering cell gains theta; path edges alternate -, +, -, ...
        double theta = INFINITY;
        int leave = -1;
        for (std::size_t k = 0; k < cycle.size(); k += 2) {
            const double f = edges_[cycle[k]].flow;
            if (f < theta) {
                theta = f;
                leave = cycle[k];
            }
        }
        for (std::size_t k = 0; k < cycle.size(); ++k) {
            Edge& e = edges_[cycle[k]];
            e.flow += (k % 2 == 0) ? -theta : theta;
            if (e.flow < 0.0) e.flow = 0.0;
        }

        Edge& out = edges_[leave];
        auto erase_from = [this, leave](int node) {
            auto& list = adj_[node];
            list.erase(std::find(list.begin(), list.end(), leave));
        };
        erase_from(out.row);
        erase_from(n_ + out.col);
        out = Edge{row, col, theta};
        adj_[row].push_back(leave);
        adj_[n_ + col].push_back(leave);
        rebuild_tree();
    }

    int n_;
    int m_;
    std::vector<double> supply_;
    std::vector<double> demand_;
    std::span<const double> cost_;
    std::vector<Edge> edges_;
    std::vector<std::vector<int>> adj_;
    std::vector<int> parent_edge_;
    std::vector<int> depth_;
    std::vector<double> potential_;
};

}  // namespace

TransportSolution solve_transport(std::span<const double> supply, std::span<const double> demand,
                                  std::span<const double> cost) {
    require(!supply.empty() && !demand.empty(), ErrorCode::EmptyMeasure,
            "transport problem with an empty side");
    require(cost.size() == supply.size() * demand.size(), ErrorCode::DimensionMismatch,
            "cost matrix size does not match supplies x demands");
    const double sa = std::accumulate(supply.begin(), supply.end(), 0.0);
    const double sb = std::accumulate(demand.begin(), demand.end(), 0.0);
    require(sa > 0.0 && sb > 0.0, ErrorCode::EmptyMeasure, "transport problem with zero mass");
    for (double s : supply) require(s >= 0.0, ErrorCode::InvalidArgument, "negative supply");
    for (double d : demand) require(d >= 0.0, ErrorCode::InvalidArgument, "negative demand");

    std::vector<double> b(demand.begin(), demand.end());
    for (double& x : b) x *= sa / sb;
    NetworkSimplex ns(std::vector<double>(supply.begin(), supply.end()), std::move(b), cost);
    return ns.run();
}

}  // namespace mfc
