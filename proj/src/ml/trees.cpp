#include <algorithm>
#include <cmath>
#include <numeric>

#include "keydyn/ml.hpp"

namespace keydyn::ml {

double TreeParams::predict(std::span<const double> row) const {
    int node = 0;
    while (nodes[node].feature >= 0) {
        const TreeNode& n = nodes[node];
        node = row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[node].value;
}

namespace {

// Rows sorted by (value, tie_key) so prefix statistics do not depend on the
// original row order. Splits are only placed between distinct values.
struct SortedColumn {
    std::vector<std::size_t> order;
    std::vector<double> values;
};

SortedColumn sort_column(const Matrix& x, const std::vector<std::size_t>& rows, std::size_t feature,
                         const std::vector<double>& tie_key) {
    SortedColumn col;
    col.order = rows;
    std::sort(col.order.begin(), col.order.end(), [&](std::size_t a, std::size_t b) {
        const double va = x.at(a, feature), vb = x.at(b, feature);
        if (va != vb) return va < vb;
        return tie_key[a] < tie_key[b];
    });
    col.values.reserve(col.order.size());
    for (std::size_t r : col.order) col.values.push_back(x.at(r, feature));
    return col;
}

struct Split {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;
};

constexpr double kMinGain = 1e-12;

template <typename Scan>
void scan_splits(const SortedColumn& col, std::size_t feature, int min_leaf, Split& best,
                 Scan&& scan) {
    const std::size_t n = col.order.size();
    for (std::size_t i = 0; i + 1 < n; ++i) {
        scan.accumulate(col.order[i]);
        if (col.values[i] == col.values[i + 1]) continue;
        const std::size_t n_left = i + 1;
        const std::size_t n_right = n - n_left;
        if (n_left < static_cast<std::size_t>(min_leaf) ||
            n_right < static_cast<std::size_t>(min_leaf))
            continue;
        const double gain = scan.gain(n_left, n_right);
        if (gain > kMinGain && (!best.found || gain > best.gain + kMinGain)) {
            best.found = true;
            best.feature = feature;
            best.threshold = col.values[i] + 0.5 * (col.values[i + 1] - col.values[i]);
            best.gain = gain;
        }
    }
}

struct GiniScan {
    const std::vector<int>& y;
    std::vector<double> left_counts;
    std::vector<double> total_counts;
    double n_total = 0.0;
    double parent_gini = 0.0;

    void accumulate(std::size_t row) { left_counts[static_cast<std::size_t>(y[row])] += 1.0; }
    double gain(std::size_t n_left, std::size_t n_right) const {
        double gl = 1.0, gr = 1.0;
        const double nl = static_cast<double>(n_left), nr = static_cast<double>(n_right);
        for (std::size_t c = 0; c < left_counts.size(); ++c) {
            const double pl = left_counts[c] / nl;
            const double pr = (total_counts[c] - left_counts[c]) / nr;
            gl -= pl * pl;
            gr -= pr * pr;
        }
        return parent_gini - (nl / n_total) * gl - (nr / n_total) * gr;
    }
};

struct SseScan {
    const std::vector<double>& y;
    double left_sum = 0.0, left_sq = 0.0;
    double total_sum = 0.0, total_sq = 0.0;

    void accumulate(std::size_t row) {
        left_sum += y[row];
        left_sq += y[row] * y[row];
    }
    double gain(std::size_t n_left, std::size_t n_right) const {
        const double nl = static_cast<double>(n_left), nr = static_cast<double>(n_right);
        const double sse_left = left_sq - left_sum * left_sum / nl;
        const double right_sum = total_sum - left_sum;
        const double right_sq = total_sq - left_sq;
        const double sse_right = right_sq - right_sum * right_sum / nr;
        const double sse_parent = total_sq - total_sum * total_sum / (nl + nr);
        return sse_parent - sse_left - sse_right;
    }
};

struct GhScan {
    const std::vector<double>& g;
    const std::vector<double>& h;
    double lambda = 1.0;
    double left_g = 0.0, left_h = 0.0;
    double total_g = 0.0, total_h = 0.0;

    void accumulate(std::size_t row) {
        left_g += g[row];
        left_h += h[row];
    }
    double gain(std::size_t, std::size_t) const {
        const double rg = total_g - left_g, rh = total_h - left_h;
        return 0.5 * (left_g * left_g / (left_h + lambda) + rg * rg / (rh + lambda) -
                      total_g * total_g / (total_h + lambda));
    }
};

template <typename MakeScan, typename LeafValue>
TreeParams grow(const Matrix& x, const std::vector<double>& tie_key, int max_depth, int min_leaf,
                MakeScan&& make_scan, LeafValue&& leaf_value) {
    TreeParams tree;
    struct Job {
        std::vector<std::size_t> rows;
        int depth;
        int node;
    };
    std::vector<std::size_t> all(x.rows);
    std::iota(all.begin(), all.end(), 0);
    tree.nodes.emplace_back();
    std::vector<Job> stack;
    stack.push_back({std::move(all), 0, 0});
    while (!stack.empty()) {
        Job job = std::move(stack.back());
        stack.pop_back();
        Split best;
        if (job.depth < max_depth && job.rows.size() >= 2 * static_cast<std::size_t>(min_leaf)) {
            for (std::size_t f = 0; f < x.cols; ++f) {
                const SortedColumn col = sort_column(x, job.rows, f, tie_key);
                scan_splits(col, f, min_leaf, best, make_scan(job.rows));
            }
        }
        if (!best.found) {
            tree.nodes[static_cast<std::size_t>(job.node)].feature = -1;
            tree.nodes[static_cast<std::size_t>(job.node)].value = leaf_value(job.rows);
            continue;
        }
        std::vector<std::size_t> left, right;
        for (std::size_t r : job.rows)
            (x.at(r, best.feature) <= best.threshold ? left : right).push_back(r);
        const int left_idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const int right_idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        TreeNode& node = tree.nodes[static_cast<std::size_t>(job.node)];
        node.feature = static_cast<int>(best.feature);
        node.threshold = best.threshold;
        node.left = left_idx;
        node.right = right_idx;
        stack.push_back({std::move(right), job.depth + 1, right_idx});
        stack.push_back({std::move(left), job.depth + 1, left_idx});
    }
    return tree;
}

}  // namespace

TreeParams grow_tree_classify(const Matrix& x, const std::vector<int>& y, int n_classes,
                              const TreeGrowConfig& cfg) {
    std::vector<double> tie_key(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) tie_key[i] = static_cast<double>(y[i]);

    auto make_scan = [&](const std::vector<std::size_t>& rows) {
        GiniScan scan{y, std::vector<double>(static_cast<std::size_t>(n_classes), 0.0),
                      std::vector<double>(static_cast<std::size_t>(n_classes), 0.0), 0.0, 0.0};
        for (std::size_t r : rows) scan.total_counts[static_cast<std::size_t>(y[r])] += 1.0;
        scan.n_total = static_cast<double>(rows.size());
        scan.parent_gini = 1.0;
        for (double c : scan.total_counts) {
            const double p = c / scan.n_total;
            scan.parent_gini -= p * p;
        }
        return scan;
    };
    auto leaf_value = [&](const std::vector<std::size_t>& rows) {
        std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
        for (std::size_t r : rows) ++counts[static_cast<std::size_t>(y[r])];
        std::size_t best = 0;
        for (std::size_t c = 1; c < counts.size(); ++c)
            if (counts[c] > counts[best]) best = c;
        return static_cast<double>(best);
    };
    return grow(x, tie_key, cfg.max_depth, cfg.min_samples_leaf, make_scan, leaf_value);
}

TreeParams grow_tree_regress(const Matrix& x, const std::vector<double>& y,
                             const TreeGrowConfig& cfg) {
    auto make_scan = [&](const std::vector<std::size_t>& rows) {
        SseScan scan{y};
        for (std::size_t r : rows) {
            scan.total_sum += y[r];
            scan.total_sq += y[r] * y[r];
        }
        return scan;
    };
    auto leaf_value = [&](const std::vector<std::size_t>& rows) {
        double sum = 0.0;
        for (std::size_t r : rows) sum += y[r];
        return sum / static_cast<double>(rows.size());
    };
    return grow(x, y, cfg.max_depth, cfg.min_samples_leaf, make_scan, leaf_value);
}

TreeParams grow_tree_gh(const Matrix& x, const std::vector<double>& g,
                        const std::vector<double>& h, int max_depth, double lambda) {
    auto make_scan = [&](const std::vector<std::size_t>& rows) {
        GhScan scan{g, h, lambda};
        for (std::size_t r : rows) {
            scan.total_g += g[r];
            scan.total_h += h[r];
        }
        return scan;
    };
    auto leaf_value = [&](const std::vector<std::size_t>& rows) {
        double tg = 0.0, th = 0.0;
        for (std::size_t r : rows) {
            tg += g[r];
            th += h[r];
        }
        return -tg / (th + lambda);
    };
    return grow(x, g, max_depth, 1, make_scan, leaf_value);
}

}  // namespace keydyn::ml
