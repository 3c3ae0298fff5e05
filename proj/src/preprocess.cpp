#include "keydyn/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace keydyn {

nlohmann::json Standardizer::to_json(const std::vector<std::string>& feature_names) const {
    nlohmann::json j;
    j["mean"] = mean;
    j["std"] = stddev;
    j["constant"] = constant_flag;
    j["fitted_on"] = fitted_on;
    if (!feature_names.empty()) j["features"] = feature_names;
    return j;
}

Standardizer fit_standardizer(const Matrix& x, const Mask& mask,
                              const std::vector<std::string>& fitted_on) {
    if (!mask.empty() && mask.size() != x.data.size())
        throw DimensionMismatch("mask size does not match matrix");
    Standardizer st;
    st.fitted_on = fitted_on;
    st.mean.assign(x.cols, 0.0);
    st.stddev.assign(x.cols, 1.0);
    st.constant_flag.assign(x.cols, 0);
    for (std::size_t c = 0; c < x.cols; ++c) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r = 0; r < x.rows; ++r) {
            if (!mask.empty() && mask[r * x.cols + c]) continue;
            sum += x.at(r, c);
            ++n;
        }
        const double mu = n ? sum / static_cast<double>(n) : 0.0;
        double ss = 0.0;
        for (std::size_t r = 0; r < x.rows; ++r) {
            if (!mask.empty() && mask[r * x.cols + c]) continue;
            const double d = x.at(r, c) - mu;
            ss += d * d;
        }
        const double sd = n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
        st.mean[c] = mu;
        if (sd > 0.0) {
            st.stddev[c] = sd;
        } else {
            st.stddev[c] = 1.0;
            st.constant_flag[c] = 1;
        }
    }
    return st;
}

Matrix impute_and_standardize(const Matrix& x, const Mask& mask, const Standardizer& st) {
    if (st.mean.size() != x.cols) throw DimensionMismatch("standardizer width mismatch");
    if (!mask.empty() && mask.size() != x.data.size())
        throw DimensionMismatch("mask size does not match matrix");
    Matrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        for (std::size_t c = 0; c < x.cols; ++c) {
            double v = x.at(r, c);
            if (!mask.empty() && mask[r * x.cols + c]) v = st.mean[c];
            out.at(r, c) = (v - st.mean[c]) / st.stddev[c];
        }
    }
    return out;
}

namespace {

// Interior quantile edges for equal-frequency binning, duplicates merged.
std::vector<double> frequency_edges(std::span<const double> x, int bins) {
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b) {
        const double e = quantile_sorted(sorted, static_cast<double>(b) / bins);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    return edges;
}

inline int bin_index(double v, const std::vector<double>& edges) {
    // number of edges strictly below v
    return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
}

}  // namespace

double mutual_information(std::span<const double> x, std::span<const int> y, int bins) {
    if (x.size() != y.size()) throw LengthMismatch("mutual_information length mismatch");
    if (x.size() < 2) throw LengthMismatch("mutual_information needs at least 2 samples");

    const auto edges = frequency_edges(x, bins);
    const int n_bins = static_cast<int>(edges.size()) + 1;

    std::map<int, int> class_index;
    for (int c : y)
        if (!class_index.count(c)) class_index.emplace(c, static_cast<int>(class_index.size()));
    const int n_classes = static_cast<int>(class_index.size());

    const std::size_t n = x.size();
    std::vector<double> joint(static_cast<std::size_t>(n_bins) * n_classes, 0.0);
    std::vector<double> p_bin(n_bins, 0.0), p_class(n_classes, 0.0);
    const double w = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int b = bin_index(x[i], edges);
        const int c = class_index.at(y[i]);
        joint[static_cast<std::size_t>(b) * n_classes + c] += w;
        p_bin[b] += w;
        p_class[c] += w;
    }
    double mi = 0.0;
    for (int b = 0; b < n_bins; ++b) {
        for (int c = 0; c < n_classes; ++c) {
            const double pbc = joint[static_cast<std::size_t>(b) * n_classes + c];
            if (pbc <= 0.0) continue;  // empty cells contribute 0
            mi += pbc * std::log(pbc / (p_bin[b] * p_class[c]));
        }
    }
    return mi;
}

std::vector<int> quartile_bin(std::span<const double> y) {
    std::vector<double> sorted(y.begin(), y.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (double p : {0.25, 0.5, 0.75}) {
        const double e = quantile_sorted(sorted, p);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    std::vector<int> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = bin_index(y[i], edges);
    return out;
}

nlohmann::json MISelector::to_json(const std::vector<std::string>& feature_names) const {
    nlohmann::json j;
    j["scores"] = scores;
    j["selected"] = selected;
    j["bins"] = bins;
    j["target_binning"] = target_binning == TargetBinning::Quartile ? "quartile" : "none";
    j["fitted_on"] = fitted_on;
    if (!feature_names.empty()) j["features"] = feature_names;
    return j;
}

namespace {

MISelector rank_features(const Matrix& x, const std::vector<int>& y, int k, int bins,
                         TargetBinning binning, const std::vector<std::string>& fitted_on) {
    if (k > static_cast<int>(x.cols))
        throw KTooLarge("k=" + std::to_string(k) + " exceeds feature count " +
                        std::to_string(x.cols));
    MISelector sel;
    sel.bins = bins;
    sel.target_binning = binning;
    sel.fitted_on = fitted_on;
    sel.scores.resize(x.cols);
    std::vector<double> column(x.rows);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (std::size_t r = 0; r < x.rows; ++r) column[r] = x.at(r, c);
        sel.scores[c] = mutual_information(column, y, bins);
    }
    std::vector<int> order(x.cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (sel.scores[a] != sel.scores[b]) return sel.scores[a] > sel.scores[b];
        return a < b;
    });
    sel.selected.assign(order.begin(), order.begin() + k);
    return sel;
}

}  // namespace

MISelector select_top_k(const Matrix& x, const std::vector<int>& y_class, int k, int bins,
                        const std::vector<std::string>& fitted_on) {
    return rank_features(x, y_class, k, bins, TargetBinning::None, fitted_on);
}

MISelector select_top_k(const Matrix& x, const std::vector<double>& y_real, int k, int bins,
                        const std::vector<std::string>& fitted_on) {
    return rank_features(x, quartile_bin(y_real), k, bins, TargetBinning::Quartile, fitted_on);
}

Matrix apply_selector(const Matrix& x, const MISelector& sel) {
    Matrix out(x.rows, sel.selected.size());
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < sel.selected.size(); ++j)
            out.at(r, j) = x.at(r, static_cast<std::size_t>(sel.selected[j]));
    return out;
}

std::vector<double> smote_interpolate(std::span<const double> x, std::span<const double> neighbor,
                                      std::mt19937_64& rng) {
    if (x.size() != neighbor.size()) throw DimensionMismatch("smote_interpolate dimensions differ");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + u * (neighbor[i] - x[i]);
    return out;
}

namespace {

// Indices of the k nearest rows to `query` among `candidates`, self excluded.
std::vector<std::size_t> nearest_rows(const Matrix& x, std::size_t query,
                                      const std::vector<std::size_t>& candidates, int k) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(candidates.size());
    for (std::size_t idx : candidates) {
        if (idx == query) continue;
        dist.emplace_back(euclidean(x.row(query), x.row(idx)), idx);
    }
    std::sort(dist.begin(), dist.end());
    if (dist.size() > static_cast<std::size_t>(k)) dist.resize(k);
    std::vector<std::size_t> out;
    out.reserve(dist.size());
    for (auto& [d, idx] : dist) out.push_back(idx);
    return out;
}

}  // namespace

SmoteResult borderline_smote(const Matrix& x, const std::vector<int>& y, const SmoteConfig& cfg) {
    if (x.rows != y.size()) throw DimensionMismatch("borderline_smote rows/labels mismatch");
    if (cfg.k_generate < 1 || cfg.m_danger < cfg.k_generate)
        throw BadSpec("smote config requires m_danger >= k_generate >= 1");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);

    std::size_t majority_count = 0;
    for (const auto& [cls, rows] : by_class) majority_count = std::max(majority_count, rows.size());

    SmoteResult result;
    result.x = x;
    result.y = y;
    result.n_original = x.rows;

    std::vector<std::size_t> all_rows(x.rows);
    std::iota(all_rows.begin(), all_rows.end(), 0);

    std::mt19937_64 rng(cfg.seed);

    for (const auto& [cls, rows] : by_class) {
        if (rows.size() == majority_count) continue;
        if (rows.size() < 2)
            throw TooFewMinority("class " + std::to_string(cls) + " has fewer than 2 samples");
        result.oversampled_classes.push_back(cls);

        // DANGER: at least half but not all of the m nearest neighbors
        // belong to other classes. m' = m excludes the sample as noise.
        std::vector<std::size_t> danger;
        for (std::size_t i : rows) {
            const auto nn = nearest_rows(x, i, all_rows, cfg.m_danger);
            int other = 0;
            for (std::size_t j : nn)
                if (y[j] != cls) ++other;
            const int m = static_cast<int>(nn.size());
            if (2 * other >= m && other < m) danger.push_back(i);
        }

        std::vector<std::size_t> seeds = danger;
        if (seeds.empty()) {
            result.fallback_used = true;  // vanilla SMOTE over the whole class
            seeds = rows;
        }

        // k_generate nearest same-class neighbors per seed.
        std::vector<std::vector<std::size_t>> neighbor_sets(seeds.size());
        for (std::size_t s = 0; s < seeds.size(); ++s)
            neighbor_sets[s] = nearest_rows(x, seeds[s], rows, cfg.k_generate);

        const std::size_t need = majority_count - rows.size();
        std::size_t produced = 0;
        std::size_t s = 0;
        while (produced < need) {
            const auto& nbrs = neighbor_sets[s % seeds.size()];
            const std::size_t seed_row = seeds[s % seeds.size()];
            ++s;
            if (nbrs.empty()) continue;
            std::uniform_int_distribution<std::size_t> pick(0, nbrs.size() - 1);
            const std::size_t nb = nbrs[pick(rng)];
            const std::vector<double> synth = smote_interpolate(x.row(seed_row), x.row(nb), rng);
            result.x.append_row(synth);
            result.y.push_back(cls);
            ++produced;
        }
    }
    return result;
}

}  // namespace keydyn
