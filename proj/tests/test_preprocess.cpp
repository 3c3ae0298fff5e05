#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "keydyn/preprocess.hpp"

using namespace keydyn;

namespace {

// Brute-force MI oracle: build the contingency table with the same
// rank-based equal-frequency bin edges, then apply the definition.
double brute_force_mi(const std::vector<double>& x, const std::vector<int>& y, int bins) {
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (int b = 1; b < bins; ++b) {
        const double pos = (static_cast<double>(b) / bins) * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(lo);
        const double e = lo + 1 < sorted.size() ? (1.0 - w) * sorted[lo] + w * sorted[lo + 1]
                                                : sorted.back();
        if (edges.empty() || e > edges.back()) edges.push_back(e);
    }
    auto bin_of = [&](double v) {
        int b = 0;
        for (double e : edges)
            if (e < v) ++b;
        return b;
    };
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pb, pc;
    const double w = 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const int b = bin_of(x[i]);
        joint[{b, y[i]}] += w;
        pb[b] += w;
        pc[y[i]] += w;
    }
    double mi = 0.0;
    for (const auto& [key, p] : joint) mi += p * std::log(p / (pb[key.first] * pc[key.second]));
    return mi;
}

Matrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m;
    for (const auto& r : rows) m.append_row(r);
    return m;
}

}  // namespace

TEST_CASE("standardizer: fit on training values, z-score application") {
    const Matrix x = matrix_from_rows({{10}, {20}});
    const Standardizer st = fit_standardizer(x, {}, {"u1", "u2"});
    CHECK(st.mean[0] == doctest::Approx(15));
    CHECK(st.stddev[0] == doctest::Approx(5));
    const Matrix z = impute_and_standardize(x, {}, st);
    CHECK(z.at(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("standardizer: masked entry becomes 0 after imputation and centering") {
    const Matrix x = matrix_from_rows({{10}, {20}, {999}});
    const Mask mask = {0, 0, 1};
    const Standardizer st = fit_standardizer(x, mask, {});
    CHECK(st.mean[0] == doctest::Approx(15));  // masked 999 excluded
    const Matrix z = impute_and_standardize(x, mask, st);
    CHECK(z.at(2, 0) == doctest::Approx(0.0));
}

TEST_CASE("standardizer: constant feature flagged, outputs 0") {
    const Matrix x = matrix_from_rows({{3, 1}, {3, 2}});
    const Standardizer st = fit_standardizer(x, {}, {});
    CHECK(st.constant_flag[0] == 1);
    CHECK(st.constant_flag[1] == 0);
    CHECK(st.stddev[0] == 1.0);
    const Matrix z = impute_and_standardize(x, {}, st);
    CHECK(z.at(0, 0) == doctest::Approx(0.0));
    CHECK(z.at(1, 0) == doctest::Approx(0.0));
}

TEST_CASE("standardizer rejects dimension mismatches") {
    const Matrix x = matrix_from_rows({{1, 2}, {3, 4}});
    Standardizer st = fit_standardizer(x, {}, {});
    const Matrix narrow = matrix_from_rows({{1}});
    CHECK_THROWS_AS(impute_and_standardize(narrow, {}, st), DimensionMismatch);
}

TEST_CASE("mutual information reaches ln 2 for a perfectly separating feature") {
    std::vector<double> x;
    std::vector<int> y;
    for (int i = 0; i < 1000; ++i) {
        x.push_back(i < 500 ? 0.0 : 1.0);
        y.push_back(i < 500 ? 0 : 1);
    }
    CHECK(mutual_information(x, y) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("mutual information of independent data is near zero and matches brute force") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    const std::size_t n = 10000;
    std::vector<double> x(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = gauss(rng);
        y[i] = coin(rng) ? 1 : 0;
    }
    const double mi = mutual_information(x, y);
    CHECK(mi < 0.02);
    CHECK(mi == doctest::Approx(brute_force_mi(x, y, 10)).epsilon(1e-12));
}

TEST_CASE("mutual information with a constant target is zero") {
    const std::vector<double> x = {1, 2, 3, 4, 5, 6};
    const std::vector<int> y = {3, 3, 3, 3, 3, 3};
    CHECK(mutual_information(x, y) == doctest::Approx(0.0));
}

TEST_CASE("mutual information validates lengths") {
    CHECK_THROWS_AS(mutual_information(std::vector<double>{1, 2}, std::vector<int>{0}),
                    LengthMismatch);
}

TEST_CASE("mutual information is symmetric under class relabeling") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(300);
    std::vector<int> y(300), relabeled(300);
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<int>(i % 3);
        relabeled[i] = 42 - 7 * y[i];  // arbitrary bijection of class ids
        x[i] = gauss(rng) + 0.4 * y[i];
    }
    CHECK(mutual_information(x, y) == mutual_information(x, relabeled));
}

TEST_CASE("fitted transforms are apply-many deterministic") {
    const Matrix x = matrix_from_rows({{1, 9}, {2, 7}, {3, 8}, {4, 6}});
    const Standardizer st = fit_standardizer(x, {}, {});
    const Matrix once = impute_and_standardize(x, {}, st);
    const Matrix twice = impute_and_standardize(x, {}, st);
    CHECK(once.data == twice.data);

    const std::vector<int> y = {0, 1, 0, 1};
    const MISelector sel = select_top_k(x, y, 2, 4);
    CHECK(apply_selector(x, sel).data == apply_selector(x, sel).data);
    const MISelector refit = select_top_k(x, y, 2, 4);
    CHECK(refit.selected == sel.selected);
    CHECK(refit.scores == sel.scores);
}

TEST_CASE("mutual information is invariant to strictly monotone transforms") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> x(400), ex(400);
    std::vector<int> y(400);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = gauss(rng);
        ex[i] = std::exp(x[i]);
        y[i] = coin(rng) ? 1 : 0;
    }
    CHECK(mutual_information(x, y) == doctest::Approx(mutual_information(ex, y)).epsilon(1e-12));
}

TEST_CASE("select_top_k ranks a planted informative feature first") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t n = 400, d = 20;
    Matrix x(n, d);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        for (std::size_t j = 0; j < d; ++j) x.at(i, j) = noise(rng);
        x.at(i, 7) = y[i] + 0.3 * noise(rng);
    }
    const MISelector sel = select_top_k(x, y, 5);
    CHECK(sel.selected[0] == 7);
    CHECK(sel.scores[7] > 0.1);
}

TEST_CASE("select_top_k with k equal to the feature count returns a permutation") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix x(50, 8);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        y[i] = static_cast<int>(i % 2);
        for (std::size_t j = 0; j < 8; ++j) x.at(i, j) = noise(rng);
    }
    const MISelector sel = select_top_k(x, y, 8);
    std::vector<int> sorted = sel.selected;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK_THROWS_AS(select_top_k(x, y, 9), KTooLarge);
}

TEST_CASE("select_top_k breaks exact ties by lower index") {
    Matrix x(6, 3);
    std::vector<int> y = {0, 1, 0, 1, 0, 1};
    for (std::size_t i = 0; i < 6; ++i) {
        x.at(i, 0) = static_cast<double>(i);      // mildly informative
        x.at(i, 1) = static_cast<double>(y[i]);   // identical twins
        x.at(i, 2) = static_cast<double>(y[i]);
    }
    const MISelector sel = select_top_k(x, y, 3);
    CHECK(sel.scores[1] == sel.scores[2]);
    const auto pos1 = std::find(sel.selected.begin(), sel.selected.end(), 1);
    const auto pos2 = std::find(sel.selected.begin(), sel.selected.end(), 2);
    CHECK(pos1 < pos2);
}

TEST_CASE("select_top_k(k) is a prefix of select_top_k(k+1)") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(0.0, 1.0);
    Matrix x(80, 12);
    std::vector<int> y(80);
    for (std::size_t i = 0; i < 80; ++i) {
        y[i] = static_cast<int>(i % 3);
        for (std::size_t j = 0; j < 12; ++j) x.at(i, j) = noise(rng);
    }
    for (int k = 1; k < 12; ++k) {
        const auto a = select_top_k(x, y, k).selected;
        const auto b = select_top_k(x, y, k + 1).selected;
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
}

TEST_CASE("quartile binning for regression targets") {
    const std::vector<double> y = {1, 2, 3, 4, 5, 6, 7, 8};
    const auto bins = quartile_bin(y);
    CHECK(bins.front() == 0);
    CHECK(bins.back() == 3);
    CHECK(*std::max_element(bins.begin(), bins.end()) == 3);
}

TEST_CASE("smote_interpolate output lies on the segment") {
    std::mt19937_64 rng(9);
    const std::vector<double> x = {0.0, 1.0, -2.0};
    const std::vector<double> nb = {4.0, -1.0, 6.0};
    for (int trial = 0; trial < 200; ++trial) {
        const auto out = smote_interpolate(x, nb, rng);
        const double d_xn = euclidean(x, nb);
        const double d1 = euclidean(x, out);
        const double d2 = euclidean(out, nb);
        CHECK(std::abs(d1 + d2 - d_xn) < 1e-9);
        // the implied interpolation factor stays in [0, 1]
        const double u = (out[0] - x[0]) / (nb[0] - x[0]);
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
    }
    const auto same = smote_interpolate(x, x, rng);
    CHECK(same == x);  // degenerate segment: u irrelevant
    CHECK_THROWS_AS(smote_interpolate(x, std::vector<double>{1.0}, rng), DimensionMismatch);
}

namespace {

struct ImbalancedSet {
    Matrix x;
    std::vector<int> y;
};

ImbalancedSet make_imbalanced(std::mt19937_64& rng, std::size_t n_major, std::size_t n_minor,
                              std::size_t d) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    ImbalancedSet set;
    for (std::size_t i = 0; i < n_major + n_minor; ++i) {
        const bool minor = i >= n_major;
        std::vector<double> row(d);
        for (double& v : row) v = gauss(rng) + (minor ? 1.2 : 0.0);
        set.x.append_row(row);
        set.y.push_back(minor ? 1 : 0);
    }
    return set;
}

}  // namespace

TEST_CASE("borderline_smote balances counts and leaves originals untouched") {
    std::mt19937_64 rng(31);
    const auto set = make_imbalanced(rng, 10, 6, 3);
    SmoteConfig cfg;
    cfg.seed = 77;
    const SmoteResult res = borderline_smote(set.x, set.y, cfg);

    std::size_t c0 = 0, c1 = 0;
    for (int v : res.y) (v == 0 ? c0 : c1)++;
    CHECK(c0 == 10);
    CHECK(c1 == 10);
    CHECK(res.n_original == 16);
    for (std::size_t i = 0; i < set.x.rows; ++i) {
        CHECK(res.y[i] == set.y[i]);
        for (std::size_t j = 0; j < set.x.cols; ++j) CHECK(res.x.at(i, j) == set.x.at(i, j));
    }
    // appended rows carry minority labels only
    for (std::size_t i = set.x.rows; i < res.x.rows; ++i) CHECK(res.y[i] == 1);
}

TEST_CASE("borderline_smote synthetic rows lie between two original minority rows") {
    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const auto set = make_imbalanced(rng, 12, 5, 4);
        SmoteConfig cfg;
        cfg.seed = 100 + trial;
        const SmoteResult res = borderline_smote(set.x, set.y, cfg);
        std::vector<std::size_t> minority_rows;
        for (std::size_t i = 0; i < set.y.size(); ++i)
            if (set.y[i] == 1) minority_rows.push_back(i);
        for (std::size_t s = set.x.rows; s < res.x.rows; ++s) {
            double best = 1e300;
            for (std::size_t a : minority_rows) {
                for (std::size_t b : minority_rows) {
                    const double d_ab = euclidean(set.x.row(a), set.x.row(b));
                    const double gap = euclidean(set.x.row(a), res.x.row(s)) +
                                       euclidean(res.x.row(s), set.x.row(b)) - d_ab;
                    best = std::min(best, gap);
                }
            }
            CHECK(best < 1e-9);
        }
    }
}

TEST_CASE("borderline_smote is deterministic for a fixed seed") {
    std::mt19937_64 rng(33);
    const auto set = make_imbalanced(rng, 9, 4, 3);
    SmoteConfig cfg;
    cfg.seed = 55;
    const SmoteResult a = borderline_smote(set.x, set.y, cfg);
    const SmoteResult b = borderline_smote(set.x, set.y, cfg);
    CHECK(a.x.data == b.x.data);
    CHECK(a.y == b.y);
}

TEST_CASE("borderline_smote falls back to vanilla SMOTE when every minority point is noise") {
    // each minority point sits inside its own distant majority blob, so all
    // m_danger neighbors are majority (m' = m): DANGER empty, fallback used
    Matrix x;
    std::vector<int> y;
    std::mt19937_64 rng(34);
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (int i = 0; i < 10; ++i) {
        x.append_row({jitter(rng), jitter(rng)});
        y.push_back(0);
    }
    for (int i = 0; i < 10; ++i) {
        x.append_row({10.0 + jitter(rng), 10.0 + jitter(rng)});
        y.push_back(0);
    }
    x.append_row({0.0, 0.0});
    y.push_back(1);
    x.append_row({10.0, 10.0});
    y.push_back(1);
    SmoteConfig cfg;
    cfg.m_danger = 8;
    cfg.k_generate = 1;
    const SmoteResult res = borderline_smote(x, y, cfg);
    CHECK(res.fallback_used);
    std::size_t c1 = 0;
    for (int v : res.y)
        if (v == 1) ++c1;
    CHECK(c1 == 20);
}

TEST_CASE("borderline_smote keeps borderline seeds when they exist") {
    // majority on a line 0..13, sparse minority trailing off it: the first
    // minority point sees 7 majority among its 10 neighbors (danger), the
    // far ones are safe, so DANGER is non-empty and no fallback happens
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i <= 13; ++i) {
        x.append_row({static_cast<double>(i), 0.0});
        y.push_back(0);
    }
    for (int i = 0; i < 7; ++i) {
        x.append_row({13.0 + 2.0 * i, 0.0});
        y.push_back(1);
    }
    SmoteConfig cfg;
    const SmoteResult res = borderline_smote(x, y, cfg);
    CHECK_FALSE(res.fallback_used);
}

TEST_CASE("smote config requires m_danger >= k_generate >= 1") {
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 8; ++i) {
        x.append_row({static_cast<double>(i)});
        y.push_back(i < 5 ? 0 : 1);
    }
    SmoteConfig bad;
    bad.k_generate = 8;
    bad.m_danger = 3;
    CHECK_THROWS_AS(borderline_smote(x, y, bad), BadSpec);
    bad.k_generate = 0;
    CHECK_THROWS_AS(borderline_smote(x, y, bad), BadSpec);
}

TEST_CASE("borderline_smote rejects minority classes with fewer than 2 samples") {
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 5; ++i) {
        x.append_row({static_cast<double>(i), 0.0});
        y.push_back(0);
    }
    x.append_row({9.0, 9.0});
    y.push_back(1);
    CHECK_THROWS_AS(borderline_smote(x, y, SmoteConfig{}), TooFewMinority);
}

TEST_CASE("multiclass smote balances every class to the majority count") {
    std::mt19937_64 rng(36);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<int> y;
    const std::vector<std::pair<int, int>> classes = {{0, 12}, {1, 5}, {2, 3}};
    for (const auto& [cls, count] : classes) {
        for (int i = 0; i < count; ++i) {
            x.append_row({gauss(rng) + 2.0 * cls, gauss(rng)});
            y.push_back(cls);
        }
    }
    const SmoteResult res = borderline_smote(x, y, SmoteConfig{});
    std::map<int, std::size_t> counts;
    for (int v : res.y) ++counts[v];
    CHECK(counts[0] == 12);
    CHECK(counts[1] == 12);
    CHECK(counts[2] == 12);
    CHECK(res.oversampled_classes == std::vector<int>{1, 2});
}

TEST_CASE("standardizer and selector serialize to JSON with provenance fields") {
    const Matrix x = matrix_from_rows({{1, 5}, {2, 6}, {3, 7}, {4, 8}});
    const Standardizer st = fit_standardizer(x, {}, {"u1", "u2", "u3", "u4"});
    const auto stj = st.to_json({"f0", "f1"});
    CHECK(stj.at("mean").size() == 2);
    CHECK(stj.at("fitted_on").size() == 4);
    CHECK(stj.at("features")[0] == "f0");

    const std::vector<int> y = {0, 0, 1, 1};
    const MISelector sel = select_top_k(x, y, 1, 4, {"u1", "u2", "u3", "u4"});
    const auto selj = sel.to_json();
    CHECK(selj.at("selected").size() == 1);
    CHECK(selj.at("scores").size() == 2);
    CHECK(selj.at("target_binning") == "none");
}
