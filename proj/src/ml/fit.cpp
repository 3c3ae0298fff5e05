#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "keydyn/ml.hpp"

namespace keydyn::ml {

namespace {

constexpr double kVarianceFloor = 1e-9;

NaiveBayesParams fit_naive_bayes(const Matrix& x, const std::vector<int>& yidx,
                                 std::size_t n_classes) {
    NaiveBayesParams p;
    p.means = Matrix(n_classes, x.cols);
    p.vars = Matrix(n_classes, x.cols);
    std::vector<double> counts(n_classes, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto c = static_cast<std::size_t>(yidx[r]);
        counts[c] += 1.0;
        for (std::size_t j = 0; j < x.cols; ++j) p.means.at(c, j) += x.at(r, j);
    }
    for (std::size_t c = 0; c < n_classes; ++c)
        for (std::size_t j = 0; j < x.cols; ++j) p.means.at(c, j) /= counts[c];
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto c = static_cast<std::size_t>(yidx[r]);
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = x.at(r, j) - p.means.at(c, j);
            p.vars.at(c, j) += d * d;
        }
    }
    p.log_prior.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t j = 0; j < x.cols; ++j)
            p.vars.at(c, j) = std::max(p.vars.at(c, j) / counts[c], kVarianceFloor);
        p.log_prior[c] = std::log(counts[c] / static_cast<double>(x.rows));
    }
    return p;
}

// --- AdaBoost/SAMME with depth-1 stumps ---

struct StumpFit {
    bool found = false;
    AdaBoostParams::Stump stump;
    double error = 0.0;
};

StumpFit best_weighted_stump(const Matrix& x, const std::vector<int>& yidx,
                             const std::vector<double>& w, std::size_t n_classes) {
    StumpFit best;
    double total_weight = 0.0;
    std::vector<double> total_per_class(n_classes, 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        total_weight += w[i];
        total_per_class[static_cast<std::size_t>(yidx[i])] += w[i];
    }
    std::vector<std::size_t> order(x.rows);
    for (std::size_t f = 0; f < x.cols; ++f) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (x.at(a, f) != x.at(b, f)) return x.at(a, f) < x.at(b, f);
            return yidx[a] < yidx[b];
        });
        std::vector<double> left(n_classes, 0.0);
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t r = order[i];
            left[static_cast<std::size_t>(yidx[r])] += w[r];
            if (x.at(r, f) == x.at(order[i + 1], f)) continue;
            std::size_t lc = 0, rc = 0;
            double lbest = -1.0, rbest = -1.0;
            for (std::size_t c = 0; c < n_classes; ++c) {
                if (left[c] > lbest) {
                    lbest = left[c];
                    lc = c;
                }
                const double rw = total_per_class[c] - left[c];
                if (rw > rbest) {
                    rbest = rw;
                    rc = c;
                }
            }
            const double err = total_weight - lbest - rbest;
            if (!best.found || err < best.error - 1e-15) {
                best.found = true;
                best.error = err;
                best.stump.feature = static_cast<int>(f);
                best.stump.threshold = x.at(r, f) + 0.5 * (x.at(order[i + 1], f) - x.at(r, f));
                best.stump.left_class = static_cast<int>(lc);
                best.stump.right_class = static_cast<int>(rc);
            }
        }
    }
    return best;
}

AdaBoostParams fit_adaboost(const Matrix& x, const std::vector<int>& yidx, std::size_t n_classes,
                            int rounds) {
    AdaBoostParams p;
    const double n = static_cast<double>(x.rows);
    std::vector<double> w(x.rows, 1.0 / n);
    const double chance = 1.0 - 1.0 / static_cast<double>(n_classes);
    for (int t = 0; t < rounds; ++t) {
        StumpFit fit = best_weighted_stump(x, yidx, w, n_classes);
        if (!fit.found) break;
        double err = 0.0;
        std::vector<bool> wrong(x.rows, false);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const int pred = x.at(i, static_cast<std::size_t>(fit.stump.feature)) <=
                                     fit.stump.threshold
                                 ? fit.stump.left_class
                                 : fit.stump.right_class;
            if (pred != yidx[i]) {
                wrong[i] = true;
                err += w[i];
            }
        }
        if (err >= chance) break;  // stump no better than chance; discard and stop
        const double safe_err = std::max(err, 1e-12);
        fit.stump.alpha = std::log((1.0 - safe_err) / safe_err) +
                          std::log(static_cast<double>(n_classes) - 1.0);
        p.stumps.push_back(fit.stump);
        if (err <= 0.0) break;  // perfect stump
        double sum = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            if (wrong[i]) w[i] *= std::exp(fit.stump.alpha);
            sum += w[i];
        }
        for (double& wi : w) wi /= sum;
    }
    return p;
}

// --- linear SVM / SVR by epoch-shuffled subgradient descent ---

LinearParams fit_linear_svm(const Matrix& x, const std::vector<int>& yidx, std::size_t n_classes,
                            const ModelSpec& spec) {
    const double lambda = spec.hp("lambda", 1e-3);
    const int epochs = static_cast<int>(spec.hp("epochs", 200));
    const std::size_t n_models = n_classes == 2 ? 1 : n_classes;

    LinearParams p;
    p.weights = Matrix(n_models, x.cols);
    p.bias.assign(n_models, 0.0);

    for (std::size_t m = 0; m < n_models; ++m) {
        // binary: positive class is classes[1]; OVR: positive class is m
        const int positive = n_models == 1 ? 1 : static_cast<int>(m);
        std::vector<double> w(x.cols, 0.0);
        double b = 0.0;
        std::mt19937_64 rng(mix_seed(spec.seed, "svm:" + std::to_string(m)));
        std::vector<std::size_t> order(x.rows);
        std::iota(order.begin(), order.end(), 0);
        std::size_t t = 0;
        for (int e = 0; e < epochs; ++e) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t i : order) {
                ++t;
                const double eta = 1.0 / (2.0 * lambda * static_cast<double>(t));
                const double yi = yidx[i] == positive ? 1.0 : -1.0;
                double margin = b;
                const auto row = x.row(i);
                for (std::size_t j = 0; j < x.cols; ++j) margin += w[j] * row[j];
                margin *= yi;
                const double decay = 1.0 - 1.0 / static_cast<double>(t);
                for (double& wj : w) wj *= decay;
                if (margin < 1.0) {
                    for (std::size_t j = 0; j < x.cols; ++j) w[j] += eta * yi * row[j];
                    b += eta * yi;
                }
            }
        }
        for (std::size_t j = 0; j < x.cols; ++j) p.weights.at(m, j) = w[j];
        p.bias[m] = b;
    }
    return p;
}

LinearParams fit_linear_svr(const Matrix& x, const std::vector<double>& y, const ModelSpec& spec) {
    const double lambda = spec.hp("lambda", 1e-3);
    const int epochs = static_cast<int>(spec.hp("epochs", 200));
    const double epsilon = spec.hp("epsilon", 0.1);
    const double y_mean = mean_of(y);

    std::vector<double> w(x.cols, 0.0);
    double b = 0.0;
    std::mt19937_64 rng(mix_seed(spec.seed, "svr"));
    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);
    std::size_t t = 0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i : order) {
            ++t;
            const double eta = 1.0 / (2.0 * lambda * static_cast<double>(t));
            const auto row = x.row(i);
            double pred = b;
            for (std::size_t j = 0; j < x.cols; ++j) pred += w[j] * row[j];
            const double res = pred - (y[i] - y_mean);
            const double decay = 1.0 - 1.0 / static_cast<double>(t);
            for (double& wj : w) wj *= decay;
            if (std::abs(res) > epsilon) {
                const double s = res > 0.0 ? 1.0 : -1.0;
                for (std::size_t j = 0; j < x.cols; ++j) w[j] -= eta * s * row[j];
                b -= eta * s;
            }
        }
    }
    LinearParams p;
    p.weights = Matrix(1, x.cols);
    for (std::size_t j = 0; j < x.cols; ++j) p.weights.at(0, j) = w[j];
    p.bias = {b + y_mean};
    p.epsilon = epsilon;
    return p;
}

// --- single-hidden-layer perceptron, full-batch gradient descent ---

Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Matrix m(rows, cols);
    for (double& v : m.data) v = unif(rng);
    return m;
}

MlpParams fit_mlp(const Matrix& x, const std::vector<int>* yidx, const std::vector<double>* yreal,
                  std::size_t n_out, const ModelSpec& spec) {
    const auto hidden = static_cast<std::size_t>(spec.hp("hidden", 64));
    const double lr = spec.hp("lr", 0.1);
    const int epochs = static_cast<int>(spec.hp("epochs", 300));
    const std::size_t n = x.rows, d = x.cols;

    double y_mean = 0.0;
    if (yreal) y_mean = mean_of(*yreal);

    std::mt19937_64 rng(mix_seed(spec.seed, "mlp"));
    MlpParams p;
    p.w1 = glorot_uniform(d, hidden, rng);
    p.b1.assign(hidden, 0.0);
    p.w2 = glorot_uniform(hidden, n_out, rng);
    p.b2.assign(n_out, 0.0);

    Matrix z1(n, hidden), a1(n, hidden), z2(n, n_out), dz2(n, n_out);
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t h = 0; h < hidden; ++h) {
                double z = p.b1[h];
                for (std::size_t j = 0; j < d; ++j) z += x.at(i, j) * p.w1.at(j, h);
                z1.at(i, h) = z;
                a1.at(i, h) = z > 0.0 ? z : 0.0;
            }
            for (std::size_t o = 0; o < n_out; ++o) {
                double z = p.b2[o];
                for (std::size_t h = 0; h < hidden; ++h) z += a1.at(i, h) * p.w2.at(h, o);
                z2.at(i, o) = z;
            }
        }
        if (yidx) {  // softmax cross-entropy
            for (std::size_t i = 0; i < n; ++i) {
                double mx = z2.at(i, 0);
                for (std::size_t o = 1; o < n_out; ++o) mx = std::max(mx, z2.at(i, o));
                double sum = 0.0;
                for (std::size_t o = 0; o < n_out; ++o) sum += std::exp(z2.at(i, o) - mx);
                for (std::size_t o = 0; o < n_out; ++o) {
                    const double prob = std::exp(z2.at(i, o) - mx) / sum;
                    dz2.at(i, o) = (prob - (static_cast<std::size_t>((*yidx)[i]) == o ? 1.0 : 0.0)) /
                                   static_cast<double>(n);
                }
            }
        } else {  // mean squared error on centered target
            for (std::size_t i = 0; i < n; ++i)
                dz2.at(i, 0) =
                    2.0 * (z2.at(i, 0) - ((*yreal)[i] - y_mean)) / static_cast<double>(n);
        }
        // backprop + in-place gradient step
        for (std::size_t o = 0; o < n_out; ++o) {
            double db2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) db2 += dz2.at(i, o);
            p.b2[o] -= lr * db2;
        }
        Matrix dw2(hidden, n_out);
        for (std::size_t h = 0; h < hidden; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t o = 0; o < n_out; ++o)
                    dw2.at(h, o) += a1.at(i, h) * dz2.at(i, o);
        Matrix dz1(n, hidden);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t h = 0; h < hidden; ++h) {
                if (z1.at(i, h) <= 0.0) continue;
                double v = 0.0;
                for (std::size_t o = 0; o < n_out; ++o) v += dz2.at(i, o) * p.w2.at(h, o);
                dz1.at(i, h) = v;
            }
        for (std::size_t h = 0; h < hidden; ++h)
            for (std::size_t o = 0; o < n_out; ++o) p.w2.at(h, o) -= lr * dw2.at(h, o);
        for (std::size_t h = 0; h < hidden; ++h) {
            double db1 = 0.0;
            for (std::size_t i = 0; i < n; ++i) db1 += dz1.at(i, h);
            p.b1[h] -= lr * db1;
        }
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t h = 0; h < hidden; ++h) {
                double dw = 0.0;
                for (std::size_t i = 0; i < n; ++i) dw += x.at(i, j) * dz1.at(i, h);
                p.w1.at(j, h) -= lr * dw;
            }
    }
    if (yreal) p.b2[0] += y_mean;
    return p;
}

// --- second-order gradient boosting ---

GbtParams fit_gbt_classify(const Matrix& x, const std::vector<int>& yidx, std::size_t n_classes,
                           const ModelSpec& spec) {
    const int trees = static_cast<int>(spec.hp("trees", 100));
    const double eta = spec.hp("eta", 0.1);
    const int depth = static_cast<int>(spec.hp("depth", 3));
    const double lambda = spec.hp("lambda", 1.0);
    const std::size_t n = x.rows;
    const std::size_t n_models = n_classes == 2 ? 1 : n_classes;

    GbtParams p;
    p.eta = eta;
    p.rounds.resize(n_models);
    p.base_score.resize(n_models);
    for (std::size_t m = 0; m < n_models; ++m) {
        const int positive = n_models == 1 ? 1 : static_cast<int>(m);
        std::vector<double> y01(n);
        double pos = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            y01[i] = yidx[i] == positive ? 1.0 : 0.0;
            pos += y01[i];
        }
        double prior = pos / static_cast<double>(n);
        prior = std::clamp(prior, 1e-6, 1.0 - 1e-6);
        p.base_score[m] = std::log(prior / (1.0 - prior));

        std::vector<double> score(n, p.base_score[m]);
        std::vector<double> g(n), h(n);
        for (int t = 0; t < trees; ++t) {
            for (std::size_t i = 0; i < n; ++i) {
                const double prob = 1.0 / (1.0 + std::exp(-score[i]));
                g[i] = prob - y01[i];
                h[i] = prob * (1.0 - prob);
            }
            TreeParams tree = grow_tree_gh(x, g, h, depth, lambda);
            for (std::size_t i = 0; i < n; ++i) score[i] += eta * tree.predict(x.row(i));
            p.rounds[m].push_back(std::move(tree));
        }
    }
    return p;
}

GbtParams fit_gbt_regress(const Matrix& x, const std::vector<double>& y, const ModelSpec& spec) {
    const int trees = static_cast<int>(spec.hp("trees", 100));
    const double eta = spec.hp("eta", 0.1);
    const int depth = static_cast<int>(spec.hp("depth", 3));
    const double lambda = spec.hp("lambda", 1.0);
    const std::size_t n = x.rows;

    GbtParams p;
    p.eta = eta;
    p.rounds.resize(1);
    p.base_score = {mean_of(y)};
    std::vector<double> score(n, p.base_score[0]);
    std::vector<double> g(n), h(n, 1.0);
    for (int t = 0; t < trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) g[i] = score[i] - y[i];
        TreeParams tree = grow_tree_gh(x, g, h, depth, lambda);
        for (std::size_t i = 0; i < n; ++i) score[i] += eta * tree.predict(x.row(i));
        p.rounds[0].push_back(std::move(tree));
    }
    return p;
}

std::vector<int> class_list(const std::vector<int>& y) {
    std::set<int> s(y.begin(), y.end());
    return std::vector<int>(s.begin(), s.end());
}

}  // namespace

TrainedModel fit_classifier(const ModelSpec& spec, const Matrix& x, const std::vector<int>& y) {
    if (spec.task != Task::Classify) throw BadSpec("fit_classifier needs a classification spec");
    if (x.rows != y.size() || x.rows < 2) throw DegenerateData("need at least 2 labeled rows");
    const std::vector<int> classes = class_list(y);
    if (classes.size() < 2) throw DegenerateData("training labels contain a single class");

    std::vector<int> yidx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        yidx[i] = static_cast<int>(
            std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());

    TrainedModel::Params params;
    switch (spec.algorithm) {
        case Algorithm::NaiveBayes:
            params = fit_naive_bayes(x, yidx, classes.size());
            break;
        case Algorithm::KNN: {
            KnnParams p;
            p.train_x = x;
            p.train_y.assign(yidx.begin(), yidx.end());
            p.k = std::min<int>(static_cast<int>(spec.hp("k", 5)), static_cast<int>(x.rows));
            params = std::move(p);
            break;
        }
        case Algorithm::DecisionTree: {
            TreeGrowConfig cfg{static_cast<int>(spec.hp("max_depth", 5)),
                               static_cast<int>(spec.hp("min_samples_leaf", 1))};
            params = grow_tree_classify(x, yidx, static_cast<int>(classes.size()), cfg);
            break;
        }
        case Algorithm::AdaBoost:
            params = fit_adaboost(x, yidx, classes.size(),
                                  static_cast<int>(spec.hp("rounds", 100)));
            break;
        case Algorithm::LinearSVM:
            params = fit_linear_svm(x, yidx, classes.size(), spec);
            break;
        case Algorithm::MLP1:
            params = fit_mlp(x, &yidx, nullptr, classes.size(), spec);
            break;
        case Algorithm::GBT:
            params = fit_gbt_classify(x, yidx, classes.size(), spec);
            break;
    }
    return TrainedModel(spec, std::move(params), classes, x.cols);
}

TrainedModel fit_regressor(const ModelSpec& spec, const Matrix& x, const std::vector<double>& y) {
    if (spec.task != Task::Regress) throw BadSpec("fit_regressor needs a regression spec");
    if (x.rows != y.size() || x.rows < 2) throw DegenerateData("need at least 2 labeled rows");

    TrainedModel::Params params;
    switch (spec.algorithm) {
        case Algorithm::KNN: {
            KnnParams p;
            p.train_x = x;
            p.train_y = y;
            p.k = std::min<int>(static_cast<int>(spec.hp("k", 5)), static_cast<int>(x.rows));
            params = std::move(p);
            break;
        }
        case Algorithm::DecisionTree: {
            TreeGrowConfig cfg{static_cast<int>(spec.hp("max_depth", 5)),
                               static_cast<int>(spec.hp("min_samples_leaf", 1))};
            params = grow_tree_regress(x, y, cfg);
            break;
        }
        case Algorithm::LinearSVM:
            params = fit_linear_svr(x, y, spec);
            break;
        case Algorithm::MLP1:
            params = fit_mlp(x, nullptr, &y, 1, spec);
            break;
        case Algorithm::GBT:
            params = fit_gbt_regress(x, y, spec);
            break;
        default:
            throw BadSpec(std::string(to_string(spec.algorithm)) +
                          " does not support regression");
    }
    return TrainedModel(spec, std::move(params), {}, x.cols);
}

}  // namespace keydyn::ml
