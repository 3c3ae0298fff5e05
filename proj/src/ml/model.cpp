#include <algorithm>
#include <cmath>
#include <numeric>

#include "keydyn/ml.hpp"

namespace keydyn::ml {

const char* to_string(Algorithm a) {
    switch (a) {
        case Algorithm::NaiveBayes: return "naive_bayes";
        case Algorithm::KNN: return "knn";
        case Algorithm::DecisionTree: return "decision_tree";
        case Algorithm::AdaBoost: return "adaboost";
        case Algorithm::LinearSVM: return "linear_svm";
        case Algorithm::MLP1: return "mlp";
        case Algorithm::GBT: return "gbt";
    }
    return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
    for (Algorithm a : {Algorithm::NaiveBayes, Algorithm::KNN, Algorithm::DecisionTree,
                        Algorithm::AdaBoost, Algorithm::LinearSVM, Algorithm::MLP1, Algorithm::GBT})
        if (s == to_string(a)) return a;
    throw BadSpec("unknown algorithm: " + s);
}

namespace {

struct HpRule {
    const char* key;
    double min;
    double max;
};

const std::vector<HpRule>& rules_for(Algorithm a) {
    static const std::vector<HpRule> none = {};
    static const std::vector<HpRule> knn = {{"k", 1, 1e6}};
    static const std::vector<HpRule> tree = {{"max_depth", 1, 64}, {"min_samples_leaf", 1, 1e6}};
    static const std::vector<HpRule> ada = {{"rounds", 1, 1e5}};
    static const std::vector<HpRule> svm = {{"lambda", 1e-12, 1e6}, {"epochs", 1, 1e6},
                                            {"epsilon", 0, 1e6}};
    static const std::vector<HpRule> mlp = {{"hidden", 1, 1e5}, {"lr", 1e-12, 1e3},
                                            {"epochs", 1, 1e6}};
    static const std::vector<HpRule> gbt = {{"trees", 1, 1e5}, {"eta", 0, 10},
                                            {"depth", 1, 64}, {"lambda", 0, 1e6}};
    switch (a) {
        case Algorithm::NaiveBayes: return none;
        case Algorithm::KNN: return knn;
        case Algorithm::DecisionTree: return tree;
        case Algorithm::AdaBoost: return ada;
        case Algorithm::LinearSVM: return svm;
        case Algorithm::MLP1: return mlp;
        case Algorithm::GBT: return gbt;
    }
    return none;
}

}  // namespace

ModelSpec ModelSpec::make(Algorithm algorithm, Task task,
                          std::map<std::string, double> hyperparameters, std::uint64_t seed) {
    const bool classify_only =
        algorithm == Algorithm::NaiveBayes || algorithm == Algorithm::AdaBoost;
    if (classify_only && task == Task::Regress)
        throw BadSpec(std::string(to_string(algorithm)) + " does not support regression");
    const auto& rules = rules_for(algorithm);
    for (const auto& [key, value] : hyperparameters) {
        auto it = std::find_if(rules.begin(), rules.end(),
                               [&](const HpRule& r) { return key == r.key; });
        if (it == rules.end())
            throw BadSpec("unknown hyperparameter '" + key + "' for " + to_string(algorithm));
        if (value < it->min || value > it->max)
            throw BadSpec("hyperparameter '" + key + "' out of range");
    }
    return ModelSpec{algorithm, task, std::move(hyperparameters), seed};
}

std::map<std::string, std::vector<double>> default_grid(Algorithm a) {
    switch (a) {
        case Algorithm::NaiveBayes: return {};
        case Algorithm::KNN: return {{"k", {3, 5, 7, 9}}};
        case Algorithm::DecisionTree: return {{"max_depth", {3, 5, 10}}};
        case Algorithm::AdaBoost: return {{"rounds", {50, 100, 200}}};
        case Algorithm::LinearSVM: return {{"lambda", {1e-4, 1e-3, 1e-2, 1e-1}}};
        case Algorithm::MLP1: return {{"hidden", {32, 64, 128}}, {"lr", {0.01, 0.1}}};
        case Algorithm::GBT:
            return {{"trees", {50, 100, 200}}, {"eta", {0.05, 0.1, 0.3}}, {"depth", {3, 5}},
                    {"lambda", {1.0}}};
    }
    return {};
}

TrainedModel::TrainedModel(ModelSpec spec, Params params, std::vector<int> classes,
                           std::size_t dim)
    : spec_(std::move(spec)), params_(std::move(params)), classes_(std::move(classes)), dim_(dim) {}

namespace {

double dot_row(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::size_t argmax_first(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

std::vector<std::size_t> knn_neighbors(const KnnParams& p, std::span<const double> row) {
    std::vector<std::pair<double, std::size_t>> dist(p.train_x.rows);
    for (std::size_t i = 0; i < p.train_x.rows; ++i)
        dist[i] = {euclidean(row, p.train_x.row(i)), i};
    std::sort(dist.begin(), dist.end());
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(p.k), dist.size());
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
    return out;
}

double mlp_hidden_forward(const MlpParams& p, std::span<const double> row, std::size_t out_idx,
                          std::vector<double>& hidden_scratch) {
    const std::size_t h_dim = p.b1.size();
    if (hidden_scratch.size() != h_dim) hidden_scratch.resize(h_dim);
    for (std::size_t h = 0; h < h_dim; ++h) {
        double z = p.b1[h];
        for (std::size_t j = 0; j < row.size(); ++j) z += row[j] * p.w1.at(j, h);
        hidden_scratch[h] = z > 0.0 ? z : 0.0;
    }
    double z = p.b2[out_idx];
    for (std::size_t h = 0; h < h_dim; ++h) z += hidden_scratch[h] * p.w2.at(h, out_idx);
    return z;
}

std::vector<double> class_scores(const TrainedModel::Params& params, std::size_t n_classes,
                                 std::span<const double> row) {
    std::vector<double> scores(n_classes, 0.0);
    if (const auto* nb = std::get_if<NaiveBayesParams>(&params)) {
        for (std::size_t c = 0; c < n_classes; ++c) {
            double s = nb->log_prior[c];
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double var = nb->vars.at(c, j);
                const double d = row[j] - nb->means.at(c, j);
                s += -0.5 * std::log(2.0 * M_PI * var) - d * d / (2.0 * var);
            }
            scores[c] = s;
        }
    } else if (const auto* knn = std::get_if<KnnParams>(&params)) {
        for (std::size_t i : knn_neighbors(*knn, row))
            scores[static_cast<std::size_t>(knn->train_y[i])] += 1.0;
    } else if (const auto* tree = std::get_if<TreeParams>(&params)) {
        scores[static_cast<std::size_t>(tree->predict(row))] = 1.0;
    } else if (const auto* ada = std::get_if<AdaBoostParams>(&params)) {
        for (const auto& s : ada->stumps) {
            const int cls = row[static_cast<std::size_t>(s.feature)] <= s.threshold
                                ? s.left_class
                                : s.right_class;
            scores[static_cast<std::size_t>(cls)] += s.alpha;
        }
    } else if (const auto* lin = std::get_if<LinearParams>(&params)) {
        if (lin->weights.rows == 1) {  // binary: signed margin for classes[1]
            const double s = dot_row(row, lin->weights.row(0)) + lin->bias[0];
            scores[0] = -s;
            scores[1] = s;
        } else {
            for (std::size_t c = 0; c < n_classes; ++c)
                scores[c] = dot_row(row, lin->weights.row(c)) + lin->bias[c];
        }
    } else if (const auto* mlp = std::get_if<MlpParams>(&params)) {
        std::vector<double> scratch;
        for (std::size_t c = 0; c < n_classes; ++c)
            scores[c] = mlp_hidden_forward(*mlp, row, c, scratch);
    } else if (const auto* gbt = std::get_if<GbtParams>(&params)) {
        auto raw = [&](std::size_t out) {
            double s = gbt->base_score[out];
            for (const auto& t : gbt->rounds[out]) s += gbt->eta * t.predict(row);
            return s;
        };
        if (gbt->rounds.size() == 1) {  // binary: score is logit of classes[1]
            const double s = raw(0);
            scores[0] = -s;
            scores[1] = s;
        } else {
            for (std::size_t c = 0; c < n_classes; ++c) scores[c] = raw(c);
        }
    }
    return scores;
}

}  // namespace

std::vector<int> TrainedModel::predict_class(const Matrix& x) const {
    if (spec_.task != Task::Classify) throw BadSpec("predict_class on a regression model");
    if (x.cols != dim_) throw DimensionMismatch("predict dimension mismatch");
    std::vector<int> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto scores = class_scores(params_, classes_.size(), x.row(r));
        out[r] = classes_[argmax_first(scores)];
    }
    return out;
}

std::vector<double> TrainedModel::predict_value(const Matrix& x) const {
    if (spec_.task != Task::Regress) throw BadSpec("predict_value on a classification model");
    if (x.cols != dim_) throw DimensionMismatch("predict dimension mismatch");
    std::vector<double> out(x.rows, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const auto row = x.row(r);
        if (const auto* knn = std::get_if<KnnParams>(&params_)) {
            double s = 0.0;
            const auto nn = knn_neighbors(*knn, row);
            for (std::size_t i : nn) s += knn->train_y[i];
            out[r] = s / static_cast<double>(nn.size());
        } else if (const auto* tree = std::get_if<TreeParams>(&params_)) {
            out[r] = tree->predict(row);
        } else if (const auto* lin = std::get_if<LinearParams>(&params_)) {
            out[r] = dot_row(row, lin->weights.row(0)) + lin->bias[0];
        } else if (const auto* mlp = std::get_if<MlpParams>(&params_)) {
            std::vector<double> scratch;
            out[r] = mlp_hidden_forward(*mlp, row, 0, scratch);
        } else if (const auto* gbt = std::get_if<GbtParams>(&params_)) {
            double s = gbt->base_score[0];
            for (const auto& t : gbt->rounds[0]) s += gbt->eta * t.predict(row);
            out[r] = s;
        } else {
            throw BadSpec("model has no regression payload");
        }
    }
    return out;
}

// --- serialization ---

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = j.at("data").get<std::vector<double>>();
    return m;
}

nlohmann::json tree_to_json(const TreeParams& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return nodes;
}

TreeParams tree_from_json(const nlohmann::json& j) {
    TreeParams t;
    for (const auto& n : j)
        t.nodes.push_back(TreeNode{n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                                   n.at(3).get<int>(), n.at(4).get<double>()});
    return t;
}

}  // namespace

nlohmann::json TrainedModel::to_json() const {
    nlohmann::json j;
    j["algorithm"] = to_string(spec_.algorithm);
    j["task"] = spec_.task == Task::Classify ? "classify" : "regress";
    j["hyperparameters"] = spec_.hyperparameters;
    j["seed"] = spec_.seed;
    j["classes"] = classes_;
    j["dim"] = dim_;
    nlohmann::json p;
    if (const auto* nb = std::get_if<NaiveBayesParams>(&params_)) {
        p["kind"] = "naive_bayes";
        p["log_prior"] = nb->log_prior;
        p["means"] = matrix_to_json(nb->means);
        p["vars"] = matrix_to_json(nb->vars);
    } else if (const auto* knn = std::get_if<KnnParams>(&params_)) {
        p["kind"] = "knn";
        p["train_x"] = matrix_to_json(knn->train_x);
        p["train_y"] = knn->train_y;
        p["k"] = knn->k;
    } else if (const auto* tree = std::get_if<TreeParams>(&params_)) {
        p["kind"] = "tree";
        p["nodes"] = tree_to_json(*tree);
    } else if (const auto* ada = std::get_if<AdaBoostParams>(&params_)) {
        p["kind"] = "adaboost";
        nlohmann::json stumps = nlohmann::json::array();
        for (const auto& s : ada->stumps)
            stumps.push_back({s.feature, s.threshold, s.left_class, s.right_class, s.alpha});
        p["stumps"] = stumps;
    } else if (const auto* lin = std::get_if<LinearParams>(&params_)) {
        p["kind"] = "linear";
        p["weights"] = matrix_to_json(lin->weights);
        p["bias"] = lin->bias;
        p["epsilon"] = lin->epsilon;
    } else if (const auto* mlp = std::get_if<MlpParams>(&params_)) {
        p["kind"] = "mlp";
        p["w1"] = matrix_to_json(mlp->w1);
        p["b1"] = mlp->b1;
        p["w2"] = matrix_to_json(mlp->w2);
        p["b2"] = mlp->b2;
    } else if (const auto* gbt = std::get_if<GbtParams>(&params_)) {
        p["kind"] = "gbt";
        p["base_score"] = gbt->base_score;
        p["eta"] = gbt->eta;
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& output : gbt->rounds) {
            nlohmann::json trees = nlohmann::json::array();
            for (const auto& t : output) trees.push_back(tree_to_json(t));
            rounds.push_back(trees);
        }
        p["rounds"] = rounds;
    }
    j["params"] = p;
    return j;
}

TrainedModel TrainedModel::from_json(const nlohmann::json& j) {
    const Algorithm algo = algorithm_from_string(j.at("algorithm").get<std::string>());
    const Task task = j.at("task").get<std::string>() == "classify" ? Task::Classify : Task::Regress;
    const ModelSpec spec = ModelSpec::make(
        algo, task, j.at("hyperparameters").get<std::map<std::string, double>>(),
        j.at("seed").get<std::uint64_t>());
    const auto classes = j.at("classes").get<std::vector<int>>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto& p = j.at("params");
    const std::string kind = p.at("kind").get<std::string>();
    Params params;
    if (kind == "naive_bayes") {
        params = NaiveBayesParams{p.at("log_prior").get<std::vector<double>>(),
                                  matrix_from_json(p.at("means")), matrix_from_json(p.at("vars"))};
    } else if (kind == "knn") {
        params = KnnParams{matrix_from_json(p.at("train_x")),
                           p.at("train_y").get<std::vector<double>>(), p.at("k").get<int>()};
    } else if (kind == "tree") {
        params = tree_from_json(p.at("nodes"));
    } else if (kind == "adaboost") {
        AdaBoostParams ada;
        for (const auto& s : p.at("stumps"))
            ada.stumps.push_back(AdaBoostParams::Stump{s.at(0).get<int>(), s.at(1).get<double>(),
                                                       s.at(2).get<int>(), s.at(3).get<int>(),
                                                       s.at(4).get<double>()});
        params = std::move(ada);
    } else if (kind == "linear") {
        params = LinearParams{matrix_from_json(p.at("weights")),
                              p.at("bias").get<std::vector<double>>(),
                              p.at("epsilon").get<double>()};
    } else if (kind == "mlp") {
        params = MlpParams{matrix_from_json(p.at("w1")), p.at("b1").get<std::vector<double>>(),
                           matrix_from_json(p.at("w2")), p.at("b2").get<std::vector<double>>()};
    } else if (kind == "gbt") {
        GbtParams gbt;
        gbt.base_score = p.at("base_score").get<std::vector<double>>();
        gbt.eta = p.at("eta").get<double>();
        for (const auto& output : p.at("rounds")) {
            std::vector<TreeParams> trees;
            for (const auto& t : output) trees.push_back(tree_from_json(t));
            gbt.rounds.push_back(std::move(trees));
        }
        params = std::move(gbt);
    } else {
        throw DataError("unknown model payload kind: " + kind);
    }
    return TrainedModel(spec, std::move(params), classes, dim);
}

}  // namespace keydyn::ml
