#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "keydyn/stats.hpp"

#include "json.hpp"

namespace keydyn::ml {

enum class Algorithm { NaiveBayes, KNN, DecisionTree, AdaBoost, LinearSVM, MLP1, GBT };
enum class Task { Classify, Regress };

const char* to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct ModelSpec {
    Algorithm algorithm = Algorithm::NaiveBayes;
    Task task = Task::Classify;
    std::map<std::string, double> hyperparameters;
    std::uint64_t seed = 0;

    // Throws BadSpec for unsupported (algorithm, task) pairs, unknown
    // hyperparameter keys, or out-of-range values.
    static ModelSpec make(Algorithm algorithm, Task task,
                          std::map<std::string, double> hyperparameters = {},
                          std::uint64_t seed = 0);

    double hp(const std::string& key, double fallback) const {
        auto it = hyperparameters.find(key);
        return it == hyperparameters.end() ? fallback : it->second;
    }
};

// Default CV grid per algorithm, as (key -> candidate values).
std::map<std::string, std::vector<double>> default_grid(Algorithm a);

// --- parameter payloads ---

struct NaiveBayesParams {
    std::vector<double> log_prior;
    Matrix means;  // classes x features
    Matrix vars;
};

struct KnnParams {
    Matrix train_x;
    std::vector<double> train_y;  // class index or real target
    int k = 5;
};

struct TreeNode {
    int feature = -1;  // -1 for leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // class index (classify) or mean (regress / gbt weight)
};

struct TreeParams {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    double predict(std::span<const double> row) const;
};

struct AdaBoostParams {
    struct Stump {
        int feature = 0;
        double threshold = 0.0;
        int left_class = 0;   // x[feature] <= threshold
        int right_class = 0;
        double alpha = 0.0;
    };
    std::vector<Stump> stumps;
};

struct LinearParams {
    Matrix weights;  // one row per output (1 for binary / regression)
    std::vector<double> bias;
    double epsilon = 0.0;  // SVR tube, kept for provenance
};

struct MlpParams {
    Matrix w1;  // features x hidden
    std::vector<double> b1;
    Matrix w2;  // hidden x outputs
    std::vector<double> b2;
};

struct GbtParams {
    std::vector<double> base_score;               // one per output
    std::vector<std::vector<TreeParams>> rounds;  // [output][tree]
    double eta = 0.1;
};

class TrainedModel {
public:
    using Params = std::variant<NaiveBayesParams, KnnParams, TreeParams, AdaBoostParams,
                                LinearParams, MlpParams, GbtParams>;

    TrainedModel() = default;
    TrainedModel(ModelSpec spec, Params params, std::vector<int> classes, std::size_t dim);

    const ModelSpec& spec() const { return spec_; }
    const std::vector<int>& classes() const { return classes_; }
    const Params& params() const { return params_; }

    std::vector<int> predict_class(const Matrix& x) const;
    std::vector<double> predict_value(const Matrix& x) const;

    nlohmann::json to_json() const;
    static TrainedModel from_json(const nlohmann::json& j);

private:
    ModelSpec spec_;
    Params params_;
    std::vector<int> classes_;  // ascending label order
    std::size_t dim_ = 0;
};

TrainedModel fit_classifier(const ModelSpec& spec, const Matrix& x, const std::vector<int>& y);
TrainedModel fit_regressor(const ModelSpec& spec, const Matrix& x, const std::vector<double>& y);

// --- internals shared between boosting and the plain tree (exposed for tests) ---

struct TreeGrowConfig {
    int max_depth = 5;
    int min_samples_leaf = 1;
};

TreeParams grow_tree_classify(const Matrix& x, const std::vector<int>& y, int n_classes,
                              const TreeGrowConfig& cfg);
TreeParams grow_tree_regress(const Matrix& x, const std::vector<double>& y,
                             const TreeGrowConfig& cfg);
// Second-order tree on gradient/hessian pairs; leaf value -G/(H+lambda).
TreeParams grow_tree_gh(const Matrix& x, const std::vector<double>& g,
                        const std::vector<double>& h, int max_depth, double lambda);

}  // namespace keydyn::ml
