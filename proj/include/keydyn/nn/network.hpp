#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "keydyn/nn/layers.hpp"
#include "keydyn/stats.hpp"

#include "json.hpp"

namespace keydyn::nn {

enum class ArchKind { FC, CNN, RNN, LSTM };

const char* to_string(ArchKind k);
ArchKind arch_from_string(const std::string& s);

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::Adam;
    double learning_rate = 0.01;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;
};

class Network {
public:
    Network() = default;
    explicit Network(NetworkSpec spec);

    // Seeds every parameter tensor from the network seed.
    void init_params();

    // Runs all layers; throws NonFiniteActivation if any output goes non-finite.
    Tensor forward(const Tensor& x, Phase phase, std::mt19937_64& rng);

    // Backpropagates loss_grad through the cached forward pass and fills
    // every layer's gradient tensors. Returns the input gradient.
    Tensor backward(const Tensor& loss_grad);

    std::vector<Tensor*> parameters();
    std::vector<Tensor*> gradients();

    const NetworkSpec& spec() const { return spec_; }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    std::size_t layer_count() const { return layers_.size(); }

    nlohmann::json to_json() const;
    static Network from_json(const nlohmann::json& j);

private:
    NetworkSpec spec_;
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Topologies for the four benchmarked architectures. Classification heads
// end in softmax; regression heads end in a linear scalar.
NetworkSpec build_architecture(ArchKind kind, std::size_t input_dim, std::size_t n_outputs,
                               bool classify, std::uint64_t seed = 0,
                               bool strict_reshape = false);

// Mean negative log-likelihood of softmax probabilities; grad w.r.t. probs.
std::pair<double, Tensor> nll_loss(const Tensor& probs, const std::vector<int>& labels);
// Mean squared error of a [batch, 1] prediction; grad w.r.t. predictions.
std::pair<double, Tensor> mse_loss(const Tensor& preds, const std::vector<double>& targets);

class NeuralModel {
public:
    NeuralModel() = default;
    NeuralModel(Network net, std::vector<int> classes, std::size_t input_dim, bool classify);

    std::vector<int> predict_class(const Matrix& x);
    std::vector<double> predict_value(const Matrix& x);
    Matrix predict_proba(const Matrix& x);

    const std::vector<double>& epoch_losses() const { return epoch_losses_; }
    std::vector<double>& epoch_losses() { return epoch_losses_; }
    Network& network() { return net_; }
    const std::vector<int>& classes() const { return classes_; }

    nlohmann::json to_json() const;
    static NeuralModel from_json(const nlohmann::json& j);

private:
    Network net_;
    std::vector<int> classes_;
    std::size_t input_dim_ = 0;
    bool classify_ = true;
    std::vector<double> epoch_losses_;
};

NeuralModel train_classifier(const NetworkSpec& spec, const TrainConfig& cfg, const Matrix& x,
                             const std::vector<int>& y);
NeuralModel train_regressor(const NetworkSpec& spec, const TrainConfig& cfg, const Matrix& x,
                            const std::vector<double>& y);

// Optional per-epoch loss log, one row per epoch.
void write_loss_csv(const std::vector<double>& losses, const std::string& path);

}  // namespace keydyn::nn
