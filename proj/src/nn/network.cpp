#include "keydyn/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "keydyn/nn/reshape.hpp"

namespace keydyn::nn {

const char* to_string(ArchKind k) {
    switch (k) {
        case ArchKind::FC: return "fc";
        case ArchKind::CNN: return "cnn";
        case ArchKind::RNN: return "rnn";
        case ArchKind::LSTM: return "lstm";
    }
    return "?";
}

ArchKind arch_from_string(const std::string& s) {
    for (ArchKind k : {ArchKind::FC, ArchKind::CNN, ArchKind::RNN, ArchKind::LSTM})
        if (s == to_string(k)) return k;
    throw BadSpec("unknown architecture: " + s);
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        if (spec_.layers[i].kind == LayerDesc::Kind::Softmax && i + 1 != spec_.layers.size())
            throw BadSpec("softmax must be the terminal layer");
        layers_.push_back(make_layer(spec_.layers[i]));
    }
}

void Network::init_params() {
    std::mt19937_64 rng(spec_.seed);
    for (auto& l : layers_) l->init_params(rng);
}

Tensor Network::forward(const Tensor& x, Phase phase, std::mt19937_64& rng) {
    Tensor cur = x;
    for (auto& l : layers_) {
        cur = l->forward(cur, phase, rng);
        if (!cur.all_finite()) throw NonFiniteActivation("non-finite activation");
    }
    return cur;
}

Tensor Network::backward(const Tensor& loss_grad) {
    Tensor g = loss_grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Tensor*> Network::parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (Tensor* t : l->parameters()) out.push_back(t);
    return out;
}

std::vector<Tensor*> Network::gradients() {
    std::vector<Tensor*> out;
    for (auto& l : layers_)
        for (Tensor* t : l->gradients()) out.push_back(t);
    return out;
}

namespace {

const char* kind_name(LayerDesc::Kind k) {
    using K = LayerDesc::Kind;
    switch (k) {
        case K::Dense: return "dense";
        case K::Conv2D: return "conv2d";
        case K::BatchNorm: return "batch_norm";
        case K::Dropout: return "dropout";
        case K::Relu: return "relu";
        case K::Tanh: return "tanh";
        case K::Softmax: return "softmax";
        case K::Flatten: return "flatten";
        case K::RNNStack: return "rnn_stack";
        case K::LSTMStack: return "lstm_stack";
        case K::SquareImage: return "square_image";
        case K::SequenceReshape: return "sequence_reshape";
    }
    return "?";
}

LayerDesc::Kind kind_from_name(const std::string& s) {
    using K = LayerDesc::Kind;
    for (K k : {K::Dense, K::Conv2D, K::BatchNorm, K::Dropout, K::Relu, K::Tanh, K::Softmax,
                K::Flatten, K::RNNStack, K::LSTMStack, K::SquareImage, K::SequenceReshape})
        if (s == kind_name(k)) return k;
    throw DataError("unknown layer kind: " + s);
}

nlohmann::json desc_to_json(const LayerDesc& d) {
    nlohmann::json j;
    j["kind"] = kind_name(d.kind);
    j["in"] = d.in;
    j["out"] = d.out;
    j["in_ch"] = d.in_ch;
    j["out_ch"] = d.out_ch;
    j["kernel"] = d.kernel;
    j["stride"] = d.stride;
    j["pad"] = d.pad;
    j["dim"] = d.dim;
    j["rate"] = d.rate;
    j["layers"] = d.layers;
    j["hidden"] = d.hidden;
    j["strict"] = d.strict_smaller;
    return j;
}

LayerDesc desc_from_json(const nlohmann::json& j) {
    LayerDesc d;
    d.kind = kind_from_name(j.at("kind").get<std::string>());
    d.in = j.at("in").get<std::size_t>();
    d.out = j.at("out").get<std::size_t>();
    d.in_ch = j.at("in_ch").get<std::size_t>();
    d.out_ch = j.at("out_ch").get<std::size_t>();
    d.kernel = j.at("kernel").get<std::size_t>();
    d.stride = j.at("stride").get<std::size_t>();
    d.pad = j.at("pad").get<std::size_t>();
    d.dim = j.at("dim").get<std::size_t>();
    d.rate = j.at("rate").get<double>();
    d.layers = j.at("layers").get<std::size_t>();
    d.hidden = j.at("hidden").get<std::size_t>();
    d.strict_smaller = j.at("strict").get<bool>();
    return d;
}

}  // namespace

nlohmann::json Network::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
        nlohmann::json entry;
        entry["desc"] = desc_to_json(l->desc());
        nlohmann::json params = nlohmann::json::array();
        for (const Tensor* t : const_cast<Layer&>(*l).parameters())
            params.push_back({{"shape", t->shape}, {"data", t->data}});
        entry["params"] = params;
        nlohmann::json state = nlohmann::json::array();
        for (const Tensor* t : const_cast<Layer&>(*l).state())
            state.push_back({{"shape", t->shape}, {"data", t->data}});
        entry["state"] = state;
        layers.push_back(entry);
    }
    return nlohmann::json{{"seed", spec_.seed}, {"layers", layers}};
}

Network Network::from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& entry : j.at("layers")) spec.layers.push_back(desc_from_json(entry.at("desc")));
    Network net(spec);
    std::size_t i = 0;
    for (const auto& entry : j.at("layers")) {
        auto params = net.layers_[i]->parameters();
        const auto& stored = entry.at("params");
        if (stored.size() != params.size()) throw DataError("network payload mismatch");
        for (std::size_t p = 0; p < params.size(); ++p) {
            params[p]->shape = stored[p].at("shape").get<std::vector<std::size_t>>();
            params[p]->data = stored[p].at("data").get<std::vector<double>>();
        }
        auto state = net.layers_[i]->state();
        const auto& stored_state = entry.at("state");
        for (std::size_t p = 0; p < state.size() && p < stored_state.size(); ++p) {
            state[p]->shape = stored_state[p].at("shape").get<std::vector<std::size_t>>();
            state[p]->data = stored_state[p].at("data").get<std::vector<double>>();
        }
        ++i;
    }
    return net;
}

NetworkSpec build_architecture(ArchKind kind, std::size_t input_dim, std::size_t n_outputs,
                               bool classify, std::uint64_t seed, bool strict_reshape) {
    NetworkSpec spec;
    spec.seed = seed;
    auto head = [&](std::size_t from) {
        spec.layers.push_back(LayerDesc::dense(from, n_outputs));
        if (classify) spec.layers.push_back(LayerDesc::softmax());
    };
    switch (kind) {
        case ArchKind::FC: {
            spec.layers.push_back(LayerDesc::dense(input_dim, 256));
            spec.layers.push_back(LayerDesc::relu());
            spec.layers.push_back(LayerDesc::dropout(0.3));
            spec.layers.push_back(LayerDesc::dense(256, 128));
            spec.layers.push_back(LayerDesc::relu());
            spec.layers.push_back(LayerDesc::dropout(0.3));
            spec.layers.push_back(LayerDesc::dense(128, 64));
            spec.layers.push_back(LayerDesc::relu());
            head(64);
            break;
        }
        case ArchKind::CNN: {
            const std::size_t side = square_image_side(input_dim, strict_reshape);
            spec.layers.push_back(LayerDesc::square_image(strict_reshape));
            const std::size_t channels[] = {1, 8, 16, 32, 32};
            for (std::size_t i = 0; i < 4; ++i) {
                spec.layers.push_back(LayerDesc::conv2d(channels[i], channels[i + 1], 3, 1, 1));
                spec.layers.push_back(LayerDesc::batch_norm(channels[i + 1]));
                spec.layers.push_back(LayerDesc::relu());
            }
            spec.layers.push_back(LayerDesc::flatten());
            spec.layers.push_back(LayerDesc::dense(32 * side * side, 128));
            spec.layers.push_back(LayerDesc::relu());
            spec.layers.push_back(LayerDesc::dropout(0.3));
            spec.layers.push_back(LayerDesc::dense(128, 64));
            spec.layers.push_back(LayerDesc::relu());
            head(64);
            break;
        }
        case ArchKind::RNN: {
            const SequenceShape s = sequence_shape(input_dim, strict_reshape);
            spec.layers.push_back(LayerDesc::sequence_reshape(strict_reshape));
            spec.layers.push_back(LayerDesc::rnn_stack(3, 64, s.cols));
            head(64);
            break;
        }
        case ArchKind::LSTM: {
            const SequenceShape s = sequence_shape(input_dim, strict_reshape);
            spec.layers.push_back(LayerDesc::sequence_reshape(strict_reshape));
            spec.layers.push_back(LayerDesc::lstm_stack(3, 64, s.cols));
            head(64);
            break;
        }
    }
    return spec;
}

std::pair<double, Tensor> nll_loss(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t batch = probs.shape[0];
    Tensor grad(probs.shape);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        const double p = std::max(probs.at2(i, c), 1e-300);
        loss -= std::log(p);
        grad.at2(i, c) = -1.0 / (p * static_cast<double>(batch));
    }
    return {loss / static_cast<double>(batch), grad};
}

std::pair<double, Tensor> mse_loss(const Tensor& preds, const std::vector<double>& targets) {
    const std::size_t batch = preds.shape[0];
    Tensor grad(preds.shape);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double d = preds.at2(i, 0) - targets[i];
        loss += d * d;
        grad.at2(i, 0) = 2.0 * d / static_cast<double>(batch);
    }
    return {loss / static_cast<double>(batch), grad};
}

namespace {

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
        if (kind_ == OptimizerKind::SGD) {
            for (std::size_t i = 0; i < params.size(); ++i)
                for (std::size_t j = 0; j < params[i]->data.size(); ++j)
                    params[i]->data[j] -= lr_ * grads[i]->data[j];
            return;
        }
        if (m_.empty()) {
            for (Tensor* p : params) {
                m_.emplace_back(p->shape);
                v_.emplace_back(p->shape);
            }
        }
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, t_);
        const double bc2 = 1.0 - std::pow(b2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t j = 0; j < params[i]->data.size(); ++j) {
                const double g = grads[i]->data[j];
                m_[i].data[j] = b1 * m_[i].data[j] + (1.0 - b1) * g;
                v_[i].data[j] = b2 * v_[i].data[j] + (1.0 - b2) * g * g;
                const double mhat = m_[i].data[j] / bc1;
                const double vhat = v_[i].data[j] / bc2;
                params[i]->data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    OptimizerKind kind_;
    double lr_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

template <typename Y, typename LossFn>
NeuralModel train_impl(const NetworkSpec& spec, const TrainConfig& cfg, const Matrix& x,
                       const std::vector<Y>& y, LossFn&& loss_fn, std::vector<int> classes,
                       bool classify) {
    if (x.rows != y.size() || x.rows == 0) throw DegenerateData("training set is empty or ragged");
    if (cfg.learning_rate <= 0.0 || cfg.epochs <= 0 || cfg.batch_size <= 0)
        throw BadSpec("learning rate, epochs and batch size must be positive");

    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(mix_seed(cfg.seed, "train"));
    Optimizer opt(cfg.optimizer, cfg.learning_rate);

    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);
    const auto params = net.parameters();
    const auto grads = net.gradients();

    std::vector<double> epoch_losses;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < x.rows; start += cfg.batch_size) {
            const std::size_t stop = std::min(x.rows, start + cfg.batch_size);
            const std::size_t b = stop - start;
            Tensor xb({b, x.cols});
            std::vector<Y> yb(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t r = order[start + i];
                for (std::size_t c = 0; c < x.cols; ++c) xb.at2(i, c) = x.at(r, c);
                yb[i] = y[r];
            }
            const Tensor out = net.forward(xb, Phase::Train, rng);
            auto [loss, grad] = loss_fn(out, yb);
            if (!std::isfinite(loss)) throw Divergence(e);
            epoch_loss += loss * static_cast<double>(b);
            for (Tensor* g : grads) g->zero();
            net.backward(grad);
            opt.step(params, grads);
        }
        epoch_losses.push_back(epoch_loss / static_cast<double>(x.rows));
    }

    NeuralModel model(std::move(net), std::move(classes), x.cols, classify);
    model.epoch_losses() = std::move(epoch_losses);
    return model;
}

}  // namespace

NeuralModel::NeuralModel(Network net, std::vector<int> classes, std::size_t input_dim,
                         bool classify)
    : net_(std::move(net)), classes_(std::move(classes)), input_dim_(input_dim),
      classify_(classify) {}

Matrix NeuralModel::predict_proba(const Matrix& x) {
    if (x.cols != input_dim_) throw DimensionMismatch("predict dimension mismatch");
    std::mt19937_64 rng(0);  // unused in Eval phase
    Tensor xb({x.rows, x.cols});
    xb.data = x.data;
    const Tensor out = net_.forward(xb, Phase::Eval, rng);
    Matrix probs(out.shape[0], out.shape[1]);
    probs.data = out.data;
    return probs;
}

std::vector<int> NeuralModel::predict_class(const Matrix& x) {
    if (!classify_) throw BadSpec("predict_class on a regression network");
    const Matrix probs = predict_proba(x);
    std::vector<int> out(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        out[i] = classes_[best];
    }
    return out;
}

std::vector<double> NeuralModel::predict_value(const Matrix& x) {
    if (classify_) throw BadSpec("predict_value on a classification network");
    const Matrix preds = predict_proba(x);
    std::vector<double> out(preds.rows);
    for (std::size_t i = 0; i < preds.rows; ++i) out[i] = preds.at(i, 0);
    return out;
}

nlohmann::json NeuralModel::to_json() const {
    return nlohmann::json{{"network", net_.to_json()},
                          {"classes", classes_},
                          {"input_dim", input_dim_},
                          {"classify", classify_},
                          {"epoch_losses", epoch_losses_}};
}

NeuralModel NeuralModel::from_json(const nlohmann::json& j) {
    NeuralModel m(Network::from_json(j.at("network")), j.at("classes").get<std::vector<int>>(),
                  j.at("input_dim").get<std::size_t>(), j.at("classify").get<bool>());
    m.epoch_losses_ = j.at("epoch_losses").get<std::vector<double>>();
    return m;
}

NeuralModel train_classifier(const NetworkSpec& spec, const TrainConfig& cfg, const Matrix& x,
                             const std::vector<int>& y) {
    std::set<int> unique(y.begin(), y.end());
    if (unique.size() < 2) throw DegenerateData("training labels contain a single class");
    std::vector<int> classes(unique.begin(), unique.end());
    std::vector<int> yidx(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        yidx[i] = static_cast<int>(
            std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());
    auto loss = [](const Tensor& out, const std::vector<int>& yb) { return nll_loss(out, yb); };
    return train_impl(spec, cfg, x, yidx, loss, std::move(classes), true);
}

NeuralModel train_regressor(const NetworkSpec& spec, const TrainConfig& cfg, const Matrix& x,
                            const std::vector<double>& y) {
    auto loss = [](const Tensor& out, const std::vector<double>& yb) { return mse_loss(out, yb); };
    return train_impl(spec, cfg, x, y, loss, {}, false);
}

void write_loss_csv(const std::vector<double>& losses, const std::string& path) {
    std::ofstream out(path);
    out << "epoch,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace keydyn::nn
