#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "keydyn/nn/network.hpp"
#include "keydyn/nn/reshape.hpp"

using namespace keydyn;
using namespace keydyn::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = gauss(rng);
    return t;
}

// max relative error between analytic and central-difference gradients over
// every parameter of the network, with a softmax + NLL head
double grad_check(Network& net, const Tensor& x, const std::vector<int>& y) {
    std::mt19937_64 rng(77);
    const auto params = net.parameters();
    const auto grads = net.gradients();
    for (auto* g : grads) g->zero();
    const Tensor out = net.forward(x, Phase::Train, rng);
    auto [loss, dloss] = nll_loss(out, y);
    (void)loss;
    net.backward(dloss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(grads.size());
    for (auto* g : grads) analytic.push_back(g->data);

    double worst = 0.0;
    const double eps = 1e-5;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t j = 0; j < params[pi]->data.size(); ++j) {
            const double saved = params[pi]->data[j];
            params[pi]->data[j] = saved + eps;
            const double lp = nll_loss(net.forward(x, Phase::Train, rng), y).first;
            params[pi]->data[j] = saved - eps;
            const double lm = nll_loss(net.forward(x, Phase::Train, rng), y).first;
            params[pi]->data[j] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[pi][j];
            const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-3);
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("to_square_image picks the largest fitting square") {
    std::vector<double> v110(110);
    for (std::size_t i = 0; i < v110.size(); ++i) v110[i] = static_cast<double>(i);
    const Tensor t = to_square_image(v110);
    CHECK(t.shape == std::vector<std::size_t>{1, 10, 10});
    CHECK(t.data.front() == 0.0);
    CHECK(t.data.back() == 99.0);  // entries v[0..100)

    CHECK(to_square_image(std::vector<double>(49, 1.0)).shape ==
          std::vector<std::size_t>{1, 7, 7});
    CHECK(to_square_image(std::vector<double>{5.0, 6.0, 7.0}).shape ==
          std::vector<std::size_t>{1, 1, 1});
}

TEST_CASE("to_square_image strict variant takes the square strictly below") {
    CHECK(square_image_side(49, true) == 6);
    CHECK(square_image_side(50, true) == 7);
    CHECK(square_image_side(1, true) == 1);  // degenerate floor
}

TEST_CASE("to_sequence factors the largest composite") {
    const auto s47 = sequence_shape(47);
    CHECK(s47.rows == 2);
    CHECK(s47.cols == 23);  // 47 prime, 46 = 2 * 23

    const auto s36 = sequence_shape(36);
    CHECK(s36.rows == 6);
    CHECK(s36.cols == 6);

    const auto s12 = sequence_shape(12);
    CHECK(s12.rows == 3);
    CHECK(s12.cols == 4);

    CHECK_THROWS_AS(sequence_shape(3), InputTooShort);
}

TEST_CASE("dense layer with identity weights passes input through") {
    LayerDesc d = LayerDesc::dense(3, 3);
    auto layer = make_layer(d);
    auto params = layer->parameters();
    for (std::size_t i = 0; i < 3; ++i) params[0]->at2(i, i) = 1.0;
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({4, 3}, rng);
    const Tensor y = layer->forward(x, Phase::Eval, rng);
    CHECK(y.data == x.data);
}

TEST_CASE("1x1 convolution with weight 2 doubles the input") {
    LayerDesc d = LayerDesc::conv2d(1, 1, 1, 1, 0);
    auto layer = make_layer(d);
    layer->parameters()[0]->data[0] = 2.0;
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({2, 1, 3, 3}, rng);
    const Tensor y = layer->forward(x, Phase::Eval, rng);
    REQUIRE(y.shape == x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == 2.0 * x.data[i]);
}

TEST_CASE("dropout is the identity in eval phase and rescales in train phase") {
    LayerDesc d = LayerDesc::dropout(0.5);
    auto layer = make_layer(d);
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor({8, 50}, rng);
    const Tensor eval_out = layer->forward(x, Phase::Eval, rng);
    CHECK(eval_out.data == x.data);

    const Tensor train_out = layer->forward(x, Phase::Train, rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (train_out.data[i] == 0.0) {
            ++zeros;
        } else {
            CHECK(train_out.data[i] == doctest::Approx(2.0 * x.data[i]));
        }
    }
    const double rate = static_cast<double>(zeros) / static_cast<double>(x.data.size());
    CHECK(rate > 0.4);
    CHECK(rate < 0.6);
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
    auto layer = make_layer(LayerDesc::softmax());
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({16, 7}, rng, 5.0);
    const Tensor y = layer->forward(x, Phase::Eval, rng);
    for (std::size_t i = 0; i < y.shape[0]; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < y.shape[1]; ++c) {
            CHECK(y.at2(i, c) > 0.0);
            CHECK(y.at2(i, c) < 1.0);
            sum += y.at2(i, c);
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("batch norm normalizes per channel in train phase") {
    auto layer = make_layer(LayerDesc::batch_norm(3));
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({10, 3, 4, 4}, rng, 10.0);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += 7.0;  // shift the mean away
    const Tensor y = layer->forward(x, Phase::Train, rng);
    // gamma=1, beta=0 at init, so the output is the normalized activation
    const std::size_t spatial = 16, batch = 10;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t s = 0; s < spatial; ++s) mean += y.at4(b, c, s / 4, s % 4);
        mean /= static_cast<double>(batch * spatial);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t s = 0; s < spatial; ++s) {
                const double d = y.at4(b, c, s / 4, s % 4) - mean;
                var += d * d;
            }
        var /= static_cast<double>(batch * spatial);
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("gradient check: dense stack") {
    NetworkSpec spec;
    spec.seed = 11;
    spec.layers = {LayerDesc::dense(6, 8), LayerDesc::tanh(), LayerDesc::dense(8, 4),
                   LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(12);
    const Tensor x = random_tensor({5, 6}, rng);
    CHECK(grad_check(net, x, {0, 1, 2, 3, 1}) <= 1e-4);
}

TEST_CASE("gradient check: conv + batch norm stack") {
    NetworkSpec spec;
    spec.seed = 13;
    spec.layers = {LayerDesc::conv2d(2, 3, 3, 1, 1), LayerDesc::batch_norm(3), LayerDesc::tanh(),
                   LayerDesc::flatten(), LayerDesc::dense(3 * 25, 3), LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(14);
    const Tensor x = random_tensor({3, 2, 5, 5}, rng);
    CHECK(grad_check(net, x, {2, 0, 1}) <= 1e-4);
}

TEST_CASE("gradient check: strided padded convolution") {
    NetworkSpec spec;
    spec.seed = 15;
    spec.layers = {LayerDesc::conv2d(1, 2, 3, 2, 1), LayerDesc::tanh(), LayerDesc::flatten(),
                   LayerDesc::dense(2 * 9, 2), LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(16);
    const Tensor x = random_tensor({2, 1, 5, 5}, rng);
    CHECK(grad_check(net, x, {1, 0}) <= 1e-4);
}

TEST_CASE("gradient check: rnn stack over two steps") {
    NetworkSpec spec;
    spec.seed = 17;
    spec.layers = {LayerDesc::rnn_stack(2, 5, 4), LayerDesc::dense(5, 3), LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(18);
    const Tensor x = random_tensor({3, 2, 4}, rng);
    CHECK(grad_check(net, x, {0, 2, 1}) <= 1e-4);
}

TEST_CASE("gradient check: lstm stack over two steps") {
    NetworkSpec spec;
    spec.seed = 19;
    spec.layers = {LayerDesc::lstm_stack(2, 5, 4), LayerDesc::dense(5, 3), LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(20);
    const Tensor x = random_tensor({3, 2, 4}, rng);
    CHECK(grad_check(net, x, {1, 2, 0}) <= 1e-4);
}

TEST_CASE("gradient check: longer lstm sequence") {
    NetworkSpec spec;
    spec.seed = 21;
    spec.layers = {LayerDesc::lstm_stack(1, 4, 3), LayerDesc::dense(4, 2), LayerDesc::softmax()};
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(22);
    const Tensor x = random_tensor({2, 4, 3}, rng);
    CHECK(grad_check(net, x, {1, 0}) <= 1e-4);
}

TEST_CASE("build_architecture: fc parameter count matches the layer widths") {
    const NetworkSpec spec = build_architecture(ArchKind::FC, 300, 2, true, 0);
    Network net(spec);
    std::size_t count = 0;
    for (const Tensor* p : net.parameters()) count += p->size();
    CHECK(count == 300 * 256 + 256 + 256 * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2);
}

TEST_CASE("build_architecture: cnn on 110 features sees a 1x10x10 image") {
    const NetworkSpec spec = build_architecture(ArchKind::CNN, 110, 2, true, 0);
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(23);
    const Tensor x = random_tensor({2, 110}, rng);
    const Tensor probe = net.layer(0).forward(x, Phase::Eval, rng);
    CHECK(probe.shape == std::vector<std::size_t>{2, 1, 10, 10});
    const Tensor out = net.forward(x, Phase::Eval, rng);
    CHECK(out.shape == std::vector<std::size_t>{2, 2});
}

TEST_CASE("build_architecture: lstm on 47 features runs a 2x23 sequence") {
    const NetworkSpec spec = build_architecture(ArchKind::LSTM, 47, 3, true, 0);
    Network net(spec);
    net.init_params();
    std::mt19937_64 rng(24);
    const Tensor x = random_tensor({2, 47}, rng);
    const Tensor seq = net.layer(0).forward(x, Phase::Eval, rng);
    CHECK(seq.shape == std::vector<std::size_t>{2, 2, 23});
    const Tensor out = net.forward(x, Phase::Eval, rng);
    CHECK(out.shape == std::vector<std::size_t>{2, 3});
}

TEST_CASE("softmax must be terminal") {
    NetworkSpec spec;
    spec.layers = {LayerDesc::softmax(), LayerDesc::dense(3, 3)};
    CHECK_THROWS_AS(Network{spec}, BadSpec);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    std::mt19937_64 rng(25);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 30; ++i) {
        std::normal_distribution<double> gauss(i % 2 ? 2.0 : -2.0, 1.0);
        x.append_row({gauss(rng), gauss(rng), gauss(rng), gauss(rng)});
        y.push_back(i % 2);
    }
    NetworkSpec spec;
    spec.seed = 31;
    spec.layers = {LayerDesc::dense(4, 16), LayerDesc::relu(), LayerDesc::dense(16, 2),
                   LayerDesc::softmax()};
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 31;
    NeuralModel m1 = train_classifier(spec, cfg, x, y);
    NeuralModel m2 = train_classifier(spec, cfg, x, y);
    const auto p1 = m1.network().parameters();
    const auto p2 = m2.network().parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i]->data == p2[i]->data);
    CHECK(m1.epoch_losses() == m2.epoch_losses());
}

TEST_CASE("fc classifier reaches 0.99 train accuracy on separable blobs") {
    std::mt19937_64 rng(26);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
        const int cls = i % 2;
        x.append_row({gauss(rng) + 6.0 * cls, gauss(rng) - 6.0 * cls, gauss(rng)});
        y.push_back(cls);
    }
    const NetworkSpec spec = build_architecture(ArchKind::FC, 3, 2, true, 5);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.005;
    cfg.seed = 5;
    NeuralModel model = train_classifier(spec, cfg, x, y);
    const auto pred = model.predict_class(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == y[i]) ++correct;
    CHECK(static_cast<double>(correct) / static_cast<double>(pred.size()) >= 0.99);
}

TEST_CASE("fc regressor fits a planted linear target") {
    std::mt19937_64 rng(27);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<double> y;
    double var_y = 0.0;
    for (int i = 0; i < 80; ++i) {
        const double a = gauss(rng), b = gauss(rng), c = gauss(rng);
        x.append_row({a, b, c});
        y.push_back(0.4 * a - 0.5 * b + 0.2 * c);
        var_y += y.back() * y.back();
    }
    var_y /= 80.0;
    const NetworkSpec spec = build_architecture(ArchKind::FC, 3, 1, false, 6);
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.003;
    cfg.seed = 6;
    NeuralModel model = train_regressor(spec, cfg, x, y);
    const auto pred = model.predict_value(x);
    double mse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - y[i]) * (pred[i] - y[i]);
    mse /= static_cast<double>(pred.size());
    CHECK(mse < 1e-2);
    CHECK(mse < 0.05 * var_y);  // scale-aware: explains > 95% of the variance
}

TEST_CASE("eval-phase prediction is pure") {
    std::mt19937_64 rng(28);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
        std::normal_distribution<double> gauss(i % 2 ? 1.0 : -1.0, 0.5);
        x.append_row({gauss(rng), gauss(rng), gauss(rng), gauss(rng), gauss(rng), gauss(rng),
                      gauss(rng), gauss(rng), gauss(rng)});
        y.push_back(i % 2);
    }
    const NetworkSpec spec = build_architecture(ArchKind::CNN, 9, 2, true, 7);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 7;
    NeuralModel model = train_classifier(spec, cfg, x, y);
    const Matrix proba1 = model.predict_proba(x);
    const Matrix proba2 = model.predict_proba(x);
    CHECK(proba1.data == proba2.data);  // batch norm running stats untouched in eval
}

TEST_CASE("divergence is reported with the epoch") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<double> y;
    for (int i = 0; i < 16; ++i) {
        x.append_row({gauss(rng), gauss(rng)});
        y.push_back(100.0 * gauss(rng));
    }
    NetworkSpec spec;
    spec.seed = 30;
    spec.layers = {LayerDesc::dense(2, 8), LayerDesc::relu(), LayerDesc::dense(8, 1)};
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::SGD;
    cfg.learning_rate = 1e9;
    cfg.epochs = 50;
    cfg.seed = 30;
    CHECK_THROWS_AS(train_regressor(spec, cfg, x, y), NumericError);
}

TEST_CASE("network serialization round-trips predictions exactly") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 24; ++i) {
        x.append_row({gauss(rng) + (i % 2 ? 3.0 : 0.0), gauss(rng), gauss(rng), gauss(rng),
                      gauss(rng)});
        y.push_back(i % 2);
    }
    const NetworkSpec spec = build_architecture(ArchKind::FC, 5, 2, true, 8);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.seed = 8;
    NeuralModel model = train_classifier(spec, cfg, x, y);
    NeuralModel restored = NeuralModel::from_json(model.to_json());
    CHECK(model.predict_proba(x).data == restored.predict_proba(x).data);
    CHECK(model.predict_class(x) == restored.predict_class(x));
}

TEST_CASE("adam and sgd both reduce the training loss") {
    std::mt19937_64 rng(32);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) {
        x.append_row({gauss(rng) + (i % 2 ? 2.5 : -2.5), gauss(rng)});
        y.push_back(i % 2);
    }
    NetworkSpec spec;
    spec.seed = 33;
    spec.layers = {LayerDesc::dense(2, 8), LayerDesc::tanh(), LayerDesc::dense(8, 2),
                   LayerDesc::softmax()};
    for (OptimizerKind opt : {OptimizerKind::SGD, OptimizerKind::Adam}) {
        TrainConfig cfg;
        cfg.optimizer = opt;
        cfg.learning_rate = opt == OptimizerKind::SGD ? 0.1 : 0.01;
        cfg.epochs = 40;
        cfg.seed = 33;
        NeuralModel model = train_classifier(spec, cfg, x, y);
        CHECK(model.epoch_losses().back() < model.epoch_losses().front());
    }
}
