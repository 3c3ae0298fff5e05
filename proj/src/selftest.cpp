#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "keydyn/cli.hpp"
#include "keydyn/features.hpp"
#include "keydyn/nn/network.hpp"
#include "keydyn/nn/reshape.hpp"
#include "keydyn/preprocess.hpp"
#include "keydyn/stats.hpp"

namespace keydyn {

namespace {

bool check_digraph_identities(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> hold(1, 300), gap(-50, 400), len(2, 12);
    for (int s = 0; s < 2000; ++s) {
        std::vector<KeyEvent> stream;
        std::int64_t press = 1000;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            KeyEvent ev;
            ev.user_id = "u";
            ev.key_label = "a";
            ev.press_ms = press;
            ev.release_ms = press + hold(rng);
            stream.push_back(ev);
            press += std::max(1, gap(rng) + 50);
        }
        std::sort(stream.begin(), stream.end(),
                  [](const KeyEvent& a, const KeyEvent& b) { return a.press_ms < b.press_ms; });
        for (std::size_t i = 0; i + 1 < stream.size(); ++i) {
            const auto& k1 = stream[i];
            const auto& k2 = stream[i + 1];
            const double hold2 = static_cast<double>(k2.release_ms - k2.press_ms);
            const double f1 = static_cast<double>(k2.press_ms - k1.release_ms);
            const double f2 = static_cast<double>(k2.release_ms - k1.release_ms);
            const double f3 = static_cast<double>(k2.press_ms - k1.press_ms);
            const double f4 = static_cast<double>(k2.release_ms - k1.press_ms);
            if (f2 - f1 != hold2 || f4 - f3 != hold2) return false;
        }
    }
    return true;
}

bool check_iqr_properties(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(100.0, 25.0);
    std::uniform_int_distribution<int> len(1, 60);
    for (int s = 0; s < 1000; ++s) {
        std::vector<double> values(static_cast<std::size_t>(len(rng)));
        for (double& v : values) v = gauss(rng);
        const auto once = iqr_filter(values);
        const auto twice = iqr_filter(once);
        if (once != twice) return false;
        for (double v : once)
            if (std::find(values.begin(), values.end(), v) == values.end()) return false;
    }
    return true;
}

bool check_reshape_contracts() {
    for (std::size_t n = 1; n <= 500; ++n) {
        const std::size_t s = nn::square_image_side(n);
        if (!(s * s <= n && n < (s + 1) * (s + 1))) return false;
    }
    for (std::size_t n = 4; n <= 500; ++n) {
        const auto shape = nn::sequence_shape(n);
        const std::size_t c = shape.rows * shape.cols;
        if (c > n || shape.rows < 2 || shape.rows > shape.cols) return false;
        if (!nn::is_composite(c)) return false;
        for (std::size_t better = c + 1; better <= n; ++better)
            if (nn::is_composite(better)) return false;
    }
    return true;
}

double max_grad_check_error(nn::Network& net, const nn::Tensor& x, const std::vector<int>& y) {
    std::mt19937_64 rng(11);
    const auto params = net.parameters();
    const auto grads = net.gradients();
    for (auto* g : grads) g->zero();
    const nn::Tensor out = net.forward(x, nn::Phase::Train, rng);
    auto [loss, dloss] = nn::nll_loss(out, y);
    (void)loss;
    net.backward(dloss);

    std::vector<std::vector<double>> analytic;
    for (auto* g : grads) analytic.push_back(g->data);

    double worst = 0.0;
    const double eps = 1e-5;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        for (std::size_t j = 0; j < params[pi]->data.size(); ++j) {
            const double saved = params[pi]->data[j];
            params[pi]->data[j] = saved + eps;
            const double lp = nn::nll_loss(net.forward(x, nn::Phase::Train, rng), y).first;
            params[pi]->data[j] = saved - eps;
            const double lm = nn::nll_loss(net.forward(x, nn::Phase::Train, rng), y).first;
            params[pi]->data[j] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[pi][j];
            const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-3);
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

bool check_gradients() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);

    {  // dense stack
        nn::NetworkSpec spec;
        spec.seed = 3;
        spec.layers = {nn::LayerDesc::dense(6, 5), nn::LayerDesc::tanh(),
                       nn::LayerDesc::dense(5, 3), nn::LayerDesc::softmax()};
        nn::Network net(spec);
        net.init_params();
        nn::Tensor x({4, 6});
        for (double& v : x.data) v = gauss(rng);
        if (max_grad_check_error(net, x, {0, 2, 1, 0}) > 1e-4) return false;
    }
    {  // conv + batch norm
        nn::NetworkSpec spec;
        spec.seed = 4;
        spec.layers = {nn::LayerDesc::conv2d(1, 2, 3, 1, 1), nn::LayerDesc::batch_norm(2),
                       nn::LayerDesc::tanh(), nn::LayerDesc::flatten(),
                       nn::LayerDesc::dense(2 * 16, 2), nn::LayerDesc::softmax()};
        nn::Network net(spec);
        net.init_params();
        nn::Tensor x({3, 1, 4, 4});
        for (double& v : x.data) v = gauss(rng);
        if (max_grad_check_error(net, x, {1, 0, 1}) > 1e-4) return false;
    }
    {  // rnn, 2 steps
        nn::NetworkSpec spec;
        spec.seed = 5;
        spec.layers = {nn::LayerDesc::rnn_stack(2, 4, 3), nn::LayerDesc::dense(4, 2),
                       nn::LayerDesc::softmax()};
        nn::Network net(spec);
        net.init_params();
        nn::Tensor x({3, 2, 3});
        for (double& v : x.data) v = gauss(rng);
        if (max_grad_check_error(net, x, {0, 1, 1}) > 1e-4) return false;
    }
    {  // lstm, 2 steps
        nn::NetworkSpec spec;
        spec.seed = 6;
        spec.layers = {nn::LayerDesc::lstm_stack(2, 4, 3), nn::LayerDesc::dense(4, 2),
                       nn::LayerDesc::softmax()};
        nn::Network net(spec);
        net.init_params();
        nn::Tensor x({3, 2, 3});
        for (double& v : x.data) v = gauss(rng);
        if (max_grad_check_error(net, x, {1, 0, 1}) > 1e-4) return false;
    }
    return true;
}

bool check_mi_planted(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int run = 0; run < 5; ++run) {
        const std::size_t n = 300, d = 20;
        Matrix x(n, d);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(i % 2);
            for (std::size_t j = 0; j < d; ++j) x.at(i, j) = noise(rng);
            x.at(i, 7) = y[i] + 0.4 * noise(rng);
        }
        const MISelector sel = select_top_k(x, y, 1);
        if (sel.selected[0] != 7) return false;
    }
    return true;
}

bool check_smote_contract(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int run = 0; run < 10; ++run) {
        const std::size_t n_major = 14, n_minor = 5, d = 4;
        Matrix x(n_major + n_minor, d);
        std::vector<int> y;
        for (std::size_t i = 0; i < n_major + n_minor; ++i) {
            const bool minor = i >= n_major;
            y.push_back(minor ? 1 : 0);
            for (std::size_t j = 0; j < d; ++j) x.at(i, j) = gauss(rng) + (minor ? 1.5 : 0.0);
        }
        SmoteConfig cfg;
        cfg.seed = seed + static_cast<std::uint64_t>(run);
        const SmoteResult res = borderline_smote(x, y, cfg);
        std::size_t c0 = 0, c1 = 0;
        for (int v : res.y) (v == 0 ? c0 : c1)++;
        if (c0 != c1 || res.n_original != n_major + n_minor) return false;
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (res.x.at(i, j) != x.at(i, j)) return false;
    }
    return true;
}

}  // namespace

bool run_selftest(std::ostream& out) {
    struct Check {
        const char* name;
        bool ok;
    };
    const Check checks[] = {
        {"digraph identities (F2-F1 = F4-F3 = hold2)", check_digraph_identities(21)},
        {"iqr filter idempotence and subset", check_iqr_properties(22)},
        {"reshape contracts vs brute force", check_reshape_contracts()},
        {"gradient checks (dense, conv+bn, rnn, lstm)", check_gradients()},
        {"mutual information planted-feature recovery", check_mi_planted(23)},
        {"borderline smote count contract", check_smote_contract(24)},
    };
    bool all = true;
    for (const auto& c : checks) {
        out << (c.ok ? "[pass] " : "[FAIL] ") << c.name << "\n";
        all = all && c.ok;
    }
    return all;
}

}  // namespace keydyn
