#include "keydyn/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "keydyn/nn/reshape.hpp"

namespace keydyn::nn {

LayerDesc LayerDesc::dense(std::size_t in, std::size_t out) {
    LayerDesc d;
    d.kind = Kind::Dense;
    d.in = in;
    d.out = out;
    return d;
}
LayerDesc LayerDesc::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride, std::size_t pad) {
    LayerDesc d;
    d.kind = Kind::Conv2D;
    d.in_ch = in_ch;
    d.out_ch = out_ch;
    d.kernel = kernel;
    d.stride = stride;
    d.pad = pad;
    return d;
}
LayerDesc LayerDesc::batch_norm(std::size_t dim) {
    LayerDesc d;
    d.kind = Kind::BatchNorm;
    d.dim = dim;
    return d;
}
LayerDesc LayerDesc::dropout(double rate) {
    LayerDesc d;
    d.kind = Kind::Dropout;
    d.rate = rate;
    return d;
}
LayerDesc LayerDesc::relu() {
    LayerDesc d;
    d.kind = Kind::Relu;
    return d;
}
LayerDesc LayerDesc::tanh() {
    LayerDesc d;
    d.kind = Kind::Tanh;
    return d;
}
LayerDesc LayerDesc::softmax() {
    LayerDesc d;
    d.kind = Kind::Softmax;
    return d;
}
LayerDesc LayerDesc::flatten() {
    LayerDesc d;
    d.kind = Kind::Flatten;
    return d;
}
LayerDesc LayerDesc::rnn_stack(std::size_t layers, std::size_t hidden, std::size_t in) {
    LayerDesc d;
    d.kind = Kind::RNNStack;
    d.layers = layers;
    d.hidden = hidden;
    d.in = in;
    return d;
}
LayerDesc LayerDesc::lstm_stack(std::size_t layers, std::size_t hidden, std::size_t in) {
    LayerDesc d;
    d.kind = Kind::LSTMStack;
    d.layers = layers;
    d.hidden = hidden;
    d.in = in;
    return d;
}
LayerDesc LayerDesc::square_image(bool strict) {
    LayerDesc d;
    d.kind = Kind::SquareImage;
    d.strict_smaller = strict;
    return d;
}
LayerDesc LayerDesc::sequence_reshape(bool strict) {
    LayerDesc d;
    d.kind = Kind::SequenceReshape;
    d.strict_smaller = strict;
    return d;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

void fill_uniform(Tensor& t, double limit, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(-limit, limit);
    for (double& v : t.data) v = unif(rng);
}

}  // namespace

void orthogonalize_square(Tensor& w, std::size_t n, std::size_t col_offset,
                          std::size_t row_stride, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto at = [&](std::size_t r, std::size_t c) -> double& {
        return w.data[r * row_stride + col_offset + c];
    };
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) at(r, c) = gauss(rng);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double proj = 0.0;
            for (std::size_t r = 0; r < n; ++r) proj += at(r, c) * at(r, p);
            for (std::size_t r = 0; r < n; ++r) at(r, c) -= proj * at(r, p);
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < n; ++r) norm += at(r, c) * at(r, c);
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            for (std::size_t r = 0; r < n; ++r) at(r, c) = r == c ? 1.0 : 0.0;
            continue;
        }
        const double sign = at(c, c) < 0.0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < n; ++r) at(r, c) *= sign / norm;
    }
}

namespace {

const Tensor& require_cached(const Tensor& t) {
    if (t.data.empty()) throw NoCachedForward("backward without a cached forward pass");
    return t;
}

class DenseLayer final : public Layer {
public:
    explicit DenseLayer(const LayerDesc& d)
        : desc_(d), w_({d.in, d.out}), b_({d.out}), dw_({d.in, d.out}), db_({d.out}) {}

    void init_params(std::mt19937_64& rng) override {
        fill_uniform(w_, glorot_limit(desc_.in, desc_.out), rng);
        b_.zero();
    }

    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 2 || x.shape[1] != desc_.in)
            throw ShapeMismatch("dense layer input shape");
        x_ = x;
        const std::size_t batch = x.shape[0];
        Tensor y({batch, desc_.out});
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t o = 0; o < desc_.out; ++o) {
                double s = b_.data[o];
                for (std::size_t j = 0; j < desc_.in; ++j) s += x.at2(i, j) * w_.at2(j, o);
                y.at2(i, o) = s;
            }
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_cached(x_);
        const std::size_t batch = x_.shape[0];
        dw_.zero();
        db_.zero();
        Tensor dx({batch, desc_.in});
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t o = 0; o < desc_.out; ++o) {
                const double go = g.at2(i, o);
                db_.data[o] += go;
                for (std::size_t j = 0; j < desc_.in; ++j) {
                    dw_.at2(j, o) += x_.at2(i, j) * go;
                    dx.at2(i, j) += w_.at2(j, o) * go;
                }
            }
        }
        return dx;
    }

    std::vector<Tensor*> parameters() override { return {&w_, &b_}; }
    std::vector<Tensor*> gradients() override { return {&dw_, &db_}; }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    Tensor w_, b_, dw_, db_, x_;
};

class Conv2DLayer final : public Layer {
public:
    explicit Conv2DLayer(const LayerDesc& d)
        : desc_(d),
          w_({d.out_ch, d.in_ch, d.kernel, d.kernel}),
          b_({d.out_ch}),
          dw_({d.out_ch, d.in_ch, d.kernel, d.kernel}),
          db_({d.out_ch}) {}

    void init_params(std::mt19937_64& rng) override {
        const std::size_t k2 = desc_.kernel * desc_.kernel;
        fill_uniform(w_, glorot_limit(desc_.in_ch * k2, desc_.out_ch * k2), rng);
        b_.zero();
    }

    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 4 || x.shape[1] != desc_.in_ch)
            throw ShapeMismatch("conv2d input shape");
        x_ = x;
        const std::size_t batch = x.shape[0], h = x.shape[2], w = x.shape[3];
        const std::size_t k = desc_.kernel, s = desc_.stride, p = desc_.pad;
        if (h + 2 * p < k || w + 2 * p < k) throw ShapeMismatch("conv2d kernel larger than input");
        const std::size_t oh = (h + 2 * p - k) / s + 1;
        const std::size_t ow = (w + 2 * p - k) / s + 1;
        Tensor y({batch, desc_.out_ch, oh, ow});
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t oc = 0; oc < desc_.out_ch; ++oc)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        double acc = b_.data[oc];
                        for (std::size_t ic = 0; ic < desc_.in_ch; ++ic)
                            for (std::size_t ki = 0; ki < k; ++ki)
                                for (std::size_t kj = 0; kj < k; ++kj) {
                                    const std::ptrdiff_t ri =
                                        static_cast<std::ptrdiff_t>(i * s + ki) -
                                        static_cast<std::ptrdiff_t>(p);
                                    const std::ptrdiff_t rj =
                                        static_cast<std::ptrdiff_t>(j * s + kj) -
                                        static_cast<std::ptrdiff_t>(p);
                                    if (ri < 0 || rj < 0 || ri >= static_cast<std::ptrdiff_t>(h) ||
                                        rj >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    acc += x.at4(bi, ic, static_cast<std::size_t>(ri),
                                                 static_cast<std::size_t>(rj)) *
                                           w_.at4(oc, ic, ki, kj);
                                }
                        y.at4(bi, oc, i, j) = acc;
                    }
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_cached(x_);
        const std::size_t batch = x_.shape[0], h = x_.shape[2], w = x_.shape[3];
        const std::size_t k = desc_.kernel, s = desc_.stride, p = desc_.pad;
        const std::size_t oh = g.shape[2], ow = g.shape[3];
        dw_.zero();
        db_.zero();
        Tensor dx(x_.shape);
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t oc = 0; oc < desc_.out_ch; ++oc)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const double go = g.at4(bi, oc, i, j);
                        db_.data[oc] += go;
                        for (std::size_t ic = 0; ic < desc_.in_ch; ++ic)
                            for (std::size_t ki = 0; ki < k; ++ki)
                                for (std::size_t kj = 0; kj < k; ++kj) {
                                    const std::ptrdiff_t ri =
                                        static_cast<std::ptrdiff_t>(i * s + ki) -
                                        static_cast<std::ptrdiff_t>(p);
                                    const std::ptrdiff_t rj =
                                        static_cast<std::ptrdiff_t>(j * s + kj) -
                                        static_cast<std::ptrdiff_t>(p);
                                    if (ri < 0 || rj < 0 || ri >= static_cast<std::ptrdiff_t>(h) ||
                                        rj >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    const auto uri = static_cast<std::size_t>(ri);
                                    const auto urj = static_cast<std::size_t>(rj);
                                    dw_.at4(oc, ic, ki, kj) += x_.at4(bi, ic, uri, urj) * go;
                                    dx.at4(bi, ic, uri, urj) += w_.at4(oc, ic, ki, kj) * go;
                                }
                    }
        return dx;
    }

    std::vector<Tensor*> parameters() override { return {&w_, &b_}; }
    std::vector<Tensor*> gradients() override { return {&dw_, &db_}; }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    Tensor w_, b_, dw_, db_, x_;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

class BatchNormLayer final : public Layer {
public:
    explicit BatchNormLayer(const LayerDesc& d)
        : desc_(d),
          gamma_({d.dim}),
          beta_({d.dim}),
          dgamma_({d.dim}),
          dbeta_({d.dim}),
          running_mean_({d.dim}),
          running_var_({d.dim}) {
        std::fill(gamma_.data.begin(), gamma_.data.end(), 1.0);
        std::fill(running_var_.data.begin(), running_var_.data.end(), 1.0);
    }

    Tensor forward(const Tensor& x, Phase phase, std::mt19937_64&) override {
        const auto [spatial, batch] = plane(x);
        x_ = x;
        phase_ = phase;
        Tensor y(x.shape);
        mean_.assign(desc_.dim, 0.0);
        var_.assign(desc_.dim, 0.0);
        const double m = static_cast<double>(batch * spatial);
        if (phase == Phase::Train) {
            for_each_elem(x, [&](std::size_t c, double v, std::size_t) { mean_[c] += v; });
            for (double& v : mean_) v /= m;
            for_each_elem(x, [&](std::size_t c, double v, std::size_t) {
                const double d = v - mean_[c];
                var_[c] += d * d;
            });
            for (double& v : var_) v /= m;
            for (std::size_t c = 0; c < desc_.dim; ++c) {
                running_mean_.data[c] = kBnMomentum * running_mean_.data[c] +
                                        (1.0 - kBnMomentum) * mean_[c];
                running_var_.data[c] =
                    kBnMomentum * running_var_.data[c] + (1.0 - kBnMomentum) * var_[c];
            }
        } else {
            mean_.assign(running_mean_.data.begin(), running_mean_.data.end());
            var_.assign(running_var_.data.begin(), running_var_.data.end());
        }
        inv_std_.resize(desc_.dim);
        for (std::size_t c = 0; c < desc_.dim; ++c) inv_std_[c] = 1.0 / std::sqrt(var_[c] + kBnEps);
        for_each_elem(x, [&](std::size_t c, double v, std::size_t flat) {
            y.data[flat] = (v - mean_[c]) * inv_std_[c] * gamma_.data[c] + beta_.data[c];
        });
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_cached(x_);
        const auto [spatial, batch] = plane(x_);
        const double m = static_cast<double>(batch * spatial);
        dgamma_.zero();
        dbeta_.zero();
        Tensor dx(x_.shape);
        if (phase_ == Phase::Eval) {
            // running statistics are constants: plain affine backward
            for_each_elem(x_, [&](std::size_t c, double v, std::size_t flat) {
                dgamma_.data[c] += g.data[flat] * (v - mean_[c]) * inv_std_[c];
                dbeta_.data[c] += g.data[flat];
                dx.data[flat] = g.data[flat] * gamma_.data[c] * inv_std_[c];
            });
            return dx;
        }
        std::vector<double> sum_g(desc_.dim, 0.0), sum_gx(desc_.dim, 0.0);
        for_each_elem(x_, [&](std::size_t c, double v, std::size_t flat) {
            const double xhat = (v - mean_[c]) * inv_std_[c];
            dgamma_.data[c] += g.data[flat] * xhat;
            dbeta_.data[c] += g.data[flat];
            sum_g[c] += g.data[flat];
            sum_gx[c] += g.data[flat] * xhat;
        });
        for_each_elem(x_, [&](std::size_t c, double v, std::size_t flat) {
            const double xhat = (v - mean_[c]) * inv_std_[c];
            dx.data[flat] = gamma_.data[c] * inv_std_[c] / m *
                            (m * g.data[flat] - sum_g[c] - xhat * sum_gx[c]);
        });
        return dx;
    }

    std::vector<Tensor*> parameters() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> gradients() override { return {&dgamma_, &dbeta_}; }
    std::vector<Tensor*> state() override { return {&running_mean_, &running_var_}; }
    const LayerDesc& desc() const override { return desc_; }

private:
    std::pair<std::size_t, std::size_t> plane(const Tensor& x) const {
        if (x.shape.size() == 2 && x.shape[1] == desc_.dim) return {1, x.shape[0]};
        if (x.shape.size() == 4 && x.shape[1] == desc_.dim)
            return {x.shape[2] * x.shape[3], x.shape[0]};
        throw ShapeMismatch("batch norm input shape");
    }

    template <typename F>
    void for_each_elem(const Tensor& x, F&& f) const {
        if (x.shape.size() == 2) {
            for (std::size_t i = 0; i < x.shape[0]; ++i)
                for (std::size_t c = 0; c < desc_.dim; ++c) {
                    const std::size_t flat = i * desc_.dim + c;
                    f(c, x.data[flat], flat);
                }
        } else {
            const std::size_t spatial = x.shape[2] * x.shape[3];
            for (std::size_t i = 0; i < x.shape[0]; ++i)
                for (std::size_t c = 0; c < desc_.dim; ++c)
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const std::size_t flat = (i * desc_.dim + c) * spatial + s;
                        f(c, x.data[flat], flat);
                    }
        }
    }

    LayerDesc desc_;
    Tensor gamma_, beta_, dgamma_, dbeta_, running_mean_, running_var_;
    Tensor x_;
    Phase phase_ = Phase::Train;
    std::vector<double> mean_, var_, inv_std_;
};

class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(const LayerDesc& d) : desc_(d) {}

    Tensor forward(const Tensor& x, Phase phase, std::mt19937_64& rng) override {
        if (phase == Phase::Eval || desc_.rate <= 0.0) {
            mask_.shape = x.shape;
            mask_.data.assign(x.data.size(), 1.0);
            return x;
        }
        const double keep = 1.0 - desc_.rate;
        std::bernoulli_distribution coin(keep);
        mask_ = Tensor(x.shape);
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            mask_.data[i] = coin(rng) ? 1.0 / keep : 0.0;  // inverted dropout
            y.data[i] = x.data[i] * mask_.data[i];
        }
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_cached(mask_);
        Tensor dx(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] = g.data[i] * mask_.data[i];
        return dx;
    }

    const LayerDesc& desc() const override { return desc_; }
    const Tensor& last_mask() const { return mask_; }

private:
    LayerDesc desc_;
    Tensor mask_;
};

class ReluLayer final : public Layer {
public:
    explicit ReluLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        x_ = x;
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
        return y;
    }
    Tensor backward(const Tensor& g) override {
        require_cached(x_);
        Tensor dx(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            dx.data[i] = x_.data[i] > 0.0 ? g.data[i] : 0.0;
        return dx;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    Tensor x_;
};

class TanhLayer final : public Layer {
public:
    explicit TanhLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        y_ = Tensor(x.shape);
        for (std::size_t i = 0; i < x.data.size(); ++i) y_.data[i] = std::tanh(x.data[i]);
        return y_;
    }
    Tensor backward(const Tensor& g) override {
        require_cached(y_);
        Tensor dx(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            dx.data[i] = g.data[i] * (1.0 - y_.data[i] * y_.data[i]);
        return dx;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    Tensor y_;
};

class SoftmaxLayer final : public Layer {
public:
    explicit SoftmaxLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 2) throw ShapeMismatch("softmax expects [batch, classes]");
        y_ = Tensor(x.shape);
        for (std::size_t i = 0; i < x.shape[0]; ++i) {
            double mx = x.at2(i, 0);
            for (std::size_t c = 1; c < x.shape[1]; ++c) mx = std::max(mx, x.at2(i, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < x.shape[1]; ++c) {
                y_.at2(i, c) = std::exp(x.at2(i, c) - mx);
                sum += y_.at2(i, c);
            }
            for (std::size_t c = 0; c < x.shape[1]; ++c) y_.at2(i, c) /= sum;
        }
        return y_;
    }
    Tensor backward(const Tensor& g) override {
        require_cached(y_);
        Tensor dx(g.shape);
        for (std::size_t i = 0; i < g.shape[0]; ++i) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.shape[1]; ++c) dot += g.at2(i, c) * y_.at2(i, c);
            for (std::size_t c = 0; c < g.shape[1]; ++c)
                dx.at2(i, c) = y_.at2(i, c) * (g.at2(i, c) - dot);
        }
        return dx;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    Tensor y_;
};

class FlattenLayer final : public Layer {
public:
    explicit FlattenLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        in_shape_ = x.shape;
        return x.reshaped({x.shape[0], x.size() / x.shape[0]});
    }
    Tensor backward(const Tensor& g) override {
        if (in_shape_.empty()) throw NoCachedForward("flatten backward before forward");
        return g.reshaped(in_shape_);
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    std::vector<std::size_t> in_shape_;
};

class SquareImageLayer final : public Layer {
public:
    explicit SquareImageLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 2) throw ShapeMismatch("square image expects [batch, features]");
        in_dim_ = x.shape[1];
        const std::size_t side = square_image_side(in_dim_, desc_.strict_smaller);
        Tensor y({x.shape[0], 1, side, side});
        for (std::size_t i = 0; i < x.shape[0]; ++i)
            for (std::size_t j = 0; j < side * side; ++j)
                y.data[i * side * side + j] = x.at2(i, j);
        return y;
    }
    Tensor backward(const Tensor& g) override {
        if (in_dim_ == 0) throw NoCachedForward("reshape backward before forward");
        const std::size_t used = g.shape[2] * g.shape[3];
        Tensor dx({g.shape[0], in_dim_});
        for (std::size_t i = 0; i < g.shape[0]; ++i)
            for (std::size_t j = 0; j < used; ++j) dx.at2(i, j) = g.data[i * used + j];
        return dx;  // dropped tail entries get zero gradient
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    std::size_t in_dim_ = 0;
};

class SequenceReshapeLayer final : public Layer {
public:
    explicit SequenceReshapeLayer(const LayerDesc& d) : desc_(d) {}
    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 2) throw ShapeMismatch("sequence reshape expects [batch, features]");
        in_dim_ = x.shape[1];
        const SequenceShape s = sequence_shape(in_dim_, desc_.strict_smaller);
        Tensor y({x.shape[0], s.rows, s.cols});
        const std::size_t used = s.rows * s.cols;
        for (std::size_t i = 0; i < x.shape[0]; ++i)
            for (std::size_t j = 0; j < used; ++j) y.data[i * used + j] = x.at2(i, j);
        return y;
    }
    Tensor backward(const Tensor& g) override {
        if (in_dim_ == 0) throw NoCachedForward("reshape backward before forward");
        const std::size_t used = g.shape[1] * g.shape[2];
        Tensor dx({g.shape[0], in_dim_});
        for (std::size_t i = 0; i < g.shape[0]; ++i)
            for (std::size_t j = 0; j < used; ++j) dx.at2(i, j) = g.data[i * used + j];
        return dx;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    std::size_t in_dim_ = 0;
};

// Stacked tanh recurrent layers; emits the top layer's final hidden state.
class RnnStackLayer final : public Layer {
public:
    explicit RnnStackLayer(const LayerDesc& d) : desc_(d) {
        for (std::size_t l = 0; l < d.layers; ++l) {
            const std::size_t in_dim = l == 0 ? d.in : d.hidden;
            wx_.emplace_back(std::vector<std::size_t>{in_dim, d.hidden});
            wh_.emplace_back(std::vector<std::size_t>{d.hidden, d.hidden});
            b_.emplace_back(std::vector<std::size_t>{d.hidden});
            dwx_.emplace_back(std::vector<std::size_t>{in_dim, d.hidden});
            dwh_.emplace_back(std::vector<std::size_t>{d.hidden, d.hidden});
            db_.emplace_back(std::vector<std::size_t>{d.hidden});
        }
    }

    void init_params(std::mt19937_64& rng) override {
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            fill_uniform(wx_[l], glorot_limit(wx_[l].shape[0], desc_.hidden), rng);
            orthogonalize_square(wh_[l], desc_.hidden, 0, desc_.hidden, rng);
            b_[l].zero();
        }
    }

    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 3 || x.shape[2] != desc_.in)
            throw ShapeMismatch("rnn stack expects [batch, time, features]");
        const std::size_t batch = x.shape[0], steps = x.shape[1], hidden = desc_.hidden;
        inputs_.clear();
        states_.clear();
        Tensor cur = x;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            inputs_.push_back(cur);
            const std::size_t in_dim = cur.shape[2];
            Tensor h({batch, steps, hidden});
            for (std::size_t i = 0; i < batch; ++i) {
                std::vector<double> prev(hidden, 0.0);
                for (std::size_t t = 0; t < steps; ++t) {
                    for (std::size_t u = 0; u < hidden; ++u) {
                        double a = b_[l].data[u];
                        for (std::size_t j = 0; j < in_dim; ++j)
                            a += cur.at3(i, t, j) * wx_[l].at2(j, u);
                        for (std::size_t j = 0; j < hidden; ++j)
                            a += prev[j] * wh_[l].at2(j, u);
                        h.at3(i, t, u) = std::tanh(a);
                    }
                    for (std::size_t u = 0; u < hidden; ++u) prev[u] = h.at3(i, t, u);
                }
            }
            states_.push_back(h);
            cur = h;
        }
        Tensor out({batch, hidden});
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t u = 0; u < hidden; ++u) out.at2(i, u) = cur.at3(i, steps - 1, u);
        return out;
    }

    Tensor backward(const Tensor& g) override {
        if (states_.empty()) throw NoCachedForward("rnn backward before forward");
        const std::size_t batch = inputs_[0].shape[0], steps = inputs_[0].shape[1];
        const std::size_t hidden = desc_.hidden;

        // gradient on the full output sequence of the top layer
        Tensor dh_seq({batch, steps, hidden});
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t u = 0; u < hidden; ++u) dh_seq.at3(i, steps - 1, u) = g.at2(i, u);

        for (std::size_t li = desc_.layers; li-- > 0;) {
            const Tensor& x = inputs_[li];
            const Tensor& h = states_[li];
            const std::size_t in_dim = x.shape[2];
            dwx_[li].zero();
            dwh_[li].zero();
            db_[li].zero();
            Tensor dx({batch, steps, in_dim});
            for (std::size_t i = 0; i < batch; ++i) {
                std::vector<double> dh_next(hidden, 0.0);
                for (std::size_t t = steps; t-- > 0;) {
                    std::vector<double> da(hidden);
                    for (std::size_t u = 0; u < hidden; ++u) {
                        const double hv = h.at3(i, t, u);
                        da[u] = (dh_seq.at3(i, t, u) + dh_next[u]) * (1.0 - hv * hv);
                        db_[li].data[u] += da[u];
                    }
                    for (std::size_t j = 0; j < in_dim; ++j) {
                        double acc = 0.0;
                        for (std::size_t u = 0; u < hidden; ++u) {
                            dwx_[li].at2(j, u) += x.at3(i, t, j) * da[u];
                            acc += wx_[li].at2(j, u) * da[u];
                        }
                        dx.at3(i, t, j) = acc;
                    }
                    std::fill(dh_next.begin(), dh_next.end(), 0.0);
                    if (t > 0) {
                        for (std::size_t j = 0; j < hidden; ++j) {
                            const double hprev = h.at3(i, t - 1, j);
                            double acc = 0.0;
                            for (std::size_t u = 0; u < hidden; ++u) {
                                dwh_[li].at2(j, u) += hprev * da[u];
                                acc += wh_[li].at2(j, u) * da[u];
                            }
                            dh_next[j] = acc;
                        }
                    }
                }
            }
            dh_seq = dx;
        }
        return dh_seq;
    }

    std::vector<Tensor*> parameters() override {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            p.push_back(&wx_[l]);
            p.push_back(&wh_[l]);
            p.push_back(&b_[l]);
        }
        return p;
    }
    std::vector<Tensor*> gradients() override {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            p.push_back(&dwx_[l]);
            p.push_back(&dwh_[l]);
            p.push_back(&db_[l]);
        }
        return p;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    LayerDesc desc_;
    std::vector<Tensor> wx_, wh_, b_, dwx_, dwh_, db_;
    std::vector<Tensor> inputs_, states_;
};

// Stacked LSTM layers, gate order (i, f, g, o); forget bias starts at +1.
class LstmStackLayer final : public Layer {
public:
    explicit LstmStackLayer(const LayerDesc& d) : desc_(d) {
        for (std::size_t l = 0; l < d.layers; ++l) {
            const std::size_t in_dim = l == 0 ? d.in : d.hidden;
            wx_.emplace_back(std::vector<std::size_t>{in_dim, 4 * d.hidden});
            wh_.emplace_back(std::vector<std::size_t>{d.hidden, 4 * d.hidden});
            b_.emplace_back(std::vector<std::size_t>{4 * d.hidden});
            dwx_.emplace_back(std::vector<std::size_t>{in_dim, 4 * d.hidden});
            dwh_.emplace_back(std::vector<std::size_t>{d.hidden, 4 * d.hidden});
            db_.emplace_back(std::vector<std::size_t>{4 * d.hidden});
        }
    }

    void init_params(std::mt19937_64& rng) override {
        const std::size_t hidden = desc_.hidden;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            fill_uniform(wx_[l], glorot_limit(wx_[l].shape[0], hidden), rng);
            for (std::size_t gate = 0; gate < 4; ++gate)
                orthogonalize_square(wh_[l], hidden, gate * hidden, 4 * hidden, rng);
            b_[l].zero();
            for (std::size_t u = 0; u < hidden; ++u) b_[l].data[hidden + u] = 1.0;  // f gate
        }
    }

    Tensor forward(const Tensor& x, Phase, std::mt19937_64&) override {
        if (x.shape.size() != 3 || x.shape[2] != desc_.in)
            throw ShapeMismatch("lstm stack expects [batch, time, features]");
        const std::size_t batch = x.shape[0], steps = x.shape[1], hidden = desc_.hidden;
        inputs_.clear();
        h_.clear();
        c_.clear();
        gates_.clear();
        Tensor cur = x;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            inputs_.push_back(cur);
            const std::size_t in_dim = cur.shape[2];
            Tensor h({batch, steps, hidden});
            Tensor c({batch, steps, hidden});
            Tensor gates({batch, steps, 4 * hidden});  // post-activation i,f,g,o
            for (std::size_t i = 0; i < batch; ++i) {
                std::vector<double> hprev(hidden, 0.0), cprev(hidden, 0.0);
                for (std::size_t t = 0; t < steps; ++t) {
                    for (std::size_t u = 0; u < 4 * hidden; ++u) {
                        double a = b_[l].data[u];
                        for (std::size_t j = 0; j < in_dim; ++j)
                            a += cur.at3(i, t, j) * wx_[l].at2(j, u);
                        for (std::size_t j = 0; j < hidden; ++j)
                            a += hprev[j] * wh_[l].at2(j, u);
                        gates.at3(i, t, u) = a;
                    }
                    for (std::size_t u = 0; u < hidden; ++u) {
                        const double ig = sigmoid(gates.at3(i, t, u));
                        const double fg = sigmoid(gates.at3(i, t, hidden + u));
                        const double gg = std::tanh(gates.at3(i, t, 2 * hidden + u));
                        const double og = sigmoid(gates.at3(i, t, 3 * hidden + u));
                        gates.at3(i, t, u) = ig;
                        gates.at3(i, t, hidden + u) = fg;
                        gates.at3(i, t, 2 * hidden + u) = gg;
                        gates.at3(i, t, 3 * hidden + u) = og;
                        const double cv = fg * cprev[u] + ig * gg;
                        c.at3(i, t, u) = cv;
                        h.at3(i, t, u) = og * std::tanh(cv);
                    }
                    for (std::size_t u = 0; u < hidden; ++u) {
                        hprev[u] = h.at3(i, t, u);
                        cprev[u] = c.at3(i, t, u);
                    }
                }
            }
            h_.push_back(h);
            c_.push_back(c);
            gates_.push_back(gates);
            cur = h;
        }
        Tensor out({batch, hidden});
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t u = 0; u < hidden; ++u) out.at2(i, u) = cur.at3(i, steps - 1, u);
        return out;
    }

    Tensor backward(const Tensor& g) override {
        if (h_.empty()) throw NoCachedForward("lstm backward before forward");
        const std::size_t batch = inputs_[0].shape[0], steps = inputs_[0].shape[1];
        const std::size_t hidden = desc_.hidden;

        Tensor dh_seq({batch, steps, hidden});
        for (std::size_t i = 0; i < batch; ++i)
            for (std::size_t u = 0; u < hidden; ++u) dh_seq.at3(i, steps - 1, u) = g.at2(i, u);

        for (std::size_t li = desc_.layers; li-- > 0;) {
            const Tensor& x = inputs_[li];
            const Tensor& h = h_[li];
            const Tensor& c = c_[li];
            const Tensor& gates = gates_[li];
            const std::size_t in_dim = x.shape[2];
            dwx_[li].zero();
            dwh_[li].zero();
            db_[li].zero();
            Tensor dx({batch, steps, in_dim});
            std::vector<double> dz(4 * hidden);
            for (std::size_t i = 0; i < batch; ++i) {
                std::vector<double> dh_next(hidden, 0.0), dc_next(hidden, 0.0);
                for (std::size_t t = steps; t-- > 0;) {
                    for (std::size_t u = 0; u < hidden; ++u) {
                        const double dh = dh_seq.at3(i, t, u) + dh_next[u];
                        const double ig = gates.at3(i, t, u);
                        const double fg = gates.at3(i, t, hidden + u);
                        const double gg = gates.at3(i, t, 2 * hidden + u);
                        const double og = gates.at3(i, t, 3 * hidden + u);
                        const double tc = std::tanh(c.at3(i, t, u));
                        const double dc = dh * og * (1.0 - tc * tc) + dc_next[u];
                        const double cprev = t > 0 ? c.at3(i, t - 1, u) : 0.0;
                        dz[u] = dc * gg * ig * (1.0 - ig);
                        dz[hidden + u] = dc * cprev * fg * (1.0 - fg);
                        dz[2 * hidden + u] = dc * ig * (1.0 - gg * gg);
                        dz[3 * hidden + u] = dh * tc * og * (1.0 - og);
                        dc_next[u] = dc * fg;
                    }
                    for (std::size_t u = 0; u < 4 * hidden; ++u) db_[li].data[u] += dz[u];
                    for (std::size_t j = 0; j < in_dim; ++j) {
                        double acc = 0.0;
                        for (std::size_t u = 0; u < 4 * hidden; ++u) {
                            dwx_[li].at2(j, u) += x.at3(i, t, j) * dz[u];
                            acc += wx_[li].at2(j, u) * dz[u];
                        }
                        dx.at3(i, t, j) = acc;
                    }
                    std::fill(dh_next.begin(), dh_next.end(), 0.0);
                    if (t > 0) {
                        for (std::size_t j = 0; j < hidden; ++j) {
                            const double hprev = h.at3(i, t - 1, j);
                            double acc = 0.0;
                            for (std::size_t u = 0; u < 4 * hidden; ++u) {
                                dwh_[li].at2(j, u) += hprev * dz[u];
                                acc += wh_[li].at2(j, u) * dz[u];
                            }
                            dh_next[j] = acc;
                        }
                    }
                }
            }
            dh_seq = dx;
        }
        return dh_seq;
    }

    std::vector<Tensor*> parameters() override {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            p.push_back(&wx_[l]);
            p.push_back(&wh_[l]);
            p.push_back(&b_[l]);
        }
        return p;
    }
    std::vector<Tensor*> gradients() override {
        std::vector<Tensor*> p;
        for (std::size_t l = 0; l < desc_.layers; ++l) {
            p.push_back(&dwx_[l]);
            p.push_back(&dwh_[l]);
            p.push_back(&db_[l]);
        }
        return p;
    }
    const LayerDesc& desc() const override { return desc_; }

private:
    static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

    LayerDesc desc_;
    std::vector<Tensor> wx_, wh_, b_, dwx_, dwh_, db_;
    std::vector<Tensor> inputs_, h_, c_, gates_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const LayerDesc& d) {
    using K = LayerDesc::Kind;
    switch (d.kind) {
        case K::Dense: return std::make_unique<DenseLayer>(d);
        case K::Conv2D: return std::make_unique<Conv2DLayer>(d);
        case K::BatchNorm: return std::make_unique<BatchNormLayer>(d);
        case K::Dropout: return std::make_unique<DropoutLayer>(d);
        case K::Relu: return std::make_unique<ReluLayer>(d);
        case K::Tanh: return std::make_unique<TanhLayer>(d);
        case K::Softmax: return std::make_unique<SoftmaxLayer>(d);
        case K::Flatten: return std::make_unique<FlattenLayer>(d);
        case K::RNNStack: return std::make_unique<RnnStackLayer>(d);
        case K::LSTMStack: return std::make_unique<LstmStackLayer>(d);
        case K::SquareImage: return std::make_unique<SquareImageLayer>(d);
        case K::SequenceReshape: return std::make_unique<SequenceReshapeLayer>(d);
    }
    throw Error("unknown layer kind");
}

}  // namespace keydyn::nn
