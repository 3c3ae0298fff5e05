#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "keydyn/nn/tensor.hpp"

namespace keydyn::nn {

enum class Phase { Train, Eval };

// Serializable layer descriptor. A NetworkSpec is a list of these plus a seed.
struct LayerDesc {
    enum class Kind {
        Dense,
        Conv2D,
        BatchNorm,
        Dropout,
        Relu,
        Tanh,
        Softmax,
        Flatten,
        RNNStack,
        LSTMStack,
        SquareImage,
        SequenceReshape,
    };
    Kind kind = Kind::Dense;
    std::size_t in = 0, out = 0;                       // Dense; RNN/LSTM input dim in `in`
    std::size_t in_ch = 0, out_ch = 0, kernel = 0;     // Conv2D
    std::size_t stride = 1, pad = 0;
    std::size_t dim = 0;                               // BatchNorm channels
    double rate = 0.0;                                 // Dropout
    std::size_t layers = 0, hidden = 0;                // recurrent stacks
    bool strict_smaller = false;                       // reshape variant

    static LayerDesc dense(std::size_t in, std::size_t out);
    static LayerDesc conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride = 1, std::size_t pad = 0);
    static LayerDesc batch_norm(std::size_t dim);
    static LayerDesc dropout(double rate);
    static LayerDesc relu();
    static LayerDesc tanh();
    static LayerDesc softmax();
    static LayerDesc flatten();
    static LayerDesc rnn_stack(std::size_t layers, std::size_t hidden, std::size_t in);
    static LayerDesc lstm_stack(std::size_t layers, std::size_t hidden, std::size_t in);
    static LayerDesc square_image(bool strict = false);
    static LayerDesc sequence_reshape(bool strict = false);
};

struct NetworkSpec {
    std::vector<LayerDesc> layers;
    std::uint64_t seed = 0;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Phase phase, std::mt19937_64& rng) = 0;
    virtual Tensor backward(const Tensor& grad) = 0;
    virtual std::vector<Tensor*> parameters() { return {}; }
    virtual std::vector<Tensor*> gradients() { return {}; }
    // Non-trainable state carried by the layer (batch norm running stats).
    virtual std::vector<Tensor*> state() { return {}; }
    virtual void init_params(std::mt19937_64&) {}
    virtual const LayerDesc& desc() const = 0;
};

std::unique_ptr<Layer> make_layer(const LayerDesc& desc);

// Glorot-uniform bound for a weight tensor with the given fans.
double glorot_limit(std::size_t fan_in, std::size_t fan_out);

// Orthonormal columns from a seeded Gaussian draw (modified Gram-Schmidt);
// used to initialize recurrent weight blocks.
void orthogonalize_square(Tensor& w, std::size_t n, std::size_t col_offset, std::size_t row_stride,
                          std::mt19937_64& rng);

}  // namespace keydyn::nn
