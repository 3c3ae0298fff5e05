#pragma once

#include <span>

#include "keydyn/nn/tensor.hpp"

namespace keydyn::nn {

// Feature-vector-to-image trick: side of the largest perfect square that
// fits in n (inclusive by default; `strict` demands square < n).
std::size_t square_image_side(std::size_t n, bool strict = false);

// First side*side entries as a [1, side, side] image, row-major.
Tensor to_square_image(std::span<const double> v, bool strict = false);

struct SequenceShape {
    std::size_t rows = 0;  // sequence length A
    std::size_t cols = 0;  // vector dimension B
};

// Feature-vector-to-sequence trick: take the largest composite c <= n
// (strict: c < n), factor it as A*B with A the largest divisor <= sqrt(c).
SequenceShape sequence_shape(std::size_t n, bool strict = false);

Tensor to_sequence(std::span<const double> v, bool strict = false);

bool is_composite(std::size_t n);

}  // namespace keydyn::nn
