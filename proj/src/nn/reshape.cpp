#include "keydyn/nn/reshape.hpp"

#include <cmath>

namespace keydyn::nn {

std::size_t square_image_side(std::size_t n, bool strict) {
    if (n < 1) throw InputTooShort("square image needs at least 1 entry");
    auto side = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while ((side + 1) * (side + 1) <= n) ++side;  // guard fp rounding
    while (side * side > n) --side;
    if (strict && side * side == n && side > 1) --side;
    return side;
}

Tensor to_square_image(std::span<const double> v, bool strict) {
    const std::size_t side = square_image_side(v.size(), strict);
    Tensor t({1, side, side});
    for (std::size_t i = 0; i < side * side; ++i) t.data[i] = v[i];
    return t;
}

bool is_composite(std::size_t n) {
    if (n < 4) return false;
    for (std::size_t d = 2; d * d <= n; ++d)
        if (n % d == 0) return true;
    return false;
}

SequenceShape sequence_shape(std::size_t n, bool strict) {
    if (n < 4) throw InputTooShort("sequence reshape needs at least 4 entries");
    std::size_t c = strict ? n - 1 : n;
    while (c >= 4 && !is_composite(c)) --c;
    if (c < 4) throw InputTooShort("no composite available below input length");
    std::size_t a = 1;
    for (std::size_t d = 1; d * d <= c; ++d)
        if (c % d == 0) a = d;
    return SequenceShape{a, c / a};
}

Tensor to_sequence(std::span<const double> v, bool strict) {
    const SequenceShape s = sequence_shape(v.size(), strict);
    Tensor t({s.rows, s.cols});
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) t.data[i] = v[i];
    return t;
}

}  // namespace keydyn::nn
