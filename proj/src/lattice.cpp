#include "dyncop/lattice.hpp"

#include "dyncop/error.hpp"

namespace dyncop {

Lattice::Lattice(int dim, int resolution) : dim_(dim), m_(resolution) {
    require(dim >= 1, ErrorKind::parameter, "lattice dimension must be >= 1");
    require(resolution >= 3, ErrorKind::parameter, "lattice resolution must be >= 3");
    strides_.assign(dim, 1);
    for (int a = dim - 2; a >= 0; --a) strides_[a] = strides_[a + 1] * static_cast<std::size_t>(m_);
    size_ = strides_[0] * static_cast<std::size_t>(m_);
}

std::size_t Lattice::index(std::span<const int> k) const noexcept {
    std::size_t flat = 0;
    for (int a = 0; a < dim_; ++a) flat += strides_[a] * static_cast<std::size_t>(k[a]);
    return flat;
}

void Lattice::coords(std::size_t flat, std::span<int> out) const noexcept {
    for (int a = 0; a < dim_; ++a) {
        out[a] = static_cast<int>(flat / strides_[a]);
        flat %= strides_[a];
    }
}

bool Lattice::on_boundary(std::span<const int> k) const noexcept {
    for (int a = 0; a < dim_; ++a)
        if (k[a] == 0 || k[a] == m_ - 1) return true;
    return false;
}

}  // namespace dyncop
