#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dyncop {

/// Uniform lattice over [0,1]^n including both endpoints on every axis.
/// Flat indices are row-major: axis 0 varies slowest.
class Lattice {
public:
    Lattice() = default;
    Lattice(int dim, int resolution);

    int dim() const noexcept { return dim_; }
    int resolution() const noexcept { return m_; }
    std::size_t size() const noexcept { return size_; }
    double spacing() const noexcept { return 1.0 / (m_ - 1); }
    /// k / (m - 1), exact at both ends.
    double coordinate(int k) const noexcept { return k == m_ - 1 ? 1.0 : k * spacing(); }
    std::size_t stride(int axis) const noexcept { return strides_[axis]; }

    std::size_t index(std::span<const int> k) const noexcept;
    void coords(std::size_t flat, std::span<int> out) const noexcept;
    /// Steps k to the next lattice point in flat order (odometer increment).
    void next(std::span<int> k) const noexcept {
        for (int a = dim_ - 1; a >= 0; --a) {
            if (++k[a] < m_) return;
            k[a] = 0;
        }
    }
    /// True if some coordinate equals 0 or 1.
    bool on_boundary(std::span<const int> k) const noexcept;

    bool operator==(const Lattice& other) const noexcept {
        return dim_ == other.dim_ && m_ == other.m_;
    }

private:
    int dim_ = 0;
    int m_ = 0;
    std::size_t size_ = 0;
    std::vector<std::size_t> strides_;
};

}  // namespace dyncop
