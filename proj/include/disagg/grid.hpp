#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "disagg/error.hpp"

namespace disagg {

/// Row-major H×W scalar field (pixel map).
template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{})
        : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    std::size_t size() const { return data.size(); }
    T& operator()(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }
    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid&) const = default;
};

using Map = Grid<double>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (a.height != b.height || a.width != b.width) {
        throw ShapeError(std::string(what) + ": shape mismatch");
    }
}

}  // namespace disagg
