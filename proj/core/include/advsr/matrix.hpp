#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace advsr {

// Dense row-major matrix of doubles. Small by design; the feature and model
// code paths only ever need contiguous storage plus indexed access.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), d(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return d.size(); }
    bool empty() const { return d.empty(); }
};

}  // namespace advsr
