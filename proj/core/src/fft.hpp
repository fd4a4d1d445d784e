#pragma once

#include <vector>

namespace advsr::detail {

// In-place radix-2 complex FFT; size must be a power of two.
// inverse=true computes the unnormalized inverse transform.
void fft_inplace(std::vector<double>& re, std::vector<double>& im, bool inverse);

bool is_pow2(int n);

}  // namespace advsr::detail
