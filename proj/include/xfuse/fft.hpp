#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace xfuse {

// In-place 1D discrete Fourier transform. Power-of-two lengths take the
// radix-2 path; other lengths fall back to the direct O(n^2) sum. The
// inverse applies the 1/n scale.
void dft_1d(std::vector<std::complex<double>>& v, bool inverse);

// Separable 2D transform of a row-major h x w grid.
void dft_2d(std::vector<std::complex<double>>& grid, int64_t h, int64_t w, bool inverse);

} // namespace xfuse
