#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace risemar::nn {

using cplx = std::complex<double>;

std::size_t next_pow2(std::size_t n);

// In-place iterative radix-2 FFT; n must be a power of two.
// inverse=true applies the conjugate transform and the 1/n factor.
void fft_inplace(std::vector<cplx>& a, bool inverse);

// 2-D transform of an h*w row-major buffer (h, w powers of two).
void fft2d_inplace(std::vector<cplx>& a, int h, int w, bool inverse);

}  // namespace risemar::nn
