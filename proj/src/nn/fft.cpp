#include "risemar/nn/fft.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace risemar::nn {

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_inplace: length must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

void fft2d_inplace(std::vector<cplx>& a, int h, int w, bool inverse) {
  if (static_cast<std::size_t>(h) * static_cast<std::size_t>(w) != a.size())
    throw std::invalid_argument("fft2d_inplace: size mismatch");
  std::vector<cplx> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    std::copy(a.begin() + static_cast<std::size_t>(y) * w,
              a.begin() + static_cast<std::size_t>(y + 1) * w, row.begin());
    fft_inplace(row, inverse);
    std::copy(row.begin(), row.end(), a.begin() + static_cast<std::size_t>(y) * w);
  }
  std::vector<cplx> col(static_cast<std::size_t>(h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[static_cast<std::size_t>(y)] = a[static_cast<std::size_t>(y) * w + x];
    fft_inplace(col, inverse);
    for (int y = 0; y < h; ++y) a[static_cast<std::size_t>(y) * w + x] = col[static_cast<std::size_t>(y)];
  }
}

}  // namespace risemar::nn
