#include "xfuse/fft.hpp"

#include <cmath>

namespace xfuse {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& v, bool inverse) {
    size_t n = v.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(v[i], v[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = kTwoPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                auto u = v[i + k];
                auto t = v[i + k + len / 2] * w;
                v[i + k] = u + t;
                v[i + k + len / 2] = u - t;
                w *= wl;
            }
        }
    }
}

void dft_direct(std::vector<std::complex<double>>& v, bool inverse) {
    size_t n = v.size();
    std::vector<std::complex<double>> out(n);
    double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            double ang = sign * kTwoPi * static_cast<double>(k * t % n) / static_cast<double>(n);
            acc += v[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    v = std::move(out);
}

} // namespace

void dft_1d(std::vector<std::complex<double>>& v, bool inverse) {
    if (v.size() <= 1) return;
    if (is_pow2(v.size()))
        fft_radix2(v, inverse);
    else
        dft_direct(v, inverse);
    if (inverse) {
        double inv = 1.0 / static_cast<double>(v.size());
        for (auto& c : v) c *= inv;
    }
}

void dft_2d(std::vector<std::complex<double>>& grid, int64_t h, int64_t w, bool inverse) {
    std::vector<std::complex<double>> line;
    line.resize(static_cast<size_t>(w));
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) line[static_cast<size_t>(c)] = grid[static_cast<size_t>(r * w + c)];
        dft_1d(line, inverse);
        for (int64_t c = 0; c < w; ++c) grid[static_cast<size_t>(r * w + c)] = line[static_cast<size_t>(c)];
    }
    line.resize(static_cast<size_t>(h));
    for (int64_t c = 0; c < w; ++c) {
        line.resize(static_cast<size_t>(h));
        for (int64_t r = 0; r < h; ++r) line[static_cast<size_t>(r)] = grid[static_cast<size_t>(r * w + c)];
        dft_1d(line, inverse);
        for (int64_t r = 0; r < h; ++r) grid[static_cast<size_t>(r * w + c)] = line[static_cast<size_t>(r)];
    }
}

} // namespace xfuse
