// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "physkit/autodiff.hpp"
#include "physkit/rng.hpp"

namespace testutil {

inline std::vector<double> randn(std::size_t n, physkit::Rng& rng, double sd = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal() * sd;
  return v;
}

/// Plain row-major matrix product used as an oracle.
inline std::vector<double> dense_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                        std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

inline double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

/// Single-head attention of one query block over one key block, written out
/// loop by loop: softmax(q Wq (kv Wk)^T / sqrt(d)) kv Wv, then Wo.
inline std::vector<double> dense_attention(const std::vector<double>& q, std::size_t lq,
                                           const std::vector<double>& kv, std::size_t lk,
                                           const std::vector<double>& wq, const std::vector<double>& wk,
                                           const std::vector<double>& wv, const std::vector<double>& wo,
                                           std::size_t d, std::size_t heads = 1) {
  const auto Q = dense_matmul(q, wq, lq, d, d);
  const auto K = dense_matmul(kv, wk, lk, d, d);
  const auto V = dense_matmul(kv, wv, lk, d, d);
  const std::size_t hd = d / heads;
  std::vector<double> merged(lq * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> s(lk);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < lk; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < hd; ++c) acc += Q[i * d + h * hd + c] * K[j * d + h * hd + c];
        s[j] = acc / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& v : s) {
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < lk; ++j) acc += s[j] / z * V[j * d + h * hd + c];
        merged[i * d + h * hd + c] = acc;
      }
    }
  }
  return dense_matmul(merged, wo, lq, d, d);
}

}  // namespace testutil
