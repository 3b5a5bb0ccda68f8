/*
 * Copyright (c) 2026 The mmgem Authors
 *
 * Licensed under the Apache License, Version 2.0;
 * You may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an 'AS IS' BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <vector>

// Raw row-major matrix kernels. Every output element is accumulated over the
// shared dimension in ascending order regardless of the matrix sizes, so a row
// of a product is bitwise independent of how many other rows are in the batch.

namespace mmgem::gemm {

/// C[m,n] += A[m,k] * B[k,n]
template <class T>
void nn(std::size_t m, std::size_t k, std::size_t n, const T* __restrict a,
        const T* __restrict b, T* __restrict c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* __restrict c0 = c + i * n;
    T* __restrict c1 = c0 + n;
    T* __restrict c2 = c1 + n;
    T* __restrict c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* __restrict ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x = ai[p];
      const T* __restrict bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

/// out[n,k] = in[k,n]^T
template <class T>
void transpose(std::size_t k, std::size_t n, const T* __restrict in, T* __restrict out) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) out[j * k + p] = in[p * n + j];
}

/// C[m,k] += D[m,n] * B[k,n]^T
template <class T>
void nt(std::size_t m, std::size_t k, std::size_t n, const T* d, const T* b, T* c,
        std::vector<T>& scratch) {
  scratch.resize(k * n);
  transpose(k, n, b, scratch.data());
  nn(m, n, k, d, scratch.data(), c);
}

/// C[k,n] += A[m,k]^T * D[m,n]
template <class T>
void tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* d, T* c,
        std::vector<T>& scratch) {
  scratch.resize(m * k);
  transpose(m, k, a, scratch.data());
  nn(k, m, n, scratch.data(), d, c);
}

}  // namespace mmgem::gemm
