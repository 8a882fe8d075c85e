#pragma once

#include <cstddef>

// Hot inner loops. Each kernel exists twice: a plain serial reference and
// an OpenMP version parallelized over independent output elements only, so
// the per-element summation order is identical and results are bitwise
// equal to the serial kernel at any thread count.

namespace sclab::kernels {

// C[m,n] = A[m,k] * B[k,n]
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t k, std::size_t n);

// C[m,n] = A[m,k] * B[n,k]^T  (B given row-major as n rows of length k)
void matmul_bt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_bt_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

// C[k,n] += A[m,k]^T * B[m,n]  (accumulating, used by matmul backward)
void matmul_at_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n);

// Dispatchers; honor SCLAB_SERIAL_KERNELS=1 in the environment.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_bt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

bool serial_forced();

}  // namespace sclab::kernels
