#pragma once

#include <cstdint>

namespace dctps {

/// Multiply-add counts accumulated by the instrumented kernels.
/// One multiply-add = one multiplication paired with one addition (2 flops).
struct OpCount {
  std::uint64_t transform = 0;  // fast DCT applications
  std::uint64_t sparse = 0;     // nnz-proportional work (spmv, spmv_t, value gradients)
  std::uint64_t dense = 0;      // dense matmuls and full-grid gradients
  std::uint64_t other = 0;      // elementwise work, bias adds, optimizer updates

  std::uint64_t total() const { return transform + sparse + dense + other; }

  OpCount& operator+=(const OpCount& o) {
    transform += o.transform;
    sparse += o.sparse;
    dense += o.dense;
    other += o.other;
    return *this;
  }
  friend OpCount operator-(OpCount a, const OpCount& b) {
    a.transform -= b.transform;
    a.sparse -= b.sparse;
    a.dense -= b.dense;
    a.other -= b.other;
    return a;
  }
  friend bool operator==(const OpCount&, const OpCount&) = default;
};

/// Per-thread running counter.
OpCount& op_counter();

/// Captures the counts accumulated during its lifetime.
class OpCountScope {
 public:
  OpCountScope() : start_(op_counter()) {}
  OpCount elapsed() const { return op_counter() - start_; }

 private:
  OpCount start_;
};

}  // namespace dctps
