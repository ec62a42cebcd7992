#include "dctps/dct.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "dctps/error.hpp"
#include "dctps/op_count.hpp"

namespace dctps {

namespace {

constexpr std::size_t kMaxTableLength = 4096;

// Per-thread work buffer; contents are never assumed across calls.
std::span<double> work_buffer(std::size_t slot, std::size_t n) {
  thread_local std::vector<double> bufs[2];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return {b.data(), n};
}

bool is_pow2(std::size_t q) { return q != 0 && (q & (q - 1)) == 0; }

// Multiplications and additions of the Lee recursion for one node of size len.
void lee_counts(std::size_t len, std::uint64_t& mul, std::uint64_t& add) {
  if (len == 1) return;
  const std::size_t half = len / 2;
  mul += half;
  add += len + (half - 1);
  lee_counts(half, mul, add);
  lee_counts(half, mul, add);
}

}  // namespace

OpCount& op_counter() {
  thread_local OpCount counter;
  return counter;
}

DctPlan::DctPlan(std::size_t q) : q_(q), fast_(is_pow2(q)) {
  if (q == 0) throw ShapeError("DCT length must be positive");
  scale_.resize(q);
  scale_[0] = std::sqrt(1.0 / static_cast<double>(q));
  for (std::size_t k = 1; k < q; ++k) scale_[k] = std::sqrt(2.0 / static_cast<double>(q));

  if (fast_) {
    for (std::size_t len = q; len >= 2; len /= 2) {
      std::vector<double> f(len / 2);
      for (std::size_t i = 0; i < len / 2; ++i)
        f[i] = 1.0 / (2.0 * std::cos((static_cast<double>(i) + 0.5) * std::numbers::pi / static_cast<double>(len)));
      factors_.push_back(std::move(f));
    }
    std::uint64_t mul = 0, add = 0;
    lee_counts(q, mul, add);
    mul += q;  // normalization
    cost_ = (mul + add + 1) / 2;
  } else {
    if (q <= kMaxTableLength) {
      table_.resize(q * q);
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t j = 0; j < q; ++j)
          table_[k * q + j] =
              scale_[k] * std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * k) / (2.0 * static_cast<double>(q)));
    }
    cost_ = static_cast<std::uint64_t>(q) * q;
  }
}

void DctPlan::lee_forward(double* v, double* tmp, std::size_t len, std::size_t level) const {
  if (len == 1) return;
  const std::size_t half = len / 2;
  const auto& f = factors_[level];
  for (std::size_t i = 0; i < half; ++i) {
    const double a = v[i];
    const double b = v[len - 1 - i];
    tmp[i] = a + b;
    tmp[i + half] = (a - b) * f[i];
  }
  lee_forward(tmp, v, half, level + 1);
  lee_forward(tmp + half, v, half, level + 1);
  for (std::size_t i = 0; i + 1 < half; ++i) {
    v[2 * i] = tmp[i];
    v[2 * i + 1] = tmp[i + half] + tmp[i + half + 1];
  }
  v[len - 2] = tmp[half - 1];
  v[len - 1] = tmp[len - 1];
}

void DctPlan::lee_inverse(double* v, double* tmp, std::size_t len, std::size_t level) const {
  if (len == 1) return;
  const std::size_t half = len / 2;
  const auto& f = factors_[level];
  tmp[0] = v[0];
  tmp[half] = v[1];
  for (std::size_t i = 1; i < half; ++i) {
    tmp[i] = v[2 * i];
    tmp[i + half] = v[2 * i - 1] + v[2 * i + 1];
  }
  lee_inverse(tmp, v, half, level + 1);
  lee_inverse(tmp + half, v, half, level + 1);
  for (std::size_t i = 0; i < half; ++i) {
    const double a = tmp[i];
    const double b = tmp[i + half] * f[i];
    v[i] = a + b;
    v[len - 1 - i] = a - b;
  }
}

void DctPlan::forward(std::span<const double> x, std::span<double> y) const {
  if (x.size() != q_ || y.size() != q_)
    throw ShapeError("dct2: expected length " + std::to_string(q_) + ", got " + std::to_string(x.size()));
  op_counter().transform += cost_;
  if (fast_) {
    auto tmp = work_buffer(0, q_);
    std::copy(x.begin(), x.end(), y.begin());
    lee_forward(y.data(), tmp.data(), q_, 0);
    for (std::size_t k = 0; k < q_; ++k) y[k] *= scale_[k];
    return;
  }
  if (!table_.empty()) {
    for (std::size_t k = 0; k < q_; ++k) {
      const double* row = table_.data() + k * q_;
      double s = 0.0;
      for (std::size_t j = 0; j < q_; ++j) s += row[j] * x[j];
      y[k] = s;
    }
    return;
  }
  const double qd = static_cast<double>(q_);
  for (std::size_t k = 0; k < q_; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < q_; ++j) s += std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * k) / (2.0 * qd)) * x[j];
    y[k] = scale_[k] * s;
  }
}

void DctPlan::inverse(std::span<const double> y, std::span<double> x) const {
  if (x.size() != q_ || y.size() != q_)
    throw ShapeError("idct2: expected length " + std::to_string(q_) + ", got " + std::to_string(y.size()));
  op_counter().transform += cost_;
  if (fast_) {
    auto tmp = work_buffer(0, q_);
    for (std::size_t k = 0; k < q_; ++k) x[k] = y[k] * scale_[k];
    lee_inverse(x.data(), tmp.data(), q_, 0);
    return;
  }
  if (!table_.empty()) {
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t k = 0; k < q_; ++k) {
      const double* row = table_.data() + k * q_;
      const double yk = y[k];
      for (std::size_t j = 0; j < q_; ++j) x[j] += row[j] * yk;
    }
    return;
  }
  const double qd = static_cast<double>(q_);
  for (std::size_t j = 0; j < q_; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < q_; ++k)
      s += scale_[k] * std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * k) / (2.0 * qd)) * y[k];
    x[j] = s;
  }
}

std::shared_ptr<const DctPlan> dct_plan(std::size_t q) {
  static std::mutex mu;
  static std::map<std::size_t, std::shared_ptr<const DctPlan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(q);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<const DctPlan>(q);
  cache.emplace(q, plan);
  return plan;
}

Tensor dct2(const DctPlan& plan, const Tensor& x) {
  if (x.size() != plan.length())
    throw ShapeError("dct2: input length " + std::to_string(x.size()) + " != plan length " +
                     std::to_string(plan.length()));
  Tensor y({plan.length()});
  plan.forward(x.data(), y.data());
  return y;
}

Tensor idct2(const DctPlan& plan, const Tensor& y) {
  if (y.size() != plan.length())
    throw ShapeError("idct2: input length " + std::to_string(y.size()) + " != plan length " +
                     std::to_string(plan.length()));
  Tensor x({plan.length()});
  plan.inverse(y.data(), x.data());
  return x;
}

void rect_apply(const DctPlan& plan, std::span<const double> x, std::span<double> y, std::span<double> scratch) {
  const std::size_t q = plan.length();
  const std::size_t n = x.size(), m = y.size();
  if (std::max(m, n) != q)
    throw ShapeError("dct_rect_apply: plan length " + std::to_string(q) + " != max(m=" + std::to_string(m) +
                     ", n=" + std::to_string(n) + ")");
  auto buf = scratch.subspan(0, q);
  std::copy(x.begin(), x.end(), buf.begin());
  std::fill(buf.begin() + static_cast<std::ptrdiff_t>(n), buf.end(), 0.0);
  if (m == q) {
    plan.forward(buf, y);
    return;
  }
  auto full = work_buffer(1, q);
  plan.forward(buf, full);
  std::copy_n(full.begin(), m, y.begin());
}

void rect_apply_t(const DctPlan& plan, std::span<const double> v, std::span<double> x, std::span<double> scratch) {
  const std::size_t q = plan.length();
  const std::size_t m = v.size(), n = x.size();
  if (std::max(m, n) != q)
    throw ShapeError("dct_rect_apply_t: plan length " + std::to_string(q) + " != max(m=" + std::to_string(m) +
                     ", n=" + std::to_string(n) + ")");
  auto buf = scratch.subspan(0, q);
  std::copy(v.begin(), v.end(), buf.begin());
  std::fill(buf.begin() + static_cast<std::ptrdiff_t>(m), buf.end(), 0.0);
  if (n == q) {
    plan.inverse(buf, x);
    return;
  }
  auto full = work_buffer(1, q);
  plan.inverse(buf, full);
  std::copy_n(full.begin(), n, x.begin());
}

Tensor dct_rect_apply(const DctPlan& plan, const Tensor& x, std::size_t m) {
  if (m == 0) throw ShapeError("dct_rect_apply: output length must be positive");
  Tensor y({m});
  std::vector<double> scratch(plan.length());
  rect_apply(plan, x.data(), y.data(), scratch);
  return y;
}

Tensor dct_rect_apply_t(const DctPlan& plan, const Tensor& v, std::size_t n) {
  if (n == 0) throw ShapeError("dct_rect_apply_t: output length must be positive");
  Tensor x({n});
  std::vector<double> scratch(plan.length());
  rect_apply_t(plan, v.data(), x.data(), scratch);
  return x;
}

Tensor dct_matrix(std::size_t q) {
  if (q == 0) throw ShapeError("dct_matrix: q must be positive");
  Tensor c({q, q});
  const double qd = static_cast<double>(q);
  for (std::size_t k = 0; k < q; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / qd) : std::sqrt(2.0 / qd);
    for (std::size_t j = 0; j < q; ++j)
      c[k * q + j] = s * std::cos(std::numbers::pi * static_cast<double>((2 * j + 1) * k) / (2.0 * qd));
  }
  return c;
}

}  // namespace dctps
