#pragma once

#include <cmath>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace flowguide {

// Dense row-major tensor of 64-bit reals. Rank 0 (scalar), 1 and 2 are the
// shapes this project uses; the layout is general row-major regardless.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size())
            throw std::runtime_error("tensor: shape/data size mismatch");
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor filled(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 1); }
    std::size_t cols() const {
        if (rank() == 2) return shape_[1];
        if (rank() == 1) return shape_[0];
        return 1;
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    double item() const {
        if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar of shape " + shape_str());
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t s : shape) {
            if (s == 0) throw std::runtime_error("tensor: zero-sized dimension");
            n *= s;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

[[noreturn]] inline void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::runtime_error(op + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

// ---------------------------------------------------------------------------
// Parallel execution. Matmuls partition output rows over a small persistent
// pool; every output element is produced by exactly one thread with a fixed
// inner accumulation order, so results are bit-identical for any thread count.
// ---------------------------------------------------------------------------

inline int& tensor_thread_limit() {
    static int limit = []() {
        unsigned hc = std::thread::hardware_concurrency();
        if (hc == 0) hc = 1;
        return static_cast<int>(hc > 4 ? 4 : hc);
    }();
    return limit;
}

inline void set_tensor_threads(int n) { tensor_thread_limit() = n < 1 ? 1 : n; }

namespace detail {

class WorkerPool {
public:
    static WorkerPool& instance() {
        static WorkerPool pool;
        return pool;
    }

    // Runs fn(part) for part in [0, parts). The caller executes part 0.
    // Falls back to sequential execution when busy (re-entrant or concurrent use).
    void run(int parts, const std::function<void(int)>& fn) {
        if (parts <= 1) {
            fn(0);
            return;
        }
        if (!entry_.try_lock()) {
            for (int p = 0; p < parts; ++p) fn(p);
            return;
        }
        ensure_workers(parts - 1);
        {
            std::lock_guard<std::mutex> lk(m_);
            task_ = &fn;
            parts_ = parts;
            remaining_ = static_cast<int>(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        fn(0);
        {
            std::unique_lock<std::mutex> lk(m_);
            done_.wait(lk, [&] { return remaining_ == 0; });
            task_ = nullptr;
        }
        entry_.unlock();
    }

    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

private:
    void ensure_workers(int n) {
        std::lock_guard<std::mutex> lk(m_);
        while (static_cast<int>(workers_.size()) < n)
            workers_.emplace_back([this, slot = static_cast<int>(workers_.size())] { loop(slot); });
    }

    void loop(int slot) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* task = nullptr;
            int parts = 0;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                task = task_;
                parts = parts_;
            }
            if (task && slot + 1 < parts) (*task)(slot + 1);
            {
                std::lock_guard<std::mutex> lk(m_);
                if (--remaining_ == 0) done_.notify_one();
            }
        }
    }

    std::mutex entry_;
    std::mutex m_;
    std::condition_variable cv_;
    std::condition_variable done_;
    std::vector<std::thread> workers_;
    const std::function<void(int)>* task_ = nullptr;
    int parts_ = 0;
    int remaining_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

inline void parallel_rows(std::size_t rows, std::size_t work_per_row,
                          const std::function<void(std::size_t, std::size_t)>& body) {
    constexpr std::size_t kMinWork = 1u << 25;
    int threads = tensor_thread_limit();
    if (threads <= 1 || rows < 2 || rows * work_per_row < kMinWork) {
        body(0, rows);
        return;
    }
    int parts = static_cast<int>(rows < static_cast<std::size_t>(threads) ? rows : threads);
    WorkerPool::instance().run(parts, [&](int p) {
        std::size_t lo = rows * p / parts;
        std::size_t hi = rows * (p + 1) / parts;
        if (lo < hi) body(lo, hi);
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix kernels. A is [m x k]; nn: B [k x n]; nt: B [n x k] used transposed;
// tn: A used transposed against B [m x n].
// ---------------------------------------------------------------------------

namespace detail {

// Register-tiled 6x16 microkernel. Accumulation over p runs in index order
// for every element regardless of the tiling or the thread partition, so
// results are identical for any blocking.
inline void gemm_rows(const double* pa, const double* pb, double* pc, std::size_t lo,
                      std::size_t hi, std::size_t k, std::size_t n) {
    constexpr std::size_t JT = 16;
    std::size_t i = lo;
    for (; i + 6 <= hi; i += 6) {
        const double* a0 = pa + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        const double* a4 = a3 + k;
        const double* a5 = a4 + k;
        std::size_t jt = 0;
        for (; jt + JT <= n; jt += JT) {
            double acc0[JT] = {0}, acc1[JT] = {0}, acc2[JT] = {0};
            double acc3[JT] = {0}, acc4[JT] = {0}, acc5[JT] = {0};
            for (std::size_t p = 0; p < k; ++p) {
                const double v0 = a0[p], v1 = a1[p], v2 = a2[p];
                const double v3 = a3[p], v4 = a4[p], v5 = a5[p];
                const double* __restrict bp = pb + p * n + jt;
                for (std::size_t jj = 0; jj < JT; ++jj) {
                    const double bj = bp[jj];
                    acc0[jj] += v0 * bj;
                    acc1[jj] += v1 * bj;
                    acc2[jj] += v2 * bj;
                    acc3[jj] += v3 * bj;
                    acc4[jj] += v4 * bj;
                    acc5[jj] += v5 * bj;
                }
            }
            for (std::size_t jj = 0; jj < JT; ++jj) {
                pc[(i + 0) * n + jt + jj] = acc0[jj];
                pc[(i + 1) * n + jt + jj] = acc1[jj];
                pc[(i + 2) * n + jt + jj] = acc2[jj];
                pc[(i + 3) * n + jt + jj] = acc3[jj];
                pc[(i + 4) * n + jt + jj] = acc4[jj];
                pc[(i + 5) * n + jt + jj] = acc5[jj];
            }
        }
        for (; jt < n; ++jt) {
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0;
            for (std::size_t p = 0; p < k; ++p) {
                const double bj = pb[p * n + jt];
                s0 += a0[p] * bj;
                s1 += a1[p] * bj;
                s2 += a2[p] * bj;
                s3 += a3[p] * bj;
                s4 += a4[p] * bj;
                s5 += a5[p] * bj;
            }
            pc[(i + 0) * n + jt] = s0;
            pc[(i + 1) * n + jt] = s1;
            pc[(i + 2) * n + jt] = s2;
            pc[(i + 3) * n + jt] = s3;
            pc[(i + 4) * n + jt] = s4;
            pc[(i + 5) * n + jt] = s5;
        }
    }
    for (; i < hi; ++i) {
        double* __restrict ci = pc + i * n;
        const double* ai = pa + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* __restrict bp = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// Tiled out-of-place transpose.
inline void transpose_into(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    constexpr std::size_t tile = 16;
    for (std::size_t i0 = 0; i0 < rows; i0 += tile)
        for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
            const std::size_t i1 = std::min(rows, i0 + tile);
            const std::size_t j1 = std::min(cols, j0 + tile);
            for (std::size_t i = i0; i < i1; ++i)
                for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
        }
}

}  // namespace detail

inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) shape_error("matmul", a, b);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    detail::parallel_rows(m, k * n, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_rows(pa, pb, pc, lo, hi, k, n);
    });
    return c;
}

inline Tensor transpose(const Tensor& a);

// c = a * b^T, b given as [n x k]. Runs as a plain gemm against an explicit
// transpose; this keeps the inner accumulators independent and vector-friendly.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        shape_error("matmul_nt", a, b);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    Tensor bt({k, n});
    detail::transpose_into(b.data(), bt.data(), n, k);
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = bt.data();
    double* pc = c.data();
    detail::parallel_rows(m, k * n, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_rows(pa, pb, pc, lo, hi, k, n);
    });
    return c;
}

// c = a^T * b, a given as [m x k], b as [m x n], result [k x n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) shape_error("matmul_tn", a, b);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor at({k, m});
    detail::transpose_into(a.data(), at.data(), m, k);
    Tensor c({k, n});
    const double* pa = at.data();
    const double* pb = b.data();
    double* pc = c.data();
    detail::parallel_rows(k, m * n, [&](std::size_t lo, std::size_t hi) {
        detail::gemm_rows(pa, pb, pc, lo, hi, m, n);
    });
    return c;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::runtime_error("transpose: need rank-2, got " + a.shape_str());
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
    return t;
}

// ---------------------------------------------------------------------------
// Elementwise helpers. Broadcasting is restricted to scalar-vs-tensor and
// row-vector-vs-matrix; anything else is a shape error.
// ---------------------------------------------------------------------------

enum class Broadcast { None, ScalarRight, RowRight };

inline Broadcast broadcast_kind(const std::string& op, const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Broadcast::None;
    if (b.numel() == 1) return Broadcast::ScalarRight;
    if (a.rank() == 2 && b.numel() == a.shape()[1] &&
        (b.rank() == 1 || (b.rank() == 2 && b.shape()[0] == 1)))
        return Broadcast::RowRight;
    shape_error(op, a, b);
}

template <class F>
inline Tensor broadcast_apply(const std::string& op, const Tensor& a, const Tensor& b, F f) {
    Broadcast kind = broadcast_kind(op, a, b);
    Tensor out = a;
    double* po = out.data();
    const double* pb = b.data();
    const std::size_t n = out.numel();
    switch (kind) {
        case Broadcast::None:
            for (std::size_t i = 0; i < n; ++i) po[i] = f(po[i], pb[i]);
            break;
        case Broadcast::ScalarRight: {
            const double v = pb[0];
            for (std::size_t i = 0; i < n; ++i) po[i] = f(po[i], v);
            break;
        }
        case Broadcast::RowRight: {
            const std::size_t c = a.shape()[1];
            for (std::size_t i = 0; i < n; ++i) po[i] = f(po[i], pb[i % c]);
            break;
        }
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_apply("add", a, b, [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_apply("sub", a, b, [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_apply("mul", a, b, [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

inline Tensor axpy(double s, const Tensor& x, const Tensor& y) {  // s*x + y
    if (!x.same_shape(y)) shape_error("axpy", x, y);
    Tensor out = y;
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] += s * px[i];
    return out;
}

inline double sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return s;
}

inline Tensor col_sums(const Tensor& a) {  // [m x n] -> [n]
    if (a.rank() != 2) throw std::runtime_error("col_sums: need rank-2, got " + a.shape_str());
    Tensor out({a.shape()[1]});
    for (std::size_t i = 0; i < a.shape()[0]; ++i)
        for (std::size_t j = 0; j < a.shape()[1]; ++j) out[j] += a(i, j);
    return out;
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

namespace detail {

// Branch-free exp for the activation path (double precision, ~1 ulp over the
// clamped range). Written so the compiler can vectorize the surrounding loops;
// NaN propagates, magnitudes beyond +-708 saturate.
inline double exp_activation(double x) {
    constexpr double log2e = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    const bool is_nan = x != x;
    double xc = x < -708.0 ? -708.0 : x;
    xc = xc > 708.0 ? 708.0 : xc;
    double nd = std::nearbyint(xc * log2e);
    nd = is_nan ? 0.0 : nd;
    const double r = (xc - nd * ln2_hi) - nd * ln2_lo;
    // degree-10 Taylor on |r| <= ln2/2
    double p = 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const auto n = static_cast<long long>(nd);
    double two_n;
    const auto bits = static_cast<std::uint64_t>(n + 1023) << 52;
    std::memcpy(&two_n, &bits, sizeof(two_n));
    const double res = p * two_n;
    return is_nan ? x : res;
}

// sigma(x) = 1 / (1 + e^-x), computed from e^-|x| so it never overflows.
inline void sigmoid_inplace(double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double x = v[i];
        const double ax = x < 0.0 ? x : -x;
        const double z = exp_activation(ax);
        const double r = 1.0 / (1.0 + z);
        v[i] = x >= 0.0 ? r : z * r;
    }
}

}  // namespace detail

inline Tensor sigmoid_eltwise(const Tensor& a) {
    Tensor out = a;
    detail::sigmoid_inplace(out.data(), out.numel());
    return out;
}

inline Tensor tanh_eltwise(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.values()) v = std::tanh(v);
    return out;
}

inline Tensor silu_eltwise(const Tensor& a) {
    Tensor out = sigmoid_eltwise(a);
    const double* pa = a.data();
    double* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] *= pa[i];
    return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) shape_error("concat", a, b);
    const std::size_t m = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    Tensor out({m, ca + cb});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b(i, j);
    }
    return out;
}

inline Tensor l2_normalize_rows(const Tensor& a) {
    if (a.rank() != 2) throw std::runtime_error("l2_normalize_rows: need rank-2, got " + a.shape_str());
    Tensor out = a;
    for (std::size_t i = 0; i < a.shape()[0]; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < a.shape()[1]; ++j) n2 += a(i, j) * a(i, j);
        const double norm = std::sqrt(n2);
        if (norm <= 0.0)
            throw std::runtime_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
        for (std::size_t j = 0; j < a.shape()[1]; ++j) out(i, j) /= norm;
    }
    return out;
}

inline Tensor row(const Tensor& a, std::size_t i) {
    if (a.rank() != 2) throw std::runtime_error("row: need rank-2, got " + a.shape_str());
    Tensor out({a.shape()[1]});
    for (std::size_t j = 0; j < a.shape()[1]; ++j) out[j] = a(i, j);
    return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) shape_error("dot", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_distance(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) shape_error("squared_distance", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace flowguide
