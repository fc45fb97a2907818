#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "psrd/error.hpp"

namespace psrd {

// Repo-wide scalar. 64-bit by default; compile with -DPSRD_REAL_FLOAT for
// 32-bit kernels (gradient-check tolerances widen accordingly).
#if defined(PSRD_REAL_FLOAT)
using Real = float;
#else
using Real = double;
#endif

namespace detail {

struct TensorImpl {
    std::vector<int> shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until gradients are requested
    bool requires_grad = false;
};

inline std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

}  // namespace detail

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major N-d array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage. Ops treat their
/// inputs as immutable; the only post-construction mutation is gradient
/// accumulation during backward and explicit parameter updates by the
/// optimizer.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, bool requires_grad = false) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("tensor extent must be positive, got shape " + shape_str(shape));
        }
        impl_ = std::make_shared<detail::TensorImpl>();
        impl_->shape = std::move(shape);
        impl_->data.assign(static_cast<std::size_t>(detail::shape_numel(impl_->shape)), Real(0));
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }

    static Tensor full(std::vector<int> shape, Real value, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }

    static Tensor ones(std::vector<int> shape, bool requires_grad = false) {
        return full(std::move(shape), Real(1), requires_grad);
    }

    static Tensor from_values(std::vector<int> shape, std::vector<Real> values, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        if (static_cast<std::int64_t>(values.size()) != t.numel()) {
            throw DimensionError("value count " + std::to_string(values.size()) +
                                 " does not fill shape " + shape_str(t.shape()));
        }
        t.impl_->data = std::move(values);
        return t;
    }

    static Tensor scalar(Real value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }

    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
    bool is_scalar() const { return numel() == 1; }

    Real* data() { return impl_->data.data(); }
    const Real* data() const { return impl_->data.data(); }
    std::vector<Real>& values() { return impl_->data; }
    const std::vector<Real>& values() const { return impl_->data; }

    Real& operator[](std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
    Real operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

    /// Element access for rank-4 [n,c,h,w] tensors, the layout every layer uses.
    Real& at4(int n, int c, int h, int w) {
        return impl_->data[static_cast<std::size_t>(flat4(n, c, h, w))];
    }
    Real at4(int n, int c, int h, int w) const {
        return impl_->data[static_cast<std::size_t>(flat4(n, c, h, w))];
    }
    std::int64_t flat4(int n, int c, int h, int w) const {
        const auto& s = impl_->shape;
        return ((static_cast<std::int64_t>(n) * s[1] + c) * s[2] + h) * s[3] + w;
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) {
        impl_->requires_grad = rg;
        if (rg) ensure_grad();
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    void ensure_grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
    }
    void zero_grad() {
        std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    }
    Real* grad() {
        ensure_grad();
        return impl_->grad.data();
    }
    const std::vector<Real>& grad_values() const { return impl_->grad; }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    bool all_finite() const {
        for (Real v : impl_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Deep copy; the clone shares nothing with the source and carries no grad.
    Tensor clone() const {
        Tensor t(impl_->shape, impl_->requires_grad);
        t.impl_->data = impl_->data;
        return t;
    }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of executed ops. Each entry is the adjoint step of one
/// forward op; inputs always precede their consumers, so replaying the tape
/// in reverse visits every op exactly once with its output gradient ready.
class Graph {
public:
    void record(std::function<void()> backward_step) {
        steps_.push_back(std::move(backward_step));
    }

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void run_backward() {
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

/// Reverse-mode sweep: seeds d(loss)/d(loss) = 1 and accumulates adjoints
/// into every tensor that requires gradients. Fan-out adds contributions.
inline void backward(const Tensor& loss, Graph& g) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    Tensor l = loss;
    l.ensure_grad();
    l.grad()[0] += Real(1);
    g.run_backward();
}

}  // namespace psrd
