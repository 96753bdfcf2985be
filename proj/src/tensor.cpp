#include "dugi/tensor.hpp"

#include "dugi/kernels.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dugi {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::shared_ptr<Node> make_node(std::vector<int> shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

void check_shape_positive(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

size_t shape_size(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

bool want_grad(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

// g += s * src, elementwise over n values.
void accum(std::vector<double>& g, double s, const double* src, size_t n) {
    kernels::axpy(s, src, g.data(), n);
}

} // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape) {
    check_shape_positive(shape);
    const size_t n = shape_size(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    check_shape_positive(shape);
    const size_t n = shape_size(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
    check_shape_positive(shape);
    if (shape_size(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " requires " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(data.size()));
    }
    return Tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

int Tensor::rows() const {
    if (ndim() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[0];
}

int Tensor::cols() const {
    if (ndim() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape()));
    return shape()[1];
}

std::vector<double>& Tensor::mutable_data() {
    Node& n = node();
    if (n.recorded) {
        throw PreconditionError("tensor data is immutable once recorded on a tape; "
                                "create a successor tensor instead");
    }
    return n.value;
}

Tensor& Tensor::set_requires_grad(bool on) {
    Node& n = node();
    if (n.recorded) throw PreconditionError("cannot change requires_grad of a recorded tensor");
    n.requires_grad = on;
    return *this;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return data()[0];
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope() : prev_(g_active_tape) { g_active_tape = &tape_; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

void Tape::record(const std::vector<Tensor>& inputs, const Tensor& output,
                  std::function<void()> back) {
    Entry e;
    e.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        auto n = t.node_ptr();
        n->recorded = true;
        e.inputs.push_back(std::move(n));
    }
    e.output = output.node_ptr();
    e.output->recorded = true;
    e.back = std::move(back);
    entries_.push_back(std::move(e));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw PreconditionError("backward: loss is not connected to recorded operations");
    }
    for (Entry& e : entries_) {
        e.output->grad.assign(e.output->size(), 0.0);
        for (auto& in : e.inputs) {
            if (in->requires_grad) in->grad.assign(in->size(), 0.0);
        }
    }
    auto ln = loss.node_ptr();
    ln->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->back();
    clear();
}

void Tape::clear() {
    for (Entry& e : entries_) {
        e.output->recorded = false;
        for (auto& in : e.inputs) in->recorded = false;
    }
    entries_.clear();
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    const size_t n = a.size();
    std::vector<double> v(n);
    kernels::add(a.data().data(), b.data().data(), v.data(), n);
    Tensor out = Tensor::from_data(a.shape(), std::move(v));
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a, b}, out, [an, bn, on, n]() {
            if (an->requires_grad) accum(an->grad, 1.0, on->grad.data(), n);
            if (bn->requires_grad) accum(bn->grad, 1.0, on->grad.data(), n);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    const size_t n = a.size();
    std::vector<double> v(n);
    kernels::sub(a.data().data(), b.data().data(), v.data(), n);
    Tensor out = Tensor::from_data(a.shape(), std::move(v));
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a, b}, out, [an, bn, on, n]() {
            if (an->requires_grad) accum(an->grad, 1.0, on->grad.data(), n);
            if (bn->requires_grad) accum(bn->grad, -1.0, on->grad.data(), n);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    const size_t n = a.size();
    std::vector<double> v(n);
    kernels::mul(a.data().data(), b.data().data(), v.data(), n);
    Tensor out = Tensor::from_data(a.shape(), std::move(v));
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a, b}, out, [an, bn, on, n]() {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                for (size_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->value[i];
            }
            if (bn->requires_grad) {
                for (size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->value[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    const size_t n = a.size();
    std::vector<double> v(n);
    kernels::scale(a.data().data(), s, v.data(), n);
    Tensor out = Tensor::from_data(a.shape(), std::move(v));
    if (want_grad({&a})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a}, out, [an, on, s, n]() {
            accum(an->grad, s, on->grad.data(), n);
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double s) {
    const size_t n = a.size();
    std::vector<double> v(a.data());
    for (size_t i = 0; i < n; ++i) v[i] += s;
    Tensor out = Tensor::from_data(a.shape(), std::move(v));
    if (want_grad({&a})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a}, out, [an, on, n]() {
            accum(an->grad, 1.0, on->grad.data(), n);
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> v(static_cast<size_t>(m) * n);
    kernels::matmul(a.data().data(), b.data().data(), v.data(), m, k, n);
    Tensor out = Tensor::from_data({m, n}, std::move(v));
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a, b}, out, [an, bn, on, m, k, n]() {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                std::vector<double> tmp(static_cast<size_t>(m) * k);
                kernels::matmul_nt(g, bn->value.data(), tmp.data(), m, n, k);
                accum(an->grad, 1.0, tmp.data(), tmp.size());
            }
            if (bn->requires_grad) {
                std::vector<double> tmp(static_cast<size_t>(k) * n);
                kernels::matmul_tn(an->value.data(), g, tmp.data(), m, k, n);
                accum(bn->grad, 1.0, tmp.data(), tmp.size());
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[1]) {
        throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    std::vector<double> v(static_cast<size_t>(m) * n);
    kernels::matmul_nt(a.data().data(), b.data().data(), v.data(), m, k, n);
    Tensor out = Tensor::from_data({m, n}, std::move(v));
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({a, b}, out, [an, bn, on, m, k, n]() {
            const double* g = on->grad.data();
            if (an->requires_grad) {
                std::vector<double> tmp(static_cast<size_t>(m) * k);
                kernels::matmul(g, bn->value.data(), tmp.data(), m, n, k);
                accum(an->grad, 1.0, tmp.data(), tmp.size());
            }
            if (bn->requires_grad) {
                std::vector<double> tmp(static_cast<size_t>(n) * k);
                kernels::matmul_tn(g, an->value.data(), tmp.data(), m, n, k);
                accum(bn->grad, 1.0, tmp.data(), tmp.size());
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || static_cast<size_t>(x.shape()[1]) != b.size()) {
        throw ShapeError("add_bias: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(b.shape()) + " do not broadcast");
    }
    const int m = x.shape()[0], n = x.shape()[1];
    std::vector<double> v(x.data());
    for (int i = 0; i < m; ++i) {
        double* row = v.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += b.data()[j];
    }
    Tensor out = Tensor::from_data(x.shape(), std::move(v));
    if (want_grad({&x, &b})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x, b}, out, [xn, bn, on, m, n]() {
            const double* g = on->grad.data();
            if (xn->requires_grad) accum(xn->grad, 1.0, g, static_cast<size_t>(m) * n);
            if (bn->requires_grad) {
                for (int i = 0; i < m; ++i) {
                    const double* row = g + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) bn->grad[j] += row[j];
                }
            }
        });
    }
    return out;
}

namespace {
// Iteration geometry for an axis of a 1-D or 2-D tensor: `outer` slices
// of `len` elements at spacing `stride`, slice s starting at starts[s].
struct AxisIter {
    int outer, len;
    size_t stride;
    std::vector<size_t> starts;
};

AxisIter axis_iter(const std::vector<int>& shape, int axis) {
    AxisIter it;
    if (shape.size() == 1) {
        if (axis != 0) throw PreconditionError("softmax: axis " + std::to_string(axis) +
                                               " invalid for shape " + shape_str(shape));
        it.outer = 1;
        it.len = shape[0];
        it.stride = 1;
        it.starts = {0};
        return it;
    }
    if (shape.size() != 2 || (axis != 0 && axis != 1)) {
        throw PreconditionError("softmax: axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(shape));
    }
    const int m = shape[0], n = shape[1];
    if (axis == 1) {
        it.outer = m;
        it.len = n;
        it.stride = 1;
        it.starts.resize(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) it.starts[static_cast<size_t>(i)] = static_cast<size_t>(i) * n;
    } else {
        it.outer = n;
        it.len = m;
        it.stride = static_cast<size_t>(n);
        it.starts.resize(static_cast<size_t>(n));
        for (int j = 0; j < n; ++j) it.starts[static_cast<size_t>(j)] = static_cast<size_t>(j);
    }
    return it;
}
} // namespace

Tensor softmax(const Tensor& x, int axis) {
    for (double v : x.data()) {
        if (std::isnan(v)) throw PreconditionError("softmax: NaN input");
    }
    const AxisIter it = axis_iter(x.shape(), axis);
    std::vector<double> v(x.size());
    for (int s = 0; s < it.outer; ++s) {
        const size_t base = it.starts[static_cast<size_t>(s)];
        double mx = x.data()[base];
        for (int i = 1; i < it.len; ++i) mx = std::max(mx, x.data()[base + i * it.stride]);
        double total = 0.0;
        for (int i = 0; i < it.len; ++i) {
            const double e = std::exp(x.data()[base + i * it.stride] - mx);
            v[base + i * it.stride] = e;
            total += e;
        }
        const double inv = 1.0 / total;
        for (int i = 0; i < it.len; ++i) v[base + i * it.stride] *= inv;
    }
    Tensor out = Tensor::from_data(x.shape(), std::move(v));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, it]() {
            const double* g = on->grad.data();
            const double* y = on->value.data();
            for (int s = 0; s < it.outer; ++s) {
                const size_t base = it.starts[static_cast<size_t>(s)];
                double dot = 0.0;
                for (int i = 0; i < it.len; ++i) {
                    const size_t k = base + i * it.stride;
                    dot += g[k] * y[k];
                }
                for (int i = 0; i < it.len; ++i) {
                    const size_t k = base + i * it.stride;
                    xn->grad[k] += y[k] * (g[k] - dot);
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw PreconditionError("layer_norm: eps must be positive");
    const int d = x.shape().back();
    const int m = static_cast<int>(x.size()) / d;
    if (x.ndim() > 2) throw ShapeError("layer_norm: expected 1-D or 2-D input");
    if (gain.size() != static_cast<size_t>(d) || bias.size() != static_cast<size_t>(d)) {
        throw ShapeError("layer_norm: gain/bias length must match last dim " + std::to_string(d));
    }
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
    std::vector<double> v(x.size());
    for (int r = 0; r < m; ++r) {
        const double* row = x.data().data() + static_cast<size_t>(r) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = is;
        double* xh = xhat->data() + static_cast<size_t>(r) * d;
        double* vr = v.data() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (row[j] - mu) * is;
            vr[j] = gain.data()[j] * xh[j] + bias.data()[j];
        }
    }
    Tensor out = Tensor::from_data(x.shape(), std::move(v));
    if (want_grad({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x, gain, bias}, out, [xn, gn, bn, on, xhat, inv_std, m, d]() {
            const double* g = on->grad.data();
            for (int r = 0; r < m; ++r) {
                const double* gr = g + static_cast<size_t>(r) * d;
                const double* xh = xhat->data() + static_cast<size_t>(r) * d;
                const double is = (*inv_std)[static_cast<size_t>(r)];
                if (xn->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = gr[j] * gn->value[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                    }
                    m1 /= d;
                    m2 /= d;
                    double* dst = xn->grad.data() + static_cast<size_t>(r) * d;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = gr[j] * gn->value[j];
                        dst[j] += is * (dxh - m1 - xh[j] * m2);
                    }
                }
                if (gn->requires_grad) {
                    for (int j = 0; j < d; ++j) gn->grad[j] += gr[j] * xh[j];
                }
                if (bn->requires_grad) {
                    for (int j = 0; j < d; ++j) bn->grad[j] += gr[j];
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    const size_t n = x.size();
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) {
        const double xi = x.data()[i];
        v[i] = 0.5 * xi * (1.0 + std::erf(xi * kInvSqrt2));
    }
    Tensor out = Tensor::from_data(x.shape(), std::move(v));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, n]() {
            const double* g = on->grad.data();
            for (size_t i = 0; i < n; ++i) {
                const double xi = xn->value[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
                xn->grad[i] += g[i] * (cdf + xi * pdf);
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(kernels::sum(x.data().data(), x.size()));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on]() {
            const double g = on->grad[0];
            for (double& d : xn->grad) d += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    Tensor out = Tensor::scalar(kernels::sum(x.data().data(), x.size()) * inv);
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, inv]() {
            const double g = on->grad[0] * inv;
            for (double& d : xn->grad) d += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    check_shape_positive(shape);
    if (shape_size(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out = Tensor::from_data(std::move(shape), x.data());
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on]() {
            accum(xn->grad, 1.0, on->grad.data(), on->grad.size());
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
    if (x.ndim() != 2) throw ShapeError("gather_rows: expected 2-D input, got " + shape_str(x.shape()));
    if (indices.empty()) throw PreconditionError("gather_rows: empty index list");
    const int m = x.shape()[0], n = x.shape()[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= m) {
            throw PreconditionError("gather_rows: index " + std::to_string(idx) +
                                    " out of range for " + std::to_string(m) + " rows");
        }
    }
    std::vector<double> v(indices.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < indices.size(); ++i) {
        std::memcpy(v.data() + i * n,
                    x.data().data() + static_cast<size_t>(indices[i]) * n,
                    sizeof(double) * static_cast<size_t>(n));
    }
    Tensor out = Tensor::from_data({static_cast<int>(indices.size()), n}, std::move(v));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, indices, n]() {
            const double* g = on->grad.data();
            for (size_t i = 0; i < indices.size(); ++i) {
                double* dst = xn->grad.data() + static_cast<size_t>(indices[i]) * n;
                const double* src = g + i * n;
                for (int j = 0; j < n; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor col_slice(const Tensor& x, int lo, int hi) {
    if (x.ndim() != 2) throw ShapeError("col_slice: expected 2-D input, got " + shape_str(x.shape()));
    const int m = x.shape()[0], n = x.shape()[1];
    if (lo < 0 || hi > n || lo >= hi) {
        throw PreconditionError("col_slice: range [" + std::to_string(lo) + "," +
                                std::to_string(hi) + ") invalid for " + std::to_string(n) +
                                " columns");
    }
    const int w = hi - lo;
    std::vector<double> v(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i) {
        std::memcpy(v.data() + static_cast<size_t>(i) * w,
                    x.data().data() + static_cast<size_t>(i) * n + lo,
                    sizeof(double) * static_cast<size_t>(w));
    }
    Tensor out = Tensor::from_data({m, w}, std::move(v));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, m, n, lo, w]() {
            const double* g = on->grad.data();
            for (int i = 0; i < m; ++i) {
                double* dst = xn->grad.data() + static_cast<size_t>(i) * n + lo;
                const double* src = g + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat_cols: no inputs");
    const int m = parts.front().rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total += p.cols();
    }
    std::vector<double> v(static_cast<size_t>(m) * total);
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.cols();
        for (int i = 0; i < m; ++i) {
            std::memcpy(v.data() + static_cast<size_t>(i) * total + off,
                        p.data().data() + static_cast<size_t>(i) * w,
                        sizeof(double) * static_cast<size_t>(w));
        }
        off += w;
    }
    Tensor out = Tensor::from_data({m, total}, std::move(v));
    bool need = false;
    for (const Tensor& p : parts) need = need || p.requires_grad();
    if (Tape::active() && need) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<Node>> pn;
        std::vector<int> widths;
        for (const Tensor& p : parts) {
            pn.push_back(p.node_ptr());
            widths.push_back(p.cols());
        }
        auto on = out.node_ptr();
        Tape::active()->record(parts, out, [pn, widths, on, m, total]() {
            const double* g = on->grad.data();
            int off2 = 0;
            for (size_t k = 0; k < pn.size(); ++k) {
                const int w = widths[k];
                if (pn[k]->requires_grad) {
                    for (int i = 0; i < m; ++i) {
                        double* dst = pn[k]->grad.data() + static_cast<size_t>(i) * w;
                        const double* src = g + static_cast<size_t>(i) * total + off2;
                        for (int j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off2 += w;
            }
        });
    }
    return out;
}

Tensor assemble_rows(const Tensor& visible, const Tensor& fill_row,
                     const std::vector<int>& positions, int total) {
    if (visible.ndim() != 2) {
        throw ShapeError("assemble_rows: visible must be 2-D, got " + shape_str(visible.shape()));
    }
    const int v = visible.shape()[0], n = visible.shape()[1];
    if (fill_row.size() != static_cast<size_t>(n)) {
        throw ShapeError("assemble_rows: fill_row length " + std::to_string(fill_row.size()) +
                         " != row width " + std::to_string(n));
    }
    if (static_cast<int>(positions.size()) != v || total < v || total <= 0) {
        throw PreconditionError("assemble_rows: " + std::to_string(positions.size()) +
                                " positions for " + std::to_string(v) + " rows into " +
                                std::to_string(total));
    }
    for (size_t i = 0; i < positions.size(); ++i) {
        const bool ordered = (i == 0) ? positions[i] >= 0 : positions[i] > positions[i - 1];
        if (!ordered || positions[i] >= total) {
            throw PreconditionError("assemble_rows: positions must be strictly increasing in range");
        }
    }
    std::vector<double> out_v(static_cast<size_t>(total) * n);
    for (int r = 0; r < total; ++r) {
        std::memcpy(out_v.data() + static_cast<size_t>(r) * n, fill_row.data().data(),
                    sizeof(double) * static_cast<size_t>(n));
    }
    for (int i = 0; i < v; ++i) {
        std::memcpy(out_v.data() + static_cast<size_t>(positions[static_cast<size_t>(i)]) * n,
                    visible.data().data() + static_cast<size_t>(i) * n,
                    sizeof(double) * static_cast<size_t>(n));
    }
    Tensor out = Tensor::from_data({total, n}, std::move(out_v));
    if (want_grad({&visible, &fill_row})) {
        out.set_requires_grad(true);
        auto vn = visible.node_ptr(), fn = fill_row.node_ptr(), on = out.node_ptr();
        Tape::active()->record({visible, fill_row}, out, [vn, fn, on, positions, total, n]() {
            const double* g = on->grad.data();
            if (vn->requires_grad) {
                for (size_t i = 0; i < positions.size(); ++i) {
                    double* dst = vn->grad.data() + i * n;
                    const double* src = g + static_cast<size_t>(positions[i]) * n;
                    for (int j = 0; j < n; ++j) dst[j] += src[j];
                }
            }
            if (fn->requires_grad) {
                size_t next = 0;
                for (int r = 0; r < total; ++r) {
                    if (next < positions.size() && positions[next] == r) {
                        ++next;
                        continue;
                    }
                    const double* src = g + static_cast<size_t>(r) * n;
                    for (int j = 0; j < n; ++j) fn->grad[j] += src[j];
                }
            }
        });
    }
    return out;
}

Tensor extract_patches(const Tensor& x, int stride) {
    if (x.ndim() != 2) {
        throw ShapeError("extract_patches: expected 2-D input, got " + shape_str(x.shape()));
    }
    const int h = x.shape()[0], w = x.shape()[1];
    if (stride <= 0 || h % stride != 0 || w % stride != 0) {
        throw PreconditionError("extract_patches: size " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by stride " +
                                std::to_string(stride));
    }
    const int th = h / stride, tw = w / stride;
    const int ntok = th * tw, plen = stride * stride;
    std::vector<double> v(static_cast<size_t>(ntok) * plen);
    for (int tr = 0; tr < th; ++tr) {
        for (int tc = 0; tc < tw; ++tc) {
            double* dst = v.data() + static_cast<size_t>(tr * tw + tc) * plen;
            for (int pr = 0; pr < stride; ++pr) {
                const double* src = x.data().data() +
                                    static_cast<size_t>(tr * stride + pr) * w + tc * stride;
                std::memcpy(dst + pr * stride, src, sizeof(double) * static_cast<size_t>(stride));
            }
        }
    }
    Tensor out = Tensor::from_data({ntok, plen}, std::move(v));
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        auto xn = x.node_ptr(), on = out.node_ptr();
        Tape::active()->record({x}, out, [xn, on, th, tw, stride, w]() {
            const double* g = on->grad.data();
            const int plen2 = stride * stride;
            for (int tr = 0; tr < th; ++tr) {
                for (int tc = 0; tc < tw; ++tc) {
                    const double* src = g + static_cast<size_t>(tr * tw + tc) * plen2;
                    for (int pr = 0; pr < stride; ++pr) {
                        double* dst = xn->grad.data() +
                                      static_cast<size_t>(tr * stride + pr) * w + tc * stride;
                        for (int pc = 0; pc < stride; ++pc) dst[pc] += src[pr * stride + pc];
                    }
                }
            }
        });
    }
    return out;
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<NamedParam>& params,
                           double step, double tol) {
    if (step <= 0.0) throw PreconditionError("grad_check: step must be positive");
    if (Tape::active()) {
        throw PreconditionError("grad_check: must run with no active tape");
    }

    std::vector<std::vector<double>> analytic;
    {
        Tape::Scope scope;
        Tensor loss = f();
        scope.tape().backward(loss);
        for (const NamedParam& p : params) {
            if (p.t.grad().size() == p.t.size()) {
                analytic.push_back(p.t.grad());
            } else {
                analytic.emplace_back(p.t.size(), 0.0);
            }
        }
    }

    const double v1 = f().item();
    const double v2 = f().item();
    if (std::memcmp(&v1, &v2, sizeof(double)) != 0) {
        throw NondeterminismError("grad_check: two evaluations differ (" +
                                  std::to_string(v1) + " vs " + std::to_string(v2) + ")");
    }

    GradCheckReport rep;
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor t = params[p].t;
        std::vector<double>& vals = t.mutable_data();
        for (size_t e = 0; e < vals.size(); ++e) {
            const double orig = vals[e];
            vals[e] = orig + step;
            const double fp = f().item();
            vals[e] = orig - step;
            const double fm = f().item();
            vals[e] = orig;
            const double fd = (fp - fm) / (2.0 * step);
            const double rel = std::abs(analytic[p][e] - fd) / std::max(1.0, std::abs(fd));
            ++rep.elements;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = params[p].name + "[" + std::to_string(e) + "]";
            }
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

} // namespace dugi
