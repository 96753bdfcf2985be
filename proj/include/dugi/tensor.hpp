#pragma once

#include "dugi/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dugi {

std::string shape_str(const std::vector<int>& shape);

// One value in the computation graph. Owned via shared_ptr by Tensor
// handles and by tape entries.
struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;   // sized lazily at backward time
    bool requires_grad = false;
    bool recorded = false;      // participates in a live tape entry

    size_t size() const {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }
};

// Value-semantics handle to a Node. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node().shape; }
    size_t size() const { return node().size(); }
    int ndim() const { return static_cast<int>(node().shape.size()); }
    int rows() const;
    int cols() const;

    const std::vector<double>& data() const { return node().value; }
    const std::vector<double>& grad() const { return node().grad; }

    // Rejected once the tensor has been recorded on a live tape; later
    // values belong in successor tensors.
    std::vector<double>& mutable_data();

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on);

    double item() const;

    std::shared_ptr<Node> node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    Node& node() const {
        if (!node_) throw PreconditionError("use of undefined tensor");
        return *node_;
    }
    std::shared_ptr<Node> node_;
};

// Define-by-run gradient tape. Ops record an entry when a tape is
// active on the current thread and some input requires gradients.
// backward() replays the entries in reverse and consumes them.
class Tape {
public:
    Tape() = default;
    ~Tape() { clear(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(const std::vector<Tensor>& inputs, const Tensor& output,
                std::function<void()> back);
    void backward(const Tensor& loss);
    void clear();
    size_t size() const { return entries_.size(); }

    static Tape* active();

    // Activates a fresh tape for the current thread for the lifetime
    // of the scope; restores the previous one on exit.
    class Scope;

private:
    struct Entry {
        std::vector<std::shared_ptr<Node>> inputs;
        std::shared_ptr<Node> output;
        std::function<void()> back;
    };
    std::vector<Entry> entries_;
};

class Tape::Scope {
public:
    Scope();
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    Tape& tape() { return tape_; }

private:
    Tape tape_;
    Tape* prev_;
};

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// c[m,n] = a[m,k] * b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[m,n] = a[m,k] * b[n,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// x[m,n] + b[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b);

// Stable softmax along `axis` (max subtracted per slice). NaN input is
// rejected.
Tensor softmax(const Tensor& x, int axis);

// Per-row normalization over the last dimension, then affine by gain
// and bias (both length d). Population variance, eps inside the sqrt.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6);

Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, std::vector<int> shape);

// out[i] = x[indices[i]]; duplicate indices accumulate gradient.
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);

// Columns [lo, hi) of a 2-D tensor.
Tensor col_slice(const Tensor& x, int lo, int hi);

Tensor concat_cols(const std::vector<Tensor>& parts);

// Scatter visible rows into a [total, n] tensor at strictly increasing
// row positions; remaining rows are copies of fill_row [1,n].
Tensor assemble_rows(const Tensor& visible, const Tensor& fill_row,
                     const std::vector<int>& positions, int total);

// Non-overlapping stride x stride patches of a 2-D tensor, one row per
// patch, token grid row-major, pixels row-major within each patch.
Tensor extract_patches(const Tensor& x, int stride);

struct NamedParam {
    std::string name;
    Tensor t;
};

struct GradCheckReport {
    bool pass = true;
    double max_rel_err = 0.0;
    std::string worst;      // "name[flat_index]"
    size_t elements = 0;
};

// Compares tape gradients of f() against central finite differences,
// element by element: |analytic - fd| / max(1, |fd|) < tol. f must be
// deterministic (checked by double evaluation) and is re-evaluated
// under perturbed parameter values, so call with no tape active.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<NamedParam>& params,
                           double step = 1e-5, double tol = 1e-4);

} // namespace dugi
