#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmte {

#ifdef HMTE_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Buffer = Eigen::Array<Real, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix<Real>>;
using ConstMatrixMap = Eigen::Map<const RowMatrix<Real>>;

/// Raised for any shape or argument incompatibility between tensors.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Handle to an N-dimensional row-major array of Real values.
///
/// Tensors are reference types: copying a Tensor shares the underlying node.
/// Values written by an op are never modified afterwards; only leaves (parameters
/// and inputs) may be mutated, and only between recorded steps.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, Buffer data, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor ones(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Real value, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::initializer_list<Real> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    Index dim(Index axis) const;
    Index ndim() const { return static_cast<Index>(shape().size()); }
    Index size() const;

    const Buffer& data() const;
    /// Direct write access; only valid for leaves.
    Buffer& mutable_data();
    Real operator[](Index flat) const { return data()[flat]; }
    Real item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    const Buffer& grad() const;
    void zero_grad();
    void clear_grad();

    /// Row-major view over the last dimension.
    ConstMatrixMap matrix() const;

    /// Deep copy detached from any recorded history.
    Tensor detach() const;

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(Shape, Buffer, std::span<const Tensor>,
                                 std::function<void(const Buffer&)>);
    friend class Tape;
};

/// Receives the gradient of the op output and accumulates into the inputs.
using BackwardFn = std::function<void(const Buffer& grad_out)>;

/// Records `backward` for the result when a tape is active and any input requires grad.
/// This is the single entry point every differentiable op goes through.
Tensor make_op_result(Shape shape, Buffer data, std::span<const Tensor> inputs, BackwardFn backward);

inline Tensor make_op_result(Shape shape, Buffer data, std::initializer_list<Tensor> inputs,
                             BackwardFn backward) {
    return make_op_result(std::move(shape), std::move(data),
                          std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
}

/// Adds `g` into the gradient buffer of `t` if it participates in differentiation.
void accumulate_grad(const Tensor& t, const Buffer& g);
template <typename Expr>
void accumulate_grad_expr(const Tensor& t, const Expr& g) {
    if (t.requires_grad()) accumulate_grad(t, Buffer(g));
}

/// Ordered record of executed ops for one forward/backward pass.
///
/// Constructing a Tape makes it the active recorder on the current thread; the
/// previous tape (if any) is restored on destruction. Ops executed with no active
/// tape build no history, which is how inference runs.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();
    void record(const Tensor& result);
    std::size_t size() const { return records_.size(); }

    /// Seeds d(loss)/d(loss)=1 and visits every recorded op once, newest first.
    void backward(const Tensor& loss);

private:
    std::vector<std::shared_ptr<detail::Node>> records_;
    Tape* previous_;
};

void backward(const Tensor& loss, Tape& tape);

/// Fingerprint of the branch choices made by non-smooth ops (max-pool winners, clamp
/// active sets) while installed on the current thread. Finite differences are only
/// meaningful between evaluations whose fingerprints agree.
class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    std::uint64_t fingerprint() const { return hash_; }
    /// Mixes `choice` into the active recorder, if any.
    static void note(std::uint64_t choice);
    static bool active();

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    BranchRecorder* previous_;
};

/// Disables recording for the current scope.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

}  // namespace hmte
