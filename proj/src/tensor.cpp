#include "hmte/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace hmte {

namespace detail {
struct Node {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    BackwardFn backward;
};
}  // namespace detail

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local BranchRecorder* g_branch_recorder = nullptr;

void validate_shape(const Shape& shape) {
    for (Index d : shape) {
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
}
}  // namespace

Index numel(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, Buffer data, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    validate_shape(shape);
    if (numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, Real(0), requires_grad);
}

Tensor Tensor::ones(const Shape& shape, bool requires_grad) {
    return full(shape, Real(1), requires_grad);
}

Tensor Tensor::full(const Shape& shape, Real value, bool requires_grad) {
    return Tensor(shape, Buffer::Constant(numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::initializer_list<Real> values, bool requires_grad) {
    Buffer b(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), b.data());
    return Tensor(shape, std::move(b), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

Index Tensor::dim(Index axis) const {
    const Index n = ndim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis out of range for shape " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
}

Index Tensor::size() const { return node_->data.size(); }

const Buffer& Tensor::data() const { return node_->data; }

Buffer& Tensor::mutable_data() {
    if (node_->backward) throw std::logic_error("mutable_data() on a recorded op result");
    return node_->data;
}

Real Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + to_string(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }

const Buffer& Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("tensor " + to_string(shape()) + " has no gradient");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad = Buffer::Zero(node_->data.size()); }

void Tensor::clear_grad() { node_->grad.resize(0); }

ConstMatrixMap Tensor::matrix() const {
    const Index cols = shape().back();
    return ConstMatrixMap(node_->data.data(), size() / cols, cols);
}

Tensor Tensor::detach() const { return Tensor(shape(), data(), false); }

Tensor make_op_result(Shape shape, Buffer data, std::span<const Tensor> inputs, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data), false);
    Tape* tape = Tape::active();
    if (tape == nullptr) return out;
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->backward = std::move(backward);
    tape->record(out);
    return out;
}

void accumulate_grad(const Tensor& t, const Buffer& g) {
    if (!t.requires_grad()) return;
    detail::Node* n = t.node();
    if (g.size() != n->data.size()) {
        throw ShapeError("gradient length " + std::to_string(g.size()) + " does not match " + to_string(n->shape));
    }
    if (n->grad.size() != n->data.size()) {
        n->grad = g;
    } else {
        n->grad += g;
    }
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
    // Results outlive the tape as plain values; their history is dropped.
    for (auto& node : records_) {
        node->backward = nullptr;
        node->requires_grad = false;
    }
    g_active_tape = previous_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& result) { records_.push_back(result.node_); }

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::logic_error("backward() on a loss that does not depend on any differentiable input");
    }
    accumulate_grad(loss, Buffer::Ones(1));
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        detail::Node& node = **it;
        if (node.grad.size() == 0 || !node.backward) continue;
        node.backward(node.grad);
    }
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

BranchRecorder::BranchRecorder() : previous_(g_branch_recorder) { g_branch_recorder = this; }

BranchRecorder::~BranchRecorder() { g_branch_recorder = previous_; }

void BranchRecorder::note(std::uint64_t choice) {
    BranchRecorder* r = g_branch_recorder;
    if (r == nullptr) return;
    r->hash_ = (r->hash_ ^ choice) * 0x100000001b3ULL;
}

bool BranchRecorder::active() { return g_branch_recorder != nullptr; }

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace hmte
