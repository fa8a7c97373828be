#include "hfmca/tensor.hpp"

#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "hfmca/errors.hpp"

namespace hfmca {

namespace {
thread_local Tape* g_current_tape = nullptr;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::span<double> TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size())
        throw ShapeError("tensor: shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return Tensor(std::move(impl));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.impl_->requires_grad = true;
    return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size())
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(impl_->shape));
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() {
    if (impl_->node_id >= 0) throw std::logic_error("tensor: op outputs are immutable");
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("tensor: item() on " + shape_string(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::is_leaf() const { return impl_->node_id < 0; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

std::int64_t Tensor::node_id() const { return impl_->node_id; }

Tensor Tensor::detached() const { return from(impl_->shape, impl_->data); }

Tape::Scope::Scope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

std::int64_t Tape::record(const std::shared_ptr<TensorImpl>& output,
                          std::vector<std::int64_t> inputs, BackwardRule rule) {
    const auto id = static_cast<std::int64_t>(entries_.size());
    for (std::int64_t in : inputs)
        if (in >= id) throw std::logic_error("tape: input recorded after its consumer");
    entries_.push_back(Entry{output, std::move(inputs), std::move(rule)});
    output->node_id = id;
    output->tape = this;
    return id;
}

std::span<const std::int64_t> Tape::inputs_of(std::int64_t node) const {
    return entries_.at(static_cast<std::size_t>(node)).inputs;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
    if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");
    if (loss.is_leaf()) {
        loss.impl()->ensure_grad()[0] += 1.0;
        return;
    }
    if (loss.impl()->tape != this) throw std::invalid_argument("backward: loss is on another tape");
    if (entries_.empty()) throw std::logic_error("backward: empty tape");

    const auto top = static_cast<std::size_t>(loss.node_id());
    for (std::size_t i = 0; i <= top; ++i)
        if (auto out = entries_[i].output.lock()) out->grad.clear();
    loss.impl()->ensure_grad()[0] = 1.0;

    for (std::size_t i = top + 1; i-- > 0;) {
        auto out = entries_[i].output.lock();
        if (!out || out->grad.empty()) continue;
        entries_[i].rule(out->grad);
    }
}

void Tape::clear() {
    for (auto& e : entries_)
        if (auto out = e.output.lock()) {
            out->node_id = -1;
            out->tape = nullptr;
            out->requires_grad = false;
        }
    entries_.clear();
}

void backward(const Tensor& loss) {
    if (loss.is_leaf()) {
        if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");
        if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar");
        loss.impl()->ensure_grad()[0] += 1.0;
        return;
    }
    loss.impl()->tape->backward(loss);
}

namespace detail {

void check_finite(std::span<const double> values, const char* op) {
    for (double v : values)
        if (!std::isfinite(v)) throw NumericalError(std::string(op) + ": non-finite value produced");
}

std::span<double> grad_sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return {};
    return t.impl()->ensure_grad();
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardRule rule) {
    check_finite(values, "op");
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    Tape* tape = Tape::current();
    if (!tape) return out;
    bool any = false;
    std::vector<std::int64_t> ids;
    for (const Tensor& in : inputs) {
        if (!in.defined() || !in.requires_grad()) continue;
        any = true;
        if (in.node_id() >= 0) {
            if (in.impl()->tape != tape)
                throw std::logic_error("tape: mixing tensors from different tapes");
            ids.push_back(in.node_id());
        }
    }
    if (!any) return out;
    out.impl()->requires_grad = true;
    tape->record(out.impl(), std::move(ids), std::move(rule));
    return out;
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   Tape::BackwardRule rule) {
    return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs),
                       std::move(rule));
}

}  // namespace detail

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace hfmca
