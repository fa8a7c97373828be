#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hfmca {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tape;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is first written
    bool requires_grad = false;
    std::int64_t node_id = -1;  // index into the recording tape, -1 for leaves
    Tape* tape = nullptr;

    std::span<double> ensure_grad();
};

// Dense row-major array of doubles. Copies share storage; data is immutable
// once an op has produced it, except through mutable_data() on leaves (the
// optimizer updates parameters that way).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor from(Shape shape, std::vector<double> values);
    // Leaf that accumulates gradients.
    static Tensor parameter(Shape shape, std::vector<double> values);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    std::int64_t node_id() const;

    // Copy with no history and requires_grad = false.
    Tensor detached() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable operations. Ops record onto the tape made
// current by a Tape::Scope on this thread; with no active tape nothing is
// recorded and no gradients can flow.
class Tape {
public:
    using BackwardRule = std::function<void(std::span<const double> grad_out)>;

    Tape() = default;
    ~Tape() { clear(); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* current();

    std::int64_t record(const std::shared_ptr<TensorImpl>& output,
                        std::vector<std::int64_t> inputs, BackwardRule rule);

    std::size_t size() const { return entries_.size(); }
    std::span<const std::int64_t> inputs_of(std::int64_t node) const;

    // Propagates d(loss)/d(.) to every reachable tensor. Leaf gradients
    // accumulate across calls; intermediate gradients are recomputed.
    void backward(const Tensor& loss);

    void clear();

private:
    struct Entry {
        std::weak_ptr<TensorImpl> output;
        std::vector<std::int64_t> inputs;
        BackwardRule rule;
    };
    std::vector<Entry> entries_;
};

void backward(const Tensor& loss);

namespace detail {

// Builds an op result. When a tape is active and any input requires grad the
// result is recorded with `rule`; the rule receives d(loss)/d(result).
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   Tape::BackwardRule rule);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Tape::BackwardRule rule);

// Gradient buffer of `t` if it takes part in differentiation, else empty.
std::span<double> grad_sink(const Tensor& t);

void check_finite(std::span<const double> values, const char* op);

}  // namespace detail

// Keeps freed tensor buffers in the heap instead of returning them to the
// kernel after every op (glibc). Call once at program start.
void tune_allocator();

}  // namespace hfmca
