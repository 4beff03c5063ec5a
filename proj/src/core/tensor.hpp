#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vsod {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One executed operation (or leaf value) in the computation record.
// `seq` is the global execution index; the backward pass replays recorded
// operations exactly once each, in descending `seq` order.
struct Node {
    Shape shape;
    std::vector<float> data;
    // Gradients accumulate across many operations with partial cancellation;
    // the buffer is a 64-bit accumulator (values remain 32-bit).
    std::vector<double> grad;  // allocated on first use, same extent as data
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::string name;  // non-empty for named parameters
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Scalar reductions accumulate in 64-bit; the pre-cast value is kept so
    // verification code can read scalars at full accumulator precision.
    double hp_value = 0.0;
    bool has_hp = false;

    double* grad_data();
};

} // namespace detail

// Dense 32-bit float array, optionally tracked in the autodiff record.
// Copies are shallow; the underlying value is immutable once produced
// (mutable_data exists for leaves: optimizer updates and finite-difference
// probes between recordings).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from_data(Shape shape, std::vector<float> values);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return int(shape().size()); }
    int dim(int axis) const;
    std::size_t size() const;

    std::span<const float> data() const;
    std::span<float> mutable_data();
    float item() const;
    double item_precise() const;  // 64-bit accumulator value when recorded

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    const char* op() const;
    const std::string& name() const;
    void set_name(std::string name);

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Runs the chain rule from a scalar loss; every requires_grad leaf reachable
// from it ends up with its total derivative accumulated into grad().
void backward(const Tensor& loss);

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// When on, every operation verifies its outputs are finite and failures are
// reported with the operation name.
void set_finite_checks(bool on);
bool finite_checks();

// Collects executed op names while a sink is installed (structural tests).
void begin_op_trace(std::vector<std::string>* sink);
void end_op_trace();

namespace detail {

// Shared constructor for all operations: wraps the forward result, wires
// parents and the backward closure when recording is active.
Tensor make_op(const char* op, Shape shape, std::vector<float> data,
               const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backward_fn);

} // namespace detail

} // namespace vsod
