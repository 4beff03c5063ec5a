#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vsod {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive extent " + std::to_string(d));
        n *= std::size_t(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

namespace {

std::atomic<std::uint64_t> g_seq{0};
thread_local bool g_grad_enabled = true;
thread_local bool g_finite_checks = false;
thread_local std::vector<std::string>* g_trace = nullptr;

} // namespace

namespace detail {

double* Node::grad_data() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
}

Tensor make_op(const char* op, Shape shape, std::vector<float> data,
               const std::vector<Tensor>& inputs,
               std::function<void(Node&)> backward_fn) {
    if (shape_numel(shape) != data.size()) {
        throw std::logic_error(std::string(op) + ": output buffer does not match shape " + shape_str(shape));
    }
    if (g_trace) g_trace->push_back(op);
    if (g_finite_checks) {
        for (float v : data) {
            if (!std::isfinite(v)) {
                throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
            }
        }
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    if (g_grad_enabled) {
        bool track = false;
        for (const Tensor& t : inputs) track = track || (t.defined() && t.node()->requires_grad);
        if (track) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const Tensor& t : inputs) node->parents.push_back(t.node());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(node));
}

} // namespace detail

Tensor Tensor::zeros(Shape shape) {
    std::size_t n = shape_numel(shape);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data.assign(n, 0.0f);
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, float value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node()->data.begin(), t.node()->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::invalid_argument("dim: axis out of range");
    return node_->shape[std::size_t(axis)];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const float> Tensor::data() const { return node_->data; }

std::span<float> Tensor::mutable_data() { return node_->data; }

float Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
}

double Tensor::item_precise() const {
    if (size() != 1) throw std::invalid_argument("item_precise: tensor is not a scalar");
    return node_->has_hp ? node_->hp_value : double(node_->data[0]);
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (node_->backward_fn) throw std::logic_error("set_requires_grad: not a leaf");
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) throw std::logic_error("grad: no gradient accumulated for this tensor");
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

const char* Tensor::op() const { return node_->op; }

const std::string& Tensor::name() const { return node_->name; }

void Tensor::set_name(std::string name) { node_->name = std::move(name); }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    }
    detail::Node* root = loss.node().get();
    if (!root->requires_grad) return;

    // Reachable subgraph, then exact reverse execution order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{root};
    seen.insert(root);
    while (!stack.empty()) {
        detail::Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

    root->grad_data()[0] += 1.0;
    for (detail::Node* n : order) {
        if (!n->backward_fn || n->grad.empty()) continue;
        n->backward_fn(*n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void set_finite_checks(bool on) { g_finite_checks = on; }

bool finite_checks() { return g_finite_checks; }

void begin_op_trace(std::vector<std::string>* sink) { g_trace = sink; }

void end_op_trace() { g_trace = nullptr; }

} // namespace vsod
