#include "convocc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convocc {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

static void check_shape(const Shape& shape) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive extent " + shape_str(shape));
    }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    check_shape(shape);
    auto impl = std::make_shared<Impl>();
    impl->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->values.assign(values.begin(), values.end());
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_aligned(Shape shape, DVec values, bool requires_grad) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                    " values do not fill shape " + shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, RngStream& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = rng.normal() * stddev;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor has shape " + shape_str(shape()));
    return impl_->values[0];
}

DVec& Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

const DVec& Tensor::grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : impl_->values)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::clone() const {
    return Tensor::from_aligned(impl_->shape, impl_->values, impl_->requires_grad);
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape* Tape::current() { return g_current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) { g_current_tape = &tape; }
TapeScope::~TapeScope() { g_current_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::current()) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

DVec& Tape::grad_buffer(const Tensor& t) {
    auto it = grads_.find(t.key());
    if (it == grads_.end()) {
        it = grads_.emplace(t.key(), DVec(static_cast<size_t>(t.size()), 0.0)).first;
        if (t.requires_grad() && !was_produced(t)) note_leaf(t);
    }
    return it->second;
}

void Tape::note_leaf(const Tensor& t) {
    if (leaf_seen_.insert(t.key()).second) leaves_.push_back(t);
}

const DVec* Tape::find_grad(const Tensor& t) const {
    auto it = grads_.find(t.key());
    return it == grads_.end() ? nullptr : &it->second;
}

void Tape::backward(const Tensor& loss, bool deposit) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!was_produced(loss))
        throw std::invalid_argument("backward: loss was not produced on this tape");
    grad_buffer(loss)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
    nodes_.clear();
    if (deposit) deposit_leaf_grads();
}

void Tape::deposit_leaf_grads(double scale) {
    for (Tensor& leaf : leaves_) {
        const auto& src = grads_.at(leaf.key());
        auto& dst = leaf.grad();
        for (size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
    }
    leaves_.clear();
    leaf_seen_.clear();
    grads_.clear();
    produced_.clear();
}

void Tape::clear() {
    nodes_.clear();
    grads_.clear();
    produced_.clear();
    leaves_.clear();
    leaf_seen_.clear();
}

}  // namespace convocc
