#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "convocc/common.hpp"

namespace convocc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// All tensor storage is 64-byte aligned so vectorized kernels see the same
// alignment every run; unaligned buffers would make reduction orders (and
// thus low-order bits) depend on heap addresses, breaking bit-exact
// reproducibility.
template <class T, size_t Align>
struct AlignedAllocator {
    using value_type = T;
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}
    T* allocate(size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, size_t) { ::operator delete(p, std::align_val_t(Align)); }
    template <class U>
    bool operator==(const AlignedAllocator<U, Align>&) const { return true; }
    template <class U>
    bool operator!=(const AlignedAllocator<U, Align>&) const { return false; }
};

using DVec = std::vector<double, AlignedAllocator<double, 64>>;

// Dense row-major f64 tensor. Values are immutable once a tensor has been
// consumed by an op; handles share storage. Leaf gradients accumulate in
// `grad` when a Tape deposits them after backward().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
    static Tensor from_aligned(Shape shape, DVec values, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, RngStream& rng, double stddev, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(impl_->values.size()); }

    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }
    DVec& values() { return impl_->values; }
    const DVec& values() const { return impl_->values; }
    double item() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    // Leaf gradient, sized on first access.
    DVec& grad();
    const DVec& grad() const;
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    void zero_grad();

    bool all_finite() const;
    Tensor clone() const;

    // Identity of the underlying storage; used as the gradient key by Tape.
    const void* key() const { return impl_.get(); }
    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

private:
    struct Impl {
        Shape shape;
        DVec values;
        bool requires_grad = false;
        DVec grad;
    };
    std::shared_ptr<Impl> impl_;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

// Reverse-mode tape: an ordered record of backward closures, replayed in
// exact reverse order by backward(). Gradients for all nodes live in the
// tape while it runs; leaf gradients are deposited into the tensors at the
// end (or explicitly via deposit_leaf_grads() when batches run on parallel
// tapes and the caller wants a fixed reduction order).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    using Node = std::function<void(Tape&)>;

    void record(Node backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    void mark_produced(const Tensor& t) { produced_.insert(t.key()); }
    bool was_produced(const Tensor& t) const { return produced_.count(t.key()) > 0; }
    size_t size() const { return nodes_.size(); }

    // Gradient buffer for a node, created as zeros on demand.
    DVec& grad_buffer(const Tensor& t);
    // Null if the tensor never received a gradient.
    const DVec* find_grad(const Tensor& t) const;

    // Seeds d(loss)=1 and replays in reverse. Rejects a non-scalar loss or
    // one that was not produced on this tape. Clears the node list after.
    void backward(const Tensor& loss, bool deposit = true);
    void deposit_leaf_grads(double scale = 1.0);
    void clear();

    static Tape* current();

private:
    std::vector<Node> nodes_;
    std::unordered_map<const void*, DVec> grads_;
    std::unordered_set<const void*> produced_;
    // Leaves that received gradients: (key, tensor) in first-touch order.
    std::vector<Tensor> leaves_;
    std::unordered_set<const void*> leaf_seen_;
    friend class TapeScope;
    void note_leaf(const Tensor& t);
};

// Makes a tape current for this thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// True when a tape is active and any input requires grad; ops call this to
// decide whether to record.
bool should_record(std::initializer_list<const Tensor*> inputs);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

}  // namespace convocc
