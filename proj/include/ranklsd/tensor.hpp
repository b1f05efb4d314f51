#pragma once

// Dense fp64 arrays with reverse-mode differentiation over a fixed op set.
//
// Tensor is a shared handle: copies refer to the same storage, and const on
// the handle does not make the buffer immutable.  Ops record a backward step
// on the thread-local active Tape when any input requires gradients; with no
// active tape everything runs in plain inference mode.  The contract is
// "one tape, one thread": tape-attached work stays on the thread that owns
// the TapeScope, tensors without tape attachment are shareable read-only.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ranklsd/kernels.hpp"

namespace ranklsd {

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);
    static Tensor scalar(double v);

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(d_->value.size()); }

    double* data() const { return d_->value.data(); }
    std::vector<double>& values() const { return d_->value; }
    double item() const;  // scalar tensors only

    bool requires_grad() const { return d_ && d_->requires_grad; }
    const Tensor& set_requires_grad(bool b) const {
        d_->requires_grad = b;
        return *this;
    }

    // nullptr until something has been accumulated
    const double* grad() const { return d_->grad.empty() ? nullptr : d_->grad.data(); }
    // zero-filled on first use
    std::vector<double>& grad_buffer() const;
    void zero_grad() const { d_->grad.clear(); }

    // value copy with no gradient participation
    Tensor detach() const;

    bool same_storage(const Tensor& o) const { return d_ == o.d_; }

  private:
    std::shared_ptr<detail::TensorImpl> d_;
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Runs every recorded step in reverse execution order, seeding d(loss)=1.
    // Errors: non-scalar loss, detached loss, or a second backward() without
    // an intervening clear().
    void backward(const Tensor& loss);

    // Drops all records (and with them the held intermediate tensors).
    void clear();

    std::size_t size() const { return steps_.size(); }

    static Tape* active();
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  private:
    std::vector<std::function<void()>> steps_;
    bool spent_ = false;
};

// Installs a tape as the thread's active tape for the scope's lifetime.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// True when a tape is active and any listed tensor requires gradients;
// fused ops outside this file use it to decide whether to record.
bool grad_wanted(std::initializer_list<const Tensor*> inputs);

// ------------------------------------------------------------------- ops ---
// Shape errors name the op and the offending shapes; non-finite input data
// raises TensorError as well.

Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);           // elementwise
Tensor mul(const Tensor& a, double s);
Tensor emax(const Tensor& a, const Tensor& b);          // elementwise max
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);        // [M,K]x[K,N]
Tensor add_rowvec(const Tensor& x, const Tensor& b);    // [R,C] + [C]
Tensor transpose2d(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);  // rank 1 or 2
Tensor softmax(const Tensor& x, int axis = -1);         // rank 1, or rank 2 on either axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);                   // [R,C] across C

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              kernels::PadMode mode = kernels::PadMode::Zero);  // [C,H,W],[F,C,kh,kw],[F]
Tensor upsample2x(const Tensor& x);                     // [C,H,W] nearest
Tensor rot90_map(const Tensor& x, int direction);       // [H,W] or [C,H,W], +1 CCW (y-down)

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor l1_norm(const Tensor& x);
Tensor l2_norm(const Tensor& x);

// map [H,W] -> [N], map [C,H,W] -> [N,C]; points [N,2] in continuous pixel
// coordinates of the map, clamped to the border; differentiable in both.
Tensor bilinear_sample(const Tensor& map, const Tensor& points);

// Multi-scale deformable attention: per token, bilinear-sample every level's
// value map at given normalized points and blend with given weights.
//   values: one [D,H_l,W_l] per level    points: [T,P,2] in [0,1]
//   weights: [T,P]                       result: [T,D]
// with P = heads*levels*K laid out as ((head*levels + level)*K + k).
Tensor deform_attn(const std::vector<Tensor>& values, const Tensor& points,
                   const Tensor& weights, int heads);

// --------------------------------------------------------- serialization ---
// Flat binary: magic "RLT1", u32 rank, u32 extents, little-endian f64 data.
void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);

}  // namespace ranklsd
