#include "ranklsd/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace ranklsd {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
    throw TensorError(op + ": " + msg);
}

void check_finite(const char* op, const Tensor& t) {
    const double* p = t.data();
    for (std::int64_t i = 0, n = t.numel(); i < n; ++i) {
        if (!std::isfinite(p[i])) {
            fail(op, "non-finite input at flat index " + std::to_string(i));
        }
    }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

}  // namespace

// ---------------------------------------------------------------- Tensor ---

Tensor::Tensor(std::vector<int> shape, double fill) {
    for (int e : shape) {
        if (e <= 0) fail("Tensor", "non-positive extent in " + shape_str(shape));
    }
    d_ = std::make_shared<detail::TensorImpl>();
    d_->value.assign(static_cast<std::size_t>(count(shape)), fill);
    d_->shape = std::move(shape);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) {
    for (int e : shape) {
        if (e <= 0) fail("Tensor", "non-positive extent in " + shape_str(shape));
    }
    if (count(shape) != static_cast<std::int64_t>(values.size())) {
        fail("Tensor", "value count " + std::to_string(values.size()) +
                           " does not fill shape " + shape_str(shape));
    }
    d_ = std::make_shared<detail::TensorImpl>();
    d_->shape = std::move(shape);
    d_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
    if (numel() != 1) fail("item", "tensor of shape " + shape_str(shape()) + " is not scalar");
    return d_->value[0];
}

std::vector<double>& Tensor::grad_buffer() const {
    if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
    return d_->grad;
}

Tensor Tensor::detach() const {
    Tensor t(d_->shape);
    t.values() = d_->value;
    return t;
}

// ------------------------------------------------------------------ Tape ---

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        fail("backward", "loss of shape " + shape_str(loss.shape()) + " is not scalar");
    }
    if (!loss.requires_grad()) fail("backward", "loss is detached from the tape");
    if (spent_) fail("backward", "tape already replayed; clear() before reusing");
    spent_ = true;
    loss.grad_buffer()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

void Tape::clear() {
    steps_.clear();
    spent_ = false;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

bool grad_wanted(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

namespace {

// Marks the output differentiable and records the backward step.
void record(const Tensor& out, std::function<void()> step) {
    out.set_requires_grad(true);
    g_active_tape->record(std::move(step));
}

const double* out_grad(const Tensor& out) { return out.grad(); }

}  // namespace

// ------------------------------------------------------------ elementwise ---

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    check_finite("add", a);
    check_finite("add", b);
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (grad_wanted({&a, &b})) {
        record(out, [a, b, out] {
            const double* g = out_grad(out);
            if (!g) return;
            const std::int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, double s) {
    check_finite("add", a);
    if (!std::isfinite(s)) fail("add", "non-finite scalar");
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + s;
    if (grad_wanted({&a})) {
        record(out, [a, out] {
            const double* g = out_grad(out);
            if (!g || !a.requires_grad()) return;
            double* ga = a.grad_buffer().data();
            for (std::int64_t i = 0, n = out.numel(); i < n; ++i) ga[i] += g[i];
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    check_finite("sub", a);
    check_finite("sub", b);
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (grad_wanted({&a, &b})) {
        record(out, [a, b, out] {
            const double* g = out_grad(out);
            if (!g) return;
            const std::int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    check_finite("mul", a);
    check_finite("mul", b);
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (grad_wanted({&a, &b})) {
        record(out, [a, b, out] {
            const double* g = out_grad(out);
            if (!g) return;
            const std::int64_t n = out.numel();
            if (a.requires_grad()) {
                double* ga = a.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, double s) {
    check_finite("mul", a);
    if (!std::isfinite(s)) fail("mul", "non-finite scalar");
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
    if (grad_wanted({&a})) {
        record(out, [a, out, s] {
            const double* g = out_grad(out);
            if (!g || !a.requires_grad()) return;
            double* ga = a.grad_buffer().data();
            for (std::int64_t i = 0, n = out.numel(); i < n; ++i) ga[i] += g[i] * s;
        });
    }
    return out;
}

Tensor emax(const Tensor& a, const Tensor& b) {
    check_same_shape("emax", a, b);
    check_finite("emax", a);
    check_finite("emax", b);
    Tensor out(a.shape());
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = std::max(a.data()[i], b.data()[i]);
    if (grad_wanted({&a, &b})) {
        record(out, [a, b, out] {
            const double* g = out_grad(out);
            if (!g) return;
            const std::int64_t n = out.numel();
            // ties route to a
            if (a.requires_grad()) {
                double* ga = a.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    if (a.data()[i] >= b.data()[i]) ga[i] += g[i];
                }
            }
            if (b.requires_grad()) {
                double* gb = b.grad_buffer().data();
                for (std::int64_t i = 0; i < n; ++i) {
                    if (a.data()[i] < b.data()[i]) gb[i] += g[i];
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    check_finite("relu", x);
    Tensor out(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    if (grad_wanted({&x})) {
        record(out, [x, out] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            for (std::int64_t i = 0, n = out.numel(); i < n; ++i) {
                if (x.data()[i] > 0.0) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    check_finite("sigmoid", x);
    Tensor out(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
    if (grad_wanted({&x})) {
        record(out, [x, out] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            const double* y = out.data();
            for (std::int64_t i = 0, n = out.numel(); i < n; ++i) {
                gx[i] += g[i] * y[i] * (1.0 - y[i]);
            }
        });
    }
    return out;
}

// ----------------------------------------------------------------- linear ---

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        fail("matmul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    check_finite("matmul", a);
    check_finite("matmul", b);
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    kernels::matmul_nn(a.data(), b.data(), out.data(), m, k, n, false);
    if (grad_wanted({&a, &b})) {
        record(out, [a, b, out, m, k, n] {
            const double* g = out_grad(out);
            if (!g) return;
            if (a.requires_grad()) {
                // dA = dC B^T
                kernels::matmul_nt(g, b.data(), a.grad_buffer().data(), m, n, k, true);
            }
            if (b.requires_grad()) {
                // dB = A^T dC
                kernels::matmul_tn(a.data(), g, b.grad_buffer().data(), m, k, n, true);
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
        fail("add_rowvec",
             "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    }
    check_finite("add_rowvec", x);
    check_finite("add_rowvec", b);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out.data()[static_cast<std::int64_t>(i) * c + j] =
                x.data()[static_cast<std::int64_t>(i) * c + j] + b.data()[j];
        }
    }
    if (grad_wanted({&x, &b})) {
        record(out, [x, b, out, r, c] {
            const double* g = out_grad(out);
            if (!g) return;
            if (x.requires_grad()) {
                double* gx = x.grad_buffer().data();
                for (std::int64_t i = 0, n = out.numel(); i < n; ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                double* gb = b.grad_buffer().data();
                for (int j = 0; j < c; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < r; ++i) s += g[static_cast<std::int64_t>(i) * c + j];
                    gb[j] += s;
                }
            }
        });
    }
    return out;
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) fail("transpose2d", "needs rank 2, got " + shape_str(x.shape()));
    check_finite("transpose2d", x);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            out.data()[static_cast<std::int64_t>(j) * r + i] =
                x.data()[static_cast<std::int64_t>(i) * c + j];
        }
    }
    if (grad_wanted({&x})) {
        record(out, [x, out, r, c] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    gx[static_cast<std::int64_t>(i) * c + j] +=
                        g[static_cast<std::int64_t>(j) * r + i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    if (count(shape) != x.numel()) {
        fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    check_finite("reshape", x);
    Tensor out(std::move(shape));
    out.values() = x.values();
    if (grad_wanted({&x})) {
        record(out, [x, out] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            for (std::int64_t i = 0, n = out.numel(); i < n; ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    if (x.rank() != 1 && x.rank() != 2) {
        fail("gather_rows", "needs rank 1 or 2, got " + shape_str(x.shape()));
    }
    if (idx.empty()) fail("gather_rows", "empty index list");
    const int rows = x.dim(0);
    const int c = x.rank() == 2 ? x.dim(1) : 1;
    for (int i : idx) {
        if (i < 0 || i >= rows) {
            fail("gather_rows", "index " + std::to_string(i) + " outside " + shape_str(x.shape()));
        }
    }
    check_finite("gather_rows", x);
    const int n = static_cast<int>(idx.size());
    Tensor out(x.rank() == 2 ? std::vector<int>{n, c} : std::vector<int>{n});
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * c,
                    x.data() + static_cast<std::int64_t>(idx[static_cast<std::size_t>(i)]) * c,
                    sizeof(double) * static_cast<std::size_t>(c));
    }
    if (grad_wanted({&x})) {
        record(out, [x, out, idx, c] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            for (std::size_t i = 0; i < idx.size(); ++i) {
                for (int j = 0; j < c; ++j) {
                    gx[static_cast<std::int64_t>(idx[i]) * c + j] +=
                        g[static_cast<std::int64_t>(i) * c + j];
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    if (x.rank() == 1) {
        if (axis != 0 && axis != -1) fail("softmax", "axis out of range for rank 1");
        Tensor row = reshape(x, {1, x.dim(0)});
        return reshape(softmax(row, 1), {x.dim(0)});
    }
    if (x.rank() != 2) fail("softmax", "needs rank 1 or 2, got " + shape_str(x.shape()));
    if (axis == 0) return transpose2d(softmax(transpose2d(x), 1));
    if (axis != 1 && axis != -1) fail("softmax", "axis out of range for rank 2");
    check_finite("softmax", x);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out({r, c});
    kernels::softmax_rows(x.data(), out.data(), r, c);
    if (grad_wanted({&x})) {
        record(out, [x, out, r, c] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            kernels::softmax_rows_backward(out.data(), g, x.grad_buffer().data(), r, c);
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 2) fail("layer_norm", "needs rank 2, got " + shape_str(x.shape()));
    if (gamma.rank() != 1 || gamma.dim(0) != x.dim(1)) {
        fail("layer_norm",
             "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(gamma.shape()));
    }
    check_same_shape("layer_norm", gamma, beta);
    check_finite("layer_norm", x);
    check_finite("layer_norm", gamma);
    check_finite("layer_norm", beta);
    const int r = x.dim(0), c = x.dim(1);
    Tensor out({r, c});
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) *
                                                      static_cast<std::size_t>(c));
    kernels::layer_norm_rows(x.data(), gamma.data(), beta.data(), out.data(), inv_std->data(),
                             xhat->data(), r, c, eps);
    if (grad_wanted({&x, &gamma, &beta})) {
        record(out, [x, gamma, beta, out, inv_std, xhat, r, c] {
            const double* g = out_grad(out);
            if (!g) return;
            // the kernel writes all three; route through scratch for any
            // input that does not want gradients
            static thread_local std::vector<double> sink;
            double* dx = nullptr;
            double* dg = nullptr;
            double* db = nullptr;
            std::size_t need = 0;
            if (!x.requires_grad()) need += static_cast<std::size_t>(r) * c;
            if (!gamma.requires_grad()) need += static_cast<std::size_t>(c);
            if (!beta.requires_grad()) need += static_cast<std::size_t>(c);
            sink.assign(need, 0.0);
            double* scratch = sink.data();
            if (x.requires_grad()) {
                dx = x.grad_buffer().data();
            } else {
                dx = scratch;
                scratch += static_cast<std::size_t>(r) * c;
            }
            if (gamma.requires_grad()) {
                dg = gamma.grad_buffer().data();
            } else {
                dg = scratch;
                scratch += c;
            }
            db = beta.requires_grad() ? beta.grad_buffer().data() : scratch;
            kernels::layer_norm_rows_backward(g, gamma.data(), xhat->data(), inv_std->data(),
                                              dx, dg, db, r, c);
        });
    }
    return out;
}

// ------------------------------------------------------------------- conv ---

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              kernels::PadMode mode) {
    if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1)) {
        fail("conv2d", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0))) {
        fail("conv2d", "shape mismatch " + shape_str(w.shape()) + " vs " + shape_str(b.shape()));
    }
    if (stride < 1 || pad < 0) fail("conv2d", "bad stride/pad");
    const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) fail("conv2d", "kernel larger than padded input");
    check_finite("conv2d", x);
    check_finite("conv2d", w);
    if (b.defined()) check_finite("conv2d", b);
    Tensor out({f, oh, ow});
    kernels::conv2d_forward(x.data(), w.data(), b.defined() ? b.data() : nullptr, out.data(),
                            c, h, wd, f, kh, kw, stride, pad, mode);
    if (grad_wanted({&x, &w, &b})) {
        record(out, [x, w, b, out, c, h, wd, f, kh, kw, stride, pad, mode, oh, ow] {
            const double* g = out_grad(out);
            if (!g) return;
            if (x.requires_grad()) {
                kernels::conv2d_backward_input(g, w.data(), x.grad_buffer().data(), c, h, wd,
                                               f, kh, kw, stride, pad, mode);
            }
            if (w.requires_grad()) {
                kernels::conv2d_backward_weight(g, x.data(), w.grad_buffer().data(), c, h, wd,
                                                f, kh, kw, stride, pad, mode);
            }
            if (b.defined() && b.requires_grad()) {
                kernels::conv2d_backward_bias(g, b.grad_buffer().data(), f, oh, ow);
            }
        });
    }
    return out;
}

Tensor upsample2x(const Tensor& x) {
    if (x.rank() != 3) fail("upsample2x", "needs rank 3, got " + shape_str(x.shape()));
    check_finite("upsample2x", x);
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch) {
        const double* ip = x.data() + static_cast<std::int64_t>(ch) * h * w;
        double* op = out.data() + static_cast<std::int64_t>(ch) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            const double* irow = ip + static_cast<std::int64_t>(y / 2) * w;
            double* orow = op + static_cast<std::int64_t>(y) * 2 * w;
            for (int xx = 0; xx < 2 * w; ++xx) orow[xx] = irow[xx / 2];
        }
    }
    if (grad_wanted({&x})) {
        record(out, [x, out, c, h, w] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            double* gx = x.grad_buffer().data();
            for (int ch = 0; ch < c; ++ch) {
                double* gp = gx + static_cast<std::int64_t>(ch) * h * w;
                const double* op = g + static_cast<std::int64_t>(ch) * 4 * h * w;
                for (int y = 0; y < 2 * h; ++y) {
                    double* grow = gp + static_cast<std::int64_t>(y / 2) * w;
                    const double* orow = op + static_cast<std::int64_t>(y) * 2 * w;
                    for (int xx = 0; xx < 2 * w; ++xx) grow[xx / 2] += orow[xx];
                }
            }
        });
    }
    return out;
}

namespace {

// +1 rotates counter-clockwise in the y-down convention; pure index
// permutation so round trips are bit-exact.
void rot_plane(const double* in, int h, int w, int direction, double* out) {
    if (direction == +1) {
        // out[w-1-j, i] = in[i, j], out is [W,H]
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                out[static_cast<std::int64_t>(w - 1 - j) * h + i] =
                    in[static_cast<std::int64_t>(i) * w + j];
            }
        }
    } else {
        // out[j, h-1-i] = in[i, j], out is [W,H]
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                out[static_cast<std::int64_t>(j) * h + (h - 1 - i)] =
                    in[static_cast<std::int64_t>(i) * w + j];
            }
        }
    }
}

}  // namespace

Tensor rot90_map(const Tensor& x, int direction) {
    if (direction != 1 && direction != -1) fail("rot90_map", "direction must be +1 or -1");
    if (x.rank() != 2 && x.rank() != 3) {
        fail("rot90_map", "needs rank 2 or 3, got " + shape_str(x.shape()));
    }
    check_finite("rot90_map", x);
    const int c = x.rank() == 3 ? x.dim(0) : 1;
    const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    Tensor out(x.rank() == 3 ? std::vector<int>{c, w, h} : std::vector<int>{w, h});
    for (int ch = 0; ch < c; ++ch) {
        rot_plane(x.data() + static_cast<std::int64_t>(ch) * h * w, h, w, direction,
                  out.data() + static_cast<std::int64_t>(ch) * h * w);
    }
    if (grad_wanted({&x})) {
        record(out, [x, out, c, h, w, direction] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            // inverse permutation: rotate the gradient back
            std::vector<double> tmp(static_cast<std::size_t>(h) * w);
            double* gx = x.grad_buffer().data();
            for (int ch = 0; ch < c; ++ch) {
                rot_plane(g + static_cast<std::int64_t>(ch) * h * w, w, h, -direction,
                          tmp.data());
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i) {
                    gx[static_cast<std::int64_t>(ch) * h * w + i] += tmp[i];
                }
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- reductions ---

namespace {

Tensor reduce_op(const char* name, const Tensor& x,
                 const std::function<double(const double*, std::int64_t)>& fwd,
                 const std::function<void(const Tensor&, double, double)>& bwd) {
    check_finite(name, x);
    Tensor out = Tensor::scalar(fwd(x.data(), x.numel()));
    if (grad_wanted({&x})) {
        const double y = out.item();
        record(out, [x, out, bwd, y] {
            const double* g = out_grad(out);
            if (!g || !x.requires_grad()) return;
            bwd(x, g[0], y);
        });
    }
    return out;
}

}  // namespace

Tensor sum(const Tensor& x) {
    return reduce_op(
        "sum", x,
        [](const double* p, std::int64_t n) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += p[i];
            return s;
        },
        [](const Tensor& x, double g, double) {
            double* gx = x.grad_buffer().data();
            for (std::int64_t i = 0, n = x.numel(); i < n; ++i) gx[i] += g;
        });
}

Tensor mean(const Tensor& x) {
    return reduce_op(
        "mean", x,
        [](const double* p, std::int64_t n) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += p[i];
            return s / static_cast<double>(n);
        },
        [](const Tensor& x, double g, double) {
            double* gx = x.grad_buffer().data();
            const double inv = 1.0 / static_cast<double>(x.numel());
            for (std::int64_t i = 0, n = x.numel(); i < n; ++i) gx[i] += g * inv;
        });
}

Tensor l1_norm(const Tensor& x) {
    return reduce_op(
        "l1_norm", x,
        [](const double* p, std::int64_t n) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += std::abs(p[i]);
            return s;
        },
        [](const Tensor& x, double g, double) {
            double* gx = x.grad_buffer().data();
            const double* p = x.data();
            for (std::int64_t i = 0, n = x.numel(); i < n; ++i) {
                gx[i] += g * (p[i] > 0.0 ? 1.0 : (p[i] < 0.0 ? -1.0 : 0.0));
            }
        });
}

Tensor l2_norm(const Tensor& x) {
    return reduce_op(
        "l2_norm", x,
        [](const double* p, std::int64_t n) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += p[i] * p[i];
            return std::sqrt(s);
        },
        [](const Tensor& x, double g, double y) {
            if (y == 0.0) return;  // flat-zero subgradient at the origin
            double* gx = x.grad_buffer().data();
            const double* p = x.data();
            const double inv = 1.0 / y;
            for (std::int64_t i = 0, n = x.numel(); i < n; ++i) gx[i] += g * p[i] * inv;
        });
}

// ----------------------------------------------------------------- sample ---

Tensor bilinear_sample(const Tensor& map, const Tensor& points) {
    if (map.rank() != 2 && map.rank() != 3) {
        fail("bilinear_sample", "map needs rank 2 or 3, got " + shape_str(map.shape()));
    }
    if (points.rank() != 2 || points.dim(1) != 2) {
        fail("bilinear_sample", "points need shape [N,2], got " + shape_str(points.shape()));
    }
    check_finite("bilinear_sample", map);
    check_finite("bilinear_sample", points);
    const bool flat = map.rank() == 2;
    const int c = flat ? 1 : map.dim(0);
    const int h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
    const int n = points.dim(0);
    Tensor out(flat ? std::vector<int>{n} : std::vector<int>{n, c});
    kernels::bilinear_forward(map.data(), c, h, w, points.data(), n, out.data());
    if (grad_wanted({&map, &points})) {
        record(out, [map, points, out, c, h, w, n] {
            const double* g = out_grad(out);
            if (!g) return;
            if (map.requires_grad()) {
                kernels::bilinear_backward_map(g, c, h, w, points.data(), n,
                                               map.grad_buffer().data());
            }
            if (points.requires_grad()) {
                kernels::bilinear_backward_points(g, map.data(), c, h, w, points.data(), n,
                                                  points.grad_buffer().data());
            }
        });
    }
    return out;
}

Tensor deform_attn(const std::vector<Tensor>& values, const Tensor& points,
                   const Tensor& weights, int heads) {
    if (values.empty()) fail("deform_attn", "no value levels");
    const int d = values[0].dim(0);
    if (d % heads != 0) fail("deform_attn", "channels not divisible by heads");
    for (const Tensor& v : values) {
        if (v.rank() != 3 || v.dim(0) != d) {
            fail("deform_attn", "level shape " + shape_str(v.shape()) + " vs channels " +
                                    std::to_string(d));
        }
        check_finite("deform_attn", v);
    }
    if (points.rank() != 3 || points.dim(2) != 2) {
        fail("deform_attn", "points need shape [T,P,2], got " + shape_str(points.shape()));
    }
    if (weights.rank() != 2 || weights.dim(0) != points.dim(0) ||
        weights.dim(1) != points.dim(1)) {
        fail("deform_attn", "weight shape " + shape_str(weights.shape()) +
                                " vs points " + shape_str(points.shape()));
    }
    const int t = points.dim(0), p = points.dim(1);
    const int levels = static_cast<int>(values.size());
    if (p % (heads * levels) != 0) {
        fail("deform_attn", "point count " + std::to_string(p) +
                                " not divisible by heads*levels");
    }
    check_finite("deform_attn", points);
    check_finite("deform_attn", weights);

    std::vector<const double*> maps(static_cast<std::size_t>(levels));
    std::vector<int> hs(static_cast<std::size_t>(levels)), ws(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        maps[static_cast<std::size_t>(l)] = values[static_cast<std::size_t>(l)].data();
        hs[static_cast<std::size_t>(l)] = values[static_cast<std::size_t>(l)].dim(1);
        ws[static_cast<std::size_t>(l)] = values[static_cast<std::size_t>(l)].dim(2);
    }
    kernels::DeformLevels lv{maps.data(), hs.data(), ws.data(), levels};
    Tensor out({t, d});
    kernels::deform_attn_forward(lv, d, heads, points.data(), weights.data(), t, p, out.data());

    bool any = points.requires_grad() || weights.requires_grad();
    for (const Tensor& v : values) any = any || v.requires_grad();
    if (Tape::active() && any) {
        record(out, [values, points, weights, out, heads, d, t, p, hs, ws] {
            const double* g = out_grad(out);
            if (!g) return;
            const int levels = static_cast<int>(values.size());
            std::vector<const double*> maps(static_cast<std::size_t>(levels));
            std::vector<double*> dmaps(static_cast<std::size_t>(levels));
            std::vector<std::vector<double>> dscratch;
            for (int l = 0; l < levels; ++l) {
                const Tensor& v = values[static_cast<std::size_t>(l)];
                maps[static_cast<std::size_t>(l)] = v.data();
                if (v.requires_grad()) {
                    dmaps[static_cast<std::size_t>(l)] = v.grad_buffer().data();
                } else {
                    dscratch.emplace_back(static_cast<std::size_t>(v.numel()), 0.0);
                    dmaps[static_cast<std::size_t>(l)] = dscratch.back().data();
                }
            }
            kernels::DeformLevels lv{maps.data(), hs.data(), ws.data(), levels};
            std::vector<double> dpts_scratch, dwts_scratch;
            double* dpts;
            double* dwts;
            if (points.requires_grad()) {
                dpts = points.grad_buffer().data();
            } else {
                dpts_scratch.assign(static_cast<std::size_t>(points.numel()), 0.0);
                dpts = dpts_scratch.data();
            }
            if (weights.requires_grad()) {
                dwts = weights.grad_buffer().data();
            } else {
                dwts_scratch.assign(static_cast<std::size_t>(weights.numel()), 0.0);
                dwts = dwts_scratch.data();
            }
            kernels::deform_attn_backward(lv, d, heads, points.data(), weights.data(), t, p,
                                          g, dmaps.data(), dpts, dwts);
        });
    }
    return out;
}

// --------------------------------------------------------- serialization ---

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw TensorError("load_tensor: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw TensorError("load_tensor: truncated data");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
    os.write("RLT1", 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    for (std::int64_t i = 0, n = t.numel(); i < n; ++i) put_f64(os, t.data()[i]);
}

Tensor load_tensor(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "RLT1", 4) != 0) {
        throw TensorError("load_tensor: bad magic (expected RLT1)");
    }
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw TensorError("load_tensor: implausible rank " + std::to_string(rank));
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(get_u32(is));
    Tensor t(shape);
    for (std::int64_t i = 0, n = t.numel(); i < n; ++i) t.data()[i] = get_f64(is);
    return t;
}

}  // namespace ranklsd
