#pragma once

#include <cstdint>

// Dense numeric kernels behind the tensor ops. Every kernel here is
// OpenMP-parallel; ranklsd::kernels::ref holds serial reference versions used
// by the tests (bitwise comparison) and by the benchmark tool.
//
// Determinism contract: each output element accumulates its terms in a fixed
// serial order, and parallel loops only split work across disjoint outputs
// (or disjoint channels for the scatter kernels). Results are therefore
// bitwise identical for any thread count, and identical to the reference.

namespace ranklsd::kernels {

enum class PadMode { Zero, Replicate };

// C[M,N] = A[M,K] * B[K,N], optionally accumulating into C.
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
// C[M,K] += A[M,N] * B[K,N]^T   (backward wrt left operand)
void matmul_nt(const double* a, const double* b, double* c, int m, int n, int k, bool accumulate);
// C[K,N] += A[M,K]^T * B[M,N]   (backward wrt right operand)
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

// out[F,OH,OW] = conv(in[C,H,W], w[F,C,KH,KW]) + b[F]; b may be null.
void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    int c, int h, int wd, int f, int kh, int kw, int stride, int pad,
                    PadMode mode);
void conv2d_backward_input(const double* dout, const double* w, double* din, int c, int h,
                           int wd, int f, int kh, int kw, int stride, int pad, PadMode mode);
void conv2d_backward_weight(const double* dout, const double* in, double* dw, int c, int h,
                            int wd, int f, int kh, int kw, int stride, int pad, PadMode mode);
void conv2d_backward_bias(const double* dout, double* db, int f, int oh, int ow);

// Bilinear interpolation of a [C,H,W] map at N continuous pixel points
// (x, y), clamp-to-edge. out is [N,C].
void bilinear_forward(const double* map, int c, int h, int w, const double* pts, int n,
                      double* out);
void bilinear_backward_map(const double* dout, int c, int h, int w, const double* pts, int n,
                           double* dmap);
void bilinear_backward_points(const double* dout, const double* map, int c, int h, int w,
                              const double* pts, int n, double* dpts);

// Multi-scale deformable attention aggregation. For each of T query tokens,
// P = heads * levels * K samples are drawn; sample p of token t targets level
// lvl(p) at normalized point pts[t,p] with scalar weight wts[t,p], and
// contributes to the channel slice of its head. Layout of the sample axis:
// p = (head * levels + level) * K + k. out is [T, D].
struct DeformLevels {
    const double* const* value_maps;  // levels pointers, each [D, H_l, W_l]
    const int* heights;
    const int* widths;
    int count;
};
void deform_attn_forward(const DeformLevels& lv, int d, int heads, const double* pts,
                         const double* wts, int t, int p, double* out);
void deform_attn_backward(const DeformLevels& lv, int d, int heads, const double* pts,
                          const double* wts, int t, int p, const double* dout,
                          double* const* dvalue_maps, double* dpts, double* dwts);

// Row-wise softmax / layer norm over [R,C].
void softmax_rows(const double* x, double* y, int r, int c);
void softmax_rows_backward(const double* y, const double* dy, double* dx, int r, int c);
void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* inv_std, double* xhat, int r, int c, double eps);
void layer_norm_rows_backward(const double* dy, const double* gamma, const double* xhat,
                              const double* inv_std, double* dx, double* dgamma, double* dbeta,
                              int r, int c);

// Serial reference implementations (tests, benchmark baseline).
namespace ref {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void conv2d_forward(const double* in, const double* w, const double* b, double* out,
                    int c, int h, int wd, int f, int kh, int kw, int stride, int pad,
                    PadMode mode);
void conv2d_backward_input(const double* dout, const double* w, double* din, int c, int h,
                           int wd, int f, int kh, int kw, int stride, int pad, PadMode mode);
void conv2d_backward_weight(const double* dout, const double* in, double* dw, int c, int h,
                            int wd, int f, int kh, int kw, int stride, int pad, PadMode mode);
void bilinear_forward(const double* map, int c, int h, int w, const double* pts, int n,
                      double* out);
void deform_attn_forward(const DeformLevels& lv, int d, int heads, const double* pts,
                         const double* wts, int t, int p, double* out);
void softmax_rows(const double* x, double* y, int r, int c);
}  // namespace ref

}  // namespace ranklsd::kernels
