#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "refocs/tensor.hpp"

namespace refocs {
namespace ad {

// Reverse-mode tape. Each op allocates a Node holding its value, its parents
// and a closure that scatters the node's gradient into the parents. backward()
// walks the reachable subgraph in reverse creation order, which is a valid
// topological order because parents are always created before children.
//
// Graphs built from inputs with requires_grad=false carry no closures and no
// parent links, so evaluation-only forwards stay cheap.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    long id = -1;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != val.size()) grad = Tensor::zeros(val.shape());
    }
};

// Leaf holding a value; set requires_grad for parameters and anything else
// gradients must reach.
Var leaf(Tensor value, bool requires_grad);
Var constant(Tensor value);

// Runs reverse-mode accumulation from `root`, which must be scalar (numel 1).
// Gradients accumulate into node.grad for every reachable node with
// requires_grad set. Leaf grads are NOT zeroed first; callers zero parameter
// grads between steps.
void backward(const Var& root);

bool any_requires_grad(const std::vector<Var>& vars);

// Elementwise and scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var softplus(const Var& a);
Var square(const Var& a);

// Broadcast multiply by a scalar-valued Var (numel 1), e.g. a learnable
// temperature applied to a logit matrix.
Var mul_scalarvar(const Var& a, const Var& s);

// Reductions to scalar.
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// Shape ops. reshape shares no storage (copies) but grads flow through.
Var reshape(const Var& a, std::vector<int> shape);
Var slice_rows(const Var& a, int row0, int nrows);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Matrix ops over 2-D tensors.
Var matmul(const Var& a, const Var& b);                       // [m,k]x[k,n]
Var linear(const Var& x, const Var& w, const Var& b);         // x[m,k] w[n,k] b[n]
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var rowwise_sum(const Var& a);                                // [m,n] -> [m,1]
Var rowwise_div(const Var& a, const Var& d);                  // divide row i by d[i]; d [m] or [m,1]
Var gather_cols(const Var& a, const std::vector<int>& cols);  // pick a[i, cols[i]] -> [m]

// Geometry between row sets.
// cosine_matrix(a[m,d], b[n,d])[i,j] = cos(a_i, b_j), norms guarded at 1e-12.
Var cosine_matrix(const Var& a, const Var& b);
Var pairwise_l1(const Var& a, const Var& b);      // [i,j] = ||a_i - b_j||_1
Var pairwise_sqdist(const Var& a, const Var& b);  // [i,j] = ||a_i - b_j||_2^2
// rowwise_min returns [m,1] of row minima; argmin indices via out param.
Var rowwise_min(const Var& a, std::vector<int>* argmin = nullptr);

// Row-wise KL to the standard normal where `h` holds log sigma:
// out[i] = 0.5 * sum_j (mu_ij^2 + exp(2 h_ij) - 1 - 2 h_ij), shape [m,1].
Var kl_rows(const Var& mu, const Var& h);

// Row-wise sum of elementwise binary cross-entropy where `logits` are
// pre-sigmoid values and `targets` is a constant in [0,1]:
// out[i] = sum_j softplus(logits_ij) - t_ij * logits_ij
//        = sum_j BCE(sigmoid(logits_ij), t_ij), shape [m,1]. Stable for any
// logit magnitude.
Var bce_sum_rows_logits(const Var& logits, const Tensor& targets);

// Scalar mean of elementwise BCE over the whole tensor, logits version.
Var bce_mean_logits(const Var& logits, const Tensor& targets);

// Convolution stack. All 2-D spatial ops take NCHW tensors [n,c,h,w].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
// Transposed convolution with explicit output size (avoids output_padding
// ambiguity at stride > 1).
Var conv2d_transpose(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int out_h, int out_w);
Var maxpool2d(const Var& x);  // 2x2, stride 2; first max wins ties
// Instance norm: per (sample, channel) standardization over HxW, learnable
// gamma/beta per channel, eps inside the sqrt.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var clamp_min(const Var& a, double lo);

}  // namespace ad
}  // namespace refocs
