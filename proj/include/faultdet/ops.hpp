#pragma once

#include <memory>
#include <vector>

#include "faultdet/graph.hpp"

namespace faultdet {

enum class Axis {
  Horizontal,  // shift runs along the width (column) axis
  Vertical,    // shift runs along the height (row) axis
};

// ---- elementwise ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value mul_scalar_value(const Value& x, const Value& s);  // s has one element
Value relu(const Value& a);
Value gelu(const Value& a);
Value softplus(const Value& a);
Value sigmoid(const Value& a);
Value exp_value(const Value& a);

// ---- reductions ----
Value sum(const Value& a);
Value mean(const Value& a);

// ---- 2-D linear algebra (matrices are (rows, cols)) ----
Value matmul(const Value& a, const Value& b);
Value transpose2d(const Value& a);
Value add_row_bias(const Value& x, const Value& b);
Value linear(const Value& x, const Value& w, const Value& b);  // x(N,K) w(K,M) b(M)
Value softmax_rows(const Value& x);
Value slice_cols(const Value& x, int c0, int len);
Value concat_cols(const std::vector<Value>& xs);
Value concat_rows(const std::vector<Value>& xs);

// ---- feature maps, layout (C,H,W) ----
Value conv2d(const Value& x, const Value& w, const Value& b);  // w(Co,Ci,k,k), odd k, stride 1, same pad
Value layer_norm_chan(const Value& x, const Value& gain, const Value& bias, double eps = 1e-5);
Value layer_norm_rows(const Value& x, const Value& gain, const Value& bias, double eps = 1e-5);
Value upsample_nearest2x(const Value& x);

// Per-channel spatial translation with zero fill. Channel c moves by
// offset(c) = floor(c / ceil(C/s)) - floor(s/2) * d along the chosen axis
// (gather indexing: out[.., p] = in[.., p + offset]).
Value axial_shift_gather(const Value& x, int shift_size, int dilation, Axis axis);
int axial_offset(int channel, int channels, int shift_size, int dilation);

// Pure element permutation: out.data[i] = in.data[(*index)[i]]. The index must
// be a bijection over the input elements.
Value permute_elements(const Value& x, const Shape& out_shape,
                       std::shared_ptr<const std::vector<std::int64_t>> index);
Value reshape(const Value& x, const Shape& s);
Value detach(const Value& x);

// Masked mean pooling: cells[r] holds flat spatial indices (i*W+j) of the
// active cells of mask r; returns (R, C) row per mask.
Value mask_pool(const Value& x, std::shared_ptr<const std::vector<std::vector<std::int64_t>>> cells);

// Paints row vectors onto a map: out[c,i,j] = rows[placement[i*W+j], c].
Value scatter_rows(const Value& rows, std::shared_ptr<const std::vector<int>> placement, int h, int w);

// ---- losses ----
Value focal_loss_sum(const Value& logits, std::shared_ptr<const Tensor> targets, double alpha,
                     double gamma);
Value bce_logits_sum(const Value& logits, std::shared_ptr<const Tensor> targets,
                     std::shared_ptr<const Tensor> mask);
// Pointwise box-regression loss: -log IoU summed over mask-positive
// locations; ltrb and targets are (4,H,W) positive side distances.
Value iou_loss_sum(const Value& ltrb, std::shared_ptr<const Tensor> target_ltrb,
                   std::shared_ptr<const Tensor> pos_mask);
// KL(teacher || softmax(student/tau)), optionally scaled by tau^2. The
// teacher distribution is a constant here; gradients reach the student only.
Value kl_divergence_to(const Value& student_logits, std::shared_ptr<const Tensor> teacher_probs,
                       double tau, bool tau_squared);

// Stable softened distribution over tau-divided logits of the whole tensor.
Tensor softened_distribution(const Tensor& logits, double tau);

}  // namespace faultdet
