#pragma once

#include <span>
#include <vector>

#include "stica/augment.hpp"
#include "stica/tensor.hpp"

namespace stica {

struct LossWeights {
  double lambda_vv = 1.0, lambda_va = 1.0;
  // Extra directions used only by modality_mixed_loss baselines.
  double lambda_av = 0.0, lambda_aa = 0.0;
  double tau_cross = 0.1, tau_within = 0.5;
  // Divide the within-modal sum by its number of directed terms.
  bool normalize_within = true;

  void validate() const;
};

// Cosine of the angle between two non-zero vectors, clamped to [-1, 1].
double cosine_sim(std::span<const double> a, std::span<const double> b);

// Rows scaled to unit length; a zero row is rejected.
Tensor normalize_rows(const Tensor& z);

// −(1/N) Σ_i log softmax_j(sim(a_i, b_j)/τ)[i] for N×d batches. Not
// symmetric in its arguments.
Tensor nce_loss(const Tensor& za, const Tensor& zb, double tau);
// Same, for rows already scaled to unit length.
Tensor nce_loss_normalized(const Tensor& za, const Tensor& zb, double tau);

// One directed term: anchor view → positive view. Views are numbered
// 0..m+n-1 within their set, medium crops first.
struct DirectedPair {
  int anchor_set = 1;
  std::size_t anchor = 0;
  int positive_set = 2;
  std::size_t positive = 0;
  bool operator==(const DirectedPair&) const = default;
};

// All cross-set pairs of non-large views except small×small, both
// directions: 2((m+n)² − n²) terms.
std::vector<DirectedPair> enumerate_crop_pairs(std::size_t m, std::size_t n);

struct WithinModalResult {
  Tensor loss;
  std::size_t terms = 0;
  bool empty = false;  // no pairs; loss is 0
};

WithinModalResult within_modal_loss(const ViewSet& v1, const ViewSet& v2, double tau, bool normalize = true);

// L(v_L1, a) + L(v_L2, a) + L(a, v_L1) + L(a, v_L2).
Tensor cross_modal_loss(const Tensor& zl1, const Tensor& zl2, const Tensor& za, double tau);

// λ_vv L(v1,v2) + λ_va L(v,a) + λ_av L(a,v) + λ_aa L(a1,a2), with v = v1
// and a = a1; same-modality pairs use tau_within, cross pairs tau_cross.
// Terms with zero weight are skipped.
Tensor modality_mixed_loss(const Tensor& v1, const Tensor& v2, const Tensor& a1, const Tensor& a2, const LossWeights& w);

Tensor total_loss(const Tensor& l_vv, const Tensor& l_va, const LossWeights& w);

// L(v_L1, v_L2) + L(v_L2, v_L1) + L(v_L1, v_S) + L(v_L2, v_S), with the
// small crop taken in input space.
Tensor multicrop_baseline_loss(const Tensor& zl1, const Tensor& zl2, const Tensor& zs, double tau);

}  // namespace stica
