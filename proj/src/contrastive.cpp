#include "stica/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "stica/ops.hpp"

namespace stica {

void LossWeights::validate() const {
  if (lambda_vv < 0.0 || lambda_va < 0.0 || lambda_av < 0.0 || lambda_aa < 0.0)
    throw ConfigError("loss weights must be non-negative");
  if (!(tau_cross > 0.0) || !(tau_within > 0.0)) throw ConfigError("loss temperatures must be positive");
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("cosine_sim: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()) + " differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_sim: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Tensor normalize_rows(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("normalize_rows: expected N×d, got " + to_string(z.shape()));
  const std::size_t n = z.size(0), d = z.size(1);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = z.values()[i * d + j];
      if (!std::isfinite(v)) throw NumericError("embedding row " + std::to_string(i) + " is not finite");
      sq += v * v;
    }
    if (sq == 0.0) throw NumericError("embedding row " + std::to_string(i) + " is the zero vector");
  }
  return z / pow(sum(z * z, 1, true), 0.5);
}

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("nce_loss: temperature must be positive, got " + std::to_string(tau));
}

void check_pair(const Tensor& za, const Tensor& zb, const char* op) {
  if (za.rank() != 2 || za.shape() != zb.shape() || za.size(0) == 0)
    throw ShapeError(std::string(op) + ": batches " + to_string(za.shape()) + " and " + to_string(zb.shape()) +
                     " must be equal N×d");
}

}  // namespace

Tensor nce_loss_normalized(const Tensor& za, const Tensor& zb, double tau) {
  check_tau(tau);
  check_pair(za, zb, "nce_loss");
  const std::size_t n = za.size(0);
  const Tensor logits = mul_scalar(matmul(za, transpose(zb, 0, 1)), 1.0 / tau);
  std::vector<double> eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  return mul_scalar(sum_all(log_softmax(logits, 1) * Tensor({n, n}, std::move(eye))), -1.0 / static_cast<double>(n));
}

Tensor nce_loss(const Tensor& za, const Tensor& zb, double tau) {
  check_tau(tau);
  check_pair(za, zb, "nce_loss");
  return nce_loss_normalized(normalize_rows(za), normalize_rows(zb), tau);
}

std::vector<DirectedPair> enumerate_crop_pairs(std::size_t m, std::size_t n) {
  std::vector<DirectedPair> pairs;
  const std::size_t k = m + n;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (i >= m && j >= m) continue;
      pairs.push_back({1, i, 2, j});
      pairs.push_back({2, j, 1, i});
    }
  return pairs;
}

WithinModalResult within_modal_loss(const ViewSet& v1, const ViewSet& v2, double tau, bool normalize) {
  check_tau(tau);
  const std::size_t m = v1.count(ViewSize::Medium), n = v1.count(ViewSize::Small);
  if (v2.count(ViewSize::Medium) != m || v2.count(ViewSize::Small) != n)
    throw ShapeError("within_modal_loss: view sets hold different crop counts");
  auto crops = [](const ViewSet& set) {
    std::vector<Tensor> out;
    for (const auto& v : set.views)
      if (v.size == ViewSize::Medium) out.push_back(normalize_rows(v.embedding));
    for (const auto& v : set.views)
      if (v.size == ViewSize::Small) out.push_back(normalize_rows(v.embedding));
    return out;
  };
  const auto c1 = crops(v1), c2 = crops(v2);
  const auto pairs = enumerate_crop_pairs(m, n);
  WithinModalResult r;
  r.terms = pairs.size();
  if (pairs.empty()) {
    r.empty = true;
    r.loss = Tensor::scalar(0.0);
    return r;
  }
  Tensor acc;
  for (const auto& p : pairs) {
    const Tensor& a = p.anchor_set == 1 ? c1[p.anchor] : c2[p.anchor];
    const Tensor& b = p.positive_set == 1 ? c1[p.positive] : c2[p.positive];
    const Tensor term = nce_loss_normalized(a, b, tau);
    acc = acc.defined() ? acc + term : term;
  }
  r.loss = normalize ? mul_scalar(acc, 1.0 / static_cast<double>(pairs.size())) : acc;
  return r;
}

Tensor cross_modal_loss(const Tensor& zl1, const Tensor& zl2, const Tensor& za, double tau) {
  check_pair(zl1, zl2, "cross_modal_loss");
  check_pair(zl1, za, "cross_modal_loss");
  const Tensor l1 = normalize_rows(zl1), l2 = normalize_rows(zl2), a = normalize_rows(za);
  return nce_loss_normalized(l1, a, tau) + nce_loss_normalized(l2, a, tau) + nce_loss_normalized(a, l1, tau) +
         nce_loss_normalized(a, l2, tau);
}

Tensor total_loss(const Tensor& l_vv, const Tensor& l_va, const LossWeights& w) {
  w.validate();
  return mul_scalar(l_vv, w.lambda_vv) + mul_scalar(l_va, w.lambda_va);
}

Tensor modality_mixed_loss(const Tensor& v1, const Tensor& v2, const Tensor& a1, const Tensor& a2, const LossWeights& w) {
  w.validate();
  check_pair(v1, v2, "modality_mixed_loss");
  check_pair(v1, a1, "modality_mixed_loss");
  check_pair(a1, a2, "modality_mixed_loss");
  const Tensor nv1 = normalize_rows(v1), na1 = normalize_rows(a1);
  Tensor out = Tensor::scalar(0.0);
  if (w.lambda_vv > 0.0) out = out + mul_scalar(nce_loss_normalized(nv1, normalize_rows(v2), w.tau_within), w.lambda_vv);
  if (w.lambda_va > 0.0) out = out + mul_scalar(nce_loss_normalized(nv1, na1, w.tau_cross), w.lambda_va);
  if (w.lambda_av > 0.0) out = out + mul_scalar(nce_loss_normalized(na1, nv1, w.tau_cross), w.lambda_av);
  if (w.lambda_aa > 0.0) out = out + mul_scalar(nce_loss_normalized(na1, normalize_rows(a2), w.tau_within), w.lambda_aa);
  return out;
}

Tensor multicrop_baseline_loss(const Tensor& zl1, const Tensor& zl2, const Tensor& zs, double tau) {
  check_pair(zl1, zl2, "multicrop_baseline_loss");
  check_pair(zl1, zs, "multicrop_baseline_loss");
  const Tensor l1 = normalize_rows(zl1), l2 = normalize_rows(zl2), s = normalize_rows(zs);
  return nce_loss_normalized(l1, l2, tau) + nce_loss_normalized(l2, l1, tau) + nce_loss_normalized(l1, s, tau) +
         nce_loss_normalized(l2, s, tau);
}

}  // namespace stica
