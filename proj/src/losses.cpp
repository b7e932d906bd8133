/* Copyright 2026 The CDD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cdd/losses.hpp"

#include "cdd/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cdd::losses {

using ad::Node;
using ad::Var;

namespace {

struct LabelLayout {
    std::size_t batch;
    std::size_t pixels_per_item;
    std::size_t classes;
};

template <typename T>
LabelLayout check_labels(const Var<T>& probs, std::span<const std::uint8_t> target, const char* op)
{
    const Shape& s = probs.shape();
    if (s.size() < 2) throw std::invalid_argument(std::string(op) + ": probabilities need a class axis");
    const auto k = static_cast<std::size_t>(s.back());
    const std::size_t rows = probs.value().numel() / k;
    if (target.size() != rows) {
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(target.size()) + " labels for " +
                                    std::to_string(rows) + " pixels");
    }
    for (std::uint8_t label : target) {
        if (label >= k) {
            throw std::invalid_argument(std::string(op) + ": label " + std::to_string(label) + " >= class count " +
                                        std::to_string(k));
        }
    }
    const auto batch = static_cast<std::size_t>(s.front());
    return {batch, rows / batch, k};
}

}  // namespace

void LossWeights::validate() const
{
    if (!(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0 && lambda4 >= 0)) {
        throw std::invalid_argument("loss weights must be nonnegative");
    }
    if (!(tau > 0)) throw std::invalid_argument("contrastive temperature tau must be > 0");
}

template <typename T>
Var<T> dice_loss(const Var<T>& probs, std::span<const std::uint8_t> target)
{
    const LabelLayout lay = check_labels(probs, target, "dice_loss");
    const Tensor<T>& p = probs.value();
    const std::size_t cells = lay.batch * lay.classes;
    // Per (item, class): intersection and denominator sums.
    auto inter = std::make_shared<std::vector<double>>(cells, 0.0);
    auto denom = std::make_shared<std::vector<double>>(cells, 0.0);
    for (std::size_t b = 0; b < lay.batch; ++b) {
        for (std::size_t q = 0; q < lay.pixels_per_item; ++q) {
            const std::size_t row = b * lay.pixels_per_item + q;
            const T* pr = p.data() + row * lay.classes;
            for (std::size_t c = 0; c < lay.classes; ++c) (*denom)[b * lay.classes + c] += pr[c];
            (*inter)[b * lay.classes + target[row]] += pr[target[row]];
            (*denom)[b * lay.classes + target[row]] += 1.0;
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < cells; ++i) acc += (2.0 * (*inter)[i] + kDiceSmooth) / ((*denom)[i] + kDiceSmooth);
    const double loss = 1.0 - acc / static_cast<double>(cells);

    std::vector<std::uint8_t> labels(target.begin(), target.end());
    return ad::make_result<T>(Tensor<T>({1}, static_cast<T>(loss)), {probs},
                              [inter, denom, lay, labels = std::move(labels)](Node<T>& self) {
                                  Node<T>* in = self.inputs[0].get();
                                  T* g = in->grad_buffer();
                                  const double scale =
                                      -static_cast<double>(self.grad[0]) / static_cast<double>(lay.batch * lay.classes);
                                  for (std::size_t b = 0; b < lay.batch; ++b) {
                                      for (std::size_t q = 0; q < lay.pixels_per_item; ++q) {
                                          const std::size_t row = b * lay.pixels_per_item + q;
                                          for (std::size_t c = 0; c < lay.classes; ++c) {
                                              const std::size_t cell = b * lay.classes + c;
                                              const double d = (*denom)[cell] + kDiceSmooth;
                                              const double y = labels[row] == c ? 1.0 : 0.0;
                                              const double dterm = (2.0 * y * d - (2.0 * (*inter)[cell] + kDiceSmooth)) / (d * d);
                                              g[row * lay.classes + c] += static_cast<T>(scale * dterm);
                                          }
                                      }
                                  }
                              });
}

template <typename T>
Var<T> cross_entropy_loss(const Var<T>& probs, std::span<const std::uint8_t> target)
{
    const LabelLayout lay = check_labels(probs, target, "cross_entropy_loss");
    const Tensor<T>& p = probs.value();
    const std::size_t rows = target.size();
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        acc -= std::log(std::max(static_cast<double>(p[r * lay.classes + target[r]]), kLogFloor));
    }
    std::vector<std::uint8_t> labels(target.begin(), target.end());
    return ad::make_result<T>(Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(rows))), {probs},
                              [lay, labels = std::move(labels)](Node<T>& self) {
                                  Node<T>* in = self.inputs[0].get();
                                  T* g = in->grad_buffer();
                                  const double scale = static_cast<double>(self.grad[0]) / static_cast<double>(labels.size());
                                  for (std::size_t r = 0; r < labels.size(); ++r) {
                                      const std::size_t idx = r * lay.classes + labels[r];
                                      const double pv = in->value[idx];
                                      if (pv > kLogFloor) g[idx] += static_cast<T>(-scale / pv);
                                  }
                              });
}

template <typename T>
Var<T> segmentation_loss(const Var<T>& probs, std::span<const std::uint8_t> target)
{
    return ad::scale(ad::add(dice_loss(probs, target), cross_entropy_loss(probs, target)), T(0.5));
}

template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b)
{
    if (a.shape() != b.shape()) {
        throw std::invalid_argument("mean_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const std::size_t n = a.value().numel();
    if (n == 0) throw std::invalid_argument("mean_abs_diff: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
    return ad::make_result<T>(Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(n))), {a, b},
                              [n](Node<T>& self) {
                                  const Tensor<T>& va = self.inputs[0]->value;
                                  const Tensor<T>& vb = self.inputs[1]->value;
                                  const T s = self.grad[0] / static_cast<T>(n);
                                  Node<T>* ga = self.inputs[0]->requires_grad ? self.inputs[0].get() : nullptr;
                                  Node<T>* gb = self.inputs[1]->requires_grad ? self.inputs[1].get() : nullptr;
                                  T* pa = ga ? ga->grad_buffer() : nullptr;
                                  T* pb = gb ? gb->grad_buffer() : nullptr;
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const T d = va[i] - vb[i];
                                      const T sign = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                                      if (pa) pa[i] += s * sign;
                                      if (pb) pb[i] -= s * sign;
                                  }
                              });
}

template <typename T>
Var<T> kl_loss(const Var<T>& mean, const Var<T>& logvar)
{
    if (mean.shape() != logvar.shape() || mean.shape().size() != 2) {
        throw std::invalid_argument("kl_loss: mean and logvar must both be B x Z");
    }
    const std::size_t n = mean.value().numel();
    const auto batch = static_cast<std::size_t>(mean.dim(0));
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = mean.value()[i];
        const double lv = logvar.value()[i];
        if (!std::isfinite(m) || !std::isfinite(lv)) throw DivergenceError("kl_loss: non-finite input");
        acc += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
    }
    return ad::make_result<T>(Tensor<T>({1}, static_cast<T>(acc / static_cast<double>(batch))), {mean, logvar},
                              [n, batch](Node<T>& self) {
                                  const T s = self.grad[0] / static_cast<T>(batch);
                                  if (self.inputs[0]->requires_grad) {
                                      T* g = self.inputs[0]->grad_buffer();
                                      const Tensor<T>& m = self.inputs[0]->value;
                                      for (std::size_t i = 0; i < n; ++i) g[i] += s * m[i];
                                  }
                                  if (self.inputs[1]->requires_grad) {
                                      T* g = self.inputs[1]->grad_buffer();
                                      const Tensor<T>& lv = self.inputs[1]->value;
                                      for (std::size_t i = 0; i < n; ++i) g[i] += s * T(0.5) * (std::exp(lv[i]) - T(1));
                                  }
                              });
}

template <typename T>
Var<T> style_contrastive_loss(const std::vector<Var<T>>& codes, double tau,
                              const std::vector<std::vector<int>>& permutations)
{
    if (!(tau > 0)) throw std::invalid_argument("style_contrastive_loss: tau must be > 0");
    const std::size_t k = codes.size();
    if (k < 2) throw std::invalid_argument("style_contrastive_loss: needs at least two domains, got " + std::to_string(k));
    const Shape& s0 = codes.front().shape();
    if (s0.size() != 2) throw std::invalid_argument("style_contrastive_loss: codes must be b x Z");
    const int b = s0[0];
    const int z = s0[1];
    if (b < 2) throw std::invalid_argument("style_contrastive_loss: mini-batch size must be >= 2");
    for (const auto& c : codes) {
        if (c.shape() != s0) throw std::invalid_argument("style_contrastive_loss: all domains need equal b x Z batches");
    }
    if (permutations.size() != k) throw std::invalid_argument("style_contrastive_loss: one permutation per domain required");
    for (const auto& p : permutations) {
        std::vector<bool> seen(static_cast<std::size_t>(b), false);
        if (p.size() != static_cast<std::size_t>(b)) throw std::invalid_argument("style_contrastive_loss: bad permutation size");
        for (int v : p) {
            if (v < 0 || v >= b || seen[v]) throw std::invalid_argument("style_contrastive_loss: not a permutation");
            seen[v] = true;
        }
    }

    auto row = [&](std::size_t d, int i) { return codes[d].value().data() + static_cast<std::size_t>(i) * z; };
    auto norm = [z](const T* u) {
        double acc = 0.0;
        for (int j = 0; j < z; ++j) acc += static_cast<double>(u[j]) * u[j];
        return std::sqrt(acc);
    };

    // Each term of the loss is a weighted cosine similarity between two rows.
    struct Pair {
        std::size_t da, db;
        int ia, ib;
        double coeff;  // dL/d(similarity)
    };
    auto pairs = std::make_shared<std::vector<Pair>>();
    const double inv_count = 1.0 / static_cast<double>(k * static_cast<std::size_t>(b));
    double loss = 0.0;
    std::vector<double> sims(k), weights(k);
    for (std::size_t d = 0; d < k; ++d) {
        for (int i = 0; i < b; ++i) {
            // Slot d holds the positive; the other slots hold the negatives.
            const T* u = row(d, i);
            const double nu = norm(u);
            for (std::size_t e = 0; e < k; ++e) {
                const T* v = e == d ? row(d, permutations[d][i]) : row(e, i);
                double dot = 0.0;
                for (int j = 0; j < z; ++j) dot += static_cast<double>(u[j]) * v[j];
                sims[e] = dot / std::max(nu * norm(v), kCosineFloor);
            }
            double mx = sims[0] / tau;
            for (double sv : sims) mx = std::max(mx, sv / tau);
            double partition = 0.0;
            for (std::size_t e = 0; e < k; ++e) partition += std::exp(sims[e] / tau - mx);
            loss += (mx + std::log(partition) - sims[d] / tau) * inv_count;
            for (std::size_t e = 0; e < k; ++e) {
                const double sigma = std::exp(sims[e] / tau - mx) / partition;
                const double coeff = (sigma - (e == d ? 1.0 : 0.0)) / tau * inv_count;
                pairs->push_back({d, e, i, e == d ? permutations[d][i] : i, coeff});
            }
        }
    }

    return ad::make_result<T>(Tensor<T>({1}, static_cast<T>(loss)), codes, [pairs, z](Node<T>& self) {
        const double upstream = self.grad[0];
        auto add_grad = [&](std::size_t d, int i, const T* u, const T* v, double nu, double nv, double s, double c) {
            if (!self.inputs[d]->requires_grad) return;
            T* g = self.inputs[d]->grad_buffer() + static_cast<std::size_t>(i) * z;
            const double denom = nu * nv;
            if (denom > kCosineFloor) {
                for (int j = 0; j < z; ++j) g[j] += static_cast<T>(c * (v[j] / denom - s * u[j] / (nu * nu)));
            } else {
                for (int j = 0; j < z; ++j) g[j] += static_cast<T>(c * v[j] / kCosineFloor);
            }
        };
        for (const Pair& p : *pairs) {
            const T* u = self.inputs[p.da]->value.data() + static_cast<std::size_t>(p.ia) * z;
            const T* v = self.inputs[p.db]->value.data() + static_cast<std::size_t>(p.ib) * z;
            double nu = 0.0, nv = 0.0, dot = 0.0;
            for (int j = 0; j < z; ++j) {
                nu += static_cast<double>(u[j]) * u[j];
                nv += static_cast<double>(v[j]) * v[j];
                dot += static_cast<double>(u[j]) * v[j];
            }
            nu = std::sqrt(nu);
            nv = std::sqrt(nv);
            const double s = dot / std::max(nu * nv, kCosineFloor);
            const double c = upstream * p.coeff;
            add_grad(p.da, p.ia, u, v, nu, nv, s, c);
            add_grad(p.db, p.ib, v, u, nv, nu, s, c);
        }
    });
}

template <typename T>
Var<T> style_contrastive_loss(const std::vector<Var<T>>& codes, double tau, Rng& rng)
{
    if (codes.empty() || codes.front().shape().empty()) {
        throw std::invalid_argument("style_contrastive_loss: needs at least two domains");
    }
    std::vector<std::vector<int>> perms;
    perms.reserve(codes.size());
    for (std::size_t d = 0; d < codes.size(); ++d) perms.push_back(rng.permutation(codes.front().dim(0)));
    return style_contrastive_loss(codes, tau, perms);
}

double total_loss(const LossReport& parts, const LossWeights& weights)
{
    const std::pair<const char*, double> named[] = {
        {"seg", parts.seg}, {"rec", parts.rec}, {"kl", parts.kl}, {"sct", parts.sct}, {"dis", parts.dis}};
    for (const auto& [name, value] : named) {
        if (!std::isfinite(value)) throw DivergenceError(std::string("non-finite loss term: ") + name);
    }
    return parts.seg + weights.lambda1 * parts.rec + weights.lambda2 * parts.kl + weights.lambda3 * parts.sct +
           weights.lambda4 * parts.dis;
}

template <typename T>
Var<T> weighted_total(const Var<T>& seg, const Var<T>& rec, const Var<T>& kl, const Var<T>& sct, const Var<T>& dis,
                      const LossWeights& weights)
{
    if (!seg.defined()) throw std::invalid_argument("weighted_total: segmentation term is required");
    Var<T> total = seg;
    const std::pair<const Var<T>*, double> terms[] = {
        {&rec, weights.lambda1}, {&kl, weights.lambda2}, {&sct, weights.lambda3}, {&dis, weights.lambda4}};
    for (const auto& [term, w] : terms) {
        if (term->defined()) total = ad::add(total, ad::scale(*term, static_cast<T>(w)));
    }
    return total;
}

#define CDD_INSTANTIATE_LOSSES(T)                                                                                \
    template Var<T> dice_loss(const Var<T>&, std::span<const std::uint8_t>);                                     \
    template Var<T> cross_entropy_loss(const Var<T>&, std::span<const std::uint8_t>);                            \
    template Var<T> segmentation_loss(const Var<T>&, std::span<const std::uint8_t>);                             \
    template Var<T> mean_abs_diff(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> kl_loss(const Var<T>&, const Var<T>&);                                                       \
    template Var<T> style_contrastive_loss(const std::vector<Var<T>>&, double, const std::vector<std::vector<int>>&); \
    template Var<T> style_contrastive_loss(const std::vector<Var<T>>&, double, Rng&);                            \
    template Var<T> weighted_total(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,    \
                                   const LossWeights&);

CDD_INSTANTIATE_LOSSES(float)
CDD_INSTANTIATE_LOSSES(double)

}  // namespace cdd::losses
