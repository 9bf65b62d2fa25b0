#pragma once

#include "voxa/ops.hpp"

namespace voxa {

// Mean negative log-softmax probability of the target ids over valid
// positions. logits [P,V]; valid[p] == 0 marks padding, excluded from the mean.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& valid) {
    const auto& lv = logits.val();
    if (lv.ndim() != 2) throw ShapeError("cross_entropy: logits must be [P,V]");
    const int P = lv.dim(0), V = lv.dim(1);
    if (int(targets.size()) != P || int(valid.size()) != P)
        throw ShapeError("cross_entropy: target/mask length mismatch");
    std::int64_t m = 0;
    for (auto u : valid) m += u ? 1 : 0;
    if (m == 0) throw ShapeError("cross_entropy: no valid positions");
    for (int p = 0; p < P; ++p)
        if (valid[std::size_t(p)] && (targets[std::size_t(p)] < 0 || targets[std::size_t(p)] >= V))
            throw ShapeError("cross_entropy: target id out of range");

    // softmax probabilities saved for the backward pass
    auto probs = std::make_shared<NdArray<T>>(lv.shape);
    T loss = 0;
    for (int p = 0; p < P; ++p) {
        const T* row = lv.v.data() + std::int64_t(p) * V;
        T* pr = probs->v.data() + std::int64_t(p) * V;
        T mx = row[0];
        for (int vj = 1; vj < V; ++vj) mx = std::max(mx, row[vj]);
        T z = 0;
        for (int vj = 0; vj < V; ++vj) {
            pr[vj] = std::exp(row[vj] - mx);
            z += pr[vj];
        }
        for (int vj = 0; vj < V; ++vj) pr[vj] /= z;
        if (valid[std::size_t(p)])
            loss += std::log(z) + mx - row[targets[std::size_t(p)]];
    }
    loss /= T(m);

    NdArray<T> out = NdArray<T>::scalar(loss);
    Tape<T>* tp = detail::tape_of<T>({&logits});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&logits},
                      [probs, targets, valid, P, V, m](const NdArray<T>& g,
                                                       const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          const T go = g.v[0] / T(m);
                          for (int p = 0; p < P; ++p) {
                              if (!valid[std::size_t(p)]) continue;
                              const T* pr = probs->v.data() + std::int64_t(p) * V;
                              T* gl = pg[0]->v.data() + std::int64_t(p) * V;
                              for (int vj = 0; vj < V; ++vj) gl[vj] += go * pr[vj];
                              gl[targets[std::size_t(p)]] -= go;
                          }
                      });
}

// 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps). target is constant.
template <class T>
Tensor<T> soft_dice_loss(const Tensor<T>& pred, const NdArray<T>& target, T eps = T(1e-6)) {
    const auto& pv = pred.val();
    check_same_shape(pv, target, "soft_dice_loss");

    T spt = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < pv.v.size(); ++i) {
        spt += pv.v[i] * target.v[i];
        sp += pv.v[i];
        st += target.v[i];
    }
    const T denom = sp + st + eps;
    const T loss = T(1) - (T(2) * spt + eps) / denom;

    NdArray<T> out = NdArray<T>::scalar(loss);
    Tape<T>* tp = detail::tape_of<T>({&pred});
    if (!tp) return Tensor<T>(std::move(out));
    auto tgt = std::make_shared<NdArray<T>>(target);
    return tp->record(std::move(out), {&pred},
                      [tgt, spt, denom, eps](const NdArray<T>& g,
                                             const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          const T num = T(2) * spt + eps;
                          const T d2 = denom * denom;
                          for (std::size_t i = 0; i < tgt->v.size(); ++i)
                              pg[0]->v[i] += g.v[0] * (num - T(2) * tgt->v[i] * denom) / d2;
                      });
}

}  // namespace voxa
