#pragma once

#include <algorithm>
#include <cmath>

#include "voxa/tape.hpp"

// Differentiable op library. Every op computes its forward value eagerly and,
// when an input is tape-tracked, records a backward closure. Ops called on
// untracked tensors return plain values, so the same code serves training and
// inference.

namespace voxa {

namespace detail {

template <class T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> ins) {
    for (const Tensor<T>* t : ins)
        if (t->on_tape()) return t->tape();
    return nullptr;
}

}  // namespace detail

// --- elementwise ------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.val(), b.val(), "add");
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.val().v[i] + b.val().v[i];
    Tape<T>* tp = detail::tape_of<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a, &b},
                      [](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          for (int p = 0; p < 2; ++p)
                              if (pg[std::size_t(p)])
                                  for (std::size_t i = 0; i < g.v.size(); ++i)
                                      pg[std::size_t(p)]->v[i] += g.v[i];
                      });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.val(), b.val(), "sub");
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.val().v[i] - b.val().v[i];
    Tape<T>* tp = detail::tape_of<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a, &b},
                      [](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i) pg[0]->v[i] += g.v[i];
                          if (pg[1])
                              for (std::size_t i = 0; i < g.v.size(); ++i) pg[1]->v[i] -= g.v[i];
                      });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.val(), b.val(), "mul");
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.val().v[i] * b.val().v[i];
    Tape<T>* tp = detail::tape_of<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a, &b},
                      [av = a.ptr(), bv = b.ptr()](const NdArray<T>& g,
                                                   const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i)
                                  pg[0]->v[i] += g.v[i] * bv->v[i];
                          if (pg[1])
                              for (std::size_t i = 0; i < g.v.size(); ++i)
                                  pg[1]->v[i] += g.v[i] * av->v[i];
                      });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.val().v[i] * c;
    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a},
                      [c](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i)
                                  pg[0]->v[i] += g.v[i] * c;
                      });
}

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary_ew(const Tensor<T>& a, F f, DF df) {
    NdArray<T> out(a.shape());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(a.val().v[i]);
    Tape<T>* tp = tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a},
                      [av = a.ptr(), df](const NdArray<T>& g,
                                         const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i)
                                  pg[0]->v[i] += g.v[i] * df(av->v[i]);
                      });
}

template <class T>
T sigmoid_val(T x) {
    return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_ew(
        a, [](T x) { return detail::sigmoid_val(x); },
        [](T x) {
            const T s = detail::sigmoid_val(x);
            return s * (T(1) - s);
        });
}

// silu(x) = x * sigmoid(x)
template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    return detail::unary_ew(
        a, [](T x) { return x * detail::sigmoid_val(x); },
        [](T x) {
            const T s = detail::sigmoid_val(x);
            return s * (T(1) + x * (T(1) - s));
        });
}

// --- shape plumbing ---------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
    NdArray<T> out = NdArray<T>::from(std::move(shape), a.val().v);
    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a},
                      [](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i) pg[0]->v[i] += g.v[i];
                      });
}

namespace detail {

template <class T>
NdArray<T> permute_nd(const NdArray<T>& a, const std::vector<int>& perm) {
    const int nd = a.ndim();
    std::vector<int> nshape(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) nshape[std::size_t(i)] = a.shape[std::size_t(perm[std::size_t(i)])];
    NdArray<T> out(nshape);
    const auto ast = a.strides();
    const auto ost = out.strides();
    const std::int64_t n = a.numel();
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t rem = flat, oflat = 0;
        for (int i = 0; i < nd; ++i) {
            const std::int64_t oi = rem / ost[std::size_t(i)];
            rem %= ost[std::size_t(i)];
            oflat += oi * ast[std::size_t(perm[std::size_t(i)])];
        }
        out.v[std::size_t(flat)] = a.v[std::size_t(oflat)];
    }
    return out;
}

}  // namespace detail

template <class T>
Tensor<T> permute(const Tensor<T>& a, std::vector<int> perm) {
    if (int(perm.size()) != a.val().ndim()) throw ShapeError("permute: rank mismatch");
    NdArray<T> out = detail::permute_nd(a.val(), perm);
    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[std::size_t(perm[i])] = int(i);
    return tp->record(std::move(out), {&a},
                      [inv](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          NdArray<T> gp = detail::permute_nd(g, inv);
                          for (std::size_t i = 0; i < gp.v.size(); ++i) pg[0]->v[i] += gp.v[i];
                      });
}

template <class T>
Tensor<T> concat(int axis, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int nd = parts[0].val().ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis");
    std::vector<int> shape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.val().ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && p.shape()[std::size_t(i)] != shape[std::size_t(i)])
                throw ShapeError("concat: shape mismatch off-axis");
        total += p.shape()[std::size_t(axis)];
    }
    shape[std::size_t(axis)] = total;

    NdArray<T> out(shape);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[std::size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= shape[std::size_t(i)];

    std::vector<int> sizes;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        const int na = p.shape()[std::size_t(axis)];
        sizes.push_back(na);
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(p.val().v.data() + o * na * inner, na * inner,
                        out.v.data() + (o * total + off) * inner);
        off += na;
    }

    std::vector<const Tensor<T>*> ins;
    for (const auto& p : parts) ins.push_back(&p);
    Tape<T>* tp = nullptr;
    for (const auto& p : parts)
        if (p.on_tape()) { tp = p.tape(); break; }
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), ins,
                      [sizes, outer, inner, total](const NdArray<T>& g,
                                                   const std::vector<NdArray<T>*>& pg) {
                          std::int64_t off2 = 0;
                          for (std::size_t p = 0; p < sizes.size(); ++p) {
                              const int na = sizes[p];
                              if (pg[p]) {
                                  for (std::int64_t o = 0; o < outer; ++o) {
                                      const T* src = g.v.data() + (o * total + off2) * inner;
                                      T* dst = pg[p]->v.data() + o * na * inner;
                                      for (std::int64_t i = 0; i < na * inner; ++i) dst[i] += src[i];
                                  }
                              }
                              off2 += na;
                          }
                      });
}

// Gather rows along axis 0; also the embedding lookup.
template <class T>
Tensor<T> take_rows(const Tensor<T>& a, std::vector<int> idx) {
    const auto& av = a.val();
    if (av.ndim() < 1) throw ShapeError("take_rows: rank 0");
    const int rows = av.dim(0);
    std::int64_t inner = 1;
    for (int i = 1; i < av.ndim(); ++i) inner *= av.dim(i);
    for (int r : idx)
        if (r < 0 || r >= rows) throw ShapeError("take_rows: index out of range");

    std::vector<int> shape = av.shape;
    shape[0] = int(idx.size());
    NdArray<T> out(shape);
    for (std::size_t k = 0; k < idx.size(); ++k)
        std::copy_n(av.v.data() + std::int64_t(idx[k]) * inner, inner,
                    out.v.data() + std::int64_t(k) * inner);

    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a},
                      [idx, inner](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          for (std::size_t k = 0; k < idx.size(); ++k) {
                              const T* src = g.v.data() + std::int64_t(k) * inner;
                              T* dst = pg[0]->v.data() + std::int64_t(idx[k]) * inner;
                              for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                          }
                      });
}

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.val().ndim() != 2) throw ShapeError("embedding_lookup: table must be 2-d");
    return take_rows(table, ids);
}

// --- reductions -------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = 0;
    for (T x : a.val().v) s += x;
    NdArray<T> out = NdArray<T>::scalar(s);
    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a},
                      [](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (auto& x : pg[0]->v) x += g.v[0];
                      });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return scale(sum_all(a), T(1) / T(a.numel()));
}

// --- linear algebra ---------------------------------------------------------

// x [N,in] (or [in]) times W [out,in] plus optional bias.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b = nullptr) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    if (wv.ndim() != 2) throw ShapeError("linear: weight must be 2-d");
    const bool vec = xv.ndim() == 1;
    const int in = vec ? xv.dim(0) : xv.dim(xv.ndim() - 1);
    if (in != wv.dim(1)) throw ShapeError("linear: inner dim mismatch");
    const int out_c = wv.dim(0);
    const std::int64_t rows = xv.numel() / in;
    if (b && (b->val().ndim() != 1 || b->val().dim(0) != out_c))
        throw ShapeError("linear: bias shape mismatch");

    std::vector<int> oshape = xv.shape;
    if (vec)
        oshape = {out_c};
    else
        oshape.back() = out_c;
    NdArray<T> out(oshape);
    for (std::int64_t n = 0; n < rows; ++n)
        for (int o = 0; o < out_c; ++o) {
            T s = b ? b->val().v[std::size_t(o)] : T(0);
            const T* xr = xv.v.data() + n * in;
            const T* wr = wv.v.data() + std::int64_t(o) * in;
            for (int i = 0; i < in; ++i) s += xr[i] * wr[i];
            out.v[std::size_t(n * out_c + o)] = s;
        }

    std::vector<const Tensor<T>*> ins{&x, &w};
    if (b) ins.push_back(b);
    Tape<T>* tp = nullptr;
    for (auto* t : ins)
        if (t->on_tape()) { tp = t->tape(); break; }
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), ins,
                      [xp = x.ptr(), wp = w.ptr(), rows, in, out_c](
                          const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          for (std::int64_t n = 0; n < rows; ++n) {
                              const T* gr = g.v.data() + n * out_c;
                              const T* xr = xp->v.data() + n * in;
                              if (pg[0]) {
                                  T* gx = pg[0]->v.data() + n * in;
                                  for (int o = 0; o < out_c; ++o) {
                                      const T* wr = wp->v.data() + std::int64_t(o) * in;
                                      const T go = gr[o];
                                      for (int i = 0; i < in; ++i) gx[i] += go * wr[i];
                                  }
                              }
                              if (pg[1]) {
                                  for (int o = 0; o < out_c; ++o) {
                                      T* gw = pg[1]->v.data() + std::int64_t(o) * in;
                                      const T go = gr[o];
                                      for (int i = 0; i < in; ++i) gw[i] += go * xr[i];
                                  }
                              }
                              if (pg.size() > 2 && pg[2])
                                  for (int o = 0; o < out_c; ++o) pg[2]->v[std::size_t(o)] += gr[o];
                          }
                      });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& av = a.val();
    const auto& bv = b.val();
    if (av.ndim() != 2 || bv.ndim() != 2) throw ShapeError("matmul: 2-d inputs required");
    const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (bv.dim(0) != k) throw ShapeError("matmul: inner dim mismatch");
    NdArray<T> out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            T s = 0;
            for (int q = 0; q < k; ++q)
                s += av.v[std::size_t(i * k + q)] * bv.v[std::size_t(q * n + j)];
            out.v[std::size_t(i * n + j)] = s;
        }
    Tape<T>* tp = detail::tape_of<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a, &b},
                      [ap = a.ptr(), bp = b.ptr(), m, k, n](const NdArray<T>& g,
                                                            const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (int i = 0; i < m; ++i)
                                  for (int q = 0; q < k; ++q) {
                                      T s = 0;
                                      for (int j = 0; j < n; ++j)
                                          s += g.v[std::size_t(i * n + j)] * bp->v[std::size_t(q * n + j)];
                                      pg[0]->v[std::size_t(i * k + q)] += s;
                                  }
                          if (pg[1])
                              for (int q = 0; q < k; ++q)
                                  for (int j = 0; j < n; ++j) {
                                      T s = 0;
                                      for (int i = 0; i < m; ++i)
                                          s += ap->v[std::size_t(i * k + q)] * g.v[std::size_t(i * n + j)];
                                      pg[1]->v[std::size_t(q * n + j)] += s;
                                  }
                      });
}

// Batched matmul: [B,M,K] x [B,K,N] -> [B,M,N].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    const auto& av = a.val();
    const auto& bv = b.val();
    if (av.ndim() != 3 || bv.ndim() != 3) throw ShapeError("bmm: 3-d inputs required");
    const int bt = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    if (bv.dim(0) != bt || bv.dim(1) != k) throw ShapeError("bmm: shape mismatch");
    NdArray<T> out({bt, m, n});
    for (int t = 0; t < bt; ++t) {
        const T* A = av.v.data() + std::int64_t(t) * m * k;
        const T* B = bv.v.data() + std::int64_t(t) * k * n;
        T* O = out.v.data() + std::int64_t(t) * m * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                T s = 0;
                for (int q = 0; q < k; ++q) s += A[i * k + q] * B[q * n + j];
                O[i * n + j] = s;
            }
    }
    Tape<T>* tp = detail::tape_of<T>({&a, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&a, &b},
                      [ap = a.ptr(), bp = b.ptr(), bt, m, k, n](
                          const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          for (int t = 0; t < bt; ++t) {
                              const T* A = ap->v.data() + std::int64_t(t) * m * k;
                              const T* B = bp->v.data() + std::int64_t(t) * k * n;
                              const T* G = g.v.data() + std::int64_t(t) * m * n;
                              if (pg[0]) {
                                  T* GA = pg[0]->v.data() + std::int64_t(t) * m * k;
                                  for (int i = 0; i < m; ++i)
                                      for (int q = 0; q < k; ++q) {
                                          T s = 0;
                                          for (int j = 0; j < n; ++j) s += G[i * n + j] * B[q * n + j];
                                          GA[i * k + q] += s;
                                      }
                              }
                              if (pg[1]) {
                                  T* GB = pg[1]->v.data() + std::int64_t(t) * k * n;
                                  for (int q = 0; q < k; ++q)
                                      for (int j = 0; j < n; ++j) {
                                          T s = 0;
                                          for (int i = 0; i < m; ++i) s += A[i * k + q] * G[i * n + j];
                                          GB[q * n + j] += s;
                                      }
                              }
                          }
                      });
}

// --- normalization and softmax ----------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    const auto& av = a.val();
    const int nd = av.ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("softmax: bad axis");
    const int n = av.dim(axis);
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= av.dim(i);
    for (int i = axis + 1; i < nd; ++i) inner *= av.dim(i);

    NdArray<T> out(av.shape);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * n * inner + in;
            T mx = av.v[std::size_t(base)];
            for (int i = 1; i < n; ++i) mx = std::max(mx, av.v[std::size_t(base + i * inner)]);
            T z = 0;
            for (int i = 0; i < n; ++i) {
                const T e = std::exp(av.v[std::size_t(base + i * inner)] - mx);
                out.v[std::size_t(base + i * inner)] = e;
                z += e;
            }
            for (int i = 0; i < n; ++i) out.v[std::size_t(base + i * inner)] /= z;
        }

    Tape<T>* tp = detail::tape_of<T>({&a});
    if (!tp) return Tensor<T>(std::move(out));
    auto op = std::make_shared<NdArray<T>>(out);
    return tp->record(std::move(out), {&a},
                      [op, outer, inner, n](const NdArray<T>& g,
                                            const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          for (std::int64_t o = 0; o < outer; ++o)
                              for (std::int64_t in = 0; in < inner; ++in) {
                                  const std::int64_t base = o * n * inner + in;
                                  T dot = 0;
                                  for (int i = 0; i < n; ++i)
                                      dot += g.v[std::size_t(base + i * inner)] *
                                             op->v[std::size_t(base + i * inner)];
                                  for (int i = 0; i < n; ++i) {
                                      const std::size_t idx = std::size_t(base + i * inner);
                                      pg[0]->v[idx] += op->v[idx] * (g.v[idx] - dot);
                                  }
                              }
                      });
}

// RMS normalization over the last axis with a learnable gain.
template <class T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& w, T eps = T(1e-6)) {
    const auto& xv = x.val();
    const int d = xv.dim(xv.ndim() - 1);
    if (w.val().ndim() != 1 || w.val().dim(0) != d) throw ShapeError("rms_norm: gain mismatch");
    const std::int64_t rows = xv.numel() / d;

    NdArray<T> out(xv.shape);
    std::vector<T> inv(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xr = xv.v.data() + r * d;
        T ss = 0;
        for (int i = 0; i < d; ++i) ss += xr[i] * xr[i];
        const T rinv = T(1) / std::sqrt(ss / T(d) + eps);
        inv[std::size_t(r)] = rinv;
        T* orow = out.v.data() + r * d;
        for (int i = 0; i < d; ++i) orow[i] = xr[i] * rinv * w.val().v[std::size_t(i)];
    }

    Tape<T>* tp = detail::tape_of<T>({&x, &w});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), {&x, &w},
        [xp = x.ptr(), wp = w.ptr(), inv, rows, d](const NdArray<T>& g,
                                                   const std::vector<NdArray<T>*>& pg) {
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* xr = xp->v.data() + r * d;
                const T* gr = g.v.data() + r * d;
                const T rinv = inv[std::size_t(r)];
                if (pg[0]) {
                    T dot = 0;
                    for (int i = 0; i < d; ++i) dot += gr[i] * wp->v[std::size_t(i)] * xr[i];
                    dot *= rinv * rinv * rinv / T(d);
                    T* gx = pg[0]->v.data() + r * d;
                    for (int i = 0; i < d; ++i)
                        gx[i] += gr[i] * wp->v[std::size_t(i)] * rinv - dot * xr[i];
                }
                if (pg[1])
                    for (int i = 0; i < d; ++i)
                        pg[1]->v[std::size_t(i)] += gr[i] * xr[i] * rinv;
            }
        });
}

// Group normalization over [lead, C, spatial...]: zero mean / unit variance
// per (lead, channel group), no learnable affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int group = 4, T eps = T(1e-5)) {
    const auto& xv = x.val();
    if (xv.ndim() < 2) throw ShapeError("group_norm: rank >= 2 required");
    const int lead = xv.dim(0), c = xv.dim(1);
    if (c % group != 0) throw ShapeError("group_norm: channels not divisible by group");
    std::int64_t sp = 1;
    for (int i = 2; i < xv.ndim(); ++i) sp *= xv.dim(i);
    const int ngroups = c / group;
    const std::int64_t gsize = std::int64_t(group) * sp;

    NdArray<T> out(xv.shape);
    std::vector<T> means(std::size_t(lead * ngroups)), invs(std::size_t(lead * ngroups));
    for (int l = 0; l < lead; ++l)
        for (int g0 = 0; g0 < ngroups; ++g0) {
            const std::int64_t base = (std::int64_t(l) * c + std::int64_t(g0) * group) * sp;
            T mean = 0;
            for (std::int64_t i = 0; i < gsize; ++i) mean += xv.v[std::size_t(base + i)];
            mean /= T(gsize);
            T var = 0;
            for (std::int64_t i = 0; i < gsize; ++i) {
                const T dv = xv.v[std::size_t(base + i)] - mean;
                var += dv * dv;
            }
            var /= T(gsize);
            const T iv = T(1) / std::sqrt(var + eps);
            means[std::size_t(l * ngroups + g0)] = mean;
            invs[std::size_t(l * ngroups + g0)] = iv;
            for (std::int64_t i = 0; i < gsize; ++i)
                out.v[std::size_t(base + i)] = (xv.v[std::size_t(base + i)] - mean) * iv;
        }

    Tape<T>* tp = detail::tape_of<T>({&x});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), {&x},
        [xp = x.ptr(), means, invs, lead, c, sp, group, ngroups, gsize](
            const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
            if (!pg[0]) return;
            for (int l = 0; l < lead; ++l)
                for (int g0 = 0; g0 < ngroups; ++g0) {
                    const std::int64_t base = (std::int64_t(l) * c + std::int64_t(g0) * group) * sp;
                    const T mean = means[std::size_t(l * ngroups + g0)];
                    const T iv = invs[std::size_t(l * ngroups + g0)];
                    T gsum = 0, gxhat = 0;
                    for (std::int64_t i = 0; i < gsize; ++i) {
                        const T xhat = (xp->v[std::size_t(base + i)] - mean) * iv;
                        gsum += g.v[std::size_t(base + i)];
                        gxhat += g.v[std::size_t(base + i)] * xhat;
                    }
                    gsum /= T(gsize);
                    gxhat /= T(gsize);
                    for (std::int64_t i = 0; i < gsize; ++i) {
                        const T xhat = (xp->v[std::size_t(base + i)] - mean) * iv;
                        pg[0]->v[std::size_t(base + i)] +=
                            iv * (g.v[std::size_t(base + i)] - gsum - xhat * gxhat);
                    }
                }
        });
}

// Adds a [M,N] table to every leading slice of x [..., M, N].
template <class T>
Tensor<T> add_mask(const Tensor<T>& x, const Tensor<T>& mask) {
    const auto& xv = x.val();
    const auto& mv = mask.val();
    if (mv.ndim() != 2 || xv.ndim() < 2) throw ShapeError("add_mask: rank mismatch");
    const int m = xv.dim(xv.ndim() - 2), n = xv.dim(xv.ndim() - 1);
    if (mv.dim(0) != m || mv.dim(1) != n) throw ShapeError("add_mask: table mismatch");
    const std::int64_t lead = xv.numel() / (std::int64_t(m) * n);

    NdArray<T> out(xv.shape);
    for (std::int64_t l = 0; l < lead; ++l)
        for (std::int64_t i = 0; i < std::int64_t(m) * n; ++i)
            out.v[std::size_t(l * m * n + i)] = xv.v[std::size_t(l * m * n + i)] + mv.v[std::size_t(i)];

    Tape<T>* tp = detail::tape_of<T>({&x, &mask});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&x, &mask},
                      [lead, m, n](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (pg[0])
                              for (std::size_t i = 0; i < g.v.size(); ++i) pg[0]->v[i] += g.v[i];
                          if (pg[1])
                              for (std::int64_t l = 0; l < lead; ++l)
                                  for (std::int64_t i = 0; i < std::int64_t(m) * n; ++i)
                                      pg[1]->v[std::size_t(i)] += g.v[std::size_t(l * m * n + i)];
                      });
}

}  // namespace voxa
