#pragma once

#include "voxa/ops.hpp"

// Spatial ops over feature maps laid out [S, C, X, Y, Z]: batched 3D / slicewise
// convolution, channel-wise projections, pooling, and trilinear resizing.

namespace voxa {

namespace detail {

template <class T>
void check_conv_shapes(const NdArray<T>& x, const NdArray<T>& w, const NdArray<T>* b) {
    if (x.ndim() != 5) throw ShapeError("conv: input must be [S,C,X,Y,Z]");
    if (w.ndim() != 5 || w.dim(2) != 3 || w.dim(3) != 3 || w.dim(4) != 3)
        throw ShapeError("conv: kernel must be [Co,Ci,3,3,3]");
    if (w.dim(1) != x.dim(1)) throw ShapeError("conv: channel mismatch");
    if (b && (b->ndim() != 1 || b->dim(0) != w.dim(0)))
        throw ShapeError("conv: bias mismatch");
}

}  // namespace detail

// 3x3x3 convolution, stride 1, zero same-padding. x [S,Ci,X,Y,Z] -> [S,Co,X,Y,Z].
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    detail::check_conv_shapes(xv, wv, &b.val());
    const int S = xv.dim(0), Ci = xv.dim(1), X = xv.dim(2), Y = xv.dim(3), Z = xv.dim(4);
    const int Co = wv.dim(0);
    const std::int64_t sp = std::int64_t(X) * Y * Z;

    NdArray<T> out({S, Co, X, Y, Z});
    for (int s = 0; s < S; ++s)
        for (int co = 0; co < Co; ++co) {
            T* O = out.v.data() + (std::int64_t(s) * Co + co) * sp;
            const T bias = b.val().v[std::size_t(co)];
            for (std::int64_t i = 0; i < sp; ++i) O[i] = bias;
            for (int ci = 0; ci < Ci; ++ci) {
                const T* I = xv.v.data() + (std::int64_t(s) * Ci + ci) * sp;
                const T* W = wv.v.data() + ((std::int64_t(co) * Ci + ci) * 27);
                for (int dx = 0; dx < 3; ++dx)
                    for (int dy = 0; dy < 3; ++dy)
                        for (int dz = 0; dz < 3; ++dz) {
                            const T wk = W[(dx * 3 + dy) * 3 + dz];
                            if (wk == T(0)) continue;
                            const int ox = dx - 1, oy = dy - 1, oz = dz - 1;
                            const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                            const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                            const int z0 = std::max(0, -oz), z1 = std::min(Z, Z - oz);
                            for (int xi = x0; xi < x1; ++xi)
                                for (int yi = y0; yi < y1; ++yi) {
                                    T* orow = O + (std::int64_t(xi) * Y + yi) * Z;
                                    const T* irow =
                                        I + (std::int64_t(xi + ox) * Y + (yi + oy)) * Z + oz;
                                    for (int zi = z0; zi < z1; ++zi) orow[zi] += wk * irow[zi];
                                }
                        }
            }
        }

    Tape<T>* tp = detail::tape_of<T>({&x, &w, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), {&x, &w, &b},
        [xp = x.ptr(), wp = w.ptr(), S, Ci, Co, X, Y, Z, sp](
            const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
            for (int s = 0; s < S; ++s)
                for (int co = 0; co < Co; ++co) {
                    const T* G = g.v.data() + (std::int64_t(s) * Co + co) * sp;
                    if (pg[2]) {
                        T acc = 0;
                        for (std::int64_t i = 0; i < sp; ++i) acc += G[i];
                        pg[2]->v[std::size_t(co)] += acc;
                    }
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T* I = xp->v.data() + (std::int64_t(s) * Ci + ci) * sp;
                        const T* W = wp->v.data() + ((std::int64_t(co) * Ci + ci) * 27);
                        T* GI = pg[0] ? pg[0]->v.data() + (std::int64_t(s) * Ci + ci) * sp : nullptr;
                        T* GW = pg[1] ? pg[1]->v.data() + ((std::int64_t(co) * Ci + ci) * 27) : nullptr;
                        for (int dx = 0; dx < 3; ++dx)
                            for (int dy = 0; dy < 3; ++dy)
                                for (int dz = 0; dz < 3; ++dz) {
                                    const int ox = dx - 1, oy = dy - 1, oz = dz - 1;
                                    const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                                    const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                                    const int z0 = std::max(0, -oz), z1 = std::min(Z, Z - oz);
                                    const T wk = W[(dx * 3 + dy) * 3 + dz];
                                    T wacc = 0;
                                    for (int xi = x0; xi < x1; ++xi)
                                        for (int yi = y0; yi < y1; ++yi) {
                                            const T* grow = G + (std::int64_t(xi) * Y + yi) * Z;
                                            const std::int64_t ibase =
                                                (std::int64_t(xi + ox) * Y + (yi + oy)) * Z + oz;
                                            if (GI) {
                                                T* girow = GI + ibase;
                                                for (int zi = z0; zi < z1; ++zi)
                                                    girow[zi] += wk * grow[zi];
                                            }
                                            if (GW) {
                                                const T* irow = I + ibase;
                                                for (int zi = z0; zi < z1; ++zi)
                                                    wacc += grow[zi] * irow[zi];
                                            }
                                        }
                                    if (GW) GW[(dx * 3 + dy) * 3 + dz] += wacc;
                                }
                    }
                }
        });
}

// 2D convolution applied per slice along axis Z using the central kz slice of
// the same 3x3x3 kernel. Only that central slice receives weight gradient.
template <class T>
Tensor<T> conv2d_slicewise(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    detail::check_conv_shapes(xv, wv, &b.val());
    const int S = xv.dim(0), Ci = xv.dim(1), X = xv.dim(2), Y = xv.dim(3), Z = xv.dim(4);
    const int Co = wv.dim(0);
    const std::int64_t sp = std::int64_t(X) * Y * Z;

    NdArray<T> out({S, Co, X, Y, Z});
    for (int s = 0; s < S; ++s)
        for (int co = 0; co < Co; ++co) {
            T* O = out.v.data() + (std::int64_t(s) * Co + co) * sp;
            const T bias = b.val().v[std::size_t(co)];
            for (std::int64_t i = 0; i < sp; ++i) O[i] = bias;
            for (int ci = 0; ci < Ci; ++ci) {
                const T* I = xv.v.data() + (std::int64_t(s) * Ci + ci) * sp;
                const T* W = wv.v.data() + ((std::int64_t(co) * Ci + ci) * 27);
                for (int dx = 0; dx < 3; ++dx)
                    for (int dy = 0; dy < 3; ++dy) {
                        const T wk = W[(dx * 3 + dy) * 3 + 1];  // central through-plane slice
                        if (wk == T(0)) continue;
                        const int ox = dx - 1, oy = dy - 1;
                        const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                        const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                        for (int xi = x0; xi < x1; ++xi)
                            for (int yi = y0; yi < y1; ++yi) {
                                T* orow = O + (std::int64_t(xi) * Y + yi) * Z;
                                const T* irow = I + (std::int64_t(xi + ox) * Y + (yi + oy)) * Z;
                                for (int zi = 0; zi < Z; ++zi) orow[zi] += wk * irow[zi];
                            }
                    }
            }
        }

    Tape<T>* tp = detail::tape_of<T>({&x, &w, &b});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), {&x, &w, &b},
        [xp = x.ptr(), wp = w.ptr(), S, Ci, Co, X, Y, Z, sp](
            const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
            for (int s = 0; s < S; ++s)
                for (int co = 0; co < Co; ++co) {
                    const T* G = g.v.data() + (std::int64_t(s) * Co + co) * sp;
                    if (pg[2]) {
                        T acc = 0;
                        for (std::int64_t i = 0; i < sp; ++i) acc += G[i];
                        pg[2]->v[std::size_t(co)] += acc;
                    }
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T* I = xp->v.data() + (std::int64_t(s) * Ci + ci) * sp;
                        const T* W = wp->v.data() + ((std::int64_t(co) * Ci + ci) * 27);
                        T* GI = pg[0] ? pg[0]->v.data() + (std::int64_t(s) * Ci + ci) * sp : nullptr;
                        T* GW = pg[1] ? pg[1]->v.data() + ((std::int64_t(co) * Ci + ci) * 27) : nullptr;
                        for (int dx = 0; dx < 3; ++dx)
                            for (int dy = 0; dy < 3; ++dy) {
                                const int ox = dx - 1, oy = dy - 1;
                                const int x0 = std::max(0, -ox), x1 = std::min(X, X - ox);
                                const int y0 = std::max(0, -oy), y1 = std::min(Y, Y - oy);
                                const T wk = W[(dx * 3 + dy) * 3 + 1];
                                T wacc = 0;
                                for (int xi = x0; xi < x1; ++xi)
                                    for (int yi = y0; yi < y1; ++yi) {
                                        const T* grow = G + (std::int64_t(xi) * Y + yi) * Z;
                                        const std::int64_t ibase =
                                            (std::int64_t(xi + ox) * Y + (yi + oy)) * Z;
                                        if (GI) {
                                            T* girow = GI + ibase;
                                            for (int zi = 0; zi < Z; ++zi) girow[zi] += wk * grow[zi];
                                        }
                                        if (GW) {
                                            const T* irow = I + ibase;
                                            for (int zi = 0; zi < Z; ++zi)
                                                wacc += grow[zi] * irow[zi];
                                        }
                                    }
                                if (GW) GW[(dx * 3 + dy) * 3 + 1] += wacc;
                            }
                    }
                }
        });
}

// Per-location channel projection: x [S,Ci,spatial...] x W [Co,Ci] -> [S,Co,spatial...].
template <class T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b = nullptr) {
    const auto& xv = x.val();
    const auto& wv = w.val();
    if (xv.ndim() < 2 || wv.ndim() != 2) throw ShapeError("channel_linear: rank mismatch");
    const int S = xv.dim(0), Ci = xv.dim(1), Co = wv.dim(0);
    if (wv.dim(1) != Ci) throw ShapeError("channel_linear: channel mismatch");
    if (b && (b->val().ndim() != 1 || b->val().dim(0) != Co))
        throw ShapeError("channel_linear: bias mismatch");
    std::int64_t sp = 1;
    for (int i = 2; i < xv.ndim(); ++i) sp *= xv.dim(i);

    std::vector<int> oshape = xv.shape;
    oshape[1] = Co;
    NdArray<T> out(oshape);
    for (int s = 0; s < S; ++s)
        for (int co = 0; co < Co; ++co) {
            T* O = out.v.data() + (std::int64_t(s) * Co + co) * sp;
            const T bias = b ? b->val().v[std::size_t(co)] : T(0);
            for (std::int64_t i = 0; i < sp; ++i) O[i] = bias;
            for (int ci = 0; ci < Ci; ++ci) {
                const T wk = wv.v[std::size_t(co * Ci + ci)];
                if (wk == T(0)) continue;
                const T* I = xv.v.data() + (std::int64_t(s) * Ci + ci) * sp;
                for (std::int64_t i = 0; i < sp; ++i) O[i] += wk * I[i];
            }
        }

    std::vector<const Tensor<T>*> ins{&x, &w};
    if (b) ins.push_back(b);
    Tape<T>* tp = nullptr;
    for (auto* t : ins)
        if (t->on_tape()) { tp = t->tape(); break; }
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), ins,
        [xp = x.ptr(), wp = w.ptr(), S, Ci, Co, sp](const NdArray<T>& g,
                                                    const std::vector<NdArray<T>*>& pg) {
            for (int s = 0; s < S; ++s)
                for (int co = 0; co < Co; ++co) {
                    const T* G = g.v.data() + (std::int64_t(s) * Co + co) * sp;
                    if (pg.size() > 2 && pg[2]) {
                        T acc = 0;
                        for (std::int64_t i = 0; i < sp; ++i) acc += G[i];
                        pg[2]->v[std::size_t(co)] += acc;
                    }
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T wk = wp->v[std::size_t(co * Ci + ci)];
                        if (pg[0]) {
                            T* GI = pg[0]->v.data() + (std::int64_t(s) * Ci + ci) * sp;
                            for (std::int64_t i = 0; i < sp; ++i) GI[i] += wk * G[i];
                        }
                        if (pg[1]) {
                            const T* I = xp->v.data() + (std::int64_t(s) * Ci + ci) * sp;
                            T acc = 0;
                            for (std::int64_t i = 0; i < sp; ++i) acc += G[i] * I[i];
                            pg[1]->v[std::size_t(co * Ci + ci)] += acc;
                        }
                    }
                }
        });
}

// phi [S,P] broadcast over a spatial box -> [S,P,X,Y,Z].
template <class T>
Tensor<T> broadcast_channels(const Tensor<T>& phi, std::array<int, 3> spatial) {
    const auto& pv = phi.val();
    if (pv.ndim() != 2) throw ShapeError("broadcast_channels: [S,P] input required");
    const int S = pv.dim(0), P = pv.dim(1);
    const std::int64_t sp = std::int64_t(spatial[0]) * spatial[1] * spatial[2];

    NdArray<T> out({S, P, spatial[0], spatial[1], spatial[2]});
    for (int s = 0; s < S; ++s)
        for (int p = 0; p < P; ++p) {
            const T v = pv.v[std::size_t(s * P + p)];
            T* O = out.v.data() + (std::int64_t(s) * P + p) * sp;
            for (std::int64_t i = 0; i < sp; ++i) O[i] = v;
        }

    Tape<T>* tp = detail::tape_of<T>({&phi});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&phi},
                      [S, P, sp](const NdArray<T>& g, const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          for (int s = 0; s < S; ++s)
                              for (int p = 0; p < P; ++p) {
                                  const T* G = g.v.data() + (std::int64_t(s) * P + p) * sp;
                                  T acc = 0;
                                  for (std::int64_t i = 0; i < sp; ++i) acc += G[i];
                                  pg[0]->v[std::size_t(s * P + p)] += acc;
                              }
                      });
}

// Max pooling with per-axis factors, ceil mode (edge windows shrink).
template <class T>
Tensor<T> max_pool3d(const Tensor<T>& x, std::array<int, 3> factor) {
    const auto& xv = x.val();
    if (xv.ndim() != 5) throw ShapeError("max_pool3d: [S,C,X,Y,Z] input required");
    for (int f : factor)
        if (f < 1) throw ShapeError("max_pool3d: factor must be >= 1");
    const int S = xv.dim(0), C = xv.dim(1), X = xv.dim(2), Y = xv.dim(3), Z = xv.dim(4);
    const int OX = (X + factor[0] - 1) / factor[0];
    const int OY = (Y + factor[1] - 1) / factor[1];
    const int OZ = (Z + factor[2] - 1) / factor[2];
    const std::int64_t isp = std::int64_t(X) * Y * Z;
    const std::int64_t osp = std::int64_t(OX) * OY * OZ;

    NdArray<T> out({S, C, OX, OY, OZ});
    std::vector<std::int64_t> arg(std::size_t(std::int64_t(S) * C * osp));
    for (int s = 0; s < S; ++s)
        for (int c = 0; c < C; ++c) {
            const T* I = xv.v.data() + (std::int64_t(s) * C + c) * isp;
            T* O = out.v.data() + (std::int64_t(s) * C + c) * osp;
            std::int64_t* A = arg.data() + (std::int64_t(s) * C + c) * osp;
            for (int ox = 0; ox < OX; ++ox)
                for (int oy = 0; oy < OY; ++oy)
                    for (int oz = 0; oz < OZ; ++oz) {
                        const int x1 = std::min(X, (ox + 1) * factor[0]);
                        const int y1 = std::min(Y, (oy + 1) * factor[1]);
                        const int z1 = std::min(Z, (oz + 1) * factor[2]);
                        T best = -std::numeric_limits<T>::infinity();
                        std::int64_t bi = -1;
                        for (int xi = ox * factor[0]; xi < x1; ++xi)
                            for (int yi = oy * factor[1]; yi < y1; ++yi)
                                for (int zi = oz * factor[2]; zi < z1; ++zi) {
                                    const std::int64_t idx = (std::int64_t(xi) * Y + yi) * Z + zi;
                                    if (I[idx] > best) { best = I[idx]; bi = idx; }
                                }
                        const std::int64_t oidx = (std::int64_t(ox) * OY + oy) * OZ + oz;
                        O[oidx] = best;
                        A[oidx] = bi;
                    }
        }

    Tape<T>* tp = detail::tape_of<T>({&x});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&x},
                      [arg = std::move(arg), S, C, isp, osp](const NdArray<T>& g,
                                                             const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          for (std::int64_t sc = 0; sc < std::int64_t(S) * C; ++sc) {
                              const T* G = g.v.data() + sc * osp;
                              const std::int64_t* A = arg.data() + sc * osp;
                              T* GI = pg[0]->v.data() + sc * isp;
                              for (std::int64_t i = 0; i < osp; ++i) GI[A[i]] += G[i];
                          }
                      });
}

// Trilinear resize to a target spatial shape. ratio maps output index k to
// source coordinate (k+0.5)*ratio-0.5 per axis (clamped); pass target/source
// spacing ratios for spacing-faithful resampling.
template <class T>
Tensor<T> trilinear_resize(const Tensor<T>& x, std::array<int, 3> tshape,
                           std::array<double, 3> ratio) {
    const auto& xv = x.val();
    if (xv.ndim() != 5) throw ShapeError("trilinear_resize: [S,C,X,Y,Z] input required");
    const int S = xv.dim(0), C = xv.dim(1), X = xv.dim(2), Y = xv.dim(3), Z = xv.dim(4);
    const int TX = tshape[0], TY = tshape[1], TZ = tshape[2];
    const std::int64_t isp = std::int64_t(X) * Y * Z;
    const std::int64_t osp = std::int64_t(TX) * TY * TZ;

    // Precompute per-axis interpolation stencils.
    struct Stencil {
        std::vector<int> lo, hi;
        std::vector<T> t;
    };
    auto make = [](int tn, int n, double r) {
        Stencil st;
        st.lo.resize(std::size_t(tn));
        st.hi.resize(std::size_t(tn));
        st.t.resize(std::size_t(tn));
        for (int k = 0; k < tn; ++k) {
            double f = (k + 0.5) * r - 0.5;
            f = std::clamp(f, 0.0, double(n - 1));
            int lo = std::min(int(std::floor(f)), std::max(0, n - 2));
            st.lo[std::size_t(k)] = lo;
            st.hi[std::size_t(k)] = std::min(lo + 1, n - 1);
            st.t[std::size_t(k)] = n == 1 ? T(0) : T(f - lo);
        }
        return st;
    };
    const Stencil sx = make(TX, X, ratio[0]), sy = make(TY, Y, ratio[1]), sz = make(TZ, Z, ratio[2]);

    NdArray<T> out({S, C, TX, TY, TZ});
    for (std::int64_t sc = 0; sc < std::int64_t(S) * C; ++sc) {
        const T* I = xv.v.data() + sc * isp;
        T* O = out.v.data() + sc * osp;
        for (int a = 0; a < TX; ++a)
            for (int bq = 0; bq < TY; ++bq)
                for (int cq = 0; cq < TZ; ++cq) {
                    const T tx = sx.t[std::size_t(a)], ty = sy.t[std::size_t(bq)],
                            tz = sz.t[std::size_t(cq)];
                    T acc = 0;
                    for (int ci = 0; ci < 2; ++ci)
                        for (int cj = 0; cj < 2; ++cj)
                            for (int ck = 0; ck < 2; ++ck) {
                                const T wgt = (ci ? tx : T(1) - tx) * (cj ? ty : T(1) - ty) *
                                              (ck ? tz : T(1) - tz);
                                if (wgt == T(0)) continue;
                                const int xi = ci ? sx.hi[std::size_t(a)] : sx.lo[std::size_t(a)];
                                const int yi = cj ? sy.hi[std::size_t(bq)] : sy.lo[std::size_t(bq)];
                                const int zi = ck ? sz.hi[std::size_t(cq)] : sz.lo[std::size_t(cq)];
                                acc += wgt * I[(std::int64_t(xi) * Y + yi) * Z + zi];
                            }
                    O[(std::int64_t(a) * TY + bq) * TZ + cq] = acc;
                }
    }

    Tape<T>* tp = detail::tape_of<T>({&x});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(
        std::move(out), {&x},
        [sx, sy, sz, S, C, Y, Z, TX, TY, TZ, isp, osp](const NdArray<T>& g,
                                                       const std::vector<NdArray<T>*>& pg) {
            if (!pg[0]) return;
            for (std::int64_t sc = 0; sc < std::int64_t(S) * C; ++sc) {
                const T* G = g.v.data() + sc * osp;
                T* GI = pg[0]->v.data() + sc * isp;
                for (int a = 0; a < TX; ++a)
                    for (int bq = 0; bq < TY; ++bq)
                        for (int cq = 0; cq < TZ; ++cq) {
                            const T gv = G[(std::int64_t(a) * TY + bq) * TZ + cq];
                            if (gv == T(0)) continue;
                            const T tx = sx.t[std::size_t(a)], ty = sy.t[std::size_t(bq)],
                                    tz = sz.t[std::size_t(cq)];
                            for (int ci = 0; ci < 2; ++ci)
                                for (int cj = 0; cj < 2; ++cj)
                                    for (int ck = 0; ck < 2; ++ck) {
                                        const T wgt = (ci ? tx : T(1) - tx) *
                                                      (cj ? ty : T(1) - ty) *
                                                      (ck ? tz : T(1) - tz);
                                        if (wgt == T(0)) continue;
                                        const int xi =
                                            ci ? sx.hi[std::size_t(a)] : sx.lo[std::size_t(a)];
                                        const int yi =
                                            cj ? sy.hi[std::size_t(bq)] : sy.lo[std::size_t(bq)];
                                        const int zi =
                                            ck ? sz.hi[std::size_t(cq)] : sz.lo[std::size_t(cq)];
                                        GI[(std::int64_t(xi) * Y + yi) * Z + zi] += wgt * gv;
                                    }
                        }
            }
        });
}

// Global max over the spatial box: [S,C,X,Y,Z] -> [S,C].
template <class T>
Tensor<T> global_max3d(const Tensor<T>& x) {
    const auto& xv = x.val();
    if (xv.ndim() != 5) throw ShapeError("global_max3d: [S,C,X,Y,Z] input required");
    const int S = xv.dim(0), C = xv.dim(1);
    const std::int64_t sp = std::int64_t(xv.dim(2)) * xv.dim(3) * xv.dim(4);

    NdArray<T> out({S, C});
    std::vector<std::int64_t> arg(std::size_t(S * C));
    for (std::int64_t sc = 0; sc < std::int64_t(S) * C; ++sc) {
        const T* I = xv.v.data() + sc * sp;
        T best = I[0];
        std::int64_t bi = 0;
        for (std::int64_t i = 1; i < sp; ++i)
            if (I[i] > best) { best = I[i]; bi = i; }
        out.v[std::size_t(sc)] = best;
        arg[std::size_t(sc)] = bi;
    }

    Tape<T>* tp = detail::tape_of<T>({&x});
    if (!tp) return Tensor<T>(std::move(out));
    return tp->record(std::move(out), {&x},
                      [arg = std::move(arg), S, C, sp](const NdArray<T>& g,
                                                       const std::vector<NdArray<T>*>& pg) {
                          if (!pg[0]) return;
                          for (std::int64_t sc = 0; sc < std::int64_t(S) * C; ++sc)
                              pg[0]->v[std::size_t(sc * sp + arg[std::size_t(sc)])] +=
                                  g.v[std::size_t(sc)];
                      });
}

}  // namespace voxa
