#include "voxa/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace voxa {

// --- Mat4 -------------------------------------------------------------------

Mat4 Mat4::identity() {
    Mat4 r;
    for (int i = 0; i < 4; ++i) r.at(i, i) = 1.0;
    return r;
}

Mat4 Mat4::mul(const Mat4& o) const {
    Mat4 r;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += at(i, k) * o.at(k, j);
            r.at(i, j) = s;
        }
    return r;
}

Mat4 Mat4::inverse() const {
    // Gauss-Jordan with partial pivoting on an augmented [A | I] block.
    std::array<std::array<double, 8>, 4> a{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) a[i][j] = at(i, j);
        a[i][4 + i] = 1.0;
    }
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12)
            throw GeometryError("singular affine");
        std::swap(a[piv], a[col]);
        const double inv = 1.0 / a[col][col];
        for (int j = 0; j < 8; ++j) a[col][j] *= inv;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (int j = 0; j < 8; ++j) a[r][j] -= f * a[col][j];
        }
    }
    Mat4 out;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) out.at(i, j) = a[i][4 + j];
    return out;
}

double Mat4::det3() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

std::array<double, 3> Mat4::apply(double i, double j, double k) const {
    std::array<double, 3> w;
    for (int r = 0; r < 3; ++r)
        w[r] = at(r, 0) * i + at(r, 1) * j + at(r, 2) * k + at(r, 3);
    return w;
}

bool Mat4::almost_equal(const Mat4& o, double tol) const {
    for (int i = 0; i < 16; ++i)
        if (std::abs(m[i] - o.m[i]) > tol) return false;
    return true;
}

// --- Spacing ----------------------------------------------------------------

Spacing::Spacing(double inp, double sep) : s_inp(inp), s_sep(sep) {
    if (!(inp > 0.0) || !(sep > 0.0))
        throw DomainError("spacing must be positive");
}

// --- grids ------------------------------------------------------------------

VoxelGrid::VoxelGrid(std::array<int, 3> s, Mat4 a, float fill)
    : shape(s), values(std::size_t(std::int64_t(s[0]) * s[1] * s[2]), fill), affine(a) {
    if (s[0] <= 0 || s[1] <= 0 || s[2] <= 0)
        throw DomainError("grid shape must be positive");
}

std::array<double, 3> VoxelGrid::spacings() const {
    std::array<double, 3> s;
    for (int c = 0; c < 3; ++c) {
        auto col = affine.column3(c);
        s[c] = std::sqrt(col[0] * col[0] + col[1] * col[1] + col[2] * col[2]);
    }
    return s;
}

Spacing VoxelGrid::spacing() const {
    auto s = spacings();
    const double rel = std::abs(s[0] - s[1]) / std::max(s[0], s[1]);
    if (rel > 1e-3)
        throw GeometryError("in-plane spacings differ beyond tolerance");
    return Spacing(0.5 * (s[0] + s[1]), s[2]);
}

bool VoxelGrid::same_geometry(const std::array<int, 3>& s, const Mat4& a, double tol) const {
    return shape == s && affine.almost_equal(a, tol);
}

BinaryMask::BinaryMask(std::array<int, 3> s, Mat4 a)
    : shape(s), values(std::size_t(std::int64_t(s[0]) * s[1] * s[2]), 0), affine(a) {}

std::int64_t BinaryMask::count() const {
    std::int64_t n = 0;
    for (auto v : values) n += v;
    return n;
}

bool BinaryMask::same_geometry(const VoxelGrid& g, double tol) const {
    return shape == g.shape && affine.almost_equal(g.affine, tol);
}

bool BinaryMask::same_geometry(const BinaryMask& m, double tol) const {
    return shape == m.shape && affine.almost_equal(m.affine, tol);
}

VoxelGrid BinaryMask::to_grid() const {
    VoxelGrid g(shape, affine);
    for (std::int64_t i = 0; i < numel(); ++i) g.values[i] = float(values[i]);
    return g;
}

BinaryMask BinaryMask::from_grid(const VoxelGrid& g, float threshold) {
    BinaryMask m(g.shape, g.affine);
    for (std::int64_t i = 0; i < g.numel(); ++i)
        m.values[i] = g.values[i] > threshold ? 1 : 0;
    return m;
}

// --- conform_ras ------------------------------------------------------------

VoxelGrid conform_ras(const VoxelGrid& g) {
    if (std::abs(g.affine.det3()) < 1e-12)
        throw GeometryError("singular affine");

    // Greedy assignment: repeatedly take the largest |direction cosine| and
    // bind that (world axis, voxel axis) pair.
    std::array<int, 3> vox_for_world{-1, -1, -1};
    std::array<bool, 3> world_used{false, false, false}, vox_used{false, false, false};
    for (int pick = 0; pick < 3; ++pick) {
        double best = -1.0;
        int bw = -1, bv = -1;
        for (int w = 0; w < 3; ++w) {
            if (world_used[w]) continue;
            for (int v = 0; v < 3; ++v) {
                if (vox_used[v]) continue;
                const double c = std::abs(g.affine.at(w, v));
                if (c > best) { best = c; bw = w; bv = v; }
            }
        }
        vox_for_world[bw] = bv;
        world_used[bw] = vox_used[bv] = true;
    }
    std::array<bool, 3> flip{};
    for (int w = 0; w < 3; ++w) flip[w] = g.affine.at(w, vox_for_world[w]) < 0.0;

    bool already = true;
    for (int w = 0; w < 3; ++w)
        if (vox_for_world[w] != w || flip[w]) already = false;
    if (already) return g;

    std::array<int, 3> nshape;
    for (int w = 0; w < 3; ++w) nshape[w] = g.shape[vox_for_world[w]];

    Mat4 na;
    // New axis w reads the old column vox_for_world[w], negated when flipped;
    // the origin moves to the world position of the voxel that lands at index 0.
    std::array<int, 3> idx0{0, 0, 0};
    for (int w = 0; w < 3; ++w) {
        const int v = vox_for_world[w];
        const double sgn = flip[w] ? -1.0 : 1.0;
        for (int r = 0; r < 3; ++r) na.at(r, w) = sgn * g.affine.at(r, v);
        idx0[v] = flip[w] ? g.shape[v] - 1 : 0;
    }
    auto origin = g.affine.apply(idx0[0], idx0[1], idx0[2]);
    for (int r = 0; r < 3; ++r) na.at(r, 3) = origin[r];
    na.at(3, 3) = 1.0;

    VoxelGrid out(nshape, na);
    std::array<int, 3> oi{};
    for (int a = 0; a < nshape[0]; ++a)
        for (int b = 0; b < nshape[1]; ++b)
            for (int c = 0; c < nshape[2]; ++c) {
                const std::array<int, 3> ni{a, b, c};
                for (int w = 0; w < 3; ++w) {
                    const int v = vox_for_world[w];
                    oi[v] = flip[w] ? g.shape[v] - 1 - ni[w] : ni[w];
                }
                out.at(a, b, c) = g.at(oi[0], oi[1], oi[2]);
            }
    return out;
}

// --- normalize01 ------------------------------------------------------------

VoxelGrid normalize01(const VoxelGrid& g) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float v : g.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    VoxelGrid out(g.shape, g.affine);
    const float range = hi - lo;
    if (range <= 0.f) return out;  // constant image -> all zeros
    for (std::int64_t i = 0; i < g.numel(); ++i)
        out.values[i] = (g.values[i] - lo) / range;
    return out;
}

// --- crop_margin ------------------------------------------------------------

namespace {

struct CropBox {
    std::array<int, 3> lo, hi;  // inclusive index ranges
};

CropBox crop_box(const std::array<int, 3>& shape, const Mat4& affine,
                 const BinaryMask& m, double margin_mm) {
    if (m.count() == 0) throw DomainError("crop_margin: empty mask");

    std::array<double, 3> wlo{1e300, 1e300, 1e300}, whi{-1e300, -1e300, -1e300};
    for (int i = 0; i < m.shape[0]; ++i)
        for (int j = 0; j < m.shape[1]; ++j)
            for (int k = 0; k < m.shape[2]; ++k) {
                if (!m.at(i, j, k)) continue;
                auto w = m.affine.apply(i, j, k);
                for (int a = 0; a < 3; ++a) {
                    wlo[a] = std::min(wlo[a], w[a]);
                    whi[a] = std::max(whi[a], w[a]);
                }
            }
    for (int a = 0; a < 3; ++a) {
        wlo[a] -= margin_mm;
        whi[a] += margin_mm;
    }

    // Map the 8 corners of the expanded world box back to index space.
    const Mat4 inv = affine.inverse();
    std::array<double, 3> ilo{1e300, 1e300, 1e300}, ihi{-1e300, -1e300, -1e300};
    for (int c = 0; c < 8; ++c) {
        const double wx = (c & 1) ? whi[0] : wlo[0];
        const double wy = (c & 2) ? whi[1] : wlo[1];
        const double wz = (c & 4) ? whi[2] : wlo[2];
        auto idx = inv.apply(wx, wy, wz);
        for (int a = 0; a < 3; ++a) {
            ilo[a] = std::min(ilo[a], idx[a]);
            ihi[a] = std::max(ihi[a], idx[a]);
        }
    }

    CropBox box;
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::clamp(int(std::ceil(ilo[a] - 1e-6)), 0, shape[a] - 1);
        box.hi[a] = std::clamp(int(std::floor(ihi[a] + 1e-6)), 0, shape[a] - 1);
        if (box.lo[a] > box.hi[a]) std::swap(box.lo[a], box.hi[a]);
    }
    return box;
}

Mat4 shifted_origin(const Mat4& affine, const std::array<int, 3>& lo) {
    Mat4 na = affine;
    auto origin = affine.apply(lo[0], lo[1], lo[2]);
    for (int r = 0; r < 3; ++r) na.at(r, 3) = origin[r];
    return na;
}

}  // namespace

VoxelGrid crop_margin(const VoxelGrid& g, const BinaryMask& m, double margin_mm) {
    if (!m.same_geometry(g)) throw DomainError("crop_margin: geometry mismatch");
    if (margin_mm < 0.0) throw DomainError("crop_margin: negative margin");
    const CropBox box = crop_box(g.shape, g.affine, m, margin_mm);

    std::array<int, 3> nshape;
    for (int a = 0; a < 3; ++a) nshape[a] = box.hi[a] - box.lo[a] + 1;
    VoxelGrid out(nshape, shifted_origin(g.affine, box.lo));
    for (int i = 0; i < nshape[0]; ++i)
        for (int j = 0; j < nshape[1]; ++j)
            for (int k = 0; k < nshape[2]; ++k)
                out.at(i, j, k) = g.at(box.lo[0] + i, box.lo[1] + j, box.lo[2] + k);
    return out;
}

BinaryMask crop_margin(const BinaryMask& src, const BinaryMask& m, double margin_mm) {
    if (!m.same_geometry(src)) throw DomainError("crop_margin: geometry mismatch");
    const CropBox box = crop_box(src.shape, src.affine, m, margin_mm);
    std::array<int, 3> nshape;
    for (int a = 0; a < 3; ++a) nshape[a] = box.hi[a] - box.lo[a] + 1;
    BinaryMask out(nshape, shifted_origin(src.affine, box.lo));
    for (int i = 0; i < nshape[0]; ++i)
        for (int j = 0; j < nshape[1]; ++j)
            for (int k = 0; k < nshape[2]; ++k)
                out.at(i, j, k) = src.at(box.lo[0] + i, box.lo[1] + j, box.lo[2] + k);
    return out;
}

// --- resample ---------------------------------------------------------------

VoxelGrid resample(const VoxelGrid& g, const Spacing& target) {
    const auto src = g.spacings();
    const std::array<double, 3> tgt{target.s_inp, target.s_inp, target.s_sep};

    std::array<int, 3> nshape;
    std::array<double, 3> ratio;
    for (int a = 0; a < 3; ++a) {
        ratio[a] = tgt[a] / src[a];
        nshape[a] = std::max(1, int(std::ceil(double(g.shape[a]) * src[a] / tgt[a] - 1e-9)));
    }

    // Rescale columns and shift the origin so the field-of-view corner stays
    // put: new center k maps to old fractional index (k+0.5)*ratio - 0.5.
    Mat4 na = g.affine;
    for (int a = 0; a < 3; ++a) {
        for (int r = 0; r < 3; ++r) na.at(r, a) = g.affine.at(r, a) * ratio[a];
        const double shift = 0.5 * ratio[a] - 0.5;
        for (int r = 0; r < 3; ++r)
            na.at(r, 3) += g.affine.at(r, a) * shift;
    }

    VoxelGrid out(nshape, na);
    auto sample = [&](double fi, double fj, double fk) -> float {
        auto prep = [](double f, int n, int& lo, double& t) {
            f = std::clamp(f, 0.0, double(n - 1));
            lo = std::min(int(std::floor(f)), n - 2 < 0 ? 0 : n - 2);
            if (n == 1) { lo = 0; t = 0.0; return; }
            t = f - lo;
        };
        int i0, j0, k0;
        double ti, tj, tk;
        prep(fi, g.shape[0], i0, ti);
        prep(fj, g.shape[1], j0, tj);
        prep(fk, g.shape[2], k0, tk);
        const int i1 = std::min(i0 + 1, g.shape[0] - 1);
        const int j1 = std::min(j0 + 1, g.shape[1] - 1);
        const int k1 = std::min(k0 + 1, g.shape[2] - 1);
        double acc = 0.0;
        for (int ci = 0; ci < 2; ++ci)
            for (int cj = 0; cj < 2; ++cj)
                for (int ck = 0; ck < 2; ++ck) {
                    const double w = (ci ? ti : 1 - ti) * (cj ? tj : 1 - tj) * (ck ? tk : 1 - tk);
                    if (w == 0.0) continue;
                    acc += w * g.at(ci ? i1 : i0, cj ? j1 : j0, ck ? k1 : k0);
                }
        return float(acc);
    };

    for (int i = 0; i < nshape[0]; ++i)
        for (int j = 0; j < nshape[1]; ++j)
            for (int k = 0; k < nshape[2]; ++k)
                out.at(i, j, k) = sample((i + 0.5) * ratio[0] - 0.5,
                                         (j + 0.5) * ratio[1] - 0.5,
                                         (k + 0.5) * ratio[2] - 0.5);
    return out;
}

VoxelGrid resample_onto(const VoxelGrid& src, const std::array<int, 3>& shape,
                        const Mat4& affine) {
    const Mat4 to_src = src.affine.inverse().mul(affine);
    VoxelGrid out(shape, affine);
    auto clampf = [](double f, int n) { return std::clamp(f, 0.0, double(n - 1)); };
    for (int i = 0; i < shape[0]; ++i)
        for (int j = 0; j < shape[1]; ++j)
            for (int k = 0; k < shape[2]; ++k) {
                auto f = to_src.apply(i, j, k);
                const double fi = clampf(f[0], src.shape[0]);
                const double fj = clampf(f[1], src.shape[1]);
                const double fk = clampf(f[2], src.shape[2]);
                const int i0 = std::min(int(fi), std::max(0, src.shape[0] - 2));
                const int j0 = std::min(int(fj), std::max(0, src.shape[1] - 2));
                const int k0 = std::min(int(fk), std::max(0, src.shape[2] - 2));
                const double ti = src.shape[0] == 1 ? 0.0 : fi - i0;
                const double tj = src.shape[1] == 1 ? 0.0 : fj - j0;
                const double tk = src.shape[2] == 1 ? 0.0 : fk - k0;
                const int i1 = std::min(i0 + 1, src.shape[0] - 1);
                const int j1 = std::min(j0 + 1, src.shape[1] - 1);
                const int k1 = std::min(k0 + 1, src.shape[2] - 1);
                double acc = 0.0;
                for (int ci = 0; ci < 2; ++ci)
                    for (int cj = 0; cj < 2; ++cj)
                        for (int ck = 0; ck < 2; ++ck) {
                            const double w = (ci ? ti : 1 - ti) * (cj ? tj : 1 - tj) *
                                             (ck ? tk : 1 - tk);
                            if (w == 0.0) continue;
                            acc += w * src.at(ci ? i1 : i0, cj ? j1 : j0, ck ? k1 : k0);
                        }
                out.at(i, j, k) = float(acc);
            }
    return out;
}

// --- dice -------------------------------------------------------------------

double dice(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_geometry(b)) throw DomainError("dice: geometry mismatch");
    std::int64_t na = 0, nb = 0, ni = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        na += a.values[i];
        nb += b.values[i];
        ni += a.values[i] & b.values[i];
    }
    if (na + nb == 0) return 1.0;  // two empty masks agree perfectly
    return 2.0 * double(ni) / double(na + nb);
}

// --- roi_report -------------------------------------------------------------

RoiReport roi_report(const VoxelGrid& g, const BinaryMask& m) {
    if (!m.same_geometry(g)) throw DomainError("roi_report: geometry mismatch");
    const std::int64_t n = m.count();
    if (n == 0) throw DomainError("roi_report: empty mask");

    RoiReport rep;
    const auto sp = g.spacings();
    // Voxel volume from the affine determinant covers sheared grids too.
    rep.volume_mm3 = double(n) * std::abs(g.affine.det3());

    // Extents from voxel corners so a single voxel spans one spacing.
    std::array<double, 3> half[3];
    for (int c = 0; c < 3; ++c) {
        auto col = g.affine.column3(c);
        half[c] = {0.5 * col[0], 0.5 * col[1], 0.5 * col[2]};
    }
    std::array<double, 3> wlo{1e300, 1e300, 1e300}, whi{-1e300, -1e300, -1e300};
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < g.shape[0]; ++i)
        for (int j = 0; j < g.shape[1]; ++j)
            for (int k = 0; k < g.shape[2]; ++k) {
                if (!m.at(i, j, k)) continue;
                const double v = g.at(i, j, k);
                sum += v;
                sumsq += v * v;
                auto w = g.world(i, j, k);
                for (int c = 0; c < 8; ++c)
                    for (int a = 0; a < 3; ++a) {
                        const double corner = w[a] + ((c & 1) ? half[0][a] : -half[0][a]) +
                                              ((c & 2) ? half[1][a] : -half[1][a]) +
                                              ((c & 4) ? half[2][a] : -half[2][a]);
                        wlo[a] = std::min(wlo[a], corner);
                        whi[a] = std::max(whi[a], corner);
                    }
            }
    for (int a = 0; a < 3; ++a) rep.extents_mm[a] = whi[a] - wlo[a];

    rep.mean = sum / double(n);
    const double var = std::max(0.0, sumsq / double(n) - rep.mean * rep.mean);
    rep.stddev = std::sqrt(var);
    if (rep.stddev > 1e-8)
        rep.snr = rep.mean / rep.stddev;
    else
        rep.degenerate_stats = true;
    (void)sp;
    return rep;
}

// --- preprocess -------------------------------------------------------------

VoxelGrid preprocess_volume(const VoxelGrid& g) {
    VoxelGrid out = conform_ras(g);
    const auto sp = out.spacings();
    const double rel = std::abs(sp[0] - sp[1]) / std::max(sp[0], sp[1]);
    if (rel > 1e-3) {
        // Appendix-style native convolutions assume one in-plane spacing.
        const double iso = std::min(sp[0], sp[1]);
        out = resample(out, Spacing(iso, sp[2]));
    }
    return normalize01(out);
}

}  // namespace voxa
