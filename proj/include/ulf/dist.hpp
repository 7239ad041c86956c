#pragma once

#include "branching.hpp"

#include <map>

namespace ulf {

// ---------------------------------------------------------------------------
// Finite models of locally analytic functions and distributions.
//
// A function on Z_p (or on the unipotent chart Z_p^{n^2}) is stored at a
// congruence level r and a degree cap d: on each residue coset b + p^r Z_p
// we keep the Taylor coefficients of f in the scaled coordinate
// y = (z - b)/p^r, truncated to total degree <= d.  A distribution keeps the
// dual data: the moments mu(1_{b + p^r} * y^k) for the same index set.  The
// pairing <mu, f> = sum_b sum_k mu(b,k) f(b,k) is then exact on polynomials
// of total degree <= d and correct up to O(p^{r(d+1)}) on power series with
// integral Taylor coefficients, because the dropped terms carry y^k with
// |k| > d and |y| <= 1 scaled by p^{r|k|} in the unscaled coordinate.
//
// The truncation is by TOTAL degree, not by per-variable degree.  This is
// the property that makes the whole calculus rigid: an affine substitution
// y -> c + A y maps the space of polynomials of total degree <= d into
// itself, so transporting a distribution by a translation-contraction
// (the building block of the U_p operator) is EXACT at fixed (r, d) -- no
// truncation error at all, and in particular changing the chosen coset
// representatives of the contraction perturbs nothing, to any precision.
// Only genuinely nonlinear changes of variable (the weighting pushforward
// below, or a general Iwahori substitution) pay the O(p^{r(d+1)}) toll.
//
// Scalars may carry up to two auxiliary deformation variables w with their
// own truncation cap; a table with wk = 0 is the classical case.  A global
// prefactor p^{-val_offset} rides along with every distribution so that
// unbounded (finite-slope) objects keep integral stored digits.
// ---------------------------------------------------------------------------

enum class DomainTag { line, units, chart };

/** Where a table lives: Z_p, Z_p^x, or the unipotent chart of rank n. */
struct Domain {
    DomainTag tag = DomainTag::line;
    int n = 0;  // chart rank; unused for line/units

    bool operator==(const Domain& o) const { return tag == o.tag && n == o.n; }

    int dim() const { return tag == DomainTag::chart ? n * n : 1; }

    /** Chart coordinate slots: strict uppers of both components, row-major. */
    struct Slot {
        int comp;  // 0: rank n+1 factor, 1: rank n factor
        int i, j;
    };
    std::vector<Slot> slots() const {
        std::vector<Slot> s;
        if (tag != DomainTag::chart) {
            s.push_back({0, 0, 1});
            return s;
        }
        for (int i = 0; i <= n; ++i)
            for (int j = i + 1; j <= n; ++j) s.push_back({0, i, j});
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) s.push_back({1, i, j});
        return s;
    }

    /**
     * Congruence center of the depth-one support cell: the strict upper
     * entries of the translation element (last column ones in the first
     * component, zero in the second).  Distributions feeding the weighting
     * pushforward must be supported on cosets congruent to this mod p.
     */
    std::vector<i64> support_center() const {
        std::vector<i64> c;
        for (auto& s : slots()) c.push_back(s.comp == 0 && s.j == n ? 1 : 0);
        return c;
    }

    /** Contraction exponent of slot t: conjugation by t_p scales it by p^{j-i}. */
    int contract_exp(int t) const {
        auto s = slots()[size_t(t)];
        return s.j - s.i;
    }
};

// ---------------------------------------------------------------------------
// Truncated jets: dense polynomials in ny coordinate variables (total degree
// <= dy) and nw deformation variables (total degree <= dw), coefficients in
// a fixed ring.  Jet specs are interned; all arithmetic clips to the simplex.
// ---------------------------------------------------------------------------

struct JetSpec {
    int ny, dy, nw, dw;
    std::vector<std::vector<int>> exps;  // all admissible exponent vectors
    std::vector<int> keymap;             // dense mixed-radix key -> index, -1 outside
    long keysize = 1;

    JetSpec(int ny_, int dy_, int nw_, int dw_) : ny(ny_), dy(dy_), nw(nw_), dw(dw_) {
        if (ny < 0 || nw < 0 || dy < 0 || dw < 0) throw precondition_error("JetSpec: bad shape");
        for (int t = 0; t < ny; ++t) keysize *= dy + 1;
        for (int t = 0; t < nw; ++t) keysize *= dw + 1;
        if (keysize > (1 << 22)) throw precondition_error("JetSpec: truncation too large");
        keymap.assign(size_t(keysize), -1);
        std::vector<int> e(size_t(ny + nw), 0);
        // odometer over the box, keep the block-simplex points
        for (long key = 0; key < keysize; ++key) {
            long kk = key;
            int sy = 0, sw = 0;
            for (int t = 0; t < ny; ++t) {
                e[size_t(t)] = int(kk % (dy + 1));
                kk /= dy + 1;
                sy += e[size_t(t)];
            }
            for (int t = 0; t < nw; ++t) {
                e[size_t(ny + t)] = int(kk % (dw + 1));
                kk /= dw + 1;
                sw += e[size_t(ny + t)];
            }
            if (sy <= dy && sw <= dw) {
                keymap[size_t(key)] = int(exps.size());
                exps.push_back(e);
            }
        }
    }

    int nvars() const { return ny + nw; }
    int size() const { return int(exps.size()); }

    long key_of(const std::vector<int>& e) const {
        long key = 0, radix = 1;
        for (int t = 0; t < ny; ++t) {
            if (e[size_t(t)] > dy) return -1;
            key += e[size_t(t)] * radix;
            radix *= dy + 1;
        }
        for (int t = 0; t < nw; ++t) {
            if (e[size_t(ny + t)] > dw) return -1;
            key += e[size_t(ny + t)] * radix;
            radix *= dw + 1;
        }
        return key;
    }
    /** Index of an exponent vector, or -1 when it falls outside the simplex. */
    int index(const std::vector<int>& e) const {
        long key = key_of(e);
        return key < 0 ? -1 : keymap[size_t(key)];
    }
};

inline const JetSpec* jet_spec(int ny, int dy, int nw, int dw) {
    static std::map<std::tuple<int, int, int, int>, JetSpec> cache;
    auto k = std::make_tuple(ny, dy, nw, dw);
    auto it = cache.find(k);
    if (it == cache.end()) it = cache.emplace(k, JetSpec(ny, dy, nw, dw)).first;
    return &it->second;
}

struct Jet {
    const Ring* R = nullptr;
    const JetSpec* S = nullptr;
    std::vector<Elt> c;

    Jet() = default;
    Jet(const Ring* R_, const JetSpec* S_) : R(R_), S(S_), c(size_t(S_->size()), Elt(R_)) {}

    static Jet constant(const Ring* R, const JetSpec* S, const Elt& v) {
        Jet j(R, S);
        j.c[0] = v;  // exponent 0 is always index 0 (first key)
        return j;
    }
    static Jet variable(const Ring* R, const JetSpec* S, int t) {
        Jet j(R, S);
        std::vector<int> e(size_t(S->nvars()), 0);
        e[size_t(t)] = 1;
        int idx = S->index(e);
        if (idx < 0) throw precondition_error("Jet::variable: cap is zero");
        j.c[size_t(idx)] = Elt::one(R);
        return j;
    }

    bool is_zero() const {
        for (auto& x : c)
            if (!x.is_zero()) return false;
        return true;
    }

    Jet operator+(const Jet& o) const {
        Jet r = *this;
        for (size_t i = 0; i < c.size(); ++i) r.c[i] = r.c[i] + o.c[i];
        return r;
    }
    Jet operator-(const Jet& o) const {
        Jet r = *this;
        for (size_t i = 0; i < c.size(); ++i) r.c[i] = r.c[i] - o.c[i];
        return r;
    }
    Jet operator*(const Elt& s) const {
        Jet r = *this;
        for (auto& x : r.c) x = x * s;
        return r;
    }
    Jet operator*(long long k) const {
        Jet r = *this;
        for (auto& x : r.c) x = x * k;
        return r;
    }
    /** Truncating product: exponent sums outside the simplex are dropped. */
    Jet operator*(const Jet& o) const {
        Jet r(R, S);
        int nv = S->nvars();
        std::vector<int> e(size_t(nv), 0);
        for (size_t i = 0; i < c.size(); ++i) {
            if (c[i].is_zero()) continue;
            const auto& ei = S->exps[i];
            for (size_t j = 0; j < o.c.size(); ++j) {
                if (o.c[j].is_zero()) continue;
                const auto& ej = S->exps[j];
                for (int t = 0; t < nv; ++t) e[size_t(t)] = ei[size_t(t)] + ej[size_t(t)];
                int idx = S->index(e);
                if (idx >= 0) r.c[size_t(idx)] = r.c[size_t(idx)] + c[i] * o.c[j];
            }
        }
        return r;
    }
};

/** Exact division by a nonzero integer: p-part peeled off, unit part inverted. */
inline Elt div_exact_int(const Elt& x, i64 k) {
    if (k == 0) throw precondition_error("div_exact_int: zero divisor");
    bool neg = k < 0;
    if (neg) k = -k;
    int s = 0;
    while (k % x.R->p == 0) {
        k /= x.R->p;
        ++s;
    }
    auto q = detail::div_pk(x, s);
    if (!q) throw verification_error("div_exact_int: division is not exact");
    Elt r = *q * unit_inverse(Elt(x.R, k));
    return neg ? -r : r;
}

/** Inverse of a jet whose constant coefficient is a unit. */
inline Jet jet_inverse(const Jet& a) {
    if (!is_unit(a.c[0])) throw precondition_error("jet_inverse: constant term not a unit");
    Elt c0inv = unit_inverse(a.c[0]);
    // a = c0 (1 + u) with u nilpotent modulo the truncation; geometric series
    Jet u = a * c0inv;
    u.c[0] = u.c[0] - Elt::one(a.R);
    Jet acc = Jet::constant(a.R, a.S, c0inv);
    Jet term = Jet::constant(a.R, a.S, c0inv);
    int nil = a.S->dy + a.S->dw;
    for (int k = 1; k <= nil; ++k) {
        term = term * u;
        for (auto& x : term.c) x = -x;
        acc = acc + term;
    }
    return acc;
}

/** Evaluation context so branching generators can be evaluated on jets. */
struct JetCtx {
    const Ring* R;
    const JetSpec* S;
    Jet zero() const { return Jet(R, S); }
    Jet one() const { return Jet::constant(R, S, Elt::one(R)); }
    Jet inv(const Jet& x) const { return jet_inverse(x); }
    Jet from_int(long long k) const { return Jet::constant(R, S, Elt(R, k)); }
};

namespace detail {

/** Working ring with extra digits so series divisions keep N correct places. */
inline const Ring* headroom_ring(const Ring* R, int extra) {
    int Nw = R->N + extra;
    int cap = max_exponent(R->p);
    if (Nw > cap) Nw = cap;
    return ring(R->p, Nw, R->m);
}

inline Jet jet_lift(const Jet& a, const Ring* S) {
    Jet r(S, a.S);
    for (size_t i = 0; i < a.c.size(); ++i) r.c[i] = a.c[i].lift_to(S);
    return r;
}
inline Jet jet_reduce(const Jet& a, const Ring* S) {
    Jet r(S, a.S);
    for (size_t i = 0; i < a.c.size(); ++i) r.c[i] = a.c[i].reduce_to(S);
    return r;
}

}  // namespace detail

/**
 * Logarithm of a jet with constant term in 1 + pZ_p.  Series terms u^k / k
 * are computed with digit headroom so the divisions only shed digits above
 * the caller's precision; the input's own O(p^N) ambiguity propagates
 * 1-Lipschitz for p >= 3.
 */
inline Jet jet_log(const Jet& a) {
    const Ring* R = a.R;
    if (R->p == 2) throw precondition_error("jet_log: p = 2 outside convergence setup");
    Elt um = a.c[0] - Elt::one(R);
    if (!detail::div_pk(um, 1))
        throw precondition_error("jet_log: constant term not a 1-unit");
    // number of terms: after K, val(u^k / k) >= k - log_p k >= N
    int K = R->N + 2;
    while (K - vp_int(K, R->p, 64) < R->N + 1) ++K;
    int guard = 1;
    for (int k = 2; k <= K; ++k) guard = std::max(guard, vp_int(k, R->p, 64));
    const Ring* W = detail::headroom_ring(R, guard + 1);
    Jet u = detail::jet_lift(a, W);
    u.c[0] = u.c[0] - Elt::one(W);
    Jet acc(W, a.S);
    Jet upow = Jet::constant(W, a.S, Elt::one(W));
    int nil = a.S->dy + a.S->dw;
    for (int k = 1; k <= K; ++k) {
        upow = upow * u;
        // beyond the nilpotency order only the scalar part still moves
        if (k > nil && upow.is_zero()) break;
        Jet term = upow;
        for (auto& x : term.c) x = div_exact_int(x, k);
        if (k % 2 == 0)
            for (auto& x : term.c) x = -x;
        acc = acc + term;
    }
    return detail::jet_reduce(acc, R);
}

/** Exponential of a jet all of whose coefficients are divisible by p (p >= 3). */
inline Jet jet_exp(const Jet& a) {
    const Ring* R = a.R;
    if (R->p == 2) throw precondition_error("jet_exp: p = 2 outside convergence setup");
    for (auto& x : a.c)
        if (!detail::div_pk(x, 1)) throw precondition_error("jet_exp: argument not in p * (integral jet)");
    // v_p(x^k / k!) >= k - (k-1)/(p-1): run until that clears N
    int K = 1;
    auto vfact = [&](int k) {
        int v = 0;
        for (i64 q = R->p; q <= k; q *= R->p) v += int(k / q);
        return v;
    };
    while (K - vfact(K) < R->N + 1) ++K;
    const Ring* W = detail::headroom_ring(R, vfact(K) + 1);
    Jet u = detail::jet_lift(a, W);
    Jet acc = Jet::constant(W, a.S, Elt::one(W));
    Jet upow = acc;
    i64 fact_unit = 1;
    int fact_p = 0;
    for (int k = 1; k <= K; ++k) {
        upow = upow * u;
        if (upow.is_zero()) break;
        Jet term = upow;
        for (auto& x : term.c) {
            // divide by k! = p^{fact_p} * fact_unit incrementally tracked
            auto q = detail::div_pk(x, fact_p + vp_int(k, R->p, 64));
            if (!q) throw verification_error("jet_exp: factorial division not exact");
            x = *q;
        }
        fact_p += vp_int(k, R->p, 64);
        i64 ku = k;
        while (ku % R->p == 0) ku /= R->p;
        fact_unit = (fact_unit * ku) % W->pN;
        Elt finv = unit_inverse(Elt(W, fact_unit));
        for (auto& x : term.c) x = x * finv;
        acc = acc + term;
    }
    return detail::jet_reduce(acc, R);
}

// ---------------------------------------------------------------------------
// Tables.
// ---------------------------------------------------------------------------

struct TableShape {
    const Ring* R = nullptr;
    Domain dom;
    int r = 0, d = 0;
    int wk = 0, wD = 0;
    bool restricted = false;  // only the depth-one support cosets are stored
    const JetSpec* mspec = nullptr;  // degree simplex over the coordinates
    const JetSpec* wspec = nullptr;  // deformation simplex
    std::vector<std::vector<i64>> centers;
    std::map<std::vector<i64>, int> center_index;

    TableShape() = default;
    TableShape(const Ring* R_, Domain dom_, int r_, int d_, int wk_ = 0, int wD_ = 0,
               bool restricted_ = false)
        : R(R_), dom(dom_), r(r_), d(d_), wk(wk_), wD(wD_), restricted(restricted_) {
        if (r < 0 || d < 0) throw precondition_error("table: negative level or degree");
        if (dom.tag == DomainTag::units && r < 1)
            throw precondition_error("table: unit-group tables need level >= 1");
        if (restricted && dom.tag != DomainTag::chart)
            throw precondition_error("table: support restriction applies to the chart only");
        if (restricted && r < 1)
            throw precondition_error("table: restricted tables need level >= 1");
        if (wk < 0 || wk > 2) throw precondition_error("table: at most two deformation variables");
        mspec = jet_spec(dom.dim(), d, 0, 0);
        wspec = jet_spec(0, 0, wk, wD);
        enumerate_centers();
        double total = double(centers.size()) * mspec->size() * wspec->size();
        if (total > 8e6) throw precondition_error("table: requested size too large");
    }

    void enumerate_centers() {
        i64 p = R->p;
        if (dom.tag != DomainTag::chart) {
            i64 pr = ipow(p, r);
            for (i64 b = 0; b < pr; ++b) {
                if (dom.tag == DomainTag::units && b % p == 0) continue;
                centers.push_back({b});
            }
        } else {
            int nd = dom.dim();
            std::vector<i64> ctr = dom.support_center();
            i64 range = restricted ? ipow(p, r - 1) : ipow(p, r);
            long total = 1;
            for (int t = 0; t < nd; ++t) {
                if (total > (1 << 24) / std::max<i64>(range, 1))
                    throw precondition_error("table: chart coset count too large");
                total *= long(range);
            }
            std::vector<i64> v(size_t(nd), 0);
            for (long idx = 0; idx < total; ++idx) {
                long t0 = idx;
                for (int t = 0; t < nd; ++t) {
                    i64 u = t0 % range;
                    t0 /= range;
                    v[size_t(t)] = restricted ? ctr[size_t(t)] + p * u : u;
                }
                centers.push_back(v);
            }
        }
        for (int i = 0; i < int(centers.size()); ++i) center_index[centers[size_t(i)]] = i;
    }

    int ncosets() const { return int(centers.size()); }
    size_t idx(int ci, int mi, int wi) const {
        return (size_t(ci) * size_t(mspec->size()) + size_t(mi)) * size_t(wspec->size()) +
               size_t(wi);
    }
    size_t total() const { return centers.size() * size_t(mspec->size()) * size_t(wspec->size()); }

    bool same(const TableShape& o) const {
        return R == o.R && dom == o.dom && r == o.r && d == o.d && wk == o.wk && wD == o.wD &&
               restricted == o.restricted;
    }

    /** Coset index of an integer point, reduced mod p^r (canonical residues). */
    int coset_of(const std::vector<i64>& z) const {
        i64 pr = ipow(R->p, r);
        std::vector<i64> b(z.size());
        for (size_t t = 0; t < z.size(); ++t) b[t] = ((z[t] % pr) + pr) % pr;
        auto it = center_index.find(b);
        if (it == center_index.end())
            throw precondition_error("coset_of: point outside the stored support");
        return it->second;
    }
};

/** Taylor-coefficient table of a locally analytic function. */
struct LocAnFunction {
    TableShape sh;
    std::vector<Elt> c;

    LocAnFunction() = default;
    explicit LocAnFunction(TableShape s) : sh(std::move(s)), c(sh.total(), Elt(sh.R)) {}
    Elt& at(int ci, int mi, int wi = 0) { return c[sh.idx(ci, mi, wi)]; }
    const Elt& at(int ci, int mi, int wi = 0) const { return c[sh.idx(ci, mi, wi)]; }
};

/** Moment table of a distribution; true values are p^{-val_offset} * stored. */
struct Distribution {
    TableShape sh;
    std::vector<Elt> m;
    int val_offset = 0;

    Distribution() = default;
    explicit Distribution(TableShape s) : sh(std::move(s)), m(sh.total(), Elt(sh.R)) {}
    Elt& at(int ci, int mi, int wi = 0) { return m[sh.idx(ci, mi, wi)]; }
    const Elt& at(int ci, int mi, int wi = 0) const { return m[sh.idx(ci, mi, wi)]; }
};

// ---------------------------------------------------------------------------
// Constructors.
// ---------------------------------------------------------------------------

/** Dirac mass at an integral point: exact moments ((z - b)/p^r)^k. */
inline Distribution dirac(const TableShape& sh, const std::vector<i64>& z) {
    if (int(z.size()) != sh.dom.dim()) throw precondition_error("dirac: wrong coordinate count");
    Distribution mu(sh);
    int ci = sh.coset_of(z);
    i64 pr = ipow(sh.R->p, sh.r);
    // scaled offsets (z_t - b_t)/p^r as exact ring elements
    std::vector<Elt> step;
    const auto& b = sh.centers[size_t(ci)];
    for (size_t t = 0; t < z.size(); ++t) {
        i64 diff = z[t] - b[t];
        if (diff % pr != 0) throw verification_error("dirac: coset resolution failed");
        step.push_back(Elt(sh.R, diff / pr));
    }
    for (int mi = 0; mi < sh.mspec->size(); ++mi) {
        Elt v = Elt::one(sh.R);
        const auto& e = sh.mspec->exps[size_t(mi)];
        for (size_t t = 0; t < z.size(); ++t)
            for (int k = 0; k < e[t]; ++k) v = v * step[t];
        mu.at(ci, mi) = v;
    }
    return mu;
}

/** Bernoulli numbers B_0..B_12 (B_1 = -1/2 convention), exact rationals. */
inline std::pair<i64, i64> bernoulli(int k) {
    static const std::pair<i64, i64> tab[] = {{1, 1},  {-1, 2},    {1, 6},  {0, 1},  {-1, 30},
                                              {0, 1},  {1, 42},    {0, 1},  {-1, 30}, {0, 1},
                                              {5, 66}, {0, 1},     {-691, 2730}};
    if (k < 0 || k > 12) throw precondition_error("bernoulli: degree cap is 12");
    return tab[k];
}

/**
 * The additive Haar functional on Z_p, total mass one: the k-th scaled
 * moment on each level-r coset is p^{-r} B_k (Faulhaber's formula applied
 * to power-sum averages over a coset).  Stored with offset r + 1; von
 * Staudt-Clausen bounds the denominator's p-part by one, so the digits are
 * integral.  Note there is no bounded translation-invariant functional on
 * Z_p: the coset masses p^{-r} force per-level norms p^{r+1}, growth
 * exponent exactly one.  Translation-and-contraction invariance makes this
 * table an exact eigenvector of the level sum: sum_a pi(n_a t_p) haar =
 * p * haar, the standard slope-one test object.
 */
inline Distribution haar_table(const Ring* R, Domain dom, int r, int d) {
    if (dom.dim() != 1) throw precondition_error("haar_table: one-dimensional domains only");
    if (dom.tag == DomainTag::units) throw precondition_error("haar_table: additive domains only");
    TableShape sh(R, dom, r, d);
    Distribution mu(sh);
    mu.val_offset = r + 1;
    for (int k = 0; k <= d; ++k) {
        auto [num, den] = bernoulli(k);
        if (num == 0) continue;
        // stored = p^{r+1} * p^{-r} * B_k = p * num / den
        Elt v(R, num);
        i64 dd = den;
        int s = 0;
        while (dd % R->p == 0) {
            dd /= R->p;
            ++s;
        }
        if (s > 1) throw verification_error("haar_table: denominator p-part exceeds one");
        v = v * unit_inverse(Elt(R, dd));
        if (s == 0) v = v * R->p;
        std::vector<int> e{k};
        int mi = sh.mspec->index(e);
        for (int ci = 0; ci < sh.ncosets(); ++ci) mu.at(ci, mi) = v;
    }
    return mu;
}

inline Distribution haar_line(const Ring* R, int r, int d) {
    return haar_table(R, Domain{DomainTag::line, 0}, r, d);
}

/**
 * The function z^j on Z_p (j >= 0) or Z_p^x (any j), as per-coset Taylor
 * tables: (b + p^r y)^j expanded through the generalized binomial series,
 * truncated at degree d (exact when 0 <= j <= d).
 */
inline LocAnFunction monomial_function(const Ring* R, Domain dom, int r, int d, long j) {
    if (dom.tag == DomainTag::chart) throw precondition_error("monomial_function: scalar domains only");
    if (j < 0 && dom.tag != DomainTag::units)
        throw precondition_error("monomial_function: negative powers need the unit domain");
    if (j > 1000) throw precondition_error("monomial_function: exponent too large");
    TableShape sh(R, dom, r, d);
    LocAnFunction f(sh);
    const JetSpec* S = jet_spec(1, d, 0, 0);
    for (int ci = 0; ci < sh.ncosets(); ++ci) {
        i64 b = sh.centers[size_t(ci)][0];
        if (j >= 0) {
            // exact: the j-th power of the linear jet b + p^r y
            Jet lin(R, S);
            lin.c[size_t(S->index({0}))] = Elt(R, b);
            lin.c[size_t(S->index({1}))] = Elt(R, ipow(R->p, std::min(r, R->N)));
            Jet pw = Jet::constant(R, S, Elt::one(R));
            for (long t = 0; t < j; ++t) pw = pw * lin;
            for (int k = 0; k <= d; ++k) f.at(ci, sh.mspec->index({k})) = pw.c[size_t(S->index({k}))];
        } else {
            // unit coset: generalized binomial series C(j,k) b^{j-k} p^{rk},
            // with integer C(j,k) by the exact recurrence C(j,k)(j-k)/(k+1)
            Elt binv = unit_inverse(Elt(R, b));
            Elt bpow = binv.pow(-j);  // b^j
            i64 bc = 1;
            for (int k = 0; k <= d; ++k) {
                i64 rk = i64(r) * k;
                if (rk < R->N && bc != 0)
                    f.at(ci, sh.mspec->index({k})) =
                        Elt(R, bc) * bpow * Elt(R, ipow(R->p, int(rk)));
                bpow = bpow * binv;
                i128 nx = i128(bc) * (j - k);
                if (nx % (k + 1) != 0) throw verification_error("monomial_function: binomial recurrence");
                bc = i64(nx / (k + 1));
            }
        }
    }
    return f;
}

inline LocAnFunction constant_function(const Ring* R, Domain dom, int r, int d, const Elt& v) {
    TableShape sh(R, dom, r, d);
    LocAnFunction f(sh);
    for (int ci = 0; ci < sh.ncosets(); ++ci) f.at(ci, 0) = v;
    return f;
}

/** Chart coordinates of an upper-unipotent pair (strict uppers, row-major). */
inline std::vector<i64> chart_coords(const GElt& x) {
    Domain dom{DomainTag::chart, x.n};
    std::vector<i64> z;
    for (auto& sl : dom.slots()) {
        const Elt& e = sl.comp == 0 ? x.g1.at(sl.i, sl.j) : x.g2.at(sl.i, sl.j);
        z.push_back(e.c[0]);
    }
    return z;
}

/**
 * The branching vector u_{(mu,lambda)} restricted to the chart, as a Taylor
 * table.  Well-defined on every coset: on unipotent pairs both determinants
 * are 1, so the only inversions are by integer denominators, and ufunc
 * exponents of non-constant generators are nonnegative on interlacing pairs.
 */
inline LocAnFunction branch_function(const TableShape& sh, const WeightPair& w) {
    if (sh.dom.tag != DomainTag::chart) throw precondition_error("branch_function: chart domain only");
    if (sh.dom.n != w.n) throw precondition_error("branch_function: rank mismatch");
    int n = w.n, nd = sh.dom.dim();
    const BranchGens& G = fundamental_generators(n);
    UFunc fu = ufunc_of(w);
    const JetSpec* JS = jet_spec(nd, sh.d, 0, 0);
    JetCtx C{sh.R, JS};
    LocAnFunction f(sh);
    i64 pr = ipow(sh.R->p, sh.r);
    auto slots = sh.dom.slots();
    for (int ci = 0; ci < sh.ncosets(); ++ci) {
        const auto& b = sh.centers[size_t(ci)];
        std::vector<Jet> vars(size_t(branch_nvars(n)), Jet(sh.R, JS));
        for (int i = 0; i <= n; ++i) vars[size_t(bvar1(n, i, i))] = C.one();
        for (int i = 0; i < n; ++i) vars[size_t(bvar2(n, i, i))] = C.one();
        for (int t = 0; t < nd; ++t) {
            auto sl = slots[size_t(t)];
            int vi = sl.comp == 0 ? bvar1(n, sl.i, sl.j) : bvar2(n, sl.i, sl.j);
            Jet v = Jet::constant(sh.R, JS, Elt(sh.R, b[size_t(t)]));
            std::vector<int> e(size_t(nd), 0);
            e[size_t(t)] = 1;
            int li = JS->index(e);
            if (li >= 0) v.c[size_t(li)] = Elt(sh.R, pr);  // degree-0 jets keep constants only
            vars[size_t(vi)] = v;
        }
        Jet uj = eval_ufunc(G, fu, vars, C);
        for (int mi = 0; mi < sh.mspec->size(); ++mi)
            f.at(ci, mi) = uj.c[size_t(JS->index(sh.mspec->exps[size_t(mi)]))];
    }
    return f;
}

// ---------------------------------------------------------------------------
// Pairing, norms, growth.
// ---------------------------------------------------------------------------

/**
 * <mu, f> as a deformation jet (exponent blocks multiply); the caller scales
 * by p^{-mu.val_offset}.  Shapes must agree in ring, domain, level, degree.
 */
inline Jet pair_jet(const Distribution& mu, const LocAnFunction& f) {
    if (mu.sh.R != f.sh.R || !(mu.sh.dom == f.sh.dom) || mu.sh.r != f.sh.r || mu.sh.d != f.sh.d)
        throw precondition_error("pair: incompatible tables");
    int wk = std::max(mu.sh.wk, f.sh.wk);
    int wD = std::max(mu.sh.wD, f.sh.wD);
    if (mu.sh.wk > 0 && f.sh.wk > 0 && (mu.sh.wk != f.sh.wk || mu.sh.wD != f.sh.wD))
        throw precondition_error("pair: mismatched deformation blocks");
    const JetSpec* WS = jet_spec(0, 0, wk, wD);
    Jet out(mu.sh.R, WS);
    for (int ci = 0; ci < mu.sh.ncosets(); ++ci) {
        auto it = f.sh.center_index.find(mu.sh.centers[size_t(ci)]);
        if (it == f.sh.center_index.end())
            throw precondition_error("pair: function table misses a support coset");
        int cj = it->second;
        for (int mi = 0; mi < mu.sh.mspec->size(); ++mi)
            for (int wi = 0; wi < mu.sh.wspec->size(); ++wi) {
                const Elt& a = mu.at(ci, mi, wi);
                if (a.is_zero()) continue;
                for (int wj = 0; wj < f.sh.wspec->size(); ++wj) {
                    const Elt& b = f.at(cj, mi, wj);
                    if (b.is_zero()) continue;
                    std::vector<int> e(size_t(wk), 0);
                    for (int t = 0; t < mu.sh.wk; ++t) e[size_t(t)] += mu.sh.wspec->exps[size_t(wi)][size_t(t)];
                    for (int t = 0; t < f.sh.wk; ++t) e[size_t(t)] += f.sh.wspec->exps[size_t(wj)][size_t(t)];
                    int oi = WS->index(e);
                    if (oi >= 0) out.c[size_t(oi)] = out.c[size_t(oi)] + a * b;
                }
            }
    }
    return out;
}

/** Classical pairing: requires no deformation variables, returns a scalar. */
inline Elt pair_value(const Distribution& mu, const LocAnFunction& f) {
    Jet j = pair_jet(mu, f);
    if (j.S->nw != 0) throw precondition_error("pair_value: deformation variables present");
    return j.c[0];
}

/** Minimal stored valuation minus the offset: v such that |mu|_r = p^{-v}. */
inline long min_valuation(const Distribution& mu) {
    int best = std::numeric_limits<int>::max();
    for (auto& x : mu.m) {
        if (x.is_zero()) continue;
        best = std::min(best, coeff_valuation(x));
    }
    if (best == std::numeric_limits<int>::max()) return std::numeric_limits<long>::max() / 2;
    return long(best) - mu.val_offset;
}

/**
 * One coarsening step r -> r-1, exact: with b = b0 + p^{r-1} c the scaled
 * coordinates satisfy y' = c + p y, and total degree is preserved, so the
 * binomial re-expansion loses nothing.
 */
inline Distribution coarsen_distribution(const Distribution& mu) {
    const TableShape& s = mu.sh;
    if (s.r < 1) throw precondition_error("coarsen: already at level zero");
    if (s.dom.tag == DomainTag::units && s.r == 1)
        throw precondition_error("coarsen: unit-group tables stop at level one");
    if (s.restricted && s.r == 1) throw precondition_error("coarsen: restricted tables stop at level one");
    TableShape sh2(s.R, s.dom, s.r - 1, s.d, s.wk, s.wD, s.restricted);
    Distribution out(sh2);
    out.val_offset = mu.val_offset;
    int nd = s.dom.dim();
    i64 pr1 = ipow(s.R->p, s.r - 1);
    const JetSpec* JS = jet_spec(nd, s.d, 0, 0);
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& b = s.centers[size_t(ci)];
        std::vector<i64> b0(b.size());
        for (size_t t = 0; t < b.size(); ++t) b0[t] = b[t] % pr1;
        int cj = sh2.coset_of(b0);
        // y'_t = c_t + p y_t as exact linear jets
        std::vector<Jet> lin;
        for (size_t t = 0; t < b.size(); ++t) {
            Jet g(s.R, JS);
            g.c[0] = Elt(s.R, (b[t] - b0[t]) / pr1);
            std::vector<int> e(size_t(nd), 0);
            e[t] = 1;
            int li = JS->index(e);
            if (li >= 0) g.c[size_t(li)] = Elt(s.R, s.R->p);
            lin.push_back(g);
        }
        // walk the target exponents with shared prefix products
        std::vector<int> e(size_t(nd), 0);
        std::function<void(int, const Jet&, int)> rec = [&](int t, const Jet& J, int used) {
            if (t == nd) {
                int mj = sh2.mspec->index(e);
                for (int mi = 0; mi < s.mspec->size(); ++mi) {
                    const Elt& cf = J.c[size_t(JS->index(s.mspec->exps[size_t(mi)]))];
                    if (cf.is_zero()) continue;
                    for (int wi = 0; wi < s.wspec->size(); ++wi) {
                        const Elt& a = mu.at(ci, mi, wi);
                        if (!a.is_zero()) out.at(cj, mj, wi) = out.at(cj, mj, wi) + a * cf;
                    }
                }
                return;
            }
            Jet cur = J;
            for (int k = 0; used + k <= s.d; ++k) {
                e[size_t(t)] = k;
                rec(t + 1, cur, used + k);
                if (used + k < s.d) cur = cur * lin[size_t(t)];
            }
            e[size_t(t)] = 0;
        };
        Jet one = Jet::constant(s.R, JS, Elt::one(s.R));
        rec(0, one, 0);
    }
    return out;
}

/** One refinement step for functions, r -> r+1: substitution y = c + p y1. */
inline LocAnFunction refine_function(const LocAnFunction& f) {
    const TableShape& s = f.sh;
    TableShape sh2(s.R, s.dom, s.r + 1, s.d, s.wk, s.wD, s.restricted);
    LocAnFunction out(sh2);
    int nd = s.dom.dim();
    i64 pr = ipow(s.R->p, s.r);
    const JetSpec* JS = jet_spec(nd, s.d, 0, 0);
    for (int cj = 0; cj < sh2.ncosets(); ++cj) {
        const auto& b1 = sh2.centers[size_t(cj)];
        std::vector<i64> b(b1.size());
        for (size_t t = 0; t < b1.size(); ++t) b[t] = b1[t] % pr;
        int ci = s.coset_of(b);
        std::vector<Jet> lin;
        for (size_t t = 0; t < b1.size(); ++t) {
            Jet g(s.R, JS);
            g.c[0] = Elt(s.R, (b1[t] - b[t]) / pr);
            std::vector<int> e(size_t(nd), 0);
            e[t] = 1;
            int li = JS->index(e);
            if (li >= 0) g.c[size_t(li)] = Elt(s.R, s.R->p);
            lin.push_back(g);
        }
        for (int wi = 0; wi < s.wspec->size(); ++wi) {
            // G(y1) = sum_k f(b,k) prod lin^k, then read Taylor coefficients
            Jet G(s.R, JS);
            std::vector<int> e(size_t(nd), 0);
            std::function<void(int, const Jet&, int)> rec = [&](int t, const Jet& J, int used) {
                if (t == nd) {
                    const Elt& cf = f.at(ci, s.mspec->index(e), wi);
                    if (!cf.is_zero()) G = G + J * cf;
                    return;
                }
                Jet cur = J;
                for (int k = 0; used + k <= s.d; ++k) {
                    e[size_t(t)] = k;
                    rec(t + 1, cur, used + k);
                    if (used + k < s.d) cur = cur * lin[size_t(t)];
                }
                e[size_t(t)] = 0;
            };
            Jet one = Jet::constant(s.R, JS, Elt::one(s.R));
            rec(0, one, 0);
            for (int mi = 0; mi < sh2.mspec->size(); ++mi)
                out.at(cj, mi, wi) = G.c[size_t(JS->index(sh2.mspec->exps[size_t(mi)]))];
        }
    }
    return out;
}

/** Per-level sup norms |mu|_r' for r' <= r, with a fitted growth exponent. */
struct GrowthReport {
    std::vector<long> minvals;  // minvals[i] at level r_lo + i
    int r_lo = 0;
    double h = 0;      // fitted exponent: |mu|_r <= C p^{rh}
    double log_c = 0;  // log_p C

    bool admissible(double bound) const { return h <= bound + 1e-9; }
};

inline GrowthReport growth_report(const Distribution& mu) {
    GrowthReport g;
    int r_lo = (mu.sh.dom.tag == DomainTag::units || mu.sh.restricted) ? 1 : 0;
    g.r_lo = r_lo;
    std::vector<long> vals(size_t(mu.sh.r - r_lo + 1));
    Distribution cur = mu;
    for (int r = mu.sh.r; r >= r_lo; --r) {
        vals[size_t(r - r_lo)] = min_valuation(cur);
        if (r > r_lo) cur = coarsen_distribution(cur);
    }
    g.minvals = vals;
    // steepest consecutive climb of log_p |mu|_r = -minval, floored at zero
    double h = 0;
    for (size_t i = 0; i + 1 < vals.size(); ++i)
        h = std::max(h, double(vals[i] - vals[i + 1]));
    g.h = h;
    double lc = -1e18;
    for (size_t i = 0; i < vals.size(); ++i)
        lc = std::max(lc, double(-vals[i]) - double(r_lo + int(i)) * h);
    g.log_c = lc;
    return g;
}

// ---------------------------------------------------------------------------
// Transport: the right-translation action on chart distributions.
//
// The chart identifies the domain with representatives n_z of the cosets
// (lower triangular) \ (big cell).  Right multiplication descends to that
// quotient: for g in the monoid generated by the Iwahori and the contraction,
//     n_z g = (lower part) * t(z) * n_{sigma(z)}     (unique factorization)
// and the transported distribution is
//     (mu . g)(f) = mu( ch_w(t(z)) * f(sigma(z)) ).
// Because the junk factor stays lower triangular -- where leading minors are
// multiplicative -- the torus parts form an exact cocycle and transport obeys
// the composition law
//     (mu . g) . h = mu . (g h).
// At finite truncation the law is exact whenever h's flow is polynomial --
// h affine upper triangular, or a contraction word t_p^{-m} n_a -- because
// an exact polynomial substituted into truncated jets loses nothing.  For h
// with a nontrivial lower part sigma_h is a Mobius map and its multiplier is
// coordinate-dependent; the two-step route evaluates them at coset centers
// instead of true image points, so the law then holds to the analytic
// truncation: the degree-m moment block of the two sides differs by
// O(p^{r(d+1-m)}).  That composition law is what makes the Hecke sums
// downstream independent of coset-representative choices.  (Left
// multiplication does NOT descend to the quotient: conjugating the junk back
// across gamma produces upper-triangular debris, and no composition law
// survives at all.  The group element must sit on the right of the word.)
//
// For g = t_p^{-m} n_a the map sigma is AFFINE: n_z t_p^{-m} n_a =
// t_p^{-m} n_{p^m z} n_a, so sigma is the entry list of n_{p^m z} n_a and
// every occurrence of a source coordinate z_{ij} carries p^{m(j-i)}.  The
// contraction's own torus character value is dropped (the integral
// normalization of U_p), and the transport is exact at (r, d).
// For gamma in the Iwahori the factorization is computed by unit-pivot
// Gaussian elimination over jets, the torus jets are units, and their
// character multiplier is kept.  The second component's torus is normalized
// through the order-reversing Weyl element -- the same normalization that
// makes the contraction act by p^{j-i} on both components' chart entries --
// so its character exponents are the reversed negated lambda.
// ---------------------------------------------------------------------------

namespace detail {

struct FlowStep {
    std::vector<i64> center;  // target coset center (canonical residues)
    std::vector<Jet> delta;   // target scaled coordinates as jets in the source ones
    Jet mult;                 // weight multiplier jet
};

/** sigma for right translation by t_p^{-m} n_a: exact affine jets (m = 1 is
 *  the U_p building block; m > 1 realizes the level-deepening frame). */
inline std::vector<FlowStep> contract_flow(const TableShape& s, const std::vector<i64>& a,
                                           int m = 1) {
    if (s.dom.tag != DomainTag::chart) throw precondition_error("contract_flow: chart domain only");
    if (m < 1) throw precondition_error("contract_flow: contraction power must be positive");
    auto slots = s.dom.slots();
    int nd = s.dom.dim();
    if (int(a.size()) != nd) throw precondition_error("contract_flow: label count mismatch");
    // slot lookup by (comp, i, j)
    std::map<std::tuple<int, int, int>, int> slot_at;
    for (int t = 0; t < nd; ++t) slot_at[{slots[size_t(t)].comp, slots[size_t(t)].i, slots[size_t(t)].j}] = t;
    const JetSpec* JS = jet_spec(nd, s.d, 0, 0);
    i64 p = s.R->p, pr = ipow(p, s.r);
    std::vector<FlowStep> flow;
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& b = s.centers[size_t(ci)];
        FlowStep st;
        st.mult = Jet::constant(s.R, JS, Elt::one(s.R));
        st.center.resize(size_t(nd));
        // per slot: the affine form's linear part as (source slot, coefficient)
        std::vector<std::vector<std::pair<int, i64>>> linear;
        linear.resize(size_t(nd));
        std::vector<i64> cst(size_t(nd), 0);
        for (int t = 0; t < nd; ++t) {
            auto sl = slots[size_t(t)];
            // entry (i,j) of n_{p^m z} n_a:
            // sigma_t = a_t + p^{m(j-i)} z_t + sum_{i<k<j} p^{m(k-i)} z_{(i,k)} a_{(k,j)}
            cst[size_t(t)] = a[size_t(t)];
            linear[size_t(t)].push_back({t, ipow(p, m * (sl.j - sl.i))});
            for (int k = sl.i + 1; k < sl.j; ++k) {
                int t1 = slot_at[{sl.comp, sl.i, k}];
                int t2 = slot_at[{sl.comp, k, sl.j}];
                linear[size_t(t)].push_back({t1, a[size_t(t2)] * ipow(p, m * (k - sl.i))});
            }
        }
        // evaluate at z = b + p^r y, recenter, divide by p^r (all exact)
        for (int t = 0; t < nd; ++t) {
            i64 c0 = cst[size_t(t)];
            for (auto& [ts, cf] : linear[size_t(t)]) c0 += cf * b[size_t(ts)];
            i64 ctr = ((c0 % pr) + pr) % pr;
            st.center[size_t(t)] = ctr;
            Jet dj(s.R, JS);
            dj.c[0] = Elt(s.R, (c0 - ctr) / pr);
            for (auto& [ts, cf] : linear[size_t(t)]) {
                std::vector<int> e(size_t(nd), 0);
                e[size_t(ts)] = 1;
                int idx = JS->index(e);
                if (idx >= 0) dj.c[size_t(idx)] = dj.c[size_t(idx)] + Elt(s.R, cf);
            }
            st.delta.push_back(dj);
        }
        flow.push_back(std::move(st));
    }
    return flow;
}

/** sigma for an Iwahori pair: unit-pivot LDU over jets, truncated at (r, d). */
inline std::vector<FlowStep> iwahori_flow(const TableShape& s, const GElt& g, const WeightPair& w) {
    if (s.dom.tag != DomainTag::chart) throw precondition_error("iwahori_flow: chart domain only");
    if (g.ring_ptr() != s.R) throw precondition_error("iwahori_flow: ring mismatch");
    int n = s.dom.n;
    if (g.n != n || w.n != n) throw precondition_error("iwahori_flow: rank mismatch");
    auto slots = s.dom.slots();
    int nd = s.dom.dim();
    const JetSpec* JS = jet_spec(nd, s.d, 0, 0);
    i64 pr = ipow(s.R->p, s.r);
    JetCtx C{s.R, JS};
    std::vector<FlowStep> flow;
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& b = s.centers[size_t(ci)];
        // n_z entries as affine jets, per component
        auto entry = [&](int comp, int i, int j) -> Jet {
            if (i == j) return C.one();
            if (i > j) return C.zero();
            for (int t = 0; t < nd; ++t) {
                auto sl = slots[size_t(t)];
                if (sl.comp == comp && sl.i == i && sl.j == j) {
                    Jet v = Jet::constant(s.R, JS, Elt(s.R, b[size_t(t)]));
                    std::vector<int> e(size_t(nd), 0);
                    e[size_t(t)] = 1;
                    int li = JS->index(e);
                    if (li >= 0) v.c[size_t(li)] = Elt(s.R, pr);
                    return v;
                }
            }
            throw verification_error("iwahori_flow: missing slot");
        };
        FlowStep st;
        st.mult = C.one();
        st.center.resize(size_t(nd));
        st.delta.resize(size_t(nd), Jet(s.R, JS));
        for (int comp = 0; comp < 2; ++comp) {
            int m = comp == 0 ? n + 1 : n;
            if (m == 0) continue;
            const Mat& gm = comp == 0 ? g.g1 : g.g2;
            // A = n_z * gamma as jets (element on the right of the word)
            std::vector<std::vector<Jet>> A(size_t(m), std::vector<Jet>(size_t(m), Jet(s.R, JS)));
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < m; ++j) {
                    Jet acc = C.zero();
                    for (int k = i; k < m; ++k)
                        acc = acc + entry(comp, i, k) * gm.at(k, j);
                    A[size_t(i)][size_t(j)] = acc;
                }
            // LDU by elimination; pivots must be unit jets
            std::vector<Jet> diag;
            for (int k = 0; k < m; ++k) {
                if (!is_unit(A[size_t(k)][size_t(k)].c[0]))
                    throw precondition_error("iwahori_flow: element leaves the chart cell");
                Jet pinv = jet_inverse(A[size_t(k)][size_t(k)]);
                diag.push_back(A[size_t(k)][size_t(k)]);
                for (int i = k + 1; i < m; ++i) {
                    Jet f = A[size_t(i)][size_t(k)] * pinv;
                    for (int j = k; j < m; ++j)
                        A[size_t(i)][size_t(j)] = A[size_t(i)][size_t(j)] - f * A[size_t(k)][size_t(j)];
                }
                for (int j = k + 1; j < m; ++j) A[size_t(k)][size_t(j)] = A[size_t(k)][size_t(j)] * pinv;
            }
            // multiplier: component 0 uses mu, component 1 the reversed -lambda
            for (int k = 0; k < m; ++k) {
                long e = comp == 0 ? w.mu[size_t(k)] : -w.lambda[size_t(n - 1 - k)];
                if (e != 0) st.mult = st.mult * tpow(diag[size_t(k)], e, C);
            }
            // sigma entries: strict uppers of the U part
            for (int t = 0; t < nd; ++t) {
                auto sl = slots[size_t(t)];
                if (sl.comp != comp) continue;
                Jet& sj = A[size_t(sl.i)][size_t(sl.j)];
                i64 c0 = sj.c[0].c[0] % pr;
                st.center[size_t(t)] = c0;
                Jet dj = sj;
                dj.c[0] = dj.c[0] - Elt(s.R, c0);
                for (auto& x : dj.c) {
                    auto q = div_pk(x, s.r);
                    if (!q) throw verification_error("iwahori_flow: recentering not divisible");
                    x = *q;
                }
                st.delta[size_t(t)] = dj;
            }
        }
        flow.push_back(std::move(st));
    }
    return flow;
}

/** Decide whether every flow target stays inside the depth-one support. */
inline bool flow_preserves_support(const TableShape& s, const std::vector<FlowStep>& flow) {
    auto ctr = s.dom.support_center();
    for (auto& st : flow)
        for (size_t t = 0; t < st.center.size(); ++t)
            if ((st.center[t] - ctr[t]) % s.R->p != 0) return false;
    return true;
}

/** Pushforward of a distribution along a flow (shared prefix products). */
inline Distribution push_distribution(const Distribution& mu, const std::vector<FlowStep>& flow) {
    const TableShape& s = mu.sh;
    bool keep = s.restricted && flow_preserves_support(s, flow);
    TableShape sh2(s.R, s.dom, s.r, s.d, s.wk, s.wD, keep);
    Distribution out(sh2);
    out.val_offset = mu.val_offset;
    int nd = s.dom.dim();
    const JetSpec* JS = flow[0].mult.S;
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& st = flow[size_t(ci)];
        int cj = sh2.coset_of(st.center);
        std::vector<int> e(size_t(nd), 0);
        std::function<void(int, const Jet&, int)> rec = [&](int t, const Jet& J, int used) {
            if (t == nd) {
                int mj = sh2.mspec->index(e);
                for (int mi = 0; mi < s.mspec->size(); ++mi) {
                    const Elt& cf = J.c[size_t(JS->index(s.mspec->exps[size_t(mi)]))];
                    if (cf.is_zero()) continue;
                    for (int wi = 0; wi < s.wspec->size(); ++wi) {
                        const Elt& a = mu.at(ci, mi, wi);
                        if (!a.is_zero()) out.at(cj, mj, wi) = out.at(cj, mj, wi) + a * cf;
                    }
                }
                return;
            }
            Jet cur = J;
            for (int k = 0; used + k <= s.d; ++k) {
                e[size_t(t)] = k;
                rec(t + 1, cur, used + k);
                if (used + k < s.d) cur = cur * st.delta[size_t(t)];
            }
            e[size_t(t)] = 0;
        };
        rec(0, st.mult, 0);
    }
    return out;
}

}  // namespace detail

/**
 * mu . (t_p^{-1} n_a): the U_p building block, i.e. the left-module operator
 * of the coset representative n_{-a} t_p.  Labels a are one integer per chart
 * slot (canonically mod p^{j-i}).  Exact at fixed (r, d), and composing with
 * Iwahori transports through the group product identically, which is why
 * coset-representative choices cannot leak into any output.
 */
inline Distribution act_contract(const Distribution& mu, const std::vector<i64>& a) {
    return detail::push_distribution(mu, detail::contract_flow(mu.sh, a));
}

/** mu . (t_p^{-m} n_a): m-fold contraction in one exact affine step. */
inline Distribution act_contract_pow(const Distribution& mu, const std::vector<i64>& a, int m) {
    return detail::push_distribution(mu, detail::contract_flow(mu.sh, a, m));
}

/**
 * mu . gamma for an Iwahori pair, truncated at (r, d).  Right transport
 * composes through group products: act(act(mu, a), b) == act(mu, a * b)
 * bit-exactly when b is affine (upper triangular), and to the analytic
 * truncation O(p^{r(d+1-m)}) per degree-m moment block in general.
 */
inline Distribution act_iwahori(const Distribution& mu, const GElt& g, const WeightPair& w) {
    return detail::push_distribution(mu, detail::iwahori_flow(mu.sh, g, w));
}

namespace detail {

/** Function-side action g = mult * (f o sigma): same flows, transposed walk. */
inline LocAnFunction pull_function(const LocAnFunction& f, const std::vector<FlowStep>& flow) {
    const TableShape& s = f.sh;
    TableShape sh2(s.R, s.dom, s.r, s.d, s.wk, s.wD, s.restricted);
    LocAnFunction out(sh2);
    int nd = s.dom.dim();
    const JetSpec* JS = flow[0].mult.S;
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& st = flow[size_t(ci)];
        auto it = s.center_index.find(st.center);
        if (it == s.center_index.end())
            throw precondition_error("act_function: image leaves the stored support");
        int cj = it->second;
        for (int wi = 0; wi < s.wspec->size(); ++wi) {
            Jet G(s.R, JS);
            std::vector<int> e(size_t(nd), 0);
            std::function<void(int, const Jet&, int)> rec = [&](int t, const Jet& J, int used) {
                if (t == nd) {
                    const Elt& cf = f.at(cj, s.mspec->index(e), wi);
                    if (!cf.is_zero()) G = G + J * cf;
                    return;
                }
                Jet cur = J;
                for (int k = 0; used + k <= s.d; ++k) {
                    e[size_t(t)] = k;
                    rec(t + 1, cur, used + k);
                    if (used + k < s.d) cur = cur * st.delta[size_t(t)];
                }
                e[size_t(t)] = 0;
            };
            rec(0, st.mult, 0);
            for (int mi = 0; mi < s.mspec->size(); ++mi)
                out.at(ci, mi, wi) = G.c[size_t(JS->index(s.mspec->exps[size_t(mi)]))];
        }
    }
    return out;
}

}  // namespace detail

inline LocAnFunction act_function_contract(const LocAnFunction& f, const std::vector<i64>& a) {
    return detail::pull_function(f, detail::contract_flow(f.sh, a));
}

inline LocAnFunction act_function_iwahori(const LocAnFunction& f, const GElt& g, const WeightPair& w) {
    return detail::pull_function(f, detail::iwahori_flow(f.sh, g, w));
}

// ---------------------------------------------------------------------------
// The weighting pushforward: from chart distributions to Z_p^x.
// ---------------------------------------------------------------------------

/**
 * kappa(xi): push a chart distribution supported on the unit locus forward
 * along the ratio character c (the weight-shift direction), weighted by the
 * branching vector u_{(mu,lambda)}.  Concretely, per support coset b,
 *     kappa(xi)(1_{b_c} y^k) += < xi|_b , u(z) * ((c(z) - b_c)/p^r)^k >,
 * where u and c are evaluated as jets at z = b + p^r Y.  On the depth-one
 * cell all generator values are units and c == 1 mod p; the map is defined
 * coset by coset, so it extends to any table whose nonzero data sits on
 * cosets where c is a unit -- in particular the spherical-torus translates
 * of the depth-one cell that period sums produce.  Restricted tables are
 * pushed wholesale; unrestricted tables have their all-zero cosets skipped,
 * and a nonzero coset with non-unit ratio value is rejected.  The only
 * analytic error is the O(p^{r(d+1)}) tail of the jet truncation.
 *
 * With wk >= 1 the output gains deformation variables: the weighting becomes
 * u * exp(w_1 log c), the first-order direction lambda -> lambda + w_1 * 1,
 * since shifting lambda by j multiplies u by c^j.  A second variable twists
 * by exp(w_2 log(det ratio)); the determinant ratio is identically one on
 * the unipotent chart, so this direction is invisible here (it matters only
 * through eigenvalue bookkeeping), but it is computed honestly.
 */
inline Distribution kappa(const Distribution& xi, const WeightPair& w, int wk = 0, int wD = 0) {
    const TableShape& s = xi.sh;
    if (s.dom.tag != DomainTag::chart) throw precondition_error("kappa: chart-domain input required");
    if (s.dom.n != w.n) throw precondition_error("kappa: rank mismatch");
    if (s.R->deg != 1) throw precondition_error("kappa: base p-adic ring required");
    if (wk < s.wk) wk = s.wk;
    if (wD < s.wD) wD = s.wD;
    int n = s.dom.n;
    int nd = s.dom.dim();
    const BranchGens& G = fundamental_generators(n);
    UFunc fu = ufunc_of(w);
    UFunc fc = c_ratio_ufunc(n);
    const JetSpec* JS = jet_spec(nd, s.d, wk, wD);
    JetCtx C{s.R, JS};
    TableShape sh2(s.R, Domain{DomainTag::units, 0}, s.r, s.d, wk, wD);
    Distribution out(sh2);
    out.val_offset = xi.val_offset;
    i64 pr = ipow(s.R->p, s.r);
    auto slots = s.dom.slots();
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& b = s.centers[size_t(ci)];
        if (!s.restricted) {
            // coset-local map: only the support matters, skip empty blocks
            bool any = false;
            for (int mi = 0; mi < s.mspec->size() && !any; ++mi)
                for (int wi = 0; wi < s.wspec->size() && !any; ++wi)
                    if (!xi.at(ci, mi, wi).is_zero()) any = true;
            if (!any) continue;
        }
        // branch variables as jets: unipotent pattern off the slots
        std::vector<Jet> vars(size_t(branch_nvars(n)), Jet(s.R, JS));
        for (int i = 0; i <= n; ++i) vars[size_t(bvar1(n, i, i))] = C.one();
        for (int i = 0; i < n; ++i) vars[size_t(bvar2(n, i, i))] = C.one();
        for (int t = 0; t < nd; ++t) {
            auto sl = slots[size_t(t)];
            int vi = sl.comp == 0 ? bvar1(n, sl.i, sl.j) : bvar2(n, sl.i, sl.j);
            Jet v = Jet::constant(s.R, JS, Elt(s.R, b[size_t(t)]));
            std::vector<int> e(size_t(JS->nvars()), 0);
            e[size_t(t)] = 1;
            int li = JS->index(e);
            if (li >= 0) v.c[size_t(li)] = Elt(s.R, pr);
            vars[size_t(vi)] = v;
        }
        Jet uj = eval_ufunc(G, fu, vars, C);
        Jet cj = eval_ufunc(G, fc, vars, C);
        if (wk >= 1) {
            Jet logc = jet_log(cj);
            Jet w1 = Jet::variable(s.R, JS, nd + 0);
            uj = uj * jet_exp(w1 * logc);
        }
        if (wk >= 2) {
            UFunc fdet;
            fdet.n = n;
            fdet.eu.assign(size_t(n) + 1, 0);
            fdet.eu[size_t(n)] = 1;
            fdet.ev.assign(size_t(n), 0);
            Jet dj = eval_ufunc(G, fdet, vars, C);
            Jet w2 = Jet::variable(s.R, JS, nd + 1);
            uj = uj * jet_exp(w2 * jet_log(dj));
        }
        // target coset and recentred jet
        i64 c0 = cj.c[0].c[0] % pr;
        if (c0 % s.R->p == 0) throw verification_error("kappa: ratio character not a unit on support");
        Jet dj = cj;
        dj.c[0] = dj.c[0] - Elt(s.R, c0);
        for (auto& x : dj.c) {
            auto q = detail::div_pk(x, s.r);
            if (!q) throw verification_error("kappa: recentering not divisible by p^r");
            x = *q;
        }
        int cjdx = sh2.coset_of({c0});
        Jet T = uj;
        for (int k = 0; k <= s.d; ++k) {
            if (k > 0) T = T * dj;
            // out(b_c, k, w) += sum over source moments of xi * T-coefficients
            int mj = sh2.mspec->index({k});
            for (int mi = 0; mi < s.mspec->size(); ++mi) {
                std::vector<int> full(size_t(JS->nvars()), 0);
                for (int t = 0; t < nd; ++t) full[size_t(t)] = s.mspec->exps[size_t(mi)][size_t(t)];
                for (int wi = 0; wi < sh2.wspec->size(); ++wi) {
                    for (int t = 0; t < wk; ++t) full[size_t(nd + t)] = sh2.wspec->exps[size_t(wi)][size_t(t)];
                    int fi = JS->index(full);
                    if (fi < 0) continue;
                    const Elt& cf = T.c[size_t(fi)];
                    if (cf.is_zero()) continue;
                    if (s.wk == 0) {
                        const Elt& a = xi.at(ci, mi, 0);
                        if (!a.is_zero()) out.at(cjdx, mj, wi) = out.at(cjdx, mj, wi) + a * cf;
                    } else {
                        // deformation-valued source: convolve the w blocks
                        for (int ws = 0; ws < s.wspec->size(); ++ws) {
                            const Elt& a = xi.at(ci, mi, ws);
                            if (a.is_zero()) continue;
                            std::vector<int> ew(size_t(wk), 0);
                            for (int t = 0; t < s.wk; ++t) ew[size_t(t)] += s.wspec->exps[size_t(ws)][size_t(t)];
                            for (int t = 0; t < wk; ++t) ew[size_t(t)] += sh2.wspec->exps[size_t(wi)][size_t(t)];
                            int wo = sh2.wspec->index(ew);
                            if (wo >= 0) out.at(cjdx, mj, wo) = out.at(cjdx, mj, wo) + a * cf;
                        }
                    }
                }
            }
        }
    }
    return out;
}

/**
 * Integral of z^j against a scalar-domain distribution: per coset expand
 * (b + p^r y)^j = sum_k C(j,k) b^{j-k} p^{rk} y^k with generalized binomials
 * (integral for any j on unit cosets), truncated at k <= d.  Returns the
 * stored-scale value as a deformation jet.
 */
inline Jet integrate_monomial(const Distribution& L, long j) {
    const TableShape& s = L.sh;
    if (s.dom.tag == DomainTag::chart) throw precondition_error("integrate_monomial: scalar domains only");
    if (j < 0 && s.dom.tag != DomainTag::units)
        throw precondition_error("integrate_monomial: negative powers need the unit domain");
    if (j > 1000 || j < -1000) throw precondition_error("integrate_monomial: exponent too large");
    Jet out(s.R, s.wspec);
    const JetSpec* S = jet_spec(1, s.d, 0, 0);
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        i64 b = s.centers[size_t(ci)][0];
        // Taylor coefficients of z^j on this coset
        std::vector<Elt> coeffs(size_t(s.d + 1), Elt(s.R));
        if (j >= 0) {
            Jet lin(s.R, S);
            lin.c[size_t(S->index({0}))] = Elt(s.R, b);
            lin.c[size_t(S->index({1}))] = Elt(s.R, ipow(s.R->p, std::min(s.r, s.R->N)));
            Jet pw = Jet::constant(s.R, S, Elt::one(s.R));
            for (long t = 0; t < j; ++t) pw = pw * lin;
            for (int k = 0; k <= s.d; ++k) coeffs[size_t(k)] = pw.c[size_t(S->index({k}))];
        } else {
            if (b % s.R->p == 0) throw precondition_error("integrate_monomial: pole on coset");
            Elt binv = unit_inverse(Elt(s.R, b));
            Elt bpow = binv.pow(-j);
            i64 bc = 1;
            for (int k = 0; k <= s.d; ++k) {
                i64 rk = i64(s.r) * k;
                if (rk < s.R->N && bc != 0)
                    coeffs[size_t(k)] = Elt(s.R, bc) * bpow * Elt(s.R, ipow(s.R->p, int(rk)));
                bpow = bpow * binv;
                i128 nx = i128(bc) * (j - k);
                if (nx % (k + 1) != 0)
                    throw verification_error("integrate_monomial: binomial recurrence");
                bc = i64(nx / (k + 1));
            }
        }
        for (int k = 0; k <= s.d; ++k) {
            if (coeffs[size_t(k)].is_zero()) continue;
            int mi = s.mspec->index({k});
            for (int wi = 0; wi < s.wspec->size(); ++wi) {
                const Elt& a = L.at(ci, mi, wi);
                if (!a.is_zero()) out.c[size_t(wi)] = out.c[size_t(wi)] + a * coeffs[size_t(k)];
            }
        }
    }
    return out;
}

/** Substitute numeric deformation values; result has no w variables. */
inline Distribution specialize_distribution(const Distribution& mu, const std::vector<Elt>& wvals) {
    const TableShape& s = mu.sh;
    if (int(wvals.size()) != s.wk) throw precondition_error("specialize: wrong value count");
    TableShape sh2(s.R, s.dom, s.r, s.d, 0, 0, s.restricted);
    Distribution out(sh2);
    out.val_offset = mu.val_offset;
    for (int ci = 0; ci < s.ncosets(); ++ci)
        for (int mi = 0; mi < s.mspec->size(); ++mi) {
            Elt acc(s.R);
            for (int wi = 0; wi < s.wspec->size(); ++wi) {
                const Elt& a = mu.at(ci, mi, wi);
                if (a.is_zero()) continue;
                Elt term = a;
                const auto& e = s.wspec->exps[size_t(wi)];
                for (int t = 0; t < s.wk; ++t)
                    for (int k = 0; k < e[size_t(t)]; ++k) term = term * wvals[size_t(t)];
                acc = acc + term;
            }
            out.at(ci, mi, 0) = acc;
        }
    return out;
}

/** Same substitution on a bare deformation jet. */
inline Elt specialize_jet(const Jet& j, const std::vector<Elt>& wvals) {
    if (int(wvals.size()) != j.S->nw) throw precondition_error("specialize_jet: wrong value count");
    Elt acc(j.R);
    for (size_t i = 0; i < j.c.size(); ++i) {
        if (j.c[i].is_zero()) continue;
        Elt term = j.c[i];
        const auto& e = j.S->exps[i];
        for (int t = 0; t < j.S->nw; ++t)
            for (int k = 0; k < e[size_t(j.S->ny + t)]; ++k) term = term * wvals[size_t(t)];
        acc = acc + term;
    }
    return acc;
}

/** Rescale the stored digits so the table carries the given offset. */
inline Distribution with_offset(const Distribution& mu, int off) {
    if (off < mu.val_offset) throw precondition_error("with_offset: cannot lower the offset exactly");
    Distribution out = mu;
    int k = off - mu.val_offset;
    if (k > 0) {
        i64 pk = ipow(mu.sh.R->p, k);
        for (auto& x : out.m) x = x * pk;
    }
    out.val_offset = off;
    return out;
}

/** acc += s * x on matching shapes and offsets (used to assemble sums). */
inline void accumulate(Distribution& acc, const Elt& s, const Distribution& x) {
    if (!acc.sh.same(x.sh) || acc.val_offset != x.val_offset)
        throw precondition_error("accumulate: incompatible tables");
    for (size_t i = 0; i < acc.m.size(); ++i) acc.m[i] = acc.m[i] + s * x.m[i];
}

}  // namespace ulf
