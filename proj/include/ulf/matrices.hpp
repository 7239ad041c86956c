#pragma once

#include <random>

#include "rings.hpp"
#include "weights.hpp"

namespace ulf {

/** Square matrix over a coefficient ring with convenience arithmetic. */
struct Mat {
    const Ring* R = nullptr;
    int n = 0;
    std::vector<Elt> a;

    Mat() = default;
    Mat(const Ring* R_, int n_) : R(R_), n(n_), a(size_t(n_) * n_, Elt(R_)) {}
    static Mat id(const Ring* R, int n) {
        Mat m(R, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = Elt::one(R);
        return m;
    }
    Elt& at(int i, int j) { return a[size_t(i) * n + j]; }
    const Elt& at(int i, int j) const { return a[size_t(i) * n + j]; }

    Mat operator*(const Mat& o) const {
        Mat r(R, n);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k) {
                if (at(i, k).is_zero()) continue;
                for (int j = 0; j < n; ++j) {
                    if (o.at(k, j).is_zero()) continue;
                    r.at(i, j) += at(i, k) * o.at(k, j);
                }
            }
        return r;
    }
    bool operator==(const Mat& o) const { return n == o.n && a == o.a; }

    Elt det() const {
        // cofactor for the small ranks used here (n <= 4)
        if (n == 1) return at(0, 0);
        Elt d(R);
        for (int j = 0; j < n; ++j) {
            Mat sub(R, n - 1);
            for (int i = 1; i < n; ++i)
                for (int k = 0, c = 0; k < n; ++k)
                    if (k != j) sub.at(i - 1, c++) = at(i, k);
            Elt term = at(0, j) * sub.det();
            if (j % 2) d -= term; else d += term;
        }
        return d;
    }

    /** Inverse of a matrix with unit determinant (column-wise linear solves). */
    Mat inverse() const {
        EMat A(R, n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) A.at(i, j) = at(i, j);
        Mat r(R, n);
        for (int col = 0; col < n; ++col) {
            std::vector<Elt> b(n, Elt(R));
            b[col] = Elt::one(R);
            auto y = solve_linear(A, b);
            if (!y) throw precondition_error("Mat::inverse: determinant is not a unit");
            for (int i = 0; i < n; ++i) r.at(i, col) = (*y)[i];
        }
        // exactness guard
        if (!((*this * r) == Mat::id(R, n)))
            throw verification_error("Mat::inverse: check failed");
        return r;
    }

    Mat reduce_to(const Ring* S) const {
        Mat r(S, n);
        for (size_t i = 0; i < a.size(); ++i) r.a[i] = a[i].reduce_to(S);
        return r;
    }
};

/**
 * Element of the paired group (rank n+1, rank n) at a split place: two
 * integral matrices.  Contraction elements (diagonal p-powers) stay integral;
 * factorizations that would need denominators perform exact divisions and
 * fail loudly off the good locus.
 */
struct GElt {
    Mat g1;  // (n+1) x (n+1)
    Mat g2;  // n x n
    int n = 0;

    GElt() = default;
    GElt(Mat a, Mat b) : g1(std::move(a)), g2(std::move(b)), n(g2.n) {
        if (g1.n != g2.n + 1) throw precondition_error("GElt: rank mismatch");
    }
    static GElt id(const Ring* R, int n) { return GElt(Mat::id(R, n + 1), Mat::id(R, n)); }

    GElt operator*(const GElt& o) const { return GElt(g1 * o.g1, g2 * o.g2); }
    bool operator==(const GElt& o) const { return g1 == o.g1 && g2 == o.g2; }
    GElt inverse() const { return GElt(g1.inverse(), g2.inverse()); }
    GElt reduce_to(const Ring* S) const { return GElt(g1.reduce_to(S), g2.reduce_to(S)); }
    const Ring* ring_ptr() const { return g1.R; }
};

/** Embedding of the rank-n factor: h -> (diag(h,1), h). */
inline GElt embed_h(const Mat& h) {
    Mat top = Mat::id(h.R, h.n + 1);
    for (int i = 0; i < h.n; ++i)
        for (int j = 0; j < h.n; ++j) top.at(i, j) = h.at(i, j);
    return GElt(top, h);
}

/** Scalar embedding for rank n = 1: c -> (diag(c,1), c). */
inline GElt embed_unit(const Ring* R, const Elt& c) {
    Mat h(R, 1);
    h.at(0, 0) = c;
    return embed_h(h);
}

/** Base point g_0 = I + sum_i E_{i,n+1}: identity with last column of ones. */
inline GElt base_point(const Ring* R, int n) {
    Mat g = Mat::id(R, n + 1);
    for (int i = 0; i < n; ++i) g.at(i, n) = Elt::one(R);
    return GElt(g, Mat::id(R, n));
}

/**
 * The distinguished orbit representative: first component has the order-
 * reversing permutation in its leading n x n block and ones in the last
 * column; second component is the identity.
 */
inline GElt orbit_rep(const Ring* R, int n) {
    Mat g(R, n + 1);
    for (int i = 0; i < n; ++i) g.at(i, n - 1 - i) = Elt::one(R);
    for (int i = 0; i <= n; ++i) g.at(i, n) = Elt::one(R);
    return GElt(g, Mat::id(R, n));
}

/**
 * Verify the orbit identity: g_0 * (block diag of the reversal permutation
 * and 1) equals the distinguished representative, exactly.
 */
inline bool orbit_witness(const Ring* R, int n) {
    Mat w(R, n + 1);
    for (int i = 0; i < n; ++i) w.at(i, n - 1 - i) = Elt::one(R);
    w.at(n, n) = Elt::one(R);
    GElt lhs(base_point(R, n).g1 * w, Mat::id(R, n));
    return lhs == orbit_rep(R, n);
}

/** Contraction element t_p = (diag(p^n, ..., p, 1), diag(p^n, ..., p)). */
inline GElt contraction_elt(const Ring* R, int n) {
    Mat a(R, n + 1), b(R, n);
    for (int i = 0; i <= n; ++i) a.at(i, i) = Elt(R, ipow(R->p, n - i));
    for (int i = 0; i < n; ++i) b.at(i, i) = Elt(R, ipow(R->p, n - i));
    return GElt(a, b);
}

/** Translation part u = (xi-bar, 1): base point as upper-triangular element. */
inline GElt translation_elt(const Ring* R, int n) { return base_point(R, n); }

// ---------------------------------------------------------------------------
// Iwahori (LU) factorization: g = nbar * t * nu with nbar lower-unipotent,
// t diagonal, nu upper-unipotent.  Exists iff all leading minors are p-power
// times unit; entries of nbar and nu stay integral exactly when the element
// lies in the Iwahori-cell of its diagonal type.
// ---------------------------------------------------------------------------

struct LUParts {
    Mat nbar, t, nu;
};

inline std::optional<LUParts> lu_factor(const Mat& g) {
    const Ring* R = g.R;
    int n = g.n;
    Mat L = Mat::id(R, n), D(R, n), U = Mat::id(R, n), W = g;
    for (int k = 0; k < n; ++k) {
        Elt piv = W.at(k, k);
        if (piv.is_zero()) return std::nullopt;
        int v = coeff_valuation(piv);
        auto pu = detail::div_pk(piv, v);
        Elt uinv = unit_inverse(*pu);
        D.at(k, k) = piv;
        for (int j = k + 1; j < n; ++j) {
            // U_{kj} = W_{kj} / piv, exact division required
            auto q = detail::div_pk(W.at(k, j) * uinv, v);
            if (!q) return std::nullopt;
            U.at(k, j) = *q;
        }
        for (int i = k + 1; i < n; ++i) {
            auto q = detail::div_pk(W.at(i, k) * uinv, v);
            if (!q) return std::nullopt;
            L.at(i, k) = *q;
        }
        for (int i = k + 1; i < n; ++i)
            for (int j = k + 1; j < n; ++j)
                W.at(i, j) -= L.at(i, k) * D.at(k, k) * U.at(k, j);
    }
    return LUParts{L, D, U};
}

struct GLUParts {
    GElt nbar, t, nu;
};

inline std::optional<GLUParts> lu_factor(const GElt& g) {
    auto a = lu_factor(g.g1);
    auto b = lu_factor(g.g2);
    if (!a || !b) return std::nullopt;
    return GLUParts{GElt(a->nbar, b->nbar), GElt(a->t, b->t), GElt(a->nu, b->nu)};
}

// ---------------------------------------------------------------------------
// The depth-1 congruence cell N^1 and its closed-form factorization through
// the base point.
// ---------------------------------------------------------------------------

/**
 * An element of N^beta: first component upper-unipotent, congruent to the
 * base point mod p^beta; second component is its leading n x n block.
 */
inline GElt make_linked(const Mat& g) {
    int n = g.n - 1;
    Mat h(g.R, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) h.at(i, j) = g.at(i, j);
    return GElt(g, h);
}

inline bool in_N_beta(const GElt& x, int beta) {
    const Ring* R = x.ring_ptr();
    i64 pb = ipow(R->p, beta);
    int n = x.n;
    GElt g0 = base_point(R, n);
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            if (j < i && !x.g1.at(i, j).is_zero()) return false;
            if (j >= i) {
                i64 diff = (x.g1.at(i, j) - g0.g1.at(i, j)).c[0] % pb;
                if (diff != 0) return false;
            }
        }
    // linked second component
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (!(x.g2.at(i, j) == x.g1.at(i, j))) return false;
    return true;
}

inline GElt sample_N1(const Ring* R, int n, std::mt19937_64& rng) {
    Mat g = Mat::id(R, n + 1);
    auto digit = [&](i64 lim) { return i64(rng() % u64(lim)); };
    i64 pN1 = R->pN / R->p;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) g.at(i, j) = Elt(R, R->p * digit(pN1));
        g.at(i, n) = Elt(R, 1 + R->p * digit(pN1));
    }
    return make_linked(g);
}

/** Random element of the paired Iwahori (both components independently). */
inline GElt sample_iwahori(const Ring* R, int n, std::mt19937_64& rng) {
    auto digit = [&](i64 lim) { return i64(rng() % u64(lim)); };
    i64 pN1 = R->pN / R->p;
    auto mk = [&](int r) {
        Mat L = Mat::id(R, r), D(R, r), U = Mat::id(R, r);
        for (int i = 0; i < r; ++i) {
            // diagonal: a random unit (nonzero mod p times a 1-unit)
            D.at(i, i) = Elt(R, 1 + digit(R->p - 1)) * Elt(R, 1 + R->p * digit(pN1 / R->p));
            for (int j = 0; j < i; ++j) L.at(i, j) = Elt(R, R->p * digit(pN1));
            for (int j = i + 1; j < r; ++j) U.at(i, j) = Elt(R, digit(R->pN));
        }
        return L * D * U;
    };
    return GElt(mk(n + 1), mk(n));
}

/**
 * Closed-form factorization of x in N^1 through the base point:
 *   x = bbar * (g_0, 1) * embed_h(h)
 * with bbar = (B, L^{-1}) lower-triangular (Iwahori-negative) and h integral.
 * B is the identity with first column (w_1, (w_2-1), ..., (w_n-1), 0)
 * replaced in, where w is the last column of the first component, and
 * L = B-leading-block^{-1}; h = L * (leading block of x).
 */
struct N1Factorization {
    GElt bbar;
    Mat h;
};

inline N1Factorization factor_N1(const GElt& x) {
    const Ring* R = x.ring_ptr();
    int n = x.n;
    if (!in_N_beta(x, 1)) throw precondition_error("factor_N1: not in the depth-1 cell");
    // B: n x n leading block of the bbar first component
    Mat B = Mat::id(R, n);
    for (int i = 0; i < n; ++i) B.at(i, 0) = (i == 0) ? x.g1.at(0, n) : x.g1.at(i, n) - Elt::one(R);
    Mat L = B.inverse();
    Mat h = L * x.g2;
    Mat B1 = Mat::id(R, n + 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B1.at(i, j) = B.at(i, j);
    GElt bbar(B1, B);  // second component is L^{-1} = B
    // exactness guard: reconstruct
    GElt recon = bbar * base_point(R, n) * embed_h(h);
    if (!(recon == x)) throw verification_error("factor_N1: reconstruction failed");
    return N1Factorization{bbar, h};
}

/**
 * Enumerate canonical contraction-coset representatives: upper-unipotent
 * pairs with entry (i,j) ranging mod p^{j-i} in each component.  The count is
 * p^{n(n+1)(2n+1)/6}.
 */
inline std::vector<GElt> contraction_coset_reps(const Ring* R, int n) {
    struct Slot { int comp, i, j, range; };
    std::vector<Slot> slots;
    for (int i = 0; i < n + 1; ++i)
        for (int j = i + 1; j < n + 1; ++j)
            slots.push_back({1, i, j, int(ipow(R->p, j - i))});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            slots.push_back({2, i, j, int(ipow(R->p, j - i))});
    long total = 1;
    for (auto& s : slots) total *= s.range;
    std::vector<GElt> reps;
    reps.reserve(total);
    for (long idx = 0; idx < total; ++idx) {
        long t = idx;
        GElt g = GElt::id(R, n);
        for (auto& s : slots) {
            long v = t % s.range;
            t /= s.range;
            (s.comp == 1 ? g.g1.at(s.i, s.j) : g.g2.at(s.i, s.j)) = Elt(R, v);
        }
        reps.push_back(g);
    }
    return reps;
}

}  // namespace ulf
