#pragma once

// Dense linear algebra over the finite-precision coefficient rings.
//
// Everything here works with valuations rather than archimedean magnitudes:
// a pivot of valuation v is "large" when v is small, elimination against a
// minimal-valuation pivot is exact (the quotient of two ring elements is
// integral whenever the numerator's valuation is at least the pivot's), and
// the only precision loss happens at divisions, where the top v digits of
// the quotient are indeterminate.  Solvers therefore report the total pivot
// valuation they divided by; callers that need full working precision lift
// the problem into a ring with that much headroom first.

#include <optional>
#include <utility>
#include <vector>

#include "rings.hpp"

namespace ulf {

/** Dense matrix over a coefficient ring, row-major. */
struct DMat {
    const Ring* R = nullptr;
    int nr = 0, nc = 0;
    std::vector<Elt> a;

    DMat() = default;
    DMat(const Ring* R_, int r, int c) : R(R_), nr(r), nc(c), a(size_t(r) * size_t(c), Elt(R_)) {}

    Elt& at(int i, int j) { return a[size_t(i) * nc + j]; }
    const Elt& at(int i, int j) const { return a[size_t(i) * nc + j]; }

    static DMat id(const Ring* R, int n) {
        DMat m(R, n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = Elt::one(R);
        return m;
    }

    DMat lift_to(const Ring* S) const {
        DMat m(S, nr, nc);
        for (size_t i = 0; i < a.size(); ++i) m.a[i] = a[i].lift_to(S);
        return m;
    }
    DMat reduce_to(const Ring* S) const {
        DMat m(S, nr, nc);
        for (size_t i = 0; i < a.size(); ++i) m.a[i] = a[i].reduce_to(S);
        return m;
    }

    std::vector<Elt> mul(const std::vector<Elt>& v) const {
        if ((int)v.size() != nc) throw precondition_error("DMat::mul: size mismatch");
        std::vector<Elt> out((size_t)nr, Elt(R));
        for (int i = 0; i < nr; ++i) {
            Elt s(R);
            for (int j = 0; j < nc; ++j) s = s + at(i, j) * v[j];
            out[i] = s;
        }
        return out;
    }

    DMat mul(const DMat& b) const {
        if (nc != b.nr) throw precondition_error("DMat::mul: size mismatch");
        DMat out(R, nr, b.nc);
        for (int i = 0; i < nr; ++i)
            for (int k = 0; k < nc; ++k) {
                const Elt& x = at(i, k);
                if (x.is_zero()) continue;
                for (int j = 0; j < b.nc; ++j) out.at(i, j) += x * b.at(k, j);
            }
        return out;
    }
};

namespace detail {

/** Valuation as a plain digit count; elements that vanish at working
 *  precision get N (they can never be chosen over a nonzero pivot). */
inline int digit_val(const Elt& x) {
    if (x.is_zero()) return x.R->N;
    Val v = valuation(x);
    if (v.infinite) return x.R->N;
    // ramified rings measure in 1/e units; pivoting only needs the order
    return int(v.num / v.den);
}

}  // namespace detail

struct SolveResult {
    std::vector<Elt> x;
    int loss = 0;  // digits of x indeterminate at the top (sum of pivot valuations)
};

/**
 * Solve A x = b by elimination with minimal-valuation pivoting.
 *
 * Forward elimination is exact: within each column the pivot has minimal
 * valuation among remaining rows, so every multiplier is integral.  Divisions
 * happen only in back-substitution; each sheds pivot-valuation digits, and
 * the accumulated count is returned as `loss` (the answer is correct modulo
 * p^{N - loss}).  Inconsistent or rank-deficient systems return nullopt.
 */
inline std::optional<SolveResult> solve_linear(DMat A, std::vector<Elt> b) {
    const Ring* R = A.R;
    int n = A.nr;
    if (A.nc != n || (int)b.size() != n)
        throw precondition_error("solve_linear: square systems only");
    std::vector<int> colperm(size_t(n), 0);
    for (int j = 0; j < n; ++j) colperm[j] = j;

    int loss = 0;
    for (int k = 0; k < n; ++k) {
        // pick the entry of minimal valuation in the remaining block; full
        // pivoting keeps the divisions as small as the matrix allows
        int bi = -1, bj = -1, bv = R->N + 1;
        for (int i = k; i < n; ++i)
            for (int j = k; j < n; ++j) {
                int v = detail::digit_val(A.at(i, j));
                if (v < bv) { bv = v; bi = i; bj = j; }
            }
        if (bi < 0 || bv >= R->N) return std::nullopt;  // singular at working precision
        if (bi != k) {
            for (int j = 0; j < n; ++j) std::swap(A.at(k, j), A.at(bi, j));
            std::swap(b[k], b[bi]);
        }
        if (bj != k) {
            for (int i = 0; i < n; ++i) std::swap(A.at(i, k), A.at(i, bj));
            std::swap(colperm[k], colperm[bj]);
        }
        Elt piv = A.at(k, k);
        auto pu = ulf::detail::div_pk(piv, bv);
        Elt punit_inv = unit_inverse(*pu);
        for (int i = k + 1; i < n; ++i) {
            const Elt& e = A.at(i, k);
            if (e.is_zero()) continue;
            // e / piv = (e * punit_inv) / p^bv, exact by pivot minimality
            auto q = ulf::detail::div_pk(e * punit_inv, bv);
            if (!q) return std::nullopt;
            Elt f = *q;
            for (int j = k; j < n; ++j) A.at(i, j) -= f * A.at(k, j);
            b[i] -= f * b[k];
        }
    }
    // back substitution
    std::vector<Elt> y((size_t)n, Elt(R));
    for (int k = n - 1; k >= 0; --k) {
        Elt s = b[k];
        for (int j = k + 1; j < n; ++j) s -= A.at(k, j) * y[j];
        Elt piv = A.at(k, k);
        int v = detail::digit_val(piv);
        auto pu = ulf::detail::div_pk(piv, v);
        auto q = ulf::detail::div_pk(s * unit_inverse(*pu), v);
        if (!q) return std::nullopt;  // inconsistent below the pivot scale
        y[k] = *q;
        loss += v;
    }
    std::vector<Elt> x((size_t)n, Elt(R));
    for (int j = 0; j < n; ++j) x[colperm[j]] = y[j];
    return SolveResult{std::move(x), loss};
}

/**
 * Dimension of the kernel of A mod p (coefficient reduction of the matrix
 * acting on the residue space).  Used for multiplicity checks: a simple
 * eigenvalue alpha of an integral matrix has one-dimensional kernel of
 * (A - alpha) mod p beyond the part forced by p-divisible spectrum.
 */
inline int kernel_dim_mod_p(const DMat& A) {
    const Ring* R = A.R;
    i64 p = R->p;
    int nr = A.nr, nc = A.nc;
    std::vector<std::vector<i64>> M(size_t(nr), std::vector<i64>(size_t(nc), 0));
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) M[i][j] = ((A.at(i, j).c[0] % p) + p) % p;
    int rank = 0;
    for (int col = 0; col < nc && rank < nr; ++col) {
        int piv = -1;
        for (int i = rank; i < nr; ++i)
            if (M[i][col] != 0) { piv = i; break; }
        if (piv < 0) continue;
        std::swap(M[piv], M[rank]);
        i64 inv = 1, base = M[rank][col] % p;
        for (i64 e = p - 2; e > 0; e >>= 1) {  // Fermat inverse mod p
            if (e & 1) inv = inv * base % p;
            base = base * base % p;
        }
        for (int j = col; j < nc; ++j) M[rank][j] = M[rank][j] * inv % p;
        for (int i = 0; i < nr; ++i) {
            if (i == rank || M[i][col] == 0) continue;
            i64 f = M[i][col];
            for (int j = col; j < nc; ++j) M[i][j] = ((M[i][j] - f * M[rank][j]) % p + p) % p;
        }
        ++rank;
    }
    return nc - rank;
}

/**
 * One kernel vector of A mod p, as residues, together with a coordinate at
 * which the vector equals 1 (a free column of the reduced echelon form).
 * This is exactly the seed newton_eigen wants: correct direction mod p and a
 * unit entry to normalize against.  Returns nullopt when A is invertible
 * mod p.
 */
inline std::optional<std::pair<std::vector<i64>, int>> kernel_vector_mod_p(const DMat& A) {
    const Ring* R = A.R;
    i64 p = R->p;
    int nr = A.nr, nc = A.nc;
    std::vector<std::vector<i64>> M(size_t(nr), std::vector<i64>(size_t(nc), 0));
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) M[i][j] = ((A.at(i, j).c[0] % p) + p) % p;
    auto invp = [&](i64 base) {
        i64 inv = 1;
        base %= p;
        for (i64 e = p - 2; e > 0; e >>= 1) {
            if (e & 1) inv = inv * base % p;
            base = base * base % p;
        }
        return inv;
    };
    std::vector<int> pivot_col;  // pivot column of each used row, in order
    int rank = 0;
    for (int col = 0; col < nc && rank < nr; ++col) {
        int piv = -1;
        for (int i = rank; i < nr; ++i)
            if (M[i][col] != 0) { piv = i; break; }
        if (piv < 0) continue;
        std::swap(M[piv], M[rank]);
        i64 inv = invp(M[rank][col]);
        for (int j = col; j < nc; ++j) M[rank][j] = M[rank][j] * inv % p;
        for (int i = 0; i < nr; ++i) {
            if (i == rank || M[i][col] == 0) continue;
            i64 f = M[i][col];
            for (int j = col; j < nc; ++j) M[i][j] = ((M[i][j] - f * M[rank][j]) % p + p) % p;
        }
        pivot_col.push_back(col);
        ++rank;
    }
    // first free column, if any
    int fc = -1;
    {
        std::vector<char> is_piv(size_t(nc), 0);
        for (int c : pivot_col) is_piv[size_t(c)] = 1;
        for (int j = 0; j < nc; ++j)
            if (!is_piv[size_t(j)]) { fc = j; break; }
    }
    if (fc < 0) return std::nullopt;
    std::vector<i64> x(size_t(nc), 0);
    x[size_t(fc)] = 1;
    for (int r2 = 0; r2 < rank; ++r2)
        x[size_t(pivot_col[size_t(r2)])] = (p - M[size_t(r2)][size_t(fc)] % p) % p;
    return std::make_pair(std::move(x), fc);
}

/**
 * Characteristic polynomial by the Berkowitz method: division-free, so it
 * works verbatim over Z/p^N where Gaussian char-poly algorithms would divide
 * by non-units.  Returns coefficients c_0..c_n of det(XI - A) with c_n = 1.
 * Cost O(n^4); intended for the small truncated operator matrices.
 */
inline std::vector<Elt> charpoly(const DMat& A) {
    const Ring* R = A.R;
    int n = A.nr;
    if (A.nc != n) throw precondition_error("charpoly: square matrices only");
    // Berkowitz: iteratively build the coefficient vector via Toeplitz
    // products of the principal submatrix data.
    std::vector<Elt> poly;
    poly.resize(1, Elt::one(R));
    for (int k = 1; k <= n; ++k) {
        // principal k x k block: split as [[M, c],[r, a]] with M the
        // (k-1)-block, c column, r row, a corner
        int m = k - 1;
        // powers: r M^i c for i = 0..m-1, and the corner a
        std::vector<Elt> t;
        t.resize(size_t(m) + 2, Elt(R));
        t[0] = Elt(R, -1);  // leading -1 of the Toeplitz column
        t[1] = A.at(m, m);
        if (m > 0) {
            std::vector<Elt> vc((size_t)m, Elt(R));
            for (int i = 0; i < m; ++i) vc[i] = A.at(i, m);
            for (int i = 0; i < m; ++i) {
                // r . vc
                Elt s(R);
                for (int j = 0; j < m; ++j) s = s + A.at(m, j) * vc[j];
                t[size_t(i) + 2] = s;
                if (i + 2 <= m) {
                    // vc <- M vc
                    std::vector<Elt> nv((size_t)m, Elt(R));
                    for (int r2 = 0; r2 < m; ++r2) {
                        Elt acc(R);
                        for (int c2 = 0; c2 < m; ++c2) acc = acc + A.at(r2, c2) * vc[c2];
                        nv[r2] = acc;
                    }
                    vc = std::move(nv);
                }
            }
        }
        // poly <- Toeplitz(t) * poly  (lower-triangular band convolution)
        std::vector<Elt> np;
        np.resize(poly.size() + 1, Elt(R));
        for (size_t i = 0; i < poly.size(); ++i)
            for (size_t j = 0; j < t.size() && i + j < np.size(); ++j)
                np[i + j] -= t[j] * poly[i];
        poly = std::move(np);
    }
    // poly[i] is the coefficient of X^{n-i} of the monic char poly: the
    // leading -1 of each Toeplitz column combines with the outer sign of the
    // convolution so that poly[0] stays 1 throughout.
    std::vector<Elt> out;
    out.resize(size_t(n) + 1, Elt(R));
    for (int i = 0; i <= n; ++i) out[size_t(n - i)] = poly[size_t(i)];
    return out;
}

inline Elt eval_poly(const std::vector<Elt>& c, const Elt& x) {
    const Ring* R = x.R;
    Elt acc(R);
    for (size_t i = c.size(); i-- > 0;) acc = acc * x + c[i];
    return acc;
}

/** Synthetic division: c(X) = q(X)(X - r) + rem; returns q and rem. */
inline std::pair<std::vector<Elt>, Elt> divide_linear(const std::vector<Elt>& c, const Elt& r) {
    const Ring* R = r.R;
    if (c.empty()) return {std::vector<Elt>{}, Elt(R)};
    std::vector<Elt> q;
    q.resize(c.size() - 1, Elt(R));
    Elt carry(R);
    for (size_t i = c.size(); i-- > 1;) {
        carry = c[i] + carry * r;
        q[i - 1] = carry;
    }
    Elt rem = c[0] + carry * r;
    return {q, rem};
}

struct EigenPair {
    Elt alpha;
    std::vector<Elt> vec;  // normalized: vec[pivot] = 1
    int pivot = 0;
    int loss = 0;  // top digits of (alpha, vec) indeterminate after solves
};

/**
 * Refine an eigenpair of A by Newton iteration on the bordered system
 * F(v, a) = (Av - a v, v[pivot] - 1).  The Jacobian [[A - aI, -v],[e_piv, 0]]
 * is nonsingular exactly when a is a simple eigenvalue; its determinant is
 * (up to sign and a unit) the product of gaps prod (a - beta_i), so each
 * solve loses sum v_p(gaps) digits.  The iteration runs in a ring with that
 * much headroom and reduces back, giving the eigenpair to full precision
 * when the gap budget is honest.
 *
 * seed_alpha must be correct modulo p^{g+1} where g is the total gap
 * valuation; seed_vec likewise mod p (any vector with nonzero pivot residue
 * whose direction is the eigenvector mod p works).
 */
inline std::optional<EigenPair> newton_eigen(const DMat& A0, const Elt& seed_alpha,
                                             const std::vector<Elt>& seed_vec, int pivot,
                                             int gap_budget) {
    const Ring* R = A0.R;
    int n = A0.nr;
    if ((int)seed_vec.size() != n) throw precondition_error("newton_eigen: seed size mismatch");
    const Ring* S = ring(R->p, R->N + gap_budget + 2, R->m);
    DMat A = A0.lift_to(S);
    Elt alpha = seed_alpha.lift_to(S);
    std::vector<Elt> v((size_t)n, Elt(S));
    for (int i = 0; i < n; ++i) v[i] = seed_vec[i].lift_to(S);

    int maxit = 2 * (S->N) + 8;  // Newton doubles correct digits; generous cap
    int loss_seen = 0;
    for (int it = 0; it < maxit; ++it) {
        // residual
        std::vector<Elt> r = A.mul(v);
        for (int i = 0; i < n; ++i) r[i] -= alpha * v[i];
        bool done = true;
        for (int i = 0; i < n; ++i)
            if (!r[i].is_zero()) { done = false; break; }
        if (done && (v[pivot] == Elt::one(S))) break;
        // bordered Jacobian
        DMat J(S, n + 1, n + 1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) J.at(i, j) = A.at(i, j);
            J.at(i, i) -= alpha;
            J.at(i, n) = Elt(S) - v[i];
        }
        J.at(n, pivot) = Elt::one(S);
        std::vector<Elt> rhs(size_t(n) + 1, Elt(S));
        for (int i = 0; i < n; ++i) rhs[i] = Elt(S) - r[i];
        rhs[n] = Elt::one(S) - v[pivot];
        auto sol = solve_linear(J, rhs);
        if (!sol) return std::nullopt;
        loss_seen = std::max(loss_seen, sol->loss);
        for (int i = 0; i < n; ++i) v[i] += sol->x[i];
        alpha += sol->x[n];
    }
    // final residual must vanish in the headroom ring down to the guard digits
    std::vector<Elt> r = A.mul(v);
    for (int i = 0; i < n; ++i) r[i] -= alpha * v[i];
    for (int i = 0; i < n; ++i) {
        Elt red = r[i].reduce_to(R);
        if (!red.is_zero()) return std::nullopt;
    }
    EigenPair out;
    out.alpha = alpha.reduce_to(R);
    out.pivot = pivot;
    out.loss = loss_seen;
    out.vec.resize(size_t(n), Elt(R));
    for (int i = 0; i < n; ++i) out.vec[i] = v[i].reduce_to(R);
    return out;
}

}  // namespace ulf
