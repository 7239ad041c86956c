#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "matrices.hpp"
#include "polynomial.hpp"
#include "rings.hpp"
#include "weights.hpp"

namespace ulf {

// ---------------------------------------------------------------------------
// Polynomial model of the coefficient space V_{(mu,lambda)}.
//
// The pair group has ranks (n+1, n).  V_{(mu,lambda)} is realized as
// V_mu boxtimes V_lambda^dual with the two factors induced from OPPOSITE
// Borels:
//   component 1: f(nbar t g) = mu(t) f(g), nbar lower-unipotent; spanned by
//     products of minors on the LEADING rows 0..h-1 with free column sets,
//     shape rho1 = mu - mu_{n+1}, twisted by det^(mu_{n+1});
//   component 2: f(n t g) = (-lambda)(t) f(g), n UPPER-unipotent; spanned by
//     products of minors on the TRAILING rows n-h..n-1, shape
//     rho2 = (lambda_1 - lambda_n, ..., lambda_1 - lambda_2, 0), twisted by
//     det^(-lambda_1).  This realizes the dual V_lambda^dual (lowest weight
//     -lambda), and is forced: realizing the dual through leading-row minors
//     of the reversed-negated weight gives an invariant that vanishes
//     identically on the congruence cell through the base point as soon as
//     n >= 2, killing the support property, while the opposite-Borel model
//     keeps the distinguished invariants nonzero at (g_0, 1).
// A product of such minors scales by exactly the weight character under
// left translation by the respective Borel, and right translation preserves
// each span, so this is the induced model of the pair.
//
// Restricting to products whose column sets form a semistandard tableau
// (for component 2, semistandard in the reversed column alphabet) gives the
// standard monomial family: a basis of cardinality dim V.  The invariance
// certificates below remain sound even without relying on independence.
// ---------------------------------------------------------------------------

/** Number of polynomial variables for rank-pair (n+1, n): both matrix algebras. */
inline int branch_nvars(int n) { return (n + 1) * (n + 1) + n * n; }
/** Variable index of component-1 entry (i,j), 0 <= i,j <= n. */
inline int bvar1(int n, int i, int j) { return i * (n + 1) + j; }
/** Variable index of component-2 entry (i,j), 0 <= i,j < n. */
inline int bvar2(int n, int i, int j) { return (n + 1) * (n + 1) + i * n + j; }

/** Flatten a group element into the variable ordering used by the model. */
inline std::vector<Elt> gelt_vars(const GElt& x) {
    int n = x.n;
    std::vector<Elt> v;
    v.reserve(branch_nvars(n));
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) v.push_back(x.g1.at(i, j));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) v.push_back(x.g2.at(i, j));
    return v;
}

namespace detail {

/**
 * Minor on the given strictly increasing column set, as a polynomial in the
 * branch variables.  Component 0 uses the leading rows 0..h-1; component 1
 * uses the trailing rows n-h..n-1, matching the opposite-Borel realization.
 */
inline IPoly minor_poly(int n, int comp, const std::vector<int>& cols) {
    int nv = branch_nvars(n);
    int h = int(cols.size());
    int row0 = comp == 0 ? 0 : n - h;
    // Leibniz over permutations of the column set; h <= 4 in scope.
    std::vector<int> perm(h);
    for (int i = 0; i < h; ++i) perm[i] = i;
    IPoly r(nv);
    do {
        int sign = 1;
        for (int i = 0; i < h; ++i)
            for (int j = i + 1; j < h; ++j)
                if (perm[i] > perm[j]) sign = -sign;
        std::vector<std::uint8_t> e(nv, 0);
        for (int row = 0; row < h; ++row) {
            int var = comp == 0 ? bvar1(n, row, cols[perm[row]])
                                : bvar2(n, row0 + row, cols[perm[row]]);
            e[var] += 1;
        }
        r.add_term(e, sign);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return r;
}

/**
 * All semistandard tableaux of the given partition shape with entries in
 * 0..m-1, returned as column lists (each column strictly increasing top to
 * bottom).  The empty shape yields one empty tableau.
 */
inline std::vector<std::vector<std::vector<int>>> ssyt_columns(const std::vector<long>& shape,
                                                               int m) {
    std::vector<long> rho;
    for (long r : shape)
        if (r > 0) rho.push_back(r);
    std::vector<std::vector<std::vector<int>>> out;
    int nrows = int(rho.size());
    if (nrows == 0) {
        out.push_back({});
        return out;
    }
    // Fill cell by cell in row-major order: rows weakly increase, columns
    // strictly increase.
    std::vector<std::vector<int>> T(nrows);
    for (int r = 0; r < nrows; ++r) T[r].assign(size_t(rho[r]), 0);
    std::vector<std::pair<int, int>> cells;
    for (int r = 0; r < nrows; ++r)
        for (int c = 0; c < rho[r]; ++c) cells.push_back({r, c});

    auto emit = [&]() {
        std::vector<std::vector<int>> colsets;
        for (int c = 0; c < rho[0]; ++c) {
            std::vector<int> col;
            for (int r = 0; r < nrows && c < rho[r]; ++r) col.push_back(T[r][c]);
            colsets.push_back(std::move(col));
        }
        out.push_back(std::move(colsets));
    };
    std::function<void(size_t)> rec = [&](size_t k) {
        if (k == cells.size()) {
            emit();
            return;
        }
        auto [r, c] = cells[k];
        int lo = 0;
        if (c > 0) lo = std::max(lo, T[r][c - 1]);
        if (r > 0) lo = std::max(lo, T[r - 1][c] + 1);
        for (int val = lo; val < m; ++val) {
            T[r][c] = val;
            rec(k + 1);
        }
    };
    rec(0);
    return out;
}

}  // namespace detail

/** Weyl dimension of the GL_m irreducible with the given decreasing weight. */
inline long long weyl_dim(const std::vector<long>& w) {
    int m = int(w.size());
    i128 num = 1, den = 1;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            num *= (w[i] - w[j] + j - i);
            den *= (j - i);
        }
    return (long long)(num / den);
}

/** One basis function: a product of minors in each component (column sets). */
struct BranchBasisElt {
    std::vector<std::vector<int>> cols1, cols2;
};

/**
 * The standard monomial basis of V_{(mu,lambda)} together with the global
 * determinant twists (the same for every basis element).
 */
struct BranchSpace {
    int n = 0;
    WeightPair w;
    std::vector<long> nu;      // realized dual weight of the second factor
    std::vector<long> shape1;  // mu shifted to a partition
    std::vector<long> shape2;  // nu shifted to a partition
    long dg1 = 0, dg2 = 0;     // determinant exponents
    std::vector<BranchBasisElt> basis;
};

inline BranchSpace branch_space(const WeightPair& w) {
    BranchSpace S;
    S.n = w.n;
    S.w = w;
    S.nu.assign(w.lambda.rbegin(), w.lambda.rend());
    for (auto& x : S.nu) x = -x;
    S.shape1 = w.mu;
    for (auto& x : S.shape1) x -= w.mu[w.n];
    S.shape2 = S.nu;
    for (auto& x : S.shape2) x -= S.nu[w.n - 1];
    S.dg1 = w.mu[w.n];
    S.dg2 = S.nu[w.n - 1];
    auto t1 = detail::ssyt_columns(S.shape1, w.n + 1);
    auto t2 = detail::ssyt_columns(S.shape2, w.n);
    // The second component is spanned by trailing-row minors; the standard
    // monomial family there is semistandard in the reversed column alphabet,
    // so map each tableau entry a -> n-1-a (a bijection on basis families).
    for (auto& tab : t2)
        for (auto& col : tab) {
            for (auto& a : col) a = w.n - 1 - a;
            std::sort(col.begin(), col.end());
        }
    S.basis.reserve(t1.size() * t2.size());
    for (auto& a : t1)
        for (auto& b : t2) S.basis.push_back({a, b});
    return S;
}

// ---------------------------------------------------------------------------
// Diagonal invariance as a derivation system.
//
// The smaller group embeds as h -> (diag(h,1), h).  Differentiating right
// translation along the elementary matrix E_{ij} (i,j < n) gives, on a
// polynomial P in the model,
//     (X_{ij} P) = sum_a  g1_{a,i} dP/d g1_{a,j}  +  sum_a  g2_{a,i} dP/d g2_{a,j},
// and on the determinant twists the extra scalar (dg1 + dg2)[i==j].  A
// function P det1^dg1 det2^dg2 is invariant iff for every (i,j)
//     X_{ij} P + (dg1 + dg2)[i==j] P = 0
// as a polynomial identity.  On a minor the derivation acts by column
// replacement (j-th column replaced by the i-th), so the constraint system
// stays inside the minor-product model; we exploit that for fast evaluation
// and keep the symbolic form for exact certification.
// ---------------------------------------------------------------------------

/** The derivation X_{ij} applied to P (polynomial part only, no twist term). */
inline IPoly lie_deriv(const IPoly& P, int n, int i, int j) {
    IPoly r(P.nv);
    for (int a = 0; a <= n; ++a)
        r = r + IPoly::var(P.nv, bvar1(n, a, i)) * P.deriv(bvar1(n, a, j));
    for (int a = 0; a < n; ++a)
        r = r + IPoly::var(P.nv, bvar2(n, a, i)) * P.deriv(bvar2(n, a, j));
    return r;
}

namespace detail {

// --- arithmetic mod a fixed word-size prime -------------------------------

struct Fq {
    std::uint64_t q;
    std::uint64_t add(std::uint64_t a, std::uint64_t b) const {
        std::uint64_t s = a + b;
        if (s >= q || s < a) s -= q;
        return s;
    }
    std::uint64_t sub(std::uint64_t a, std::uint64_t b) const { return a >= b ? a - b : a + q - b; }
    std::uint64_t mul(std::uint64_t a, std::uint64_t b) const {
        return (std::uint64_t)((unsigned __int128)a * b % q);
    }
    std::uint64_t pow(std::uint64_t a, std::uint64_t e) const {
        std::uint64_t r = 1;
        while (e) {
            if (e & 1) r = mul(r, a);
            a = mul(a, a);
            e >>= 1;
        }
        return r;
    }
    std::uint64_t inv(std::uint64_t a) const { return pow(a, q - 2); }
    std::uint64_t from_ll(long long x) const {
        long long m = x % (long long)q;
        if (m < 0) m += (long long)q;
        return (std::uint64_t)m;
    }
};

// Two fixed large primes.  Ranks computed from integer evaluation points mod
// q only ever under-estimate the rational rank, so a full-rank observation is
// a sound certificate; the second prime is an independent opinion for the
// directions that are probabilistic.
inline constexpr std::uint64_t kP1 = 2305843009213693951ull;  // 2^61 - 1
inline constexpr std::uint64_t kP2 = 9223372036854775783ull;  // largest prime < 2^63

/** Incremental row echelon over F_q with unit-normalized pivots. */
struct Echelon {
    Fq F;
    int ncols;
    std::vector<std::vector<std::uint64_t>> rows;  // echelon rows, pivot = 1
    std::vector<int> pivcol;

    Echelon(Fq f, int nc) : F(f), ncols(nc) {}
    int rank() const { return int(rows.size()); }

    bool add(std::vector<std::uint64_t> r) {
        for (size_t k = 0; k < rows.size(); ++k) {
            std::uint64_t c = r[size_t(pivcol[k])];
            if (c == 0) continue;
            const auto& pr = rows[k];
            for (int j = 0; j < ncols; ++j)
                if (pr[j]) r[j] = F.sub(r[j], F.mul(c, pr[j]));
        }
        int pc = -1;
        for (int j = 0; j < ncols; ++j)
            if (r[j]) {
                pc = j;
                break;
            }
        if (pc < 0) return false;
        std::uint64_t inv = F.inv(r[pc]);
        for (int j = pc; j < ncols; ++j) r[j] = F.mul(r[j], inv);
        rows.push_back(std::move(r));
        pivcol.push_back(pc);
        return true;
    }

    /**
     * When the rank is ncols-1, the kernel is a line; return a spanning
     * vector with the (unique) free coordinate set to 1.
     */
    std::vector<std::uint64_t> kernel_vector() const {
        std::vector<char> ispiv(size_t(ncols), 0);
        for (int c : pivcol) ispiv[size_t(c)] = 1;
        int free_col = -1;
        for (int j = 0; j < ncols; ++j)
            if (!ispiv[size_t(j)]) {
                free_col = j;
                break;
            }
        if (free_col < 0 || rank() != ncols - 1)
            throw precondition_error("kernel_vector: rank must be ncols-1");
        // Back-substitute: pivot rows are unit-normalized, eliminate upwards.
        std::vector<std::uint64_t> v(size_t(ncols), 0);
        v[size_t(free_col)] = 1;
        for (int k = rank() - 1; k >= 0; --k) {
            std::uint64_t s = 0;
            for (int j = pivcol[size_t(k)] + 1; j < ncols; ++j)
                if (rows[size_t(k)][size_t(j)] && v[size_t(j)])
                    s = F.add(s, F.mul(rows[size_t(k)][size_t(j)], v[size_t(j)]));
            v[size_t(pivcol[size_t(k)])] = F.sub(0, s);
        }
        return v;
    }
};

/**
 * Rational reconstruction (Wang): the unique n/d with |n|, d <= sqrt(q/2)
 * and n = a d mod q, if one exists.
 */
inline std::optional<std::pair<long long, long long>> rat_recon(std::uint64_t a, std::uint64_t q) {
    // B = floor(sqrt(q/2)), seeded from floating point and fixed up exactly.
    long long B = (long long)std::sqrt((double)(q / 2));
    while ((unsigned __int128)(B + 1) * (B + 1) <= (unsigned __int128)q / 2) ++B;
    while (B > 1 && (unsigned __int128)B * B > (unsigned __int128)q / 2) --B;
    long long r0 = (long long)q, r1 = (long long)a, s0 = 0, s1 = 1;
    while (r1 > B) {
        long long k = r0 / r1;
        long long r2 = r0 - k * r1, s2 = s0 - k * s1;
        r0 = r1;
        r1 = r2;
        s0 = s1;
        s1 = s2;
    }
    if (s1 == 0) return std::nullopt;
    long long num = s1 < 0 ? -r1 : r1;
    long long den = s1 < 0 ? -s1 : s1;
    if (den > B) return std::nullopt;
    // verify n = a d mod q
    Fq F{q};
    if (F.from_ll(num) != F.mul(a, F.from_ll(den))) return std::nullopt;
    return std::make_pair(num, den);
}

/**
 * Per-point evaluation tables: all leading-row minors of random integer
 * matrices mod q, indexed by column bitmask (rows are always 0..h-1 where h
 * is the popcount).
 */
struct PointEval {
    int n;
    std::vector<std::uint64_t> m1, m2;  // minor values by column mask

    PointEval(const Fq& F, int n_, std::mt19937_64& rng) : n(n_) {
        // bottom = false: minors on leading rows 0..h-1, built by expansion
        // along row h-1 (cofactors are again leading-block minors).
        // bottom = true: minors on trailing rows m-h..m-1, built by expansion
        // along the top row m-h of the block (cofactors are trailing-block
        // minors of the smaller column set).
        auto build = [&](int m, bool bottom) {
            std::vector<std::uint64_t> a(size_t(m) * m);
            for (auto& x : a) x = rng() % F.q;
            std::vector<std::uint64_t> minors(size_t(1) << m);
            minors[0] = 1;
            for (int mask = 1; mask < (1 << m); ++mask) {
                int h = __builtin_popcount(unsigned(mask));
                int row = bottom ? m - h : h - 1;
                int rowpar = bottom ? 0 : h - 1;
                std::uint64_t acc = 0;
                int pos = 0;
                for (int c = 0; c < m; ++c) {
                    if (!(mask >> c & 1)) continue;
                    std::uint64_t term = F.mul(a[size_t(row) * m + c], minors[size_t(mask ^ (1 << c))]);
                    if ((rowpar + pos) & 1)
                        acc = F.sub(acc, term);
                    else
                        acc = F.add(acc, term);
                    ++pos;
                }
                minors[size_t(mask)] = acc;
            }
            return minors;
        };
        m1 = build(n + 1, false);
        m2 = build(n, true);
    }
};

inline int colmask(const std::vector<int>& cols) {
    int m = 0;
    for (int c : cols) m |= 1 << c;
    return m;
}

/**
 * Column-replacement image of a minor under X_{ij}: 0, the minor itself, or
 * a signed minor with column j swapped for i.  Returns (mask, sign); sign 0
 * means the image vanishes, mask < 0 with sign 1 means "the same minor".
 */
inline std::pair<int, int> minor_deriv(int mask, int i, int j) {
    if (!(mask >> j & 1)) return {0, 0};
    if (i == j) return {-1, 1};
    if (mask >> i & 1) return {0, 0};
    int nmask = (mask ^ (1 << j)) | (1 << i);
    // sign = (-1)^(position shift of the replaced column)
    int pj = __builtin_popcount(unsigned(mask & ((1 << j) - 1)));
    int pi = __builtin_popcount(unsigned(nmask & ((1 << i) - 1)));
    return {nmask, ((pj - pi) & 1) ? -1 : 1};
}

}  // namespace detail

/**
 * One fundamental branching generator (or a composite invariant): the value
 * is (P / den) * det1^dg1 * det2^dg2.
 */
struct Gen {
    WeightPair w;
    IPoly P;
    long long den = 1;
    long dg1 = 0, dg2 = 0;
};

/** Certified result of the invariant search at one weight pair. */
struct InvariantResult {
    int dim = 0;        // invariant-space dimension
    bool certified = false;
    Gen gen;            // normalized invariant when dim >= 1
    std::vector<std::pair<long long, long long>> coeffs;  // basis coefficients (num, den)
};

namespace detail {

/** Integer value of a basis function at the base point (g_0, 1). */
inline long long basis_value_at_base(const BranchSpace& S, const BranchBasisElt& b) {
    int n = S.n;
    // base point: identity with an extra column of ones; second component id
    auto minor_at_g0 = [&](const std::vector<int>& cols) -> long long {
        int h = int(cols.size());
        // submatrix rows 0..h-1 of g0; integer determinant by cofactors
        std::vector<long long> a(size_t(h) * h);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < h; ++c) {
                int col = cols[c];
                long long v = (r == col ? 1 : 0) + (col == n ? 1 : 0);
                a[size_t(r) * h + c] = v;
            }
        std::function<long long(std::vector<long long>, int)> det = [&](std::vector<long long> m,
                                                                        int k) -> long long {
            if (k == 1) return m[0];
            long long acc = 0;
            for (int c = 0; c < k; ++c) {
                if (m[c] == 0) continue;
                std::vector<long long> sub(size_t(k - 1) * (k - 1));
                for (int r = 1; r < k; ++r) {
                    int cc = 0;
                    for (int c2 = 0; c2 < k; ++c2) {
                        if (c2 == c) continue;
                        sub[size_t(r - 1) * (k - 1) + cc++] = m[size_t(r) * k + c2];
                    }
                }
                long long t = m[c] * det(sub, k - 1);
                acc += (c & 1) ? -t : t;
            }
            return acc;
        };
        return det(a, h);
    };
    long long v = 1;
    for (auto& cols : b.cols1) v *= minor_at_g0(cols);
    // second component is the identity: a minor on the trailing rows
    // n-h..n-1 and columns cols is 1 iff cols == {n-h, ..., n-1}
    for (auto& cols : b.cols2) {
        int h = int(cols.size());
        for (int r = 0; r < h; ++r)
            if (cols[size_t(r)] != n - h + r) v = 0;
    }
    return v;
}

inline long long checked_mul_ll(long long a, long long b) {
    i128 p = i128(a) * b;
    if (p > INT64_MAX / 2 || p < INT64_MIN / 2)
        throw precondition_error("branching: integer overflow in exact reconstruction");
    return (long long)p;
}

inline long long gcd_ll(long long a, long long b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b) {
        long long t = a % b;
        a = b;
        b = t;
    }
    return a;
}

inline i128 gcd_i128(i128 a, i128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b) {
        i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

}  // namespace detail

/**
 * Compute the diagonal-invariant subspace of V_{(mu,lambda)} with a
 * certificate.
 *
 * Soundness: rows of the constraint matrix are integer linear functionals
 * (derivation values at integer points), so any rank observed mod q bounds
 * the rational rank from below; observed rank = basis size certifies dim 0,
 * and observed rank = basis size - 1 certifies dim <= 1.  For dim >= 1 the
 * kernel vector mod q is lifted by rational reconstruction and the invariance
 * identity  X_{ij} P + (dg1+dg2)[i==j] P = 0  together with P != 0 and the
 * base-point normalization P(g_0, 1) = den is re-verified exactly over the
 * integers.  Failure of any certificate raises verification_error rather
 * than degrading silently.
 */
inline InvariantResult solve_invariants(const WeightPair& w) {
    using namespace detail;
    BranchSpace S = branch_space(w);
    const int n = w.n;
    const int M = int(S.basis.size());
    const long twist = S.dg1 + S.dg2;

    // Precompute factor masks per basis element.
    std::vector<std::vector<int>> masks1, masks2;
    masks1.resize(size_t(M));
    masks2.resize(size_t(M));
    for (int b = 0; b < M; ++b) {
        for (auto& c : S.basis[size_t(b)].cols1) masks1[size_t(b)].push_back(colmask(c));
        for (auto& c : S.basis[size_t(b)].cols2) masks2[size_t(b)].push_back(colmask(c));
    }

    auto rank_pass = [&](std::uint64_t q, bool want_kernel,
                         std::vector<std::uint64_t>* kern) -> int {
        Fq F{q};
        Echelon ech(F, M);
        std::mt19937_64 rng(0x9e3779b97f4a7c15ull ^ q ^ (std::uint64_t(M) << 32) ^
                            std::uint64_t(w.mu[0] * 131 + w.lambda[0]));
        int rows_target = M + 96;
        int points = (rows_target + n * n - 1) / (n * n);
        std::uint64_t tw = F.from_ll(twist);
        for (int pt = 0; pt < points; ++pt) {
            PointEval P(F, n, rng);
            // per-basis factor values and full products
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    std::vector<std::uint64_t> row(size_t(M), 0);
                    for (int b = 0; b < M; ++b) {
                        // products with one factor omitted, via prefix/suffix
                        const auto& f1 = masks1[size_t(b)];
                        const auto& f2 = masks2[size_t(b)];
                        size_t k1 = f1.size(), k2 = f2.size();
                        std::uint64_t full1 = 1, full2 = 1;
                        for (int mk : f1) full1 = F.mul(full1, P.m1[size_t(mk)]);
                        for (int mk : f2) full2 = F.mul(full2, P.m2[size_t(mk)]);
                        std::uint64_t acc = 0;
                        // twist term
                        if (i == j && twist != 0) acc = F.mul(tw, F.mul(full1, full2));
                        auto omit_prod = [&](const std::vector<int>& fs,
                                             const std::vector<std::uint64_t>& tab, size_t omit) {
                            std::uint64_t r = 1;
                            for (size_t t = 0; t < fs.size(); ++t)
                                if (t != omit) r = F.mul(r, tab[size_t(fs[t])]);
                            return r;
                        };
                        for (size_t t = 0; t < k1; ++t) {
                            auto [nm, sg] = minor_deriv(f1[t], i, j);
                            if (sg == 0) continue;
                            std::uint64_t val = nm < 0 ? P.m1[size_t(f1[t])] : P.m1[size_t(nm)];
                            std::uint64_t term =
                                F.mul(F.mul(val, omit_prod(f1, P.m1, t)), full2);
                            acc = sg > 0 ? F.add(acc, term) : F.sub(acc, term);
                        }
                        for (size_t t = 0; t < k2; ++t) {
                            auto [nm, sg] = minor_deriv(f2[t], i, j);
                            if (sg == 0) continue;
                            std::uint64_t val = nm < 0 ? P.m2[size_t(f2[t])] : P.m2[size_t(nm)];
                            std::uint64_t term =
                                F.mul(F.mul(val, omit_prod(f2, P.m2, t)), full1);
                            acc = sg > 0 ? F.add(acc, term) : F.sub(acc, term);
                        }
                        row[size_t(b)] = acc;
                    }
                    ech.add(std::move(row));
                }
            if (ech.rank() == M) break;  // kernel already certified empty
        }
        if (want_kernel && ech.rank() == M - 1) *kern = ech.kernel_vector();
        return ech.rank();
    };

    std::vector<std::uint64_t> kern;
    int r1 = rank_pass(kP1, true, &kern);
    int r2 = rank_pass(kP2, false, nullptr);

    InvariantResult res;
    // Each rank observation lower-bounds the rational rank on its own, so the
    // larger observation drives the certificate.
    int robs = std::max(r1, r2);
    if (robs == M) {
        res.dim = 0;
        res.certified = true;  // sound: rational rank >= M
        return res;
    }
    res.dim = M - robs;
    if (robs != M - 1 || r1 != M - 1) {
        // Evaluation saw a kernel of dimension >= 2, or the primes disagree;
        // report the observed dimension uncertified (the exact-lift leg below
        // needs the kernel line mod the first prime).
        res.certified = false;
        return res;
    }

    // Lift the kernel line to exact rationals and verify symbolically.
    std::vector<std::pair<long long, long long>> coeffs;
    coeffs.resize(size_t(M));
    for (int b = 0; b < M; ++b) {
        auto rc = rat_recon(kern[size_t(b)], kP1);
        if (!rc) throw verification_error("solve_invariants: rational reconstruction failed");
        coeffs[size_t(b)] = *rc;
    }

    // Normalize the value at the base point to 1 (exact rational scaling).
    i128 tnum = 0, tden = 1;
    for (int b = 0; b < M; ++b) {
        long long bv = basis_value_at_base(S, S.basis[size_t(b)]);
        if (bv == 0) continue;
        // t += coeffs[b] * bv, reducing as we go
        i128 an = i128(coeffs[size_t(b)].first) * bv, ad = coeffs[size_t(b)].second;
        tnum = tnum * ad + an * tden;
        tden = tden * ad;
        i128 g = gcd_i128(tnum, tden);
        if (g > 1) {
            tnum /= g;
            tden /= g;
        }
    }
    if (tnum == 0)
        throw verification_error("solve_invariants: invariant vanishes at the base point");
    if (tnum > INT64_MAX / 2 || tnum < INT64_MIN / 2 || tden > INT64_MAX / 2)
        throw precondition_error("branching: overflow in base-point normalization");
    // v'_b = v_b * tden / tnum
    for (auto& [num, den] : coeffs) {
        i128 nn = i128(num) * (long long)tden;
        i128 dd = i128(den) * (long long)tnum;
        if (dd < 0) {
            nn = -nn;
            dd = -dd;
        }
        long long g = detail::gcd_ll((long long)(nn < 0 ? -nn : nn), (long long)dd);
        if (g) {
            nn /= g;
            dd /= g;
        }
        if (nn > INT64_MAX / 2 || nn < INT64_MIN / 2 || dd > INT64_MAX / 2)
            throw precondition_error("branching: overflow normalizing invariant");
        num = (long long)nn;
        den = (long long)dd;
    }

    // Common denominator and integer coefficient vector.
    long long L = 1;
    for (auto& [num, den] : coeffs) L = detail::checked_mul_ll(L / detail::gcd_ll(L, den), den);
    IPoly P(branch_nvars(n));
    for (int b = 0; b < M; ++b) {
        long long wb = detail::checked_mul_ll(coeffs[size_t(b)].first, L / coeffs[size_t(b)].second);
        if (wb == 0) continue;
        IPoly fb = IPoly::constant(branch_nvars(n), 1);
        for (auto& c : S.basis[size_t(b)].cols1) fb = fb * detail::minor_poly(n, 0, c);
        for (auto& c : S.basis[size_t(b)].cols2) fb = fb * detail::minor_poly(n, 1, c);
        P = P + fb * wb;
    }
    if (P.is_zero()) throw verification_error("solve_invariants: reconstructed invariant is zero");

    // Exact invariance check over the integers.
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            IPoly D = lie_deriv(P, n, i, j);
            if (i == j && twist != 0) D = D + P * twist;
            if (!D.is_zero())
                throw verification_error("solve_invariants: invariance identity failed exactly");
        }

    // Exact normalization check: P at the base point equals the denominator.
    {
        std::vector<long long> vars(size_t(branch_nvars(n)), 0);
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j)
                vars[size_t(bvar1(n, i, j))] = (i == j ? 1 : 0) + (j == n ? 1 : 0);
        for (int i = 0; i < n; ++i) vars[size_t(bvar2(n, i, i))] = 1;
        long long v0 = P.eval<long long>(vars, 0, 1);
        if (v0 != L) throw verification_error("solve_invariants: base-point normalization failed");
    }

    res.dim = 1;
    res.certified = true;
    res.coeffs = std::move(coeffs);
    res.gen = Gen{w, std::move(P), L, S.dg1, S.dg2};
    return res;
}

// ---------------------------------------------------------------------------
// Fundamental generators and the product formula.
// ---------------------------------------------------------------------------

/**
 * The fundamental generators for ranks (n+1, n):
 *   u[k] solves the pair (beta_{k+1}, alpha_k),   k = 0..n,
 *   v[k] solves the pair (beta_{k+1}, alpha_{k+1}), k = 0..n-1,
 * where beta_j / alpha_j are the fundamental weights (1^j, 0, ...) of the
 * respective factors.  All are normalized to value 1 at the base point.
 * u[n] is the pure determinant ratio det1/det2.
 */
struct BranchGens {
    int n = 0;
    std::vector<Gen> u;  // size n+1
    std::vector<Gen> v;  // size n
};

inline const BranchGens& fundamental_generators(int n) {
    static std::map<int, BranchGens> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    BranchGens G;
    G.n = n;
    for (int k = 0; k <= n; ++k) {
        std::vector<long> mu(size_t(n) + 1, 0), la(size_t(n), 0);
        for (int i = 0; i <= k; ++i) mu[size_t(i)] = 1;
        for (int i = 0; i < k; ++i) la[size_t(i)] = 1;
        auto r = solve_invariants(WeightPair(mu, la));
        if (r.dim != 1 || !r.certified)
            throw verification_error("fundamental generator space is not a line");
        G.u.push_back(std::move(r.gen));
    }
    for (int k = 0; k < n; ++k) {
        std::vector<long> mu(size_t(n) + 1, 0), la(size_t(n), 0);
        for (int i = 0; i <= k; ++i) mu[size_t(i)] = 1;
        for (int i = 0; i <= k; ++i) la[size_t(i)] = 1;
        auto r = solve_invariants(WeightPair(mu, la));
        if (r.dim != 1 || !r.certified)
            throw verification_error("fundamental generator space is not a line");
        G.v.push_back(std::move(r.gen));
    }
    return cache.emplace(n, std::move(G)).first->second;
}

/**
 * A monomial in the fundamental generators: value = prod u[k]^eu[k] * prod
 * v[k]^ev[k].  Exponents may be negative (shifted weights, the c-ratio).
 */
struct UFunc {
    int n = 0;
    std::vector<long> eu;  // size n+1
    std::vector<long> ev;  // size n
};

/** Generator exponents of the distinguished vector at an interlacing pair. */
inline UFunc ufunc_of(const WeightPair& w) {
    auto e = BranchingExponents::of(w);
    UFunc f;
    f.n = w.n;
    f.eu.assign(e.c.begin(), e.c.end());
    f.ev.assign(e.d.begin(), e.d.end());
    return f;
}

/** The coordinate ratio character: prod v[k] / prod_{k<n} u[k]. */
inline UFunc c_ratio_ufunc(int n) {
    UFunc f;
    f.n = n;
    f.eu.assign(size_t(n) + 1, -1);
    f.eu[size_t(n)] = 0;
    f.ev.assign(size_t(n), 1);
    return f;
}

/**
 * Flatten the product formula at an interlacing weight into a single
 * generator structure (exact integer polynomial, denominator, det twists).
 * Only u[n] may carry a negative exponent (it is a pure determinant ratio);
 * any other negative exponent means the weight is not interlacing.
 */
inline Gen build_u(const WeightPair& w) {
    if (!interlaces(w)) throw precondition_error("build_u: weight pair must interlace");
    const BranchGens& G = fundamental_generators(w.n);
    UFunc f = ufunc_of(w);
    Gen out;
    out.w = w;
    out.P = IPoly::constant(branch_nvars(w.n), 1);
    out.den = 1;
    for (int k = 0; k <= w.n; ++k) {
        long e = f.eu[size_t(k)];
        if (e == 0) continue;
        const Gen& g = G.u[size_t(k)];
        out.dg1 += e * g.dg1;
        out.dg2 += e * g.dg2;
        bool pure_det = g.P.t.size() == 1 && g.P.t.begin()->second == g.den &&
                        g.P.t.begin()->first == std::vector<std::uint8_t>(size_t(g.P.nv), 0);
        if (pure_det) continue;
        if (e < 0) throw precondition_error("build_u: negative exponent on non-constant generator");
        out.P = out.P * g.P.pow(int(e));
        for (long t = 0; t < e; ++t) out.den = detail::checked_mul_ll(out.den, g.den);
    }
    for (int k = 0; k < w.n; ++k) {
        long e = f.ev[size_t(k)];
        if (e == 0) continue;
        const Gen& g = G.v[size_t(k)];
        if (e < 0) throw precondition_error("build_u: negative exponent on non-constant generator");
        out.dg1 += e * g.dg1;
        out.dg2 += e * g.dg2;
        out.P = out.P * g.P.pow(int(e));
        for (long t = 0; t < e; ++t) out.den = detail::checked_mul_ll(out.den, g.den);
    }
    return out;
}

/** The direct route: the certified invariant itself. */
inline Gen build_u_direct(const WeightPair& w) {
    auto r = solve_invariants(w);
    if (r.dim != 1 || !r.certified)
        throw verification_error("build_u_direct: invariant space is not a certified line");
    return r.gen;
}

/**
 * Exact equality of two generator structures as rational functions:
 * identical det twists and den2 * P1 == den1 * P2.
 */
inline bool gen_equal(const Gen& a, const Gen& b) {
    if (a.dg1 != b.dg1 || a.dg2 != b.dg2) return false;
    return (a.P * b.den - b.P * a.den).is_zero();
}

// ---------------------------------------------------------------------------
// Evaluation of generators and generator monomials over any coefficient
// object (ring elements, truncated jets): the context supplies constants and
// inversion.
// ---------------------------------------------------------------------------

template <class T, class Ctx>
T tpow(const T& base, long e, Ctx& C) {
    if (e == 0) return C.one();
    T b = e < 0 ? C.inv(base) : base;
    long k = e < 0 ? -e : e;
    T r = C.one();
    while (k) {
        if (k & 1) r = r * b;
        if (k >>= 1) b = b * b;
    }
    return r;
}

/**
 * Evaluate a generator at a flattened variable vector.  det1v/det2v are the
 * component determinants at the same variables (passed in so callers can
 * share them across several generator evaluations).
 */
template <class T, class Ctx>
T eval_gen(const Gen& g, const std::vector<T>& vars, const T& det1v, const T& det2v, Ctx& C) {
    T val = g.P.eval(vars, C.zero(), C.one());
    if (g.den != 1) val = val * C.inv(C.from_int(g.den));
    if (g.dg1 != 0) val = val * tpow(det1v, g.dg1, C);
    if (g.dg2 != 0) val = val * tpow(det2v, g.dg2, C);
    return val;
}

namespace detail {
inline std::vector<int> iota_cols(int m) {
    std::vector<int> c;
    for (int i = 0; i < m; ++i) c.push_back(i);
    return c;
}
}  // namespace detail

template <class T, class Ctx>
T eval_ufunc(const BranchGens& G, const UFunc& f, const std::vector<T>& vars, Ctx& C) {
    int n = G.n;
    T det1v = detail::minor_poly(n, 0, detail::iota_cols(n + 1)).eval(vars, C.zero(), C.one());
    T det2v = detail::minor_poly(n, 1, detail::iota_cols(n)).eval(vars, C.zero(), C.one());
    T acc = C.one();
    for (int k = 0; k <= n; ++k) {
        long e = f.eu[size_t(k)];
        if (e == 0) continue;
        acc = acc * tpow(eval_gen(G.u[size_t(k)], vars, det1v, det2v, C), e, C);
    }
    for (int k = 0; k < n; ++k) {
        long e = f.ev[size_t(k)];
        if (e == 0) continue;
        acc = acc * tpow(eval_gen(G.v[size_t(k)], vars, det1v, det2v, C), e, C);
    }
    return acc;
}

/** Evaluation context over a coefficient ring. */
struct EltCtx {
    const Ring* R;
    Elt zero() const { return Elt::zero(R); }
    Elt one() const { return Elt::one(R); }
    Elt inv(const Elt& x) const { return unit_inverse(x); }
    Elt from_int(long long k) const { return Elt(R, k); }
};

/** Convenience: value of the distinguished vector at a group element. */
inline Elt u_value(const WeightPair& w, const GElt& x) {
    const BranchGens& G = fundamental_generators(w.n);
    EltCtx C{x.ring_ptr()};
    return eval_ufunc(G, ufunc_of(w), gelt_vars(x), C);
}

/** All interlacing weight pairs with |entries| <= bound. */
inline std::vector<WeightPair> enumerate_interlacing(int n, long bound) {
    // chains mu_1 >= la_1 >= mu_2 >= ... >= la_n >= mu_{n+1} in [-bound, bound]
    std::vector<WeightPair> out;
    std::vector<long> chain(size_t(2 * n + 1));
    std::function<void(int, long)> rec = [&](int k, long hi) {
        if (k == 2 * n + 1) {
            std::vector<long> mu, la;
            for (int i = 0; i < 2 * n + 1; ++i)
                (i % 2 == 0 ? mu : la).push_back(chain[size_t(i)]);
            out.push_back(WeightPair(mu, la));
            return;
        }
        for (long v = hi; v >= -bound; --v) {
            chain[size_t(k)] = v;
            rec(k + 1, v);
        }
    };
    rec(0, bound);
    return out;
}

}  // namespace ulf
