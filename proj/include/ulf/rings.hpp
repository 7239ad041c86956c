#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulf {

using i64 = std::int64_t;
using u64 = std::uint64_t;
using i128 = __int128;

/** Raised when an input file or JSON object violates a documented schema. */
struct schema_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** Raised when a mathematical precondition fails (wrong domain, non-unit, ...). */
struct precondition_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** Raised when an internal cross-check that should hold identically fails. */
struct verification_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline i64 ipow(i64 b, int e) {
    i64 r = 1;
    for (int i = 0; i < e; ++i) {
        if (b != 0 && r > INT64_MAX / b) throw precondition_error("ipow overflow");
        r *= b;
    }
    return r;
}

// Largest exponent N with p^N < 2^62, the headroom bound for digit arithmetic.
inline int max_exponent(i64 p) {
    int n = 0;
    i64 r = 1;
    while (r < (i64(1) << 62) / p) { r *= p; ++n; }
    return n;
}

inline int vp_int(i64 x, i64 p, int cap) {
    if (x == 0) return cap;
    int v = 0;
    while (v < cap && x % p == 0) { x /= p; ++v; }
    return v;
}

/** Euler phi for the small moduli used as cyclotomic conductors. */
inline i64 euler_phi(i64 m) {
    i64 r = m;
    for (i64 q = 2; q * q <= m; ++q)
        if (m % q == 0) {
            while (m % q == 0) m /= q;
            r -= r / q;
        }
    if (m > 1) r -= r / m;
    return r;
}

/**
 * Valuation with a fixed denominator (the ramification degree of the ring).
 * Values of elements of Z_p[zeta_{p^s}] lie in (1/e)Z with e = phi(p^s);
 * `infinite` means "zero to working precision", i.e. valuation >= N.
 */
struct Val {
    long num = 0;
    long den = 1;
    bool infinite = false;

    static Val inf() { return Val{0, 1, true}; }
    double approx() const { return infinite ? 1e18 : double(num) / double(den); }
    bool operator==(const Val& o) const {
        if (infinite || o.infinite) return infinite == o.infinite;
        return num * o.den == o.num * den;
    }
    bool operator<(const Val& o) const {
        if (infinite) return false;
        if (o.infinite) return true;
        return num * o.den < o.num * den;
    }
    bool operator<=(const Val& o) const { return *this < o || *this == o; }
};

namespace detail {
// Integer cyclotomic polynomial Phi_m, computed by exact division of x^m - 1
// by the Phi_d for proper divisors d | m.  Coefficients are small for the
// conductors we allow (m | (p-1) p^s), so plain int64 is safe.
inline std::vector<i64> cyclotomic_poly(i64 m) {
    std::vector<i64> num(m + 1, 0);  // x^m - 1
    num[0] = -1;
    num[m] = 1;
    for (i64 d = 1; d < m; ++d) {
        if (m % d != 0) continue;
        std::vector<i64> phi_d = cyclotomic_poly(d);
        // exact polynomial division num /= phi_d (phi_d is monic)
        std::vector<i64> q(num.size() - phi_d.size() + 1, 0);
        std::vector<i64> r = num;
        for (int k = int(q.size()) - 1; k >= 0; --k) {
            i64 c = r[k + phi_d.size() - 1];
            q[k] = c;
            if (c != 0)
                for (size_t j = 0; j < phi_d.size(); ++j) r[k + j] -= c * phi_d[j];
        }
        num = q;
    }
    return num;
}
}  // namespace detail

/**
 * R = (Z/p^N)[x] / (Phi_m(x)): the coefficient ring for all finite-precision
 * p-adic computation.  m must divide (p-1)·p^s for some s, so that R is the
 * mod-p^N reduction of the ring of integers in the cyclotomic field Q_p(zeta_m)
 * (which may split into a product of local rings; zero divisors are expected
 * and handled — see valuation and inverse routines).
 *
 * Elements are digit vectors on the power basis 1, x, ..., x^{phi(m)-1} with
 * entries reduced mod p^N.  p^N must stay below 2^62 so products fit in i128.
 */
class Ring {
public:
    i64 p;
    int N;
    i64 m;
    i64 pN;                  // p^N
    int deg;                 // phi(m)
    int e;                   // ramification degree phi(p^s), s = v_p(m)
    int s;                   // v_p(m)
    std::vector<i64> phi;    // Phi_m coefficients, degree = deg, monic

    Ring(i64 p_, int N_, i64 m_) : p(p_), N(N_), m(m_) {
        if (p < 2) throw precondition_error("ring: p must be >= 2");
        if (N < 1 || N > max_exponent(p))
            throw precondition_error("ring: N out of range for 64-bit digits (p=" +
                                     std::to_string(p) + ", N=" + std::to_string(N) + ")");
        if (m < 1) throw precondition_error("ring: m must be >= 1");
        s = 0;
        i64 mm = m;
        while (mm % p == 0) { mm /= p; ++s; }
        if ((p - 1) % mm != 0)
            throw precondition_error("ring: m must divide (p-1)*p^s, got m=" + std::to_string(m));
        e = int(euler_phi(ipow(p, s)));
        pN = ipow(p, N);
        deg = int(euler_phi(m));
        phi = detail::cyclotomic_poly(m);
    }

    bool operator==(const Ring& o) const { return p == o.p && N == o.N && m == o.m; }

    std::string key() const {
        return "p" + std::to_string(p) + "N" + std::to_string(N) + "m" + std::to_string(m);
    }
};

/** Interned ring lookup: stable address per (p, N, m), cheap to pass around. */
inline const Ring* ring(i64 p, int N, i64 m = 1) {
    static std::map<std::tuple<i64, int, i64>, Ring> cache;
    auto it = cache.find({p, N, m});
    if (it == cache.end()) it = cache.emplace(std::make_tuple(p, N, m), Ring(p, N, m)).first;
    return &it->second;
}

/** Element of a cyclotomic coefficient ring: digits on the power basis. */
class Elt {
public:
    const Ring* R = nullptr;
    std::vector<i64> c;  // length R->deg, entries in [0, p^N)

    Elt() = default;
    explicit Elt(const Ring* R_) : R(R_), c(R_->deg, 0) {}
    Elt(const Ring* R_, i64 value) : R(R_), c(R_->deg, 0) {
        c[0] = mod(value);
    }

    i64 mod(i64 v) const {
        v %= R->pN;
        return v < 0 ? v + R->pN : v;
    }

    static Elt zero(const Ring* R) { return Elt(R); }
    static Elt one(const Ring* R) { return Elt(R, 1); }
    /** The canonical primitive m-th root of unity (the class of x). */
    static Elt zeta(const Ring* R) {
        Elt z(R);
        if (R->deg == 1) {
            // m = 1 or 2: x reduces to an integer root
            z.c[0] = z.mod(R->m == 2 ? -1 : 1);
        } else {
            z.c[1] = 1;
        }
        return z;
    }

    bool is_zero() const {
        for (i64 d : c)
            if (d != 0) return false;
        return true;
    }
    bool operator==(const Elt& o) const { return R == o.R && c == o.c; }

    Elt operator+(const Elt& o) const {
        check(o);
        Elt r(R);
        for (int i = 0; i < R->deg; ++i) r.c[i] = mod(c[i] + o.c[i]);
        return r;
    }
    Elt operator-(const Elt& o) const {
        check(o);
        Elt r(R);
        for (int i = 0; i < R->deg; ++i) r.c[i] = mod(c[i] - o.c[i]);
        return r;
    }
    Elt operator-() const {
        Elt r(R);
        for (int i = 0; i < R->deg; ++i) r.c[i] = mod(-c[i]);
        return r;
    }
    Elt operator*(const Elt& o) const {
        check(o);
        // schoolbook product then reduction by the monic Phi_m
        std::vector<i128> prod(2 * R->deg - 1, 0);
        for (int i = 0; i < R->deg; ++i) {
            if (c[i] == 0) continue;
            for (int j = 0; j < R->deg; ++j) {
                if (o.c[j] == 0) continue;
                prod[i + j] += i128(c[i]) * o.c[j] % R->pN;
            }
        }
        for (int k = int(prod.size()) - 1; k >= R->deg; --k) {
            i64 lead = i64(prod[k] % R->pN);
            if (lead == 0) continue;
            for (int j = 0; j < R->deg; ++j)
                prod[k - R->deg + j] -= i128(lead) * R->phi[j] % R->pN;
            prod[k] = 0;
        }
        Elt r(R);
        for (int i = 0; i < R->deg; ++i) r.c[i] = mod(i64(prod[i] % R->pN));
        return r;
    }
    Elt operator*(i64 k) const {
        Elt r(R);
        i64 km = mod(k);
        for (int i = 0; i < R->deg; ++i) r.c[i] = i64(i128(c[i]) * km % R->pN);
        return r;
    }
    Elt& operator+=(const Elt& o) { return *this = *this + o; }
    Elt& operator-=(const Elt& o) { return *this = *this - o; }
    Elt& operator*=(const Elt& o) { return *this = *this * o; }

    Elt pow(i64 k) const {
        if (k < 0) throw precondition_error("Elt::pow: negative exponent, invert first");
        Elt r = one(R), b = *this;
        while (k) {
            if (k & 1) r *= b;
            b *= b;
            k >>= 1;
        }
        return r;
    }

    /** Reduce this element into a ring of smaller precision (same p, m). */
    Elt reduce_to(const Ring* S) const {
        if (S->p != R->p || S->m != R->m || S->N > R->N)
            throw precondition_error("reduce_to: target must be same ring family, lower precision");
        Elt r(S);
        for (int i = 0; i < S->deg; ++i) r.c[i] = c[i] % S->pN;
        return r;
    }
    /** View in a higher-precision ring; top digits are unknown (lift by 0). */
    Elt lift_to(const Ring* S) const {
        if (S->p != R->p || S->m != R->m || S->N < R->N)
            throw precondition_error("lift_to: target must be same ring family, higher precision");
        Elt r(S);
        for (int i = 0; i < R->deg; ++i) r.c[i] = c[i];
        return r;
    }

private:
    void check(const Elt& o) const {
        if (R != o.R) throw precondition_error("Elt: mixed rings");
    }
};

inline Elt operator*(i64 k, const Elt& a) { return a * k; }

// ---------------------------------------------------------------------------
// Linear algebra over Z/p^N (valuation-tracking elimination).
//
// Pivots are chosen by minimal p-valuation; this is exact over Z/p^N as long
// as divisions only ever divide by units, which the pivot strategy guarantees
// row-wise.  Used for unit inverses, division by the uniformizer, kernels of
// invariance systems, and eigenvector extraction.
// ---------------------------------------------------------------------------

/** Dense matrix over a coefficient ring; row-major. */
struct EMat {
    const Ring* R = nullptr;
    int rows = 0, cols = 0;
    std::vector<Elt> a;

    EMat() = default;
    EMat(const Ring* R_, int r, int c) : R(R_), rows(r), cols(c), a(size_t(r) * c, Elt(R_)) {}
    Elt& at(int i, int j) { return a[size_t(i) * cols + j]; }
    const Elt& at(int i, int j) const { return a[size_t(i) * cols + j]; }
};

/**
 * Minimal p-valuation over the digit vector.  On the power basis this equals
 * sup{k : x ∈ p^k R}, which for unramified (possibly split) R is the true
 * valuation floor; ramified rings refine it via uniformizer division below.
 */
inline int coeff_valuation(const Elt& x) {
    int v = x.R->N;
    for (i64 d : x.c) v = std::min(v, vp_int(d, x.R->p, x.R->N));
    return v;
}

/**
 * Solve A y = b over Z/p^N by elimination with minimal-valuation pivoting.
 * Returns nullopt when inconsistent at working precision.  When the system is
 * underdetermined an arbitrary solution is returned (free variables set to 0).
 */
inline std::optional<std::vector<Elt>> solve_linear(EMat A, std::vector<Elt> b);

/** Multiplicative inverse of a unit; throws precondition_error on non-units. */
inline Elt unit_inverse(const Elt& x);

/** True if x has valuation 0 (i.e. is invertible). */
inline bool is_unit(const Elt& x);

namespace detail {
// Divide an element exactly by p^k (every digit must be divisible).
inline std::optional<Elt> div_pk(const Elt& x, int k) {
    i64 pk = ipow(x.R->p, k);
    Elt r(x.R);
    for (int i = 0; i < x.R->deg; ++i) {
        if (x.c[i] % pk != 0) return std::nullopt;
        r.c[i] = x.c[i] / pk;
    }
    return r;
}
}  // namespace detail

inline std::optional<std::vector<Elt>> solve_linear(EMat A, std::vector<Elt> b) {
    const Ring* R = A.R;
    int nr = A.rows, nc = A.cols;
    if (int(b.size()) != nr) throw precondition_error("solve_linear: size mismatch");
    std::vector<int> pivot_col(nr, -1);
    std::vector<bool> col_used(nc, false);
    int rank_row = 0;
    for (int step = 0; step < nc && rank_row < nr; ++step) {
        // find entry of minimal valuation among unused columns / rows >= rank_row
        int best_i = -1, best_j = -1, best_v = R->N;
        for (int i = rank_row; i < nr; ++i)
            for (int j = 0; j < nc; ++j) {
                if (col_used[j]) continue;
                int v = coeff_valuation(A.at(i, j));
                if (v < best_v) { best_v = v; best_i = i; best_j = j; }
            }
        if (best_i < 0 || best_v >= R->N) break;
        std::swap(b[best_i], b[rank_row]);
        for (int j = 0; j < nc; ++j) std::swap(A.at(best_i, j), A.at(rank_row, j));
        // scale pivot row by the unit part of the pivot:
        // pivot = p^v * u with u a unit; divide row by u, leaving p^v.
        Elt piv = A.at(rank_row, best_j);
        Elt u = *detail::div_pk(piv, best_v);  // exact by choice of best_v
        Elt uinv = unit_inverse(u);
        for (int j = 0; j < nc; ++j) A.at(rank_row, j) *= uinv;
        b[rank_row] *= uinv;
        // eliminate below: entries in col best_j have valuation >= best_v
        for (int i = rank_row + 1; i < nr; ++i) {
            Elt entry = A.at(i, best_j);
            if (entry.is_zero()) continue;
            auto q = detail::div_pk(entry, best_v);
            Elt factor;
            if (q) {
                factor = *q;  // entry = factor * p^v, row op subtracts factor * pivot row
            } else {
                // ramified corner: entry not p^v-divisible digit-wise; fall back to
                // solving factor * p^v == entry, valid since pivot row is p^v * e_j + ...
                return std::nullopt;
            }
            for (int j = 0; j < nc; ++j) A.at(i, j) -= factor * A.at(rank_row, j);
            b[i] -= factor * b[rank_row];
        }
        pivot_col[rank_row] = best_j;
        col_used[best_j] = true;
        ++rank_row;
    }
    // consistency: remaining rows must have b ≡ 0
    for (int i = rank_row; i < nr; ++i)
        if (!b[i].is_zero()) return std::nullopt;
    // back substitution (rows have p^{v_i} at pivot_col, zeros left of it in later rows)
    std::vector<Elt> y(nc, Elt(R));
    for (int i = rank_row - 1; i >= 0; --i) {
        Elt rhs = b[i];
        for (int j = 0; j < nc; ++j)
            if (j != pivot_col[i] && !y[j].is_zero()) rhs -= A.at(i, j) * y[j];
        // pivot entry is p^{v}; solve p^v * y = rhs exactly
        int v = coeff_valuation(A.at(i, pivot_col[i]));
        auto q = detail::div_pk(rhs, v);
        if (!q) return std::nullopt;
        y[pivot_col[i]] = *q;
    }
    return y;
}

namespace detail {
// Multiplication-by-x as a deg x deg matrix over the scalar ring Z/p^N,
// acting on power-basis digit vectors.  Digit systems are always solved over
// the scalar ring so solutions are honest digit vectors.
inline EMat mult_matrix(const Elt& x, const Ring* Sc) {
    const Ring* R = x.R;
    EMat M(Sc, R->deg, R->deg);
    Elt xp = x;
    for (int j = 0; j < R->deg; ++j) {
        for (int i = 0; i < R->deg; ++i) M.at(i, j) = Elt(Sc, xp.c[i]);
        xp = xp * Elt::zeta(R);  // column j+1 = x * zeta^{j+1}
    }
    return M;
}
inline std::vector<Elt> digit_vec(const Elt& x, const Ring* Sc) {
    std::vector<Elt> b;
    b.reserve(x.R->deg);
    for (int i = 0; i < x.R->deg; ++i) b.emplace_back(Sc, x.c[i]);
    return b;
}
inline Elt from_digits(const Ring* R, const std::vector<Elt>& d) {
    Elt r(R);
    for (int i = 0; i < R->deg; ++i) r.c[i] = r.mod(d[i].c[0]);
    return r;
}
}  // namespace detail

inline bool is_unit(const Elt& x) {
    const Ring* R = x.R;
    // cheap sufficient check: constant digit a unit, higher digits divisible by p
    bool easy = x.c[0] % R->p != 0;
    for (int i = 1; easy && i < R->deg; ++i)
        if (x.c[i] % R->p != 0) easy = false;
    if (easy) return true;
    if (R->deg == 1) return x.c[0] % R->p != 0;
    const Ring* Sc = ring(R->p, 1, 1);
    const Ring* R1 = ring(R->p, 1, R->m);
    EMat M = detail::mult_matrix(x.reduce_to(R1), Sc);
    std::vector<Elt> b(R->deg, Elt(Sc));
    b[0] = Elt::one(Sc);
    return solve_linear(M, b).has_value();
}

inline Elt unit_inverse(const Elt& x) {
    const Ring* R = x.R;
    // fast path: plain integer digit
    bool scalar = true;
    for (int i = 1; i < R->deg; ++i)
        if (x.c[i] != 0) scalar = false;
    if (scalar) {
        if (x.c[0] % R->p == 0) throw precondition_error("unit_inverse: not a unit");
        // extended Euclid mod p^N
        i64 a = x.c[0], mod = R->pN;
        i64 t0 = 0, t1 = 1, r0 = mod, r1 = a;
        while (r1 != 0) {
            i64 q = r0 / r1;
            t0 -= q * t1; std::swap(t0, t1);
            r0 -= q * r1; std::swap(r0, r1);
        }
        Elt r(R, t0);
        if (!((x * r) == Elt::one(R))) throw precondition_error("unit_inverse: not a unit");
        return r;
    }
    // general case: solve the digit system (mult by x) y = e_0 over Z/p^N
    const Ring* Sc = ring(R->p, R->N, 1);
    EMat M = detail::mult_matrix(x, Sc);
    std::vector<Elt> b(R->deg, Elt(Sc));
    b[0] = Elt::one(Sc);
    auto y = solve_linear(M, b);
    if (!y) throw precondition_error("unit_inverse: not a unit");
    Elt r = detail::from_digits(R, *y);
    if (!((x * r) == Elt::one(R))) throw precondition_error("unit_inverse: inverse check failed");
    return r;
}

/**
 * Valuation in (1/e)Z, computed to working precision.
 *
 * Unramified rings (s = 0): the minimum digit valuation on the power basis is
 * exact, in both the inert and split cases.  Ramified rings: repeated exact
 * division by the uniformizer pi = zeta_{p^s} - 1 (a linear solve per step);
 * pi^e equals p times a unit, so each successful division lowers the
 * valuation by 1/e.  Capped at N (reported as infinite = "zero at precision").
 */
inline Val valuation(const Elt& x) {
    const Ring* R = x.R;
    if (x.is_zero()) return Val::inf();
    if (R->s == 0) {
        int v = coeff_valuation(x);
        return v >= R->N ? Val::inf() : Val{v, 1, false};
    }
    // uniformizer pi = zeta^{m/p^s} - 1 (a primitive p^s-th root minus 1)
    i64 ps = ipow(R->p, R->s);
    Elt pi = Elt::zeta(R).pow(R->m / ps) - Elt::one(R);
    const Ring* Sc = ring(R->p, R->N, 1);
    EMat M = detail::mult_matrix(pi, Sc);
    Elt cur = x;
    long k = 0;
    long cap = long(R->e) * R->N;
    while (k < cap) {
        if (cur.is_zero()) return Val::inf();
        auto y = solve_linear(M, detail::digit_vec(cur, Sc));
        if (!y) break;
        Elt nxt = detail::from_digits(R, *y);
        // guard: require pi * nxt == cur exactly (solutions at reduced
        // precision would silently overstate the valuation otherwise)
        if (!((pi * nxt) == cur)) break;
        cur = nxt;
        ++k;
    }
    if (k >= cap) return Val::inf();
    return Val{k, R->e, false};
}

/** FNV-1a 64-bit content hash (hex string), used to stamp inputs in reports. */
inline std::string fnv1a_hex(const std::string& bytes) {
    u64 h = 1469598103934665603ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return std::string(buf);
}

}  // namespace ulf
