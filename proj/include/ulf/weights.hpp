#pragma once

#include <algorithm>
#include <climits>
#include <vector>

#include "rings.hpp"

namespace ulf {

/**
 * A dominant weight pair for the group pair of ranks (n+1, n):
 * mu has n+1 weakly decreasing entries, lambda has n.  Entries may be
 * negative; determinant twists absorb the sign in the polynomial models.
 */
struct WeightPair {
    int n = 0;
    std::vector<long> mu;      // size n+1, weakly decreasing
    std::vector<long> lambda;  // size n, weakly decreasing

    WeightPair() = default;
    WeightPair(std::vector<long> mu_, std::vector<long> la_)
        : n(int(la_.size())), mu(std::move(mu_)), lambda(std::move(la_)) {
        if (mu.size() != lambda.size() + 1)
            throw precondition_error("weight pair: need |mu| = |lambda| + 1");
        if (!std::is_sorted(mu.rbegin(), mu.rend()) ||
            !std::is_sorted(lambda.rbegin(), lambda.rend()))
            throw precondition_error("weight pair: entries must be weakly decreasing");
    }

    /** Shift lambda by j in every entry (the twist family through this pair). */
    WeightPair shifted(long j) const {
        WeightPair w = *this;
        for (auto& v : w.lambda) v += j;
        return w;
    }

    bool operator==(const WeightPair& o) const { return mu == o.mu && lambda == o.lambda; }
};

/** mu_1 >= lambda_1 >= mu_2 >= ... >= lambda_n >= mu_{n+1}. */
inline bool interlaces(const WeightPair& w) {
    for (int i = 0; i < w.n; ++i)
        if (!(w.mu[i] >= w.lambda[i] && w.lambda[i] >= w.mu[i + 1])) return false;
    return true;
}

/**
 * The critical window: all integers j such that the chain
 *   -mu_{n+1} >= lambda_1 + j >= -mu_n >= lambda_2 + j >= ... >= lambda_n + j >= -mu_1
 * holds.  Empty when no twist is critical.  The window is the integer
 * interval [j_min, j_max] with
 *   j_max = min_i (-mu_{n+2-i} - lambda_i),  j_min = max_i (-mu_{n+1-i} - lambda_i).
 */
struct CritWindow {
    bool empty = true;
    long j_min = 0, j_max = 0;
    long h() const { return empty ? -1 : j_max - j_min; }
    long size() const { return empty ? 0 : j_max - j_min + 1; }
    bool contains(long j) const { return !empty && j_min <= j && j <= j_max; }
};

inline CritWindow crit_window(const WeightPair& w) {
    // chain constraints, 1-indexed: for i = 1..n,
    //   lambda_i + j <= -mu_{n+2-i}   and   lambda_i + j >= -mu_{n+1-i}
    long lo = LONG_MIN, hi = LONG_MAX;
    for (int i = 1; i <= w.n; ++i) {
        hi = std::min(hi, -w.mu[w.n + 1 - i] - w.lambda[i - 1]);
        lo = std::max(lo, -w.mu[w.n - i] - w.lambda[i - 1]);
    }
    CritWindow c;
    if (lo <= hi) { c.empty = false; c.j_min = lo; c.j_max = hi; }
    return c;
}

/**
 * Exponent data of the distinguished vector at an interlacing pair:
 * branching generators enter with exponents
 *   c_i = mu_{i+1} - lambda_{i+1}  (0 <= i <= n-1),  c_n = mu_{n+1},
 *   d_i = lambda_i - mu_{i+1}      (1 <= i <= n).
 * All are nonnegative except possibly c_n (handled by a determinant twist).
 * Twisting lambda by j sends c_i -> c_i - j (i < n), d_i -> d_i + j, fixes c_n.
 */
struct BranchingExponents {
    std::vector<long> c;  // size n+1, indices 0..n
    std::vector<long> d;  // size n, indices 1..n stored at 0..n-1

    static BranchingExponents of(const WeightPair& w) {
        BranchingExponents e;
        e.c.resize(w.n + 1);
        e.d.resize(w.n);
        for (int i = 0; i < w.n; ++i) e.c[i] = w.mu[i] - w.lambda[i];
        e.c[w.n] = w.mu[w.n];
        for (int i = 0; i < w.n; ++i) e.d[i] = w.lambda[i] - w.mu[i + 1];
        return e;
    }

    bool admissible() const {
        for (size_t i = 0; i + 1 < c.size(); ++i)
            if (c[i] < 0) return false;
        for (long x : d)
            if (x < 0) return false;
        return true;
    }
};

/**
 * A p-refinement datum: the Hecke eigenvalue of the integral normalized
 * operator at p, plus the weight, enough to evaluate slope predicates.
 * alpha is stored as (valuation, unit) with the valuation in Z (the base
 * ring is unramified for all refinement bookkeeping).
 */
struct Refinement {
    WeightPair weight;
    long alpha_val = 0;  // v_p(alpha) of the integral normalized operator eigenvalue

    /**
     * Valuation of the (mu, lambda) character at the contraction element
     * t_p = (diag(p^n,...,p,1), diag(p^n,...,p)); converts between the
     * integral eigenvalue and the naive (unnormalized) one.
     */
    long character_val() const {
        long v = 0;
        for (int i = 0; i <= weight.n; ++i) v += weight.mu[i] * (weight.n - i);
        for (int j = 0; j < weight.n; ++j) v -= weight.lambda[j] * (weight.n - j);
        return v;
    }

    long naive_val() const { return alpha_val + character_val(); }

    /** Noncritical-slope predicate: v_p(alpha) < min_i (mu_i - mu_{i+1} + 1). */
    bool noncritical() const {
        long gap = LONG_MAX;
        for (int i = 0; i + 1 <= weight.n; ++i)
            gap = std::min(gap, weight.mu[i] - weight.mu[i + 1] + 1);
        return alpha_val < gap;
    }

    bool ordinary() const { return alpha_val == 0; }
};

}  // namespace ulf
