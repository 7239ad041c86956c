#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "rings.hpp"

namespace ulf {

/**
 * Sparse multivariate polynomial with exact integer coefficients, used for
 * the symbolic side of branching: minor products, invariance derivations,
 * and certified kernel verification.  Coefficient arithmetic is overflow-
 * checked; the weights in scope keep everything far below 2^62.
 */
struct IPoly {
    int nv = 0;
    // exponent vector (one entry per variable) -> coefficient
    std::map<std::vector<std::uint8_t>, long long> t;

    explicit IPoly(int nvars = 0) : nv(nvars) {}

    static IPoly constant(int nvars, long long c) {
        IPoly p(nvars);
        if (c != 0) p.t[std::vector<std::uint8_t>(nvars, 0)] = c;
        return p;
    }
    static IPoly var(int nvars, int i, long long c = 1) {
        IPoly p(nvars);
        std::vector<std::uint8_t> e(nvars, 0);
        e[i] = 1;
        if (c != 0) p.t[e] = c;
        return p;
    }

    bool is_zero() const { return t.empty(); }

    void add_term(const std::vector<std::uint8_t>& e, long long c) {
        if (c == 0) return;
        auto it = t.find(e);
        if (it == t.end()) {
            t.emplace(e, c);
        } else {
            it->second += c;
            if (it->second == 0) t.erase(it);
        }
    }

    IPoly operator+(const IPoly& o) const {
        IPoly r = *this;
        for (auto& [e, c] : o.t) r.add_term(e, c);
        return r;
    }
    IPoly operator-(const IPoly& o) const {
        IPoly r = *this;
        for (auto& [e, c] : o.t) r.add_term(e, -c);
        return r;
    }
    IPoly operator*(long long k) const {
        IPoly r(nv);
        if (k == 0) return r;
        for (auto& [e, c] : t) {
            i128 prod = i128(c) * k;
            if (prod > INT64_MAX / 2 || prod < INT64_MIN / 2)
                throw precondition_error("IPoly: coefficient overflow");
            r.t[e] = (long long)prod;
        }
        return r;
    }
    IPoly operator*(const IPoly& o) const {
        IPoly r(nv);
        for (auto& [e1, c1] : t)
            for (auto& [e2, c2] : o.t) {
                std::vector<std::uint8_t> e(e1.size());
                for (size_t i = 0; i < e.size(); ++i) {
                    int s = e1[i] + e2[i];
                    if (s > 255) throw precondition_error("IPoly: exponent overflow");
                    e[i] = std::uint8_t(s);
                }
                i128 prod = i128(c1) * c2;
                if (prod > INT64_MAX / 2 || prod < INT64_MIN / 2)
                    throw precondition_error("IPoly: coefficient overflow");
                r.add_term(e, (long long)prod);
            }
        return r;
    }

    IPoly pow(int k) const {
        IPoly r = constant(nv, 1);
        IPoly b = *this;
        while (k) {
            if (k & 1) r = r * b;
            if (k >>= 1) b = b * b;
        }
        return r;
    }

    /** Partial derivative with respect to variable i. */
    IPoly deriv(int i) const {
        IPoly r(nv);
        for (auto& [e, c] : t) {
            if (e[i] == 0) continue;
            std::vector<std::uint8_t> e2 = e;
            e2[i] -= 1;
            r.add_term(e2, c * e[i]);
        }
        return r;
    }

    /**
     * Evaluate over any commutative ring: vars[i] supplies the value of
     * variable i, `onev` the multiplicative identity.  Monomials are built by
     * repeated multiplication; fine at the degrees in scope.
     */
    template <class T>
    T eval(const std::vector<T>& vars, const T& zerov, const T& onev) const {
        T acc = zerov;
        for (auto& [e, c] : t) {
            T term = onev;
            for (size_t i = 0; i < e.size(); ++i)
                for (int k = 0; k < e[i]; ++k) term = term * vars[i];
            acc = acc + term * (long long)c;
        }
        return acc;
    }
};

}  // namespace ulf
