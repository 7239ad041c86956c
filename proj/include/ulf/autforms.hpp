#pragma once

// Algebraic modular forms on a finite class set.
//
// For a definite group the arithmetic quotient is a finite list of classes
// x_1..x_h, each with a finite stabilizer order, so a vector-valued form is
// literally an h-tuple of vectors.  Here the values are distribution tables
// on the big-cell chart: one tuple then carries every weight at once, and the
// Hecke operator at p acts through the contraction monoid.  The module
// operations are the right transports of dist.hpp, written v . g; the value
// convention phi(x k) = phi(x) . k for k in the level group makes phi a
// function on the genuine double quotient.  With coset representatives
// delta_c = n_{-c} t_p (the sign puts the left-module operator of delta_c at
// act_contract with label c) the operator reads
//
//     (U_p phi)(x_i) = sum_c ( phi(x_{T(i,c)}) . gamma_{ic} ) . t_p^{-1} n_c
//
// where c runs over the canonical contraction-coset labels and the pair
// (T(i,c), gamma_{ic}) -- target class and Iwahori part -- is the model's
// multiplication table for x_i delta_c = x_T gamma.  Everything downstream
// (operator matrices, eigenform extraction, translation to deeper level
// structures) is built from that single formula.  Replacing the
// representatives delta_c by delta_c k with k Iwahori changes no output at
// the stored precision: for k in the affine part of the Iwahori (upper
// triangular -- the freedom that actually arises when re-enumerating
// unipotent labels and torus normalizations) the two occurrences of k cancel
// bit-exactly at every truncation, because affine transports compose with no
// error; for fully general k the cancellation is exact on the degree-zero
// spectral data whenever r(d+1) >= N and holds to the analytic truncation
// O(p^{r(d+1-m)}) on the degree-m moment block otherwise.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dist.hpp"
#include "padic_linalg.hpp"

namespace ulf {

// ---------------------------------------------------------------------------
// Canonical contraction-coset labels.  One integer per chart slot, slot (i,j)
// ranging over residues mod p^{j-i}; the enumeration runs the first slot
// fastest, matching both the table centers and contraction_coset_reps.
// ---------------------------------------------------------------------------

inline i64 up_coset_count(const Ring* R, int n) {
    Domain dom{DomainTag::chart, n};
    i64 c = 1;
    for (auto& sl : dom.slots()) c *= ipow(R->p, sl.j - sl.i);
    return c;
}

inline const std::vector<std::vector<i64>>& up_coset_labels(const Ring* R, int n) {
    static std::map<std::pair<const Ring*, int>, std::vector<std::vector<i64>>> cache;
    auto key = std::make_pair(R, n);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    Domain dom{DomainTag::chart, n};
    auto slots = dom.slots();
    int nd = dom.dim();
    i64 total = up_coset_count(R, n);
    std::vector<std::vector<i64>> out;
    out.reserve((size_t)total);
    for (i64 idx = 0; idx < total; ++idx) {
        i64 t = idx;
        std::vector<i64> lab((size_t)nd, 0);
        for (int s = 0; s < nd; ++s) {
            i64 radix = ipow(R->p, slots[(size_t)s].j - slots[(size_t)s].i);
            lab[(size_t)s] = t % radix;
            t /= radix;
        }
        out.push_back(std::move(lab));
    }
    return cache.emplace(key, std::move(out)).first->second;
}

/** Index of a canonical label vector in the enumeration above. */
inline i64 up_coset_index(const Ring* R, int n, const std::vector<i64>& lab) {
    Domain dom{DomainTag::chart, n};
    auto slots = dom.slots();
    if ((int)lab.size() != dom.dim()) throw precondition_error("up_coset_index: wrong label count");
    i64 idx = 0, mul = 1;
    for (size_t s = 0; s < slots.size(); ++s) {
        i64 radix = ipow(R->p, slots[s].j - slots[s].i);
        if (lab[s] < 0 || lab[s] >= radix)
            throw precondition_error("up_coset_index: label not canonical");
        idx += lab[s] * mul;
        mul *= radix;
    }
    return idx;
}

/** Upper-unipotent pair with prescribed strict-upper entries, slot order. */
inline GElt unipotent_from_labels(const Ring* R, int n, const std::vector<i64>& lab) {
    Domain dom{DomainTag::chart, n};
    auto slots = dom.slots();
    if ((int)lab.size() != dom.dim())
        throw precondition_error("unipotent_from_labels: wrong label count");
    GElt g = GElt::id(R, n);
    for (size_t t = 0; t < slots.size(); ++t) {
        auto& sl = slots[t];
        (sl.comp == 0 ? g.g1 : g.g2).at(sl.i, sl.j) = Elt(R, lab[t]);
    }
    return g;
}

/** Membership in the depth-one parahoric: unit diagonal, lower part in pZ_p. */
inline bool is_iwahori(const GElt& g) {
    auto chk = [](const Mat& m) {
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) {
                if (i == j && !is_unit(m.at(i, j))) return false;
                if (i > j && !ulf::detail::div_pk(m.at(i, j), 1)) return false;
            }
        return true;
    };
    return chk(g.g1) && chk(g.g2);
}

/**
 * Factor iw * t_p = n_{-c} * t_p * rem with c canonical (slot (i,j) reduced
 * mod p^{j-i}) and rem Iwahori.  The canonical c is exactly the U_p table row
 * the translate lands in: rows index the coset representatives
 * delta_c = n_{-c} t_p, the sign fixed so that the left-module operator of
 * delta_c is the right transport mu . (t_p^{-1} n_c) -- i.e. act_contract
 * with label c.  The labels are found level by level in j-i: writing X for
 * the unipotent with entries -c, changing the slot entry of X at (i,j) moves
 * the entry of X^{-1} iw there by exactly minus that change times iw_{jj},
 * while entries at strictly lower levels are already frozen, so one unit
 * division per slot pins c.  The remainder is then t_p^{-1} (X^{-1} iw) t_p:
 * its strict uppers divide by p^{j-i} by the label choice (checked, not
 * assumed), its lowers gain p^{i-j} on top of the pZ_p they already carry,
 * and the diagonal is untouched -- an Iwahori element again.  This is the
 * single group-theoretic step every deeper-level translation reduces to.
 */
inline std::pair<std::vector<i64>, GElt> resolve_past_tp(const GElt& iw) {
    const Ring* R = iw.ring_ptr();
    if (R->m != 1) throw precondition_error("resolve_past_tp: base coefficient rings only");
    if (!is_iwahori(iw)) throw precondition_error("resolve_past_tp: element not Iwahori");
    int n = iw.n;
    Domain dom{DomainTag::chart, n};
    auto slots = dom.slots();
    int nd = dom.dim();
    std::vector<i64> lab((size_t)nd, 0), neg((size_t)nd, 0);
    for (int lev = 1; lev <= n; ++lev) {
        GElt M = unipotent_from_labels(R, n, neg).inverse() * iw;
        for (int t = 0; t < nd; ++t) {
            auto& sl = slots[(size_t)t];
            if (sl.j - sl.i != lev) continue;
            const Mat& mm = sl.comp == 0 ? M.g1 : M.g2;
            const Mat& ww = sl.comp == 0 ? iw.g1 : iw.g2;
            Elt q = mm.at(sl.i, sl.j) * unit_inverse(ww.at(sl.j, sl.j));
            i64 radix = ipow(R->p, lev);
            lab[(size_t)t] = (((-q.c[0]) % radix) + radix) % radix;
            neg[(size_t)t] = -lab[(size_t)t];
        }
    }
    GElt M = unipotent_from_labels(R, n, neg).inverse() * iw;
    auto conj = [&](const Mat& m) {
        Mat out(R, m.n);
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) {
                if (i < j) {
                    auto q = ulf::detail::div_pk(m.at(i, j), j - i);
                    if (!q)
                        throw verification_error(
                            "resolve_past_tp: residual outside the contracted cell");
                    out.at(i, j) = *q;
                } else if (i > j) {
                    out.at(i, j) = m.at(i, j) * ipow(R->p, i - j);
                } else {
                    out.at(i, j) = m.at(i, j);
                }
            }
        return out;
    };
    GElt rem(conj(M.g1), conj(M.g2));
    if (!is_iwahori(rem)) throw verification_error("resolve_past_tp: remainder not Iwahori");
    return {lab, rem};
}

// ---------------------------------------------------------------------------
// The class-set model.
// ---------------------------------------------------------------------------

struct UpCoset {
    int target = 0;  // class index of x_i n_{-c} t_p
    GElt part;       // Iwahori element gamma with x_i n_{-c} t_p = x_target gamma
};

/** Row of the period table: a spherical-subgroup class, the ambient class it
 *  lands on, and the denominator its stabilizer contributes to period sums. */
struct HPeriodRow {
    int h_class = 0;
    int g_class = 0;
    i64 denom = 1;
};

struct ClassSetModel {
    const Ring* R = nullptr;
    int n = 0;
    std::vector<std::string> names;        // diagnostic labels x_1..x_h
    std::vector<i64> stab;                 // stabilizer orders, >= 1
    std::vector<std::vector<UpCoset>> up;  // per class, canonical coset order
    std::vector<HPeriodRow> h_period;
    int level = 1;  // depth tag of the level structure the table was built at

    int h() const { return (int)stab.size(); }

    void validate() const {
        if (!R) throw precondition_error("class set: missing coefficient ring");
        if (n < 1) throw precondition_error("class set: rank must be positive");
        size_t hh = stab.size();
        if (hh == 0 || up.size() != hh || names.size() != hh)
            throw precondition_error("class set: inconsistent table sizes");
        for (i64 s : stab)
            if (s < 1) throw precondition_error("class set: stabilizer orders must be >= 1");
        i64 want = up_coset_count(R, n);
        for (auto& row : up) {
            if ((i64)row.size() != want)
                throw precondition_error(
                    "class set: coset count differs from the enumerated index");
            for (auto& uc : row) {
                if (uc.target < 0 || uc.target >= (int)hh)
                    throw precondition_error("class set: coset target out of range");
                if (uc.part.ring_ptr() != R || uc.part.n != n)
                    throw precondition_error("class set: coset part ring or rank mismatch");
                if (!is_iwahori(uc.part))
                    throw precondition_error("class set: coset part not Iwahori");
            }
        }
        if (h_period.empty()) throw precondition_error("class set: empty period table");
        for (auto& row : h_period) {
            if (row.g_class < 0 || row.g_class >= (int)hh || row.h_class < 0)
                throw precondition_error("class set: period row out of range");
            if (row.denom < 1) throw precondition_error("class set: period denominator < 1");
        }
        if (level < 1) throw precondition_error("class set: level depth must be >= 1");
    }

    /** Mass sum_i 1/|stab_i| as an exact reduced fraction. */
    std::pair<i64, i64> mass() const {
        i64 num = 0, den = 1;
        for (i64 s : stab) {
            num = num * s + den;
            den *= s;
            i64 g = std::gcd(num, den);
            num /= g;
            den /= g;
        }
        return {num, den};
    }
};

// ---------------------------------------------------------------------------
// Forms and the U_p action.
// ---------------------------------------------------------------------------

struct ModularForm {
    const ClassSetModel* M = nullptr;
    WeightPair w;
    TableShape sh;  // common table shape of all values (unrestricted chart)
    std::vector<Distribution> val;
    int level_shift = 0;  // number of t_p-translations applied to the frame

    ModularForm(const ClassSetModel& model, const WeightPair& w_, int r, int d, int wk = 0,
                int wD = 0)
        : M(&model), w(w_), sh(model.R, Domain{DomainTag::chart, model.n}, r, d, wk, wD) {
        if (w.n != model.n) throw precondition_error("form: weight rank differs from the model");
        val.assign((size_t)model.h(), Distribution(sh));
    }

    bool is_zero() const {
        for (auto& v : val)
            for (auto& x : v.m)
                if (!x.is_zero()) return false;
        return true;
    }
};

inline bool form_equal(const ModularForm& a, const ModularForm& b) {
    if (a.M != b.M || !(a.w == b.w) || !a.sh.same(b.sh)) return false;
    for (size_t i = 0; i < a.val.size(); ++i) {
        if (a.val[i].val_offset != b.val[i].val_offset) return false;
        for (size_t k = 0; k < a.val[i].m.size(); ++k)
            if (!(a.val[i].m[k] == b.val[i].m[k])) return false;
    }
    return true;
}

namespace detail {

inline void add_into(Distribution& a, const Distribution& b) {
    if (!a.sh.same(b.sh) || a.val_offset != b.val_offset)
        throw precondition_error("distribution sum: shape or scale mismatch");
    for (size_t i = 0; i < a.m.size(); ++i) a.m[i] = a.m[i] + b.m[i];
}

inline Distribution dist_scale(const Distribution& a, const Elt& c) {
    Distribution out = a;
    for (auto& x : out.m) x = x * c;
    return out;
}

}  // namespace detail

/** (U_p phi)(x_i) = sum_c (phi(x_T) . gamma) . t_p^{-1} n_c over canonical
 *  cosets, deterministic order. */
inline ModularForm up_apply(const ModularForm& phi) {
    const ClassSetModel& M = *phi.M;
    auto& labs = up_coset_labels(M.R, M.n);
    ModularForm out(M, phi.w, phi.sh.r, phi.sh.d, phi.sh.wk, phi.sh.wD);
    out.level_shift = phi.level_shift;
    for (size_t i = 0; i < (size_t)M.h(); ++i) {
        out.val[i].val_offset = phi.val[0].val_offset;
        for (size_t j = 0; j < labs.size(); ++j) {
            const UpCoset& uc = M.up[i][j];
            Distribution t = act_contract(
                act_iwahori(phi.val[(size_t)uc.target], uc.part, phi.w), labs[j]);
            detail::add_into(out.val[i], t);
        }
    }
    return out;
}

/**
 * U_p with every representative delta_c replaced by delta_c k_c for supplied
 * Iwahori elements k_c.  The table factorization becomes x_i delta_c k_c =
 * x_T (gamma k_c) and the module operator picks up k_c^{-1} on the left, so
 * the term is ((phi(x_T) . gamma k_c) . k_c^{-1}) . t_p^{-1} n_c.  For
 * affine k_c (upper-triangular Iwahori) the two occurrences cancel
 * bit-exactly at every (r, d); for general k_c the outputs agree at full
 * ring precision whenever r(d+1) >= N, and to the analytic truncation of
 * the degree-m moment block otherwise.  Any discrepancy beyond those bounds
 * would expose a defect in the truncated action.
 */
inline ModularForm up_apply_rerandomized(const ModularForm& phi, const std::vector<GElt>& ks) {
    const ClassSetModel& M = *phi.M;
    auto& labs = up_coset_labels(M.R, M.n);
    if (ks.size() != labs.size())
        throw precondition_error("up_apply_rerandomized: one twist per coset required");
    ModularForm out(M, phi.w, phi.sh.r, phi.sh.d, phi.sh.wk, phi.sh.wD);
    out.level_shift = phi.level_shift;
    for (size_t i = 0; i < (size_t)M.h(); ++i) {
        out.val[i].val_offset = phi.val[0].val_offset;
        for (size_t j = 0; j < labs.size(); ++j) {
            const UpCoset& uc = M.up[i][j];
            if (!is_iwahori(ks[j]))
                throw precondition_error("up_apply_rerandomized: twist not Iwahori");
            Distribution t = act_iwahori(phi.val[(size_t)uc.target], uc.part * ks[j], phi.w);
            t = act_iwahori(t, ks[j].inverse(), phi.w);
            detail::add_into(out.val[i], act_contract(t, labs[j]));
        }
    }
    return out;
}

/** Pseudorandom Iwahori element for representative-independence checks. */
inline GElt random_iwahori(const Ring* R, int n, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    i64 p = R->p;
    i64 box = ipow(p, std::min(R->N, 4));
    auto fill = [&](Mat& m) {
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) {
                i64 v = (i64)(rng() % (unsigned long long)box);
                if (i == j) {
                    v = 1 + (i64)(rng() % (unsigned long long)(p - 1)) + p * (v % (box / p));
                } else if (i > j) {
                    v = p * (v % (box / p));
                }
                m.at(i, j) = Elt(R, v);
            }
    };
    Mat a(R, n + 1), b(R, n);
    fill(a);
    fill(b);
    GElt g(a, b);
    if (!is_iwahori(g)) throw verification_error("random_iwahori: construction left the parahoric");
    return g;
}

/** Pseudorandom affine (upper-triangular) Iwahori element: unit diagonal
 *  times integral uppers.  These are the representative changes produced by
 *  re-enumerating unipotent coset labels, and their transports are exact
 *  polynomial flows, so rerandomizing with them must be bit-neutral. */
inline GElt random_affine_iwahori(const Ring* R, int n, unsigned long long seed) {
    std::mt19937_64 rng(seed);
    i64 p = R->p;
    i64 box = ipow(p, std::min(R->N, 4));
    auto fill = [&](Mat& m) {
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) {
                if (i > j) {
                    m.at(i, j) = Elt(R, 0);
                    continue;
                }
                i64 v = (i64)(rng() % (unsigned long long)box);
                if (i == j) v = 1 + (i64)(rng() % (unsigned long long)(p - 1)) + p * (v % (box / p));
                m.at(i, j) = Elt(R, v);
            }
    };
    Mat a(R, n + 1), b(R, n);
    fill(a);
    fill(b);
    return GElt(a, b);
}

// ---------------------------------------------------------------------------
// Deeper-level translation.
// ---------------------------------------------------------------------------

/**
 * The plain value phi(x_cls iw t_p^depth), resolved through the class-set
 * table one contraction at a time.  Each step peels iw t_p = delta_c rem
 * (resolve_past_tp), looks up (target, gamma) for x delta_c, and recurses on
 * the pending word gamma rem at depth - 1; the base case folds the leftover
 * Iwahori factor into the stored value by the convention phi(x k) = phi(x).k.
 * No contraction transport happens here -- the whole word's t_p-part is
 * applied by the caller in one exact affine step, which keeps every
 * intermediate object inside the fixed truncation.
 */
inline Distribution transported_value(const ModularForm& phi, int cls, const GElt& iw,
                                      int depth) {
    if (depth < 0) throw precondition_error("transported_value: negative depth");
    if (cls < 0 || cls >= phi.M->h())
        throw precondition_error("transported_value: class out of range");
    if (depth == 0) return act_iwahori(phi.val[(size_t)cls], iw, phi.w);
    auto [lab, rem] = resolve_past_tp(iw);
    i64 j = up_coset_index(phi.M->R, phi.M->n, lab);
    const UpCoset& uc = phi.M->up[(size_t)cls][(size_t)j];
    return transported_value(phi, uc.target, uc.part * rem, depth - 1);
}

/**
 * The translate of phi by u t_p^beta for u the inverse of the cell base
 * point: values (phi tilde)(x) = (phi(x u t_p^beta)) . t_p^{-beta} n_{a0},
 * a0 the base-point labels.  The single contraction step concentrates each
 * value on the distinguished depth-one cell -- the support period sums at
 * level beta pair against -- and the choice u = n_{-a0} is what makes the
 * landing cell the base-point cell rather than its negative.
 */
inline ModularForm level_shift(const ModularForm& phi, int beta) {
    if (beta < 0) throw precondition_error("level_shift: negative shift");
    ModularForm out = phi;
    if (beta == 0) return out;
    GElt u = translation_elt(phi.M->R, phi.M->n).inverse();
    std::vector<i64> a0 = chart_coords(translation_elt(phi.M->R, phi.M->n));
    for (int i = 0; i < phi.M->h(); ++i)
        out.val[(size_t)i] =
            act_contract_pow(transported_value(phi, i, u, beta), a0, beta);
    out.level_shift = phi.level_shift + beta;
    return out;
}

// ---------------------------------------------------------------------------
// The truncated operator matrix and eigenform extraction.
// ---------------------------------------------------------------------------

/** Flattened coordinates: class-major, then the table's own (coset, moment,
 *  deformation) order, matching DMat columns of up_matrix. */
inline std::vector<Elt> flatten_form(const ModularForm& f) {
    std::vector<Elt> v;
    v.reserve(f.val.size() * f.sh.total());
    for (auto& d : f.val) v.insert(v.end(), d.m.begin(), d.m.end());
    return v;
}

inline ModularForm unflatten_form(const ClassSetModel& M, const WeightPair& w, int r, int d,
                                  const std::vector<Elt>& v) {
    ModularForm f(M, w, r, d);
    size_t blk = f.sh.total();
    if (v.size() != blk * (size_t)M.h())
        throw precondition_error("unflatten_form: wrong coordinate count");
    for (size_t i = 0; i < (size_t)M.h(); ++i)
        for (size_t k = 0; k < blk; ++k) f.val[i].m[k] = v[i * blk + k];
    return f;
}

/**
 * Matrix of U_p on the truncated space at table shape (r, d): basis vectors
 * are the unit tables (one class, one coset, one moment).  The moment grading
 * makes the matrix block-triangular up to p-multiples -- the contraction
 * multiplies every occurrence of a source coordinate by p^{j-i}, so the
 * column of a degree-m moment is divisible by p^m and degree mixes only
 * downward modulo those powers.  The ordinary part of the spectrum is
 * therefore decided entirely on the degree-zero block.
 */
inline DMat up_matrix(const ClassSetModel& M, const WeightPair& w, int r, int d) {
    M.validate();
    if (w.n != M.n) throw precondition_error("up_matrix: weight rank differs from the model");
    TableShape sh(M.R, Domain{DomainTag::chart, M.n}, r, d);
    auto& labs = up_coset_labels(M.R, M.n);
    size_t blk = sh.total();
    int dim = (int)(blk * (size_t)M.h());
    DMat A(M.R, dim, dim);
    for (size_t i = 0; i < (size_t)M.h(); ++i) {
        for (size_t j = 0; j < labs.size(); ++j) {
            const UpCoset& uc = M.up[i][j];
            auto flowI = ulf::detail::iwahori_flow(sh, uc.part, w);
            auto flowC = ulf::detail::contract_flow(sh, labs[j]);
            for (size_t col = 0; col < blk; ++col) {
                Distribution e(sh);
                e.m[col] = Elt::one(M.R);
                Distribution img = ulf::detail::push_distribution(
                    ulf::detail::push_distribution(e, flowI), flowC);
                for (size_t row = 0; row < blk; ++row) {
                    if (img.m[row].is_zero()) continue;
                    A.at((int)(i * blk + row), (int)((size_t)uc.target * blk + col)) +=
                        img.m[row];
                }
            }
        }
    }
    return A;
}

/** Total moment degree of each up_matrix basis column (grading metadata). */
inline std::vector<int> up_basis_degrees(const ClassSetModel& M, int r, int d) {
    TableShape sh(M.R, Domain{DomainTag::chart, M.n}, r, d);
    std::vector<int> out;
    out.reserve((size_t)M.h() * sh.total());
    for (int i = 0; i < M.h(); ++i)
        for (int ci = 0; ci < sh.ncosets(); ++ci)
            for (int mi = 0; mi < sh.mspec->size(); ++mi) {
                int s = 0;
                for (int e : sh.mspec->exps[(size_t)mi]) s += e;
                out.push_back(s);
            }
    return out;
}

struct LocalizeOutcome {
    ModularForm phi;
    Elt alpha;
    int kernel_dim = 0;  // mod-p eigenspace dimension at the requested value
    int gap_budget = 0;  // headroom digits the Newton refinement needed
    int loss = 0;        // digits shed inside the bordered solves
};

/**
 * Extract the eigenform of U_p attached to a requested eigenvalue residue.
 * The mod-p kernel of (U_p - alpha_0) supplies both the multiplicity report
 * and the Newton seed; the bordered refinement then lifts the pair to full
 * working precision, with the gap budget escalated until the headroom covers
 * the p-part of the spectral gaps.  A residue outside the mod-p spectrum is
 * a caller error, not a numerical failure.
 */
inline LocalizeOutcome localize(const ClassSetModel& M, const WeightPair& w, int r, int d,
                                const Elt& alpha0) {
    DMat A = up_matrix(M, w, r, d);
    DMat B = A;
    for (int i = 0; i < A.nr; ++i) B.at(i, i) -= alpha0;
    int kdim = kernel_dim_mod_p(B);
    if (kdim == 0)
        throw precondition_error("localize: eigenvalue not in the mod p spectrum");
    auto seed = kernel_vector_mod_p(B);
    if (!seed) throw verification_error("localize: kernel vector extraction failed");
    std::vector<Elt> sv;
    sv.reserve(seed->first.size());
    for (i64 x : seed->first) sv.push_back(Elt(M.R, x));
    for (int budget : {0, 2, 4, 8}) {
        auto ep = newton_eigen(A, alpha0, sv, seed->second, budget);
        if (!ep) continue;
        LocalizeOutcome out{unflatten_form(M, w, r, d, ep->vec), ep->alpha, kdim, budget,
                            ep->loss};
        return out;
    }
    throw verification_error("localize: eigen refinement failed at every gap budget");
}

// ---------------------------------------------------------------------------
// Classical (algebraic-vector) projection.
// ---------------------------------------------------------------------------

/** Exact integral of the chart monomial prod z_t^{e_t} against the table. */
inline Elt integrate_monomial(const Distribution& mu, const std::vector<int>& e) {
    const TableShape& s = mu.sh;
    int nd = s.dom.dim();
    if ((int)e.size() != nd) throw precondition_error("integrate_monomial: wrong exponent count");
    if (s.wspec->size() != 1)
        throw precondition_error("integrate_monomial: scalar tables only");
    int tot = 0;
    for (int x : e) {
        if (x < 0) throw precondition_error("integrate_monomial: negative exponent");
        tot += x;
    }
    if (tot > s.d)
        throw precondition_error("integrate_monomial: monomial degree above the truncation");
    const Ring* R = s.R;
    Elt prE(R, ipow(R->p, s.r));
    Elt acc(R);
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        const auto& b = s.centers[(size_t)ci];
        for (int mi = 0; mi < s.mspec->size(); ++mi) {
            const Elt& v = mu.at(ci, mi, 0);
            if (v.is_zero()) continue;
            const auto& m = s.mspec->exps[(size_t)mi];
            // coefficient of y^m in prod (b_t + p^r y_t)^{e_t}
            Elt coef = Elt::one(R);
            bool ok = true;
            for (int t = 0; t < nd && ok; ++t) {
                int mt = m[(size_t)t], et = e[(size_t)t];
                if (mt > et) { ok = false; break; }
                i64 binom = 1;
                for (int u = 0; u < mt; ++u) binom = binom * (et - u) / (u + 1);
                Elt f(R, binom);
                for (int u = 0; u < et - mt; ++u) f = f * Elt(R, b[(size_t)t]);
                for (int u = 0; u < mt; ++u) f = f * prE;
                coef = coef * f;
            }
            if (ok) acc = acc + v * coef;
        }
    }
    if (mu.val_offset != 0) {
        auto q = ulf::detail::div_pk(acc, mu.val_offset);
        if (!q) throw verification_error("integrate_monomial: value not integral at this scale");
        acc = *q;
    }
    return acc;
}

struct ClassicalForm {
    WeightPair w;
    std::vector<std::vector<int>> exps;  // monomial basis of the algebraic slice
    std::vector<std::vector<Elt>> coef;  // per class, aligned with exps
};

/** Chart monomial exponent box of the algebraic vectors of weight (mu,la):
 *  slot (i,j) is bounded by the corresponding weight gap. */
inline std::vector<std::vector<int>> algebraic_monomials(const WeightPair& w) {
    Domain dom{DomainTag::chart, w.n};
    auto slots = dom.slots();
    int nd = dom.dim();
    std::vector<int> bound((size_t)nd, 0);
    for (int t = 0; t < nd; ++t) {
        auto& sl = slots[(size_t)t];
        long g = sl.comp == 0 ? w.mu[(size_t)sl.i] - w.mu[(size_t)sl.j]
                              : w.lambda[(size_t)sl.i] - w.lambda[(size_t)sl.j];
        bound[(size_t)t] = (int)g;
    }
    long total = 1;
    for (int b : bound) total *= b + 1;
    std::vector<std::vector<int>> out;
    out.reserve((size_t)total);
    for (long idx = 0; idx < total; ++idx) {
        long t = idx;
        std::vector<int> e((size_t)nd, 0);
        for (int s = 0; s < nd; ++s) {
            e[(size_t)s] = (int)(t % (bound[(size_t)s] + 1));
            t /= bound[(size_t)s] + 1;
        }
        out.push_back(std::move(e));
    }
    return out;
}

/**
 * Pair the form's tables against the algebraic monomial box.  The pairing is
 * exact -- polynomials of degree within the truncation integrate with no
 * error -- so this really is restriction to the finite-dimensional classical
 * subspace: a Dirac mass turns into the evaluation functional, and a U_p
 * eigenform projects to an eigenvector of the classical operator with the
 * same eigenvalue.
 */
inline ClassicalForm classical_project(const ModularForm& phi) {
    auto exps = algebraic_monomials(phi.w);
    int need = 0;
    for (int b : exps.back()) need += b;  // last box corner = sum of bounds
    if (need > phi.sh.d)
        throw precondition_error("classical_project: truncation below the algebraic degree");
    ClassicalForm out{phi.w, exps, {}};
    out.coef.reserve(phi.val.size());
    for (auto& v : phi.val) {
        std::vector<Elt> row;
        row.reserve(exps.size());
        for (auto& e : exps) row.push_back(integrate_monomial(v, e));
        out.coef.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic models with prescribed spectra.
// ---------------------------------------------------------------------------

/** One class, prescribed Iwahori parts in canonical coset order. */
inline ClassSetModel synthetic_one_class(const Ring* R, int n, std::vector<GElt> parts,
                                         i64 stab = 1) {
    ClassSetModel M;
    M.R = R;
    M.n = n;
    M.names = {"x1"};
    M.stab = {stab};
    std::vector<UpCoset> row;
    row.reserve(parts.size());
    for (auto& g : parts) row.push_back(UpCoset{0, std::move(g)});
    M.up.push_back(std::move(row));
    M.h_period = {HPeriodRow{0, 0, stab}};
    M.validate();
    return M;
}

/**
 * Rank-one ordinary toy: coset parts are central unit twists with multiplier
 * 1 on every coset except -1 on the last.  At weights with mu_1 - lambda_1
 * = 1 the degree-zero block of U_p is the rank-one matrix (m_a^{-1})_{a,b},
 * with the single unit eigenvalue sum_a m_a^{-1} = p - 2 and everything else
 * p-divisible: a slope-zero eigenform that Hensel lifting finds from its
 * residue.
 */
inline ClassSetModel synthetic_ordinary_toy(const Ring* R) {
    i64 p = R->p;
    std::vector<GElt> parts;
    for (i64 a = 0; a < p; ++a)
        parts.push_back(embed_unit(R, Elt(R, a == p - 1 ? -1 : 1)));
    return synthetic_one_class(R, 1, std::move(parts));
}

/** Rank-one slope-one toy: trivial parts, so the level sum itself is U_p and
 *  the Bernoulli table is an exact eigenvector with eigenvalue p. */
inline ClassSetModel synthetic_slope_toy(const Ring* R) {
    std::vector<GElt> parts((size_t)R->p, GElt::id(R, 1));
    return synthetic_one_class(R, 1, std::move(parts));
}

/** Two classes swapped by every coset, stabilizer orders (1, 2): the minimal
 *  model whose mass 3/2 and period denominators are not all trivial. */
inline ClassSetModel synthetic_two_class(const Ring* R) {
    ClassSetModel M;
    M.R = R;
    M.n = 1;
    M.names = {"x1", "x2"};
    M.stab = {1, 2};
    std::vector<UpCoset> row0, row1;
    for (i64 a = 0; a < R->p; ++a) {
        row0.push_back(UpCoset{1, GElt::id(R, 1)});
        row1.push_back(UpCoset{0, GElt::id(R, 1)});
    }
    M.up = {std::move(row0), std::move(row1)};
    M.h_period = {HPeriodRow{0, 0, 1}, HPeriodRow{1, 1, 2}};
    M.validate();
    return M;
}

/** Rank-two one-class model with trivial parts. */
inline ClassSetModel synthetic_rank_two_toy(const Ring* R) {
    i64 cnt = up_coset_count(R, 2);
    std::vector<GElt> parts((size_t)cnt, GElt::id(R, 2));
    return synthetic_one_class(R, 2, std::move(parts));
}

}  // namespace ulf
