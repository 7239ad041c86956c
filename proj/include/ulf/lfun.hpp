#pragma once

// The anticyclotomic p-adic L-function of a U_p-refined form on a definite
// pair: period sums over the rank-one spherical subgroup, pushed to Z_p^x by
// the weighting map kappa of dist.hpp.
//
// The whole construction rests on one equivariance.  Write iota(c) for the
// spherical-torus section (diag(1,c), (c)) at rank one.  Right transport by
// iota(c) moves the chart coordinate z to cz and multiplies distributions by
// the torus character value c^{mu_1} * c^{-lambda_1} (first-component pivots
// (1, c) against exponents mu, second-component pivot c against the reversed
// negated lambda).  The branching vector scales the opposite way, u(cz) =
// c^{lambda_1 - mu_1} u(z), so in kappa the two powers cancel and only the
// coset moves:
//     kappa(v . iota(c)) = (translation by c)_* kappa(v),    exactly,
// because a diagonal transport is an affine flow with constant multiplier --
// no truncation enters.  Summing kappa over the iota(c)-translates of a form
// value therefore assembles a distribution on Z_p^x whose restriction to the
// coset c (Z/p^beta)-wise is the c-translate's contribution: the group
// structure of the target is inherited, never imposed.  (The other corner,
// diag(c,1), fails both cancellations -- the total character exponent
// mu_0 + mu_1 - 2 lambda_1 is not identically zero -- which is why the
// section must sit in the lower-right block.)

#include "autforms.hpp"

namespace ulf {

// ---------------------------------------------------------------------------
// The unit group (Z/p^beta)^x, discrete logarithms, Teichmueller lifts.
// All groups in play are tiny (p^beta <= a few hundred), so scans beat
// structure; every value is exact.
// ---------------------------------------------------------------------------

/** Canonical unit residues 1 <= a < p^beta, (a, p) = 1, increasing. */
inline std::vector<i64> unit_residues(i64 p, int beta) {
    if (beta < 1) throw precondition_error("unit_residues: depth must be >= 1");
    i64 pb = ipow(p, beta);
    std::vector<i64> out;
    out.reserve(size_t(pb - pb / p));
    for (i64 a = 1; a < pb; ++a)
        if (a % p != 0) out.push_back(a);
    return out;
}

/**
 * Smallest generator of the cyclic group (Z/p^beta)^x, p odd.  Existence is
 * the primitive-root theorem for odd prime powers; the order check is a
 * direct scan of powers, so a returned value is a certificate, not a guess.
 */
inline i64 unit_group_generator(i64 p, int beta) {
    if (p == 2) throw precondition_error("unit_group_generator: the 2-adic unit group is not cyclic");
    if (beta < 1) throw precondition_error("unit_group_generator: depth must be >= 1");
    i64 pb = ipow(p, beta);
    i64 target = euler_phi(pb);
    for (i64 g = 2; g < pb; ++g) {
        if (g % p == 0) continue;
        i64 cur = g % pb;
        i64 ord = 1;
        while (cur != 1) {
            cur = i64(i128(cur) * g % pb);
            ++ord;
        }
        if (ord == target) return g;
    }
    throw verification_error("unit_group_generator: no generator found");
}

/** Index k with g^k = a mod p^beta, by scan; the group order bounds the loop. */
inline i64 discrete_log(i64 p, int beta, i64 g, i64 a) {
    i64 pb = ipow(p, beta);
    a = ((a % pb) + pb) % pb;
    if (a % p == 0) throw precondition_error("discrete_log: argument is not a unit");
    i64 cur = 1;
    i64 ord = euler_phi(pb);
    for (i64 k = 0; k < ord; ++k) {
        if (cur == a) return k;
        cur = i64(i128(cur) * g % pb);
    }
    throw verification_error("discrete_log: base does not generate the unit group");
}

/**
 * The Teichmueller representative: the unique (p-1)-st root of unity
 * congruent to a mod p.  Iterating x -> x^p contracts towards it, and after
 * N steps the digit string is stable, so a^{p^N} IS the root at working
 * precision -- verified by the fixed-point identity omega^p = omega.
 */
inline Elt teichmuller(const Ring* R, i64 a) {
    Elt x(R, a);
    if (!is_unit(x)) throw precondition_error("teichmuller: argument is not a unit");
    Elt w = x;
    for (int k = 0; k < R->N; ++k) w = w.pow(R->p);
    if (!(w.pow(R->p) == w)) throw verification_error("teichmuller: iteration did not stabilize");
    return w;
}

/** x^k for a unit x and any sign of k. */
inline Elt unit_pow(const Elt& x, long k) {
    if (k >= 0) return x.pow(k);
    return unit_inverse(x).pow(-k);
}

// ---------------------------------------------------------------------------
// Finite-order anticyclotomic characters.  Under the identification of the
// Galois group with Z_p^x (split setting, hard-wired), a character is a pair:
// the integer power z^j and a finite-order part of conductor p^beta, stored
// by its value on the canonical generator of (Z/p^beta)^x.
// ---------------------------------------------------------------------------

struct AnticyclotomicCharacter {
    const Ring* R = nullptr;
    long j = 0;      // the z^j factor (infinity type)
    int beta = 0;    // conductor exponent of the finite-order part
    i64 gen = 1;     // the canonical generator the value is pinned on
    Elt gen_value;   // a root of unity of order dividing phi(p^beta)
    bool primitive = false;

    /** chi_finite at an integer a prime to p (reduced mod p^beta). */
    Elt value_at(i64 a) const {
        if (beta == 0) {
            i64 pr = R->p;
            if (((a % pr) + pr) % pr == 0)
                throw precondition_error("character: argument is not a unit");
            return Elt::one(R);
        }
        i64 k = discrete_log(R->p, beta, gen, a);
        return gen_value.pow(k);
    }
};

/**
 * Build a character from its generator value, validating that the value is a
 * root of unity of admissible order.  Primitivity means the character does
 * not factor through (Z/p^{beta-1})^x; the kernel of that reduction is
 * generated by gen^{phi(p^{beta-1})}, so the test is one power.
 */
inline AnticyclotomicCharacter make_character(const Ring* R, long j, int beta,
                                              const Elt& gen_value) {
    if (beta < 0) throw precondition_error("make_character: negative conductor exponent");
    AnticyclotomicCharacter chi;
    chi.R = R;
    chi.j = j;
    chi.beta = beta;
    if (beta == 0) {
        if (!(gen_value == Elt::one(R)))
            throw precondition_error("make_character: depth-zero characters are trivial");
        chi.gen = 1;
        chi.gen_value = Elt::one(R);
        chi.primitive = true;  // conductor one
        return chi;
    }
    chi.gen = unit_group_generator(R->p, beta);
    i64 pb = ipow(R->p, beta);
    if (!(gen_value.pow(euler_phi(pb)) == Elt::one(R)))
        throw precondition_error("make_character: value order does not divide the group order");
    chi.gen_value = gen_value;
    if (beta == 1)
        chi.primitive = !(gen_value == Elt::one(R));
    else
        chi.primitive = !(gen_value.pow(euler_phi(ipow(R->p, beta - 1))) == Elt::one(R));
    return chi;
}

/** Tame character: finite part omega^t on the Teichmueller direction.  Its
 *  values lie in the base p-adic ring, so it composes with kappa-built
 *  distributions; for beta >= 2 it is an imprimitive depth-beta datum (the
 *  depth placement is still exercised, the new wild direction is not). */
inline AnticyclotomicCharacter tame_character(const Ring* R, long j, int beta, long t) {
    if (beta < 1) throw precondition_error("tame_character: depth must be >= 1");
    i64 g = unit_group_generator(R->p, beta);
    Elt val = unit_pow(teichmuller(R, g), ((t % (R->p - 1)) + (R->p - 1)) % (R->p - 1));
    return make_character(R, j, beta, val);
}

inline AnticyclotomicCharacter inverse_character(const AnticyclotomicCharacter& chi) {
    AnticyclotomicCharacter out = chi;
    if (chi.beta >= 1) out.gen_value = unit_inverse(chi.gen_value);
    return out;
}

// ---------------------------------------------------------------------------
// Gauss sums.
// ---------------------------------------------------------------------------

/**
 * G_psi(chi) = sum over units a mod p^beta of chi(a) zeta^{sign * a}, zeta
 * the canonical primitive p^beta-th root of the coefficient ring.  For
 * primitive chi the paired product G_{psi}(chi) G_{psi^{-1}}(chi^{-1}) is
 * exactly p^beta: |G|^2 counts the group once.  For imprimitive chi the sum
 * degenerates (inner cosets cancel) and the identity fails, so those inputs
 * are rejected rather than silently returning a different normalization.
 */
inline Elt gauss_sum(const AnticyclotomicCharacter& chi, int sign) {
    if (sign != 1 && sign != -1) throw precondition_error("gauss_sum: sign must be +-1");
    if (chi.beta < 1) throw precondition_error("gauss_sum: conductor exponent must be >= 1");
    if (!chi.primitive) throw precondition_error("gauss_sum: character must be primitive");
    const Ring* R = chi.R;
    i64 pb = ipow(R->p, chi.beta);
    if (R->m != pb)
        throw precondition_error("gauss_sum: coefficient ring lacks the required root of unity");
    Elt zeta = Elt::zeta(R);
    Elt acc(R);
    for (i64 a : unit_residues(R->p, chi.beta)) {
        i64 e = sign == 1 ? a : pb - a;
        acc += chi.value_at(a) * zeta.pow(e);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// The algebraic correction factor of the interpolation formula.
// ---------------------------------------------------------------------------

/** Value of the correction factor, split as p-power times unit:
 *  value = p^{pexp} * unit. */
struct InterpolationFactor {
    long pexp = 0;
    Elt unit;
};

/**
 * The factor  c * prod_{i=1..n} (1 - p^{-i})^{-2} * (p^{-n(n+1)(2n+1)/6} / alpha)^beta
 * with the measure constant c fixed to one (exposed as a parameter so a
 * different normalization of measures can be audited without touching the
 * formula).  Each 1 - p^{-i} = (p^i - 1)/p^i contributes p^{2i} over a unit
 * square, so the p-exponent closes to n(n+1) - beta*(e + v_p(alpha)) with
 * e = n(n+1)(2n+1)/6, and the unit part is prod (p^i - 1)^{-2} times the
 * unit of alpha to the -beta.
 */
inline InterpolationFactor interpolation_factor(const Ring* R, int n, int beta, const Elt& alpha,
                                                const Elt* measure_constant = nullptr) {
    if (beta < 1) throw precondition_error("interpolation_factor: depth must be >= 1");
    if (n < 1) throw precondition_error("interpolation_factor: rank must be >= 1");
    if (alpha.is_zero()) throw precondition_error("interpolation_factor: zero eigenvalue");
    long e = long(n) * (n + 1) * (2 * n + 1) / 6;
    int v = coeff_valuation(alpha);
    auto au = detail::div_pk(alpha, v);
    if (!au) throw verification_error("interpolation_factor: unit part extraction failed");
    InterpolationFactor out;
    out.pexp = long(n) * (n + 1) - long(beta) * (e + v);
    Elt u = Elt::one(R);
    for (int i = 1; i <= n; ++i) {
        Elt f = unit_inverse(Elt(R, ipow(R->p, i) - 1));
        u = u * f * f;
    }
    u = u * unit_pow(*au, -long(beta));
    if (measure_constant) u = u * (*measure_constant);
    out.unit = u;
    return out;
}

/**
 * Exponent bookkeeping audit: the construction drops p^{beta n(n+1)(n+2)/3}
 * through the level index and recovers p^{beta n(n+1)/2} through the Gauss
 * factors; the displayed net exponent is -beta n(n+1)(2n+1)/6.  The two
 * routes are reported side by side and compared, not assumed equal.
 */
struct ExponentAudit {
    long via_index_and_gauss = 0;
    long displayed = 0;
    bool consistent = false;
};

inline ExponentAudit interpolation_exponent_audit(int n, int beta) {
    ExponentAudit a;
    a.via_index_and_gauss =
        -long(beta) * n * (n + 1) * (n + 2) / 3 + long(beta) * n * (n + 1) / 2;
    a.displayed = -long(beta) * n * (n + 1) * (2 * n + 1) / 6;
    a.consistent = a.via_index_and_gauss == a.displayed;
    return a;
}

// ---------------------------------------------------------------------------
// The level-index check.
// ---------------------------------------------------------------------------

/** Exponent of one level-deepening step: [K_beta : K_{beta+1}] = p^(this). */
inline long level_index_exponent(int n) { return long(n) * (n + 1) * (n + 2) / 3; }

/**
 * Brute-force index of K_{beta+1} in K_beta in the conjugated-level model.
 * Conjugation by the beta-th contraction power scales the first component's
 * slot (i, j) by p^{beta (j - i)}: upper-triangular congruence data deepens
 * (entries divisible by p^{beta e}, e = j - i), while the opposite unipotent
 * opens at the same rate, so the containment there reverses and the step
 * index is the product of an N-side and a mirrored Nbar-side count.  Both
 * counts are performed by scanning a residue window mod p^{(beta+1) e}: on
 * the N side the divisible residues inside the window, on the Nbar side the
 * window size over its p^e-divisible part after clearing the common
 * denominator.  Only the first component's slots carry the translated level
 * structure; the result should equal p^{n(n+1)(n+2)/3} independently of
 * beta, and the caller compares -- nothing here assumes the formula.
 */
inline i64 index_check(int n, i64 p, int beta) {
    if (n < 1) throw precondition_error("index_check: rank must be >= 1");
    if (beta < 1) throw precondition_error("index_check: depth must be >= 1");
    i64 total = 1;
    for (int i = 0; i <= n; ++i)
        for (int j = i + 1; j <= n; ++j) {
            int e = j - i;
            double bits = double((beta + 1) * e) * std::log2(double(p));
            if (bits > 40) throw precondition_error("index_check: enumeration window too large");
            i64 window = ipow(p, (beta + 1) * e);
            i64 deep = ipow(p, beta * e);
            // N side: residues of the depth-beta lattice modulo the deeper one
            i64 count_n = 0;
            for (i64 a = 0; a < window; ++a)
                if (a % deep == 0) ++count_n;
            // Nbar side: after clearing denominators the chain is Z against
            // p^e Z; count the window against its divisible part
            i64 count_div = 0;
            for (i64 a = 0; a < window; ++a)
                if (a % ipow(p, e) == 0) ++count_div;
            i64 count_nbar = window / count_div;
            total *= count_n * count_nbar;
        }
    return total;
}

// ---------------------------------------------------------------------------
// The spherical-torus section and the direct branching pairing.
// ---------------------------------------------------------------------------

/** iota(c) = (diag(1, c), (c)): the section of the rank-one spherical torus
 *  whose right transport realizes translation by c on the kappa image (see
 *  the header comment for why the lower-right corner is forced). */
inline GElt anticyclotomic_embed(const Ring* R, int n, i64 c) {
    if (n != 1) throw precondition_error("anticyclotomic_embed: rank-one period sums only");
    if (c % R->p == 0) throw precondition_error("anticyclotomic_embed: scalar must be a unit");
    Mat a = Mat::id(R, 2);
    a.at(1, 1) = Elt(R, c);
    Mat b(R, 1);
    b.at(0, 0) = Elt(R, c);
    return GElt(a, b);
}

/**
 * <xi, u_w>: the branching vector of weight w paired directly against a
 * chart distribution, coset by coset.  Shifted weights put negative
 * exponents on non-constant generators, so u_w exists only where those
 * generator values are units -- which is exactly the unit locus the period
 * geometry lives on; cosets with no data are skipped rather than evaluated,
 * making the pairing total on every distribution produced here.  This is the
 * evaluation functional the interpolation identity compares kappa against.
 */
inline Elt branch_pair_value(const Distribution& xi, const WeightPair& w) {
    const TableShape& s = xi.sh;
    if (s.dom.tag != DomainTag::chart)
        throw precondition_error("branch_pair_value: chart-domain input required");
    if (s.dom.n != w.n) throw precondition_error("branch_pair_value: rank mismatch");
    if (s.wspec->size() != 1)
        throw precondition_error("branch_pair_value: scalar tables only");
    int n = s.dom.n, nd = s.dom.dim();
    const BranchGens& G = fundamental_generators(n);
    UFunc fu = ufunc_of(w);
    const JetSpec* JS = jet_spec(nd, s.d, 0, 0);
    JetCtx C{s.R, JS};
    i64 pr = ipow(s.R->p, s.r);
    auto slots = s.dom.slots();
    Elt acc(s.R);
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        bool any = false;
        for (int mi = 0; mi < s.mspec->size() && !any; ++mi)
            if (!xi.at(ci, mi).is_zero()) any = true;
        if (!any) continue;
        const auto& b = s.centers[size_t(ci)];
        std::vector<Jet> vars(size_t(branch_nvars(n)), Jet(s.R, JS));
        for (int i = 0; i <= n; ++i) vars[size_t(bvar1(n, i, i))] = C.one();
        for (int i = 0; i < n; ++i) vars[size_t(bvar2(n, i, i))] = C.one();
        for (int t = 0; t < nd; ++t) {
            auto sl = slots[size_t(t)];
            int vi = sl.comp == 0 ? bvar1(n, sl.i, sl.j) : bvar2(n, sl.i, sl.j);
            Jet v = Jet::constant(s.R, JS, Elt(s.R, b[size_t(t)]));
            std::vector<int> e(size_t(nd), 0);
            e[size_t(t)] = 1;
            int li = JS->index(e);
            if (li >= 0) v.c[size_t(li)] = Elt(s.R, pr);
            vars[size_t(vi)] = v;
        }
        Jet uj = eval_ufunc(G, fu, vars, C);
        for (int mi = 0; mi < s.mspec->size(); ++mi) {
            const Elt& a = xi.at(ci, mi);
            if (a.is_zero()) continue;
            acc = acc + a * uj.c[size_t(JS->index(s.mspec->exps[size_t(mi)]))];
        }
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Period sums and the L-function.
// ---------------------------------------------------------------------------

/**
 * The raw period sum at the form's declared depth beta = level_shift: for
 * every period-table row (spherical class landing on ambient class g with
 * stabilizer order s) and every unit c mod p^beta,
 *     acc += s^{-1} * kappa( value(g) . iota(c) ),
 * scaled by the volume of the depth-beta level group,
 * vol = p^{-(beta-1) n(n+1)(n+2)/3} under vol(depth one) = 1, which rides in
 * the valuation offset.  The c-translates carry the fibers of the depth-beta
 * spherical quotient over the depth-one one; by the kappa equivariance each
 * settles on its own coset of Z_p^x, so the accumulated table is the honest
 * moment list of a distribution on the unit group.  Deterministic order:
 * rows outer, canonical unit lifts inner, ascending.
 */
inline Distribution lp_period_sum(const ModularForm& phi) {
    const ClassSetModel& M = *phi.M;
    if (M.n != 1) throw precondition_error("period sum: rank-one models only");
    int beta = phi.level_shift;
    if (beta < 1) throw precondition_error("period sum: form must carry a positive depth frame");
    if (M.h_period.empty()) throw precondition_error("period sum: missing spherical period table");
    int off = phi.val[0].val_offset;
    for (auto& v : phi.val)
        if (v.val_offset != off)
            throw precondition_error("period sum: class values at mixed scales");
    const Ring* R = M.R;
    TableShape sh(R, Domain{DomainTag::units, 0}, phi.sh.r, phi.sh.d, phi.sh.wk, phi.sh.wD);
    Distribution acc(sh);
    acc.val_offset = off;
    for (const HPeriodRow& row : M.h_period) {
        Elt sinv = Elt(R, row.denom);
        if (!is_unit(sinv))
            throw precondition_error("period sum: stabilizer order not prime to p");
        sinv = unit_inverse(sinv);
        for (i64 c : unit_residues(R->p, beta)) {
            GElt ic = anticyclotomic_embed(R, 1, c);
            Distribution moved = act_iwahori(phi.val[size_t(row.g_class)], ic, phi.w);
            Distribution k = kappa(moved, phi.w, phi.sh.wk, phi.sh.wD);
            accumulate(acc, sinv, k);
        }
    }
    acc.val_offset += (beta - 1) * level_index_exponent(M.n);
    return acc;
}

/** One number of audit: the worst U_p-eigen defect of a form, as an absolute
 *  valuation (capped at the ring precision the scale leaves visible). */
inline long eigen_residual(const ModularForm& phi, const Elt& alpha) {
    ModularForm u = up_apply(phi);
    long cap = phi.sh.R->N - phi.val[0].val_offset;
    long best = cap;
    for (size_t i = 0; i < phi.val.size(); ++i) {
        Distribution diff = u.val[i];
        for (size_t k = 0; k < diff.m.size(); ++k) diff.m[k] -= alpha * phi.val[i].m[k];
        for (auto& x : diff.m)
            if (!x.is_zero()) best = std::min(best, long(coeff_valuation(x)) - diff.val_offset);
    }
    return best;
}

struct PadicLFunction {
    Distribution dist;  // moments on Z_p^x; value = p^{-val_offset} * stored
    WeightPair w;
    Elt alpha;               // the U_p eigenvalue of the refinement
    int alpha_val = 0;       // v_p(alpha)
    int beta = 1;            // construction depth (audit only; the value is depth-free)
    long eigen_residual_val = 0;
    GrowthReport growth;
    bool growth_certified = false;  // fitted exponent within v_p(alpha) plus fit slack
    bool unique_flag = false;       // slope strictly below the critical-window length
    long precision_tag = 0;         // ring digits remaining after the scale offsets
};

/**
 * The L-function of a refined eigenform: translate the form to its
 * depth-beta frame, take the period sum, and divide by alpha^beta.  The
 * result is independent of beta (certified separately); the alpha power is
 * what cancels the extra unfolding of the deeper period sum against the
 * U_p eigen property.  Dividing by alpha moves v_p(alpha) into the
 * valuation offset and the unit part into the digits, so finite slope costs
 * beta * v_p(alpha) digits of absolute precision -- the precision_tag
 * records what is left.  The eigen hypothesis is enforced up front: a form
 * whose U_p defect is visible above eigen_tol digits is rejected, because
 * every later certificate would silently inherit the defect.
 */
inline PadicLFunction build_Lp(const ModularForm& phi, const Elt& alpha, int beta,
                               long eigen_tol = -1) {
    if (beta < 1) throw precondition_error("build_Lp: depth must be >= 1");
    if (alpha.is_zero()) throw precondition_error("build_Lp: zero eigenvalue");
    const Ring* R = phi.sh.R;
    int v = coeff_valuation(alpha);
    if (eigen_tol < 0) eigen_tol = R->N - 2 - 3L * v;
    PadicLFunction L;
    L.eigen_residual_val = eigen_residual(phi, alpha);
    if (L.eigen_residual_val < eigen_tol)
        throw precondition_error("build_Lp: input is not a U_p eigenform at working precision");
    ModularForm shifted = level_shift(phi, beta);
    Distribution D = lp_period_sum(shifted);
    auto au = detail::div_pk(alpha, v);
    if (!au) throw verification_error("build_Lp: eigenvalue unit part extraction failed");
    Elt uinv = unit_inverse(*au);
    Elt scale = uinv.pow(beta);
    for (auto& x : D.m) x = x * scale;
    D.val_offset += long(beta) * v;
    L.dist = std::move(D);
    L.w = phi.w;
    L.alpha = alpha;
    L.alpha_val = v;
    L.beta = beta;
    L.growth = growth_report(L.dist);
    L.growth_certified = L.growth.admissible(double(v) + 0.25);
    L.unique_flag = long(v) < crit_window(phi.w).h();
    L.precision_tag = long(R->N) - L.dist.val_offset;
    return L;
}

// ---------------------------------------------------------------------------
// Character evaluation.
// ---------------------------------------------------------------------------

struct EvalResult {
    Elt stored;  // value = p^{-val_offset} * stored
    long val_offset = 0;
    bool interpolation_semantics = false;  // j lies in the critical window
};

/**
 * Integral of z^j chi(z) against the L-function: the monomial table on
 * Z_p^x, each coset scaled by the character's value at its center -- valid
 * because the table level is at least the conductor depth, so the finite
 * part is constant on every stored coset.  Characters outside the critical
 * window evaluate fine (the distribution is defined on all locally analytic
 * functions) but carry no interpolation claim; the flag says which.
 */
inline EvalResult eval_character(const PadicLFunction& L, const AnticyclotomicCharacter& chi) {
    const TableShape& s = L.dist.sh;
    if (s.dom.tag != DomainTag::units)
        throw precondition_error("eval_character: unit-group distribution required");
    if (s.wk != 0)
        throw precondition_error("eval_character: specialize deformation variables first");
    if (chi.R != s.R) throw precondition_error("eval_character: coefficient ring mismatch");
    if (chi.beta > s.r)
        throw precondition_error("eval_character: table level below the conductor depth");
    LocAnFunction f = monomial_function(s.R, s.dom, s.r, s.d, chi.j);
    for (int ci = 0; ci < s.ncosets(); ++ci) {
        Elt cv = chi.value_at(s.centers[size_t(ci)][0]);
        for (int mi = 0; mi < s.mspec->size(); ++mi) f.at(ci, mi) = f.at(ci, mi) * cv;
    }
    EvalResult out;
    out.stored = pair_value(L.dist, f);
    out.val_offset = L.dist.val_offset;
    out.interpolation_semantics = crit_window(L.w).contains(chi.j);
    return out;
}

// ---------------------------------------------------------------------------
// Growth and depth-independence certificates.
// ---------------------------------------------------------------------------

/** Growth report over levels 1..r_max (exact coarsening from the stored
 *  level); asking for more levels than the table carries is an error, not a
 *  smaller answer. */
inline GrowthReport certify_growth(const PadicLFunction& L, int r_max) {
    if (r_max < 1) throw precondition_error("certify_growth: need at least one level");
    if (L.dist.sh.r < r_max)
        throw precondition_error("certify_growth: distribution lacks the requested levels");
    Distribution cur = L.dist;
    while (cur.sh.r > r_max) cur = coarsen_distribution(cur);
    return growth_report(cur);
}

/**
 * Largest k such that two same-shape distributions agree to p^{-k} as
 * values: align the valuation offsets, take the worst stored difference.
 * Capped at ring-precision-minus-offset -- bit equality beyond that is not
 * evidence, just the modulus.
 */
inline long distribution_agreement(const Distribution& A, const Distribution& B) {
    if (!A.sh.same(B.sh)) throw precondition_error("distribution_agreement: shape mismatch");
    int off = std::max(A.val_offset, B.val_offset);
    Distribution a = with_offset(A, off), b = with_offset(B, off);
    long best = long(A.sh.R->N) - off;
    for (size_t i = 0; i < a.m.size(); ++i) {
        Elt d = a.m[i] - b.m[i];
        if (!d.is_zero()) best = std::min(best, long(coeff_valuation(d)) - off);
    }
    return best;
}

struct BetaCertificate {
    std::vector<int> betas;
    long agreement = 0;  // worst pairwise agreement, as absolute valuation
    long required = 0;
    bool passed = false;
};

/** Build the L-function at several depths and certify pairwise agreement;
 *  the depths must genuinely differ for the certificate to mean anything. */
inline BetaCertificate certify_beta_independence(const ModularForm& phi, const Elt& alpha,
                                                 const std::vector<int>& betas, long required,
                                                 long eigen_tol = -1) {
    if (betas.size() < 2)
        throw precondition_error("beta certificate: need at least two depths");
    std::vector<PadicLFunction> built;
    built.reserve(betas.size());
    for (int b : betas) built.push_back(build_Lp(phi, alpha, b, eigen_tol));
    BetaCertificate cert;
    cert.betas = betas;
    cert.required = required;
    long worst = std::numeric_limits<long>::max();
    for (size_t i = 0; i < built.size(); ++i)
        for (size_t j = i + 1; j < built.size(); ++j)
            worst = std::min(worst, distribution_agreement(built[i].dist, built[j].dist));
    cert.agreement = worst;
    cert.passed = worst >= required;
    return cert;
}

// ---------------------------------------------------------------------------
// The classical route to the same numbers.
// ---------------------------------------------------------------------------

struct PeriodSumValue {
    Elt stored;  // value = p^{-val_offset} * stored
    long val_offset = 0;
};

/**
 * The twisted period functional computed WITHOUT kappa: for each period row
 * and unit c mod p^beta,
 *     chi(c) c^j  *  < value(g) . iota(c), u_{w shifted by j} >  / stab,
 * summed, then scaled by the level volume and alpha^{-beta} exactly as the
 * L-function is.  The determinant of iota(c) in the ambient component is c
 * itself, which is why the twist enters as the plain character value at c.
 * Against eval_character(build_Lp(...)) this is an independent route: no
 * pushforward, no monomial re-expansion -- the only shared ingredient is the
 * transport by iota(c).  Agreement of the two routes is the finite-level
 * interpolation identity.
 */
inline PeriodSumValue period_sum_classical(const ModularForm& phi, const Elt& alpha, int beta,
                                           const AnticyclotomicCharacter& chi) {
    const ClassSetModel& M = *phi.M;
    if (M.n != 1) throw precondition_error("period sum: rank-one models only");
    if (beta < 1) throw precondition_error("period sum: depth must be >= 1");
    if (chi.beta > beta)
        throw precondition_error("period sum: character conductor exceeds the depth");
    const Ring* R = M.R;
    if (chi.R != R) throw precondition_error("period sum: coefficient ring mismatch");
    if (alpha.is_zero()) throw precondition_error("period sum: zero eigenvalue");
    ModularForm shifted = level_shift(phi, beta);
    WeightPair wj = phi.w.shifted(chi.j);
    Elt acc(R);
    for (const HPeriodRow& row : M.h_period) {
        Elt sinv = Elt(R, row.denom);
        if (!is_unit(sinv))
            throw precondition_error("period sum: stabilizer order not prime to p");
        sinv = unit_inverse(sinv);
        for (i64 c : unit_residues(R->p, beta)) {
            GElt ic = anticyclotomic_embed(R, 1, c);
            Distribution moved = act_iwahori(shifted.val[size_t(row.g_class)], ic, phi.w);
            Elt term = branch_pair_value(moved, wj);
            acc = acc + chi.value_at(c) * unit_pow(Elt(R, c), chi.j) * sinv * term;
        }
    }
    int v = coeff_valuation(alpha);
    auto au = detail::div_pk(alpha, v);
    if (!au) throw verification_error("period sum: eigenvalue unit part extraction failed");
    acc = acc * unit_inverse(*au).pow(beta);
    PeriodSumValue out;
    out.stored = acc;
    out.val_offset = shifted.val[0].val_offset + (beta - 1) * level_index_exponent(M.n) +
                     long(beta) * v;
    return out;
}

}  // namespace ulf
