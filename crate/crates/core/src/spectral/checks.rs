use std::collections::VecDeque;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decouple::{all_etas, inner_slots, outer_words};
use crate::error::{Error, Result};
use crate::guards::Guards;
use crate::measures::{build_mu1, build_nu, convolve, letter_indices, reverse, GroupMeasure, MeasureParams};
use crate::modgroup::{reduce_mod, GroupTable};
use crate::symdyn::{SystemSpec, Word};

use super::dense::{gram_eigenvalues, gram_trace_square, top_multiplicity, DENSE_MAX};
use super::{operator_norm, top_self_adjoint_eigenvalue, ConvOperator, EigenOptions, Subspace};

/// Slack allowed on the conclusion of the perturbation lemma, relative to
/// `kappa_bar |J|`, covering the eigensolver tolerance.
pub const LEMMA_RTOL: f64 = 1e-7;

/// Relative width of the top eigenvalue cluster when counting multiplicity.
pub const MULTIPLICITY_RTOL: f64 = 1e-8;

fn symmetrized(group: &GroupTable, elements: &[u32], coefs: &[f64]) -> Result<GroupMeasure> {
    let m = GroupMeasure::from_pairs(
        group,
        elements.iter().zip(coefs).map(|(&h, &k)| (h, Complex64::new(k, 0.0))),
    );
    Ok(m.add(&reverse(group, &m)?)?.scale(Complex64::new(0.5, 0.0)))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LemmaExpandReport {
    pub q: u32,
    pub j: usize,
    /// `1 - lambda_max(sym A) / |J|` on mean-zero functions.
    pub c0: f64,
    /// `max kappa / kappa_bar`.
    pub k: f64,
    pub kappa_bar: f64,
    /// `lambda_max(sym A~)` on mean-zero functions.
    pub lhs: f64,
    /// `kappa_bar (1 - C0 + sqrt(K - 1)) |J|`; absent when the hypothesis fails.
    pub rhs: Option<f64>,
    pub hypothesis: bool,
    pub holds: Option<bool>,
}

/// Checks the perturbation lemma: a gap for `sum_j pi(h_j)` gives a gap for
/// `sum_j kappa_j pi(h_j)` once the coefficients are nearly flat.
pub fn verify_lemma_expand(
    group: &GroupTable,
    elements: &[u32],
    kappa: &[f64],
    opts: &EigenOptions,
) -> Result<LemmaExpandReport> {
    if elements.is_empty() || elements.len() != kappa.len() {
        return Err(Error::Argument("need one positive coefficient per element".into()));
    }
    if kappa.iter().any(|&k| k <= 0.0 || !k.is_finite()) {
        return Err(Error::Argument("coefficients must be positive".into()));
    }
    let j = elements.len();
    let plain = symmetrized(group, elements, &vec![1.0; j])?;
    let lambda_a = top_self_adjoint_eigenvalue(&ConvOperator::new(group, plain, Subspace::MeanZero)?, opts)?.value;
    let c0 = 1.0 - lambda_a / j as f64;
    let kappa_bar = kappa.iter().sum::<f64>() / j as f64;
    let k = kappa.iter().copied().fold(0.0, f64::max) / kappa_bar;
    let weighted = symmetrized(group, elements, kappa)?;
    let lhs = top_self_adjoint_eigenvalue(&ConvOperator::new(group, weighted, Subspace::MeanZero)?, opts)?.value;
    let hypothesis = c0 > 0.0;
    let rhs = hypothesis.then(|| kappa_bar * (1.0 - c0 + (k - 1.0).max(0.0).sqrt()) * j as f64);
    let holds = rhs.map(|r| lhs <= r + LEMMA_RTOL * kappa_bar * j as f64);
    Ok(LemmaExpandReport {
        q: group.q(),
        j,
        c0,
        k,
        kappa_bar,
        lhs,
        rhs,
        hypothesis,
        holds,
    })
}

/// All quotients `x y^-1` over ordered pairs of `atoms`, in pair order.
pub fn pair_quotients(group: &GroupTable, atoms: &[u32]) -> Vec<u32> {
    atoms
        .iter()
        .flat_map(|&x| atoms.iter().map(move |&y| group.mul(x, group.inverse(y))))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EtaGapReport {
    pub q: u32,
    pub l1: f64,
    pub norm: f64,
    /// `1 - norm / l1` on mean-zero functions.
    pub c1: f64,
    pub iterations: usize,
}

pub fn eta_gap(group: &GroupTable, eta: &GroupMeasure, opts: &EigenOptions) -> Result<EtaGapReport> {
    let r = operator_norm(&ConvOperator::new(group, eta.clone(), Subspace::MeanZero)?, opts)?;
    Ok(EtaGapReport {
        q: group.q(),
        l1: r.l1,
        norm: r.norm,
        c1: r.relative_gap,
        iterations: r.iterations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlatExpansionRow {
    pub q: u32,
    pub l: usize,
    pub contexts: usize,
    pub min_c1: f64,
    pub max_c1: f64,
}

/// `C_1` over every block measure of block length `l` at modulus `q`.
pub fn flat_expansion(
    spec: &SystemSpec,
    group: &GroupTable,
    l: usize,
    a: f64,
    opts: &EigenOptions,
    guards: &Guards,
) -> Result<FlatExpansionRow> {
    let etas = all_etas(spec, group, l, a, guards)?;
    let gaps = etas
        .par_iter()
        .map(|(_, eta)| eta_gap(group, &eta.measure, opts).map(|r| r.c1))
        .collect::<Result<Vec<f64>>>()?;
    Ok(FlatExpansionRow {
        q: group.q(),
        l,
        contexts: gaps.len(),
        min_c1: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        max_c1: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecayRow {
    pub r: usize,
    pub l1: f64,
    pub norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecayReport {
    pub q: u32,
    pub l: usize,
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `ln ratio` against `R`.
    pub slope: f64,
    /// `1 - exp(slope)`.
    pub c2: f64,
    pub strictly_decreasing: bool,
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Normalized mean-zero norm of `mu_1` for `R = R' L` over the given `R'`.
pub fn mu1_decay(
    spec: &SystemSpec,
    group: &GroupTable,
    l: usize,
    r_primes: &[usize],
    a: f64,
    opts: &EigenOptions,
    guards: &Guards,
) -> Result<DecayReport> {
    let mut rows = Vec::with_capacity(r_primes.len());
    for &rp in r_primes {
        let r = rp * l;
        let mu1 = build_mu1(&MeasureParams::new(spec, r, a), group, guards)?;
        let gap = operator_norm(&ConvOperator::new(group, mu1, Subspace::MeanZero)?, opts)?;
        rows.push(DecayRow {
            r,
            l1: gap.l1,
            norm: gap.norm,
            ratio: gap.norm / gap.l1,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.r as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ratio.ln()).collect();
    let (slope, _) = linear_fit(&x, &y);
    Ok(DecayReport {
        q: group.q(),
        l,
        strictly_decreasing: rows.windows(2).all(|w| w[1].ratio < w[0].ratio),
        rows,
        slope,
        c2: 1.0 - slope.exp(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TraceReport {
    pub q: u32,
    pub group_order: usize,
    /// `tr[(A* A)^2]` on the full space (dense; absent for large groups).
    pub trace: Option<f64>,
    /// `|G| ||reverse(mu) * mu||_2^2`.
    pub autocorrelation: f64,
    pub relative_error: Option<f64>,
    /// Top eigenvalue of `A* A` on the new subspace.
    pub top_eigenvalue: Option<f64>,
    pub multiplicity: Option<usize>,
    /// `(q - 1) / 2` for prime `q`.
    pub multiplicity_floor: Option<usize>,
    /// `[|G| ||reverse(mu) * mu||^2 / q]^(1/4)`.
    pub bound_scale: f64,
    /// `||A|| / bound_scale`, the constant of the bound.
    pub c_prime: Option<f64>,
}

impl TraceReport {
    pub fn multiplicity_ok(&self) -> Option<bool> {
        match (self.multiplicity, self.multiplicity_floor) {
            (Some(m), Some(f)) => Some(m >= f),
            _ => None,
        }
    }
}

/// Trace identity and Frobenius multiplicity for convolution by `mu`.
pub fn trace_identity_check(group: &GroupTable, mu: &GroupMeasure) -> Result<TraceReport> {
    let h = convolve(group, &reverse(group, mu)?, mu)?;
    let n = group.order();
    let autocorrelation = n as f64 * h.l2().powi(2);
    let dense = n <= DENSE_MAX;
    let trace = dense.then(|| gram_trace_square(group, mu)).transpose()?;
    let (top, multiplicity) = if dense {
        let eig = gram_eigenvalues(group, mu, Subspace::NewSpace)?;
        let top = eig.last().copied().unwrap_or(0.0);
        (Some(top), Some(top_multiplicity(&eig, MULTIPLICITY_RTOL)))
    } else {
        (None, None)
    };
    let q = group.q();
    let modulus = group.modulus();
    let prime = modulus.factorization().len() == 1 && modulus.factorization()[0].1 == 1;
    let bound_scale = (autocorrelation / q as f64).powf(0.25);
    Ok(TraceReport {
        q,
        group_order: n,
        relative_error: trace.map(|t| (t - autocorrelation).abs() / autocorrelation.abs().max(f64::MIN_POSITIVE)),
        trace,
        autocorrelation,
        top_eigenvalue: top,
        multiplicity,
        multiplicity_floor: prime.then_some((q as usize - 1) / 2),
        bound_scale,
        c_prime: top.map(|t| t.max(0.0).sqrt() / bound_scale),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AutocorrStep {
    pub r: usize,
    pub l1: f64,
    /// `||reverse(nu) * nu||_2`.
    pub lhs: f64,
    /// `2 ||nu||_1^2 / |G|^(1/2)`.
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AutocorrReport {
    pub q: u32,
    pub group_order: usize,
    /// `||delta_e - 1/|G|||_2^2`.
    pub psi_norm_sq: f64,
    pub trajectory: Vec<AutocorrStep>,
    pub r_min: Option<usize>,
    /// Why the search stopped without reaching the bound.
    pub stopped: Option<String>,
}

/// Increases `R` until `||reverse(nu) * nu||_2 <= 2 ||nu||_1^2 / |G|^(1/2)`.
pub fn nu_autocorrelation(
    spec: &SystemSpec,
    group: &GroupTable,
    prefix: &Word,
    a: f64,
    r_max: usize,
    guards: &Guards,
) -> Result<AutocorrReport> {
    let n = group.order();
    let mut psi = vec![Complex64::new(-1.0 / n as f64, 0.0); n];
    psi[group.identity() as usize] += 1.0;
    let psi_norm_sq = psi.iter().map(|c| c.norm_sqr()).sum();
    let mut trajectory = Vec::new();
    let mut r_min = None;
    let mut stopped = None;
    for r in 1..=r_max {
        if let Err(e) = spec.check_word_guard(r + prefix.len(), guards) {
            stopped = Some(e.to_string());
            break;
        }
        let p = MeasureParams::new(spec, r, a).with_prefix(prefix.clone());
        let nu = build_nu(&p, group, guards)?;
        let h = convolve(group, &reverse(group, &nu)?, &nu)?;
        let step = AutocorrStep {
            r,
            l1: nu.l1(),
            lhs: h.l2(),
            threshold: 2.0 * nu.l1().powi(2) / (n as f64).sqrt(),
        };
        let done = step.lhs <= step.threshold;
        trajectory.push(step);
        if done {
            r_min = Some(r);
            break;
        }
    }
    if r_min.is_none() && stopped.is_none() {
        stopped = Some(format!("bound not reached by R = {r_max}"));
    }
    Ok(AutocorrReport {
        q: group.q(),
        group_order: n,
        psi_norm_sq,
        trajectory,
        r_min,
        stopped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AutocorrFit {
    /// `max R_min / ln q`.
    pub c_fit: f64,
    /// Least-squares slope of `R_min` against `ln q`.
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_autocorrelation(reports: &[AutocorrReport]) -> Option<AutocorrFit> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .filter_map(|r| r.r_min.map(|m| ((r.q as f64).ln(), m as f64)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, intercept) = linear_fit(&x, &y);
    Some(AutocorrFit {
        c_fit: pts.iter().map(|(lq, r)| r / lq).fold(0.0, f64::max),
        slope,
        intercept,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ZariskiReport {
    pub q: u32,
    pub generators: usize,
    pub subgroup_order: usize,
    pub group_order: usize,
    pub full: bool,
}

/// Order of the subgroup generated by `gens`, by breadth-first closure.
pub fn zariski_check(group: &GroupTable, gens: &[u32]) -> ZariskiReport {
    let n = group.order();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([group.identity()]);
    seen[group.identity() as usize] = true;
    let mut count = 1;
    while let Some(x) = queue.pop_front() {
        for &s in gens {
            let y = group.mul(x, s);
            if !seen[y as usize] {
                seen[y as usize] = true;
                count += 1;
                queue.push_back(y);
            }
        }
    }
    ZariskiReport {
        q: group.q(),
        generators: gens.len(),
        subgroup_order: count,
        group_order: n,
        full: count == n,
    }
}

/// `g_a g_b^-1 = [[1, 0], [a - b, 1]]` for single digits `a, b`.
/// The single-digit generators have determinant -1, so the quotient is
/// formed over the integers before reducing.
pub fn digit_quotients(group: &GroupTable, digits: &[u32]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for &a in digits {
        for &b in digits {
            let h = reduce_mod([[1, 0], [a as i64 - b as i64, 1]], group.q())?;
            out.push(group.index_of(&h).expect("reduced element lies in the group"));
        }
    }
    Ok(out)
}

/// Quotients of the inner-slot cocycles between two outer words.
pub fn slot_quotients(
    spec: &SystemSpec,
    group: &GroupTable,
    outer: &Word,
    prev_outer: Option<&Word>,
) -> Result<Vec<u32>> {
    let idx = letter_indices(spec, group)?;
    let atoms: Vec<u32> = inner_slots(spec, outer, prev_outer)
        .iter()
        .map(|s| crate::measures::cocycle_index(group, &idx, s))
        .collect();
    Ok(pair_quotients(group, &atoms))
}

/// Worst case of [`zariski_check`] over every pair of neighbouring outer
/// words at block length `l`.
pub fn system_generates(spec: &SystemSpec, group: &GroupTable, l: usize, guards: &Guards) -> Result<ZariskiReport> {
    let outers = outer_words(spec, l, guards)?;
    // Only the boundary letters of the outer words matter.
    let mut seen = std::collections::BTreeSet::new();
    let mut worst: Option<ZariskiReport> = None;
    for o in &outers {
        for p in &outers {
            if !seen.insert((o.innermost(), p.outermost())) {
                continue;
            }
            let gens = slot_quotients(spec, group, o, Some(p))?;
            let r = zariski_check(group, &gens);
            if worst.as_ref().is_none_or(|w| r.subgroup_order < w.subgroup_order) {
                worst = Some(r);
            }
        }
    }
    worst.ok_or_else(|| Error::InvalidSystem("no outer words".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modgroup::{enumerate_group, ModMatrix};
    use crate::spectral::dense::{dense_operator_norm, dense_top_eigenvalue};
    use crate::symdyn::{build_system, SystemConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zaremba12() -> SystemSpec {
        build_system(&SystemConfig::zaremba(&[1, 2])).unwrap()
    }

    fn block_quotients(g: &GroupTable) -> Vec<u32> {
        let spec = zaremba12();
        let idx = letter_indices(&spec, g).unwrap();
        pair_quotients(g, &idx)
    }

    #[test]
    fn lemma_expand_flat_case_is_tight() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let h = block_quotients(&g);
        let r = verify_lemma_expand(&g, &h, &vec![0.3; h.len()], &EigenOptions::default()).unwrap();
        assert!(r.hypothesis);
        assert!((r.k - 1.0).abs() < 1e-12);
        assert!((r.lhs - r.rhs.unwrap()).abs() < 1e-6 * r.kappa_bar * r.j as f64);
        assert_eq!(r.holds, Some(true));
    }

    #[test]
    fn lemma_expand_random_and_spiky_draws() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let h = block_quotients(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for draw in 0..100 {
            let mut kappa: Vec<f64> = (0..h.len()).map(|_| rng.random_range(1.0..1.2)).collect();
            if draw % 10 == 0 {
                kappa[rng.random_range(0..h.len())] *= 50.0;
            }
            let r = verify_lemma_expand(&g, &h, &kappa, &EigenOptions::default()).unwrap();
            assert_eq!(r.holds, Some(true), "{r:?}");
        }
    }

    #[test]
    fn lemma_expand_matches_dense_oracle() {
        let g = enumerate_group(4, &Guards::default()).unwrap();
        let h = block_quotients(&g);
        let kappa: Vec<f64> = (0..h.len()).map(|i| 1.0 + 0.05 * i as f64).collect();
        let r = verify_lemma_expand(&g, &h, &kappa, &EigenOptions::default()).unwrap();
        let dense = dense_top_eigenvalue(&g, &symmetrized(&g, &h, &kappa).unwrap(), Subspace::MeanZero).unwrap();
        assert!((r.lhs - dense).abs() < 1e-8 * dense.abs().max(1.0));
    }

    #[test]
    fn lemma_expand_reports_missing_gap() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let lower = digit_quotients(&g, &[1, 2]).unwrap();
        let r = verify_lemma_expand(&g, &lower, &vec![1.0; lower.len()], &EigenOptions::default()).unwrap();
        assert!(!r.hypothesis);
        assert_eq!(r.rhs, None);
        assert_eq!(r.holds, None);
    }

    #[test]
    fn eta_gap_positive_and_subgroup_detected() {
        let spec = zaremba12();
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let row = flat_expansion(&spec, &g, 2, 0.53, &EigenOptions::default(), &Guards::default()).unwrap();
        assert!(row.min_c1 > 0.0);
        let (_, eta) = &all_etas(&spec, &g, 2, 0.53, &Guards::default()).unwrap()[0];
        let r = eta_gap(&g, &eta.measure, &EigenOptions::default()).unwrap();
        let dense = dense_operator_norm(&g, &eta.measure, Subspace::MeanZero).unwrap();
        assert!((r.norm - dense).abs() < 1e-7);
        // Lower unitriangular support: constant on cosets of a proper subgroup.
        let lower = GroupMeasure::from_pairs(
            &g,
            digit_quotients(&g, &[1, 2])
                .unwrap()
                .into_iter()
                .map(|h| (h, Complex64::new(1.0, 0.0))),
        );
        let r = eta_gap(&g, &lower, &EigenOptions::default()).unwrap();
        assert!(r.c1.abs() < 1e-7);
    }

    #[test]
    fn decay_in_r() {
        let spec = zaremba12();
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let r = mu1_decay(
            &spec,
            &g,
            2,
            &[1, 2, 3],
            0.53,
            &EigenOptions::default(),
            &Guards::default(),
        )
        .unwrap();
        assert!(r.strictly_decreasing, "{r:?}");
        assert!(r.c2 > 0.0);
        let g2 = enumerate_group(2, &Guards::default()).unwrap();
        let r2 = mu1_decay(
            &spec,
            &g2,
            2,
            &[1, 2],
            0.53,
            &EigenOptions::default(),
            &Guards::default(),
        )
        .unwrap();
        assert!(r2.strictly_decreasing);
    }

    #[test]
    fn trace_identity_for_dirac_and_mu1() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let d = GroupMeasure::dirac(&g, 7, Complex64::new(1.0, 0.0));
        let r = trace_identity_check(&g, &d).unwrap();
        assert!((r.trace.unwrap() - 120.0).abs() < 1e-9);
        assert!((r.autocorrelation - 120.0).abs() < 1e-9);

        let spec = zaremba12();
        let mu1 = build_mu1(&MeasureParams::new(&spec, 2, 0.53), &g, &Guards::default()).unwrap();
        let r = trace_identity_check(&g, &mu1).unwrap();
        assert!(r.relative_error.unwrap() < 1e-8);
        assert!(r.multiplicity.unwrap() >= 2);
        assert_eq!(r.multiplicity_ok(), Some(true));
    }

    #[test]
    fn autocorrelation_reaches_bound() {
        let spec = zaremba12();
        let g = enumerate_group(2, &Guards::default()).unwrap();
        let r = nu_autocorrelation(&spec, &g, &Word::empty(), 0.53, 10, &Guards::default()).unwrap();
        assert!((r.psi_norm_sq - 5.0 / 6.0).abs() < 1e-15);
        let g5 = enumerate_group(5, &Guards::default()).unwrap();
        let r5 = nu_autocorrelation(&spec, &g5, &Word::empty(), 0.53, 10, &Guards::default()).unwrap();
        assert!(r5.r_min.is_some(), "{r5:?}");
    }

    #[test]
    fn zariski_examples() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let s = ModMatrix::new(0, 4, 1, 0, 5).unwrap();
        let t = ModMatrix::new(1, 1, 0, 1, 5).unwrap();
        let gens = [g.index_of(&s).unwrap(), g.index_of(&t).unwrap()];
        assert!(zariski_check(&g, &gens).full);
        let lower = zariski_check(&g, &digit_quotients(&g, &[1, 2]).unwrap());
        assert!(!lower.full);
        assert_eq!(lower.subgroup_order, 5);
        assert!(zariski_check(&g, &block_quotients(&g)).full);
    }

    #[test]
    fn schottky_slots_generate() {
        let spec = build_system(&SystemConfig::default_schottky()).unwrap();
        let g = enumerate_group(7, &Guards::default()).unwrap();
        let r = system_generates(&spec, &g, 3, &Guards::default()).unwrap();
        assert!(r.full, "{r:?}");
        // The default generators reduce into a proper subgroup mod 5.
        let g5 = enumerate_group(5, &Guards::default()).unwrap();
        assert!(!system_generates(&spec, &g5, 3, &Guards::default()).unwrap().full);
    }
}
