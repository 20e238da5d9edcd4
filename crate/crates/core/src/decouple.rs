//! Block decoupling of `mu_1`.
//!
//! A word of length `R = R' L` splits uniquely into `R'` blocks of `L`
//! letters. Block `j` (counted from the innermost end) is an outer word of
//! `L - w` letters followed by an inner slot of `w` letters, where `w` is the
//! block width of the system. Its true weight depends on everything applied
//! before it; the replacement weight `beta_j` only sees the outer word of
//! block `j - 1`, so once all outer words are fixed the measure factors into
//! a convolution of block measures `eta_1 * ... * eta_R'`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guards::Guards;
use crate::measures::{build_mu1, cocycle_index, letter_indices, GroupMeasure, MeasureParams};
use crate::modgroup::GroupTable;
use crate::symdyn::{admissible_words, estimate_contraction, SystemSpec, Word};

/// Safety multiplier applied to the fitted decoupling constant.
pub const SAFETY: f64 = 1.25;

/// Relative tolerance of the pointwise domination check.
pub const DOMINATION_RTOL: f64 = 1e-12;

/// Upper bin edges of the slack histogram, in units of `bound / mu_1`.
pub const SLACK_EDGES: [f64; 8] = [1.0, 1.001, 1.01, 1.05, 1.1, 1.25, 1.5, 2.0];

/// Outer words of every block; `outers[0]` belongs to the innermost block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockContext {
    pub l: usize,
    pub outers: Vec<Word>,
}

impl BlockContext {
    pub fn new(spec: &SystemSpec, l: usize, outers: Vec<Word>) -> Result<Self> {
        check_block_length(spec, l)?;
        if outers.is_empty() {
            return Err(Error::Argument("a context needs at least one block".into()));
        }
        for o in &outers {
            if o.len() != l - spec.block_width() || !spec.is_admissible(o.letters()) {
                return Err(Error::Inadmissible(format!("outer word {o}")));
            }
        }
        Ok(Self { l, outers })
    }

    pub fn r_prime(&self) -> usize {
        self.outers.len()
    }

    /// Outer word of block `j` (1-based) and of block `j - 1`.
    pub fn pair(&self, j: usize) -> (&Word, Option<&Word>) {
        (&self.outers[j - 1], (j >= 2).then(|| &self.outers[j - 2]))
    }
}

fn check_block_length(spec: &SystemSpec, l: usize) -> Result<()> {
    if l <= spec.block_width() {
        return Err(Error::Argument(format!(
            "block length {l} must exceed the inner slot width {}",
            spec.block_width()
        )));
    }
    Ok(())
}

/// Splits `word` into blocks of `l` letters, innermost block first.
pub fn split_word(word: &Word, l: usize) -> Result<Vec<Word>> {
    if l == 0 || !word.len().is_multiple_of(l) {
        return Err(Error::Argument(format!(
            "word length {} is not divisible by {l}",
            word.len()
        )));
    }
    let n = word.len();
    Ok((0..n / l).map(|j| word.slice(n - (j + 1) * l..n - j * l)).collect())
}

/// Reassembles blocks produced by [`split_word`].
pub fn join_blocks(blocks: &[Word]) -> Word {
    blocks.iter().rev().fold(Word::empty(), |acc, b| acc.concat(b))
}

/// Admissible inner slots between the outer word of a block and the outer
/// word of the block before it.
pub fn inner_slots(spec: &SystemSpec, outer: &Word, prev_outer: Option<&Word>) -> Vec<Word> {
    let w = spec.block_width();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(w);
    slots_rec(
        spec,
        w,
        outer.innermost(),
        prev_outer.and_then(Word::outermost),
        &mut current,
        &mut out,
    );
    out
}

fn slots_rec(
    spec: &SystemSpec,
    w: usize,
    before: Option<u16>,
    after: Option<u16>,
    current: &mut Vec<u16>,
    out: &mut Vec<Word>,
) {
    if current.len() == w {
        if after.is_none_or(|a| spec.can_follow(current[w - 1], a)) {
            out.push(Word::from(current.clone()));
        }
        return;
    }
    for l in 0..spec.n_letters() as u16 {
        let prev = current.last().copied().or(before);
        if prev.is_some_and(|p| !spec.can_follow(p, l)) {
            continue;
        }
        current.push(l);
        slots_rec(spec, w, before, after, current, out);
        current.pop();
    }
}

/// `log |w'(x)|` accumulated from the innermost letter.
fn log_derivative_at(spec: &SystemSpec, word: &Word, mut x: f64) -> f64 {
    let mut total = 0.0;
    for &l in word.letters().iter().rev() {
        let letter = spec.letter(l);
        total += letter.log_derivative(x);
        x = letter.apply(x);
    }
    total
}

fn apply_word(spec: &SystemSpec, word: &Word, x: f64) -> f64 {
    word.letters().iter().rev().fold(x, |y, &l| spec.letter(l).apply(y))
}

/// The point at which block `j` is evaluated: the outer word of block
/// `j - 1` applied to its base point, or the base point of the block itself
/// for `j = 1`.
fn evaluation_point(spec: &SystemSpec, block: &Word, prev_outer: Option<&Word>) -> f64 {
    match prev_outer {
        Some(p) => apply_word(spec, p, spec.base_point_for(p.innermost())),
        None => spec.base_point_for(block.innermost()),
    }
}

/// Replacement weight `|(block)'(prev_outer(o))|^a`, or `|(block)'(o)|^a`
/// for the innermost block.
pub fn beta(spec: &SystemSpec, block: &Word, prev_outer: Option<&Word>, a: f64) -> Result<f64> {
    let joined = match prev_outer {
        Some(p) => block.concat(p),
        None => block.clone(),
    };
    if block.is_empty() || !spec.is_admissible(joined.letters()) {
        return Err(Error::Inadmissible(joined.to_string()));
    }
    let x = evaluation_point(spec, block, prev_outer);
    Ok((a * log_derivative_at(spec, block, x)).exp())
}

/// One block measure: a Dirac per admissible inner slot at the cocycle of
/// the block, weighted by `beta`.
#[derive(Debug, Clone)]
pub struct EtaMeasure {
    pub slots: Vec<Word>,
    pub betas: Vec<f64>,
    pub support: Vec<u32>,
    pub measure: GroupMeasure,
}

impl EtaMeasure {
    /// `max beta / min beta` over the inner slots.
    pub fn flatness_ratio(&self) -> f64 {
        let max = self.betas.iter().copied().fold(f64::MIN, f64::max);
        let min = self.betas.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }
}

/// The measure `eta_j` for block `j` (1-based) of `context`.
pub fn build_eta(
    spec: &SystemSpec,
    group: &GroupTable,
    context: &BlockContext,
    j: usize,
    a: f64,
) -> Result<EtaMeasure> {
    if j == 0 || j > context.r_prime() {
        return Err(Error::Argument(format!("block index {j} out of range")));
    }
    let idx = letter_indices(spec, group)?;
    let (outer, prev) = context.pair(j);
    let slots = inner_slots(spec, outer, prev);
    if slots.is_empty() {
        return Err(Error::InvalidSystem(format!(
            "no admissible inner slot between {outer} and {}",
            prev.map(Word::to_string).unwrap_or_default()
        )));
    }
    let mut betas = Vec::with_capacity(slots.len());
    let mut support = Vec::with_capacity(slots.len());
    for s in &slots {
        let block = outer.concat(s);
        betas.push(beta(spec, &block, prev, a)?);
        support.push(cocycle_index(group, &idx, &block));
    }
    let measure = GroupMeasure::from_pairs(
        group,
        support.iter().zip(&betas).map(|(&g, &b)| (g, Complex64::new(b, 0.0))),
    );
    Ok(EtaMeasure {
        slots,
        betas,
        support,
        measure,
    })
}

/// Every admissible outer word of a block of length `l`.
pub fn outer_words(spec: &SystemSpec, l: usize, guards: &Guards) -> Result<Vec<Word>> {
    check_block_length(spec, l)?;
    admissible_words(spec, l - spec.block_width(), guards)
}

/// Measured decoupling error at one block length.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlockError {
    pub l: usize,
    /// `max |log w_true - log beta|` over blocks `j >= 2`.
    pub max_error: f64,
    /// Smallest per-context maximum, showing the spread across contexts.
    pub min_context_error: f64,
    /// `max beta' / beta` over inner slots in a fixed context.
    pub max_beta_ratio: f64,
}

/// The fitted-then-frozen decoupling constant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecouplingFit {
    pub a: f64,
    /// Contraction rate per letter.
    pub gamma: f64,
    pub per_l: Vec<BlockError>,
    /// `max_L max_error(L) gamma^L`.
    pub c_fit: f64,
    /// `SAFETY * c_fit`; used in the decoupled bound.
    pub c: f64,
    /// Geometric mean of `max_error(L) / max_error(L + 1)`.
    pub rate: f64,
}

impl DecouplingFit {
    /// Per-block multiplicative cost `exp(c gamma^-L)`.
    pub fn block_factor(&self, l: usize) -> f64 {
        (self.c * self.gamma.powi(-(l as i32))).exp()
    }

    /// `K = exp(2 c gamma^(1-L))`.
    pub fn flatness_k(&self, l: usize) -> f64 {
        (2.0 * self.c * self.gamma.powi(1 - l as i32)).exp()
    }
}

/// Block lengths used for fitting: three lengths starting just above the
/// slot width.
pub fn fit_lengths(spec: &SystemSpec) -> Vec<usize> {
    let w = spec.block_width();
    (w + 1..=w + 3).collect()
}

/// Measures the decoupling error exhaustively over two-block words.
pub fn measure_block_error(spec: &SystemSpec, l: usize, a: f64, guards: &Guards) -> Result<BlockError> {
    let outers = outer_words(spec, l, guards)?;
    spec.check_word_guard(2 * l, guards)?;
    // True orbit points after each possible first block, grouped by its outer word.
    let images: Vec<Vec<f64>> = outers
        .iter()
        .map(|o1| {
            inner_slots(spec, o1, None)
                .iter()
                .map(|s| {
                    let b1 = o1.concat(s);
                    apply_word(spec, &b1, spec.base_point_for(b1.innermost()))
                })
                .collect()
        })
        .collect();
    let per_context: Vec<(f64, f64)> = outers
        .par_iter()
        .flat_map_iter(|o2| outers.iter().zip(&images).map(move |(o1, ys)| (o2, o1, ys)))
        .map(|(o2, o1, ys)| {
            let mut worst: f64 = 0.0;
            let z = apply_word(spec, o1, spec.base_point_for(o1.innermost()));
            let slots = inner_slots(spec, o2, Some(o1));
            let mut betas = Vec::with_capacity(slots.len());
            for s in &slots {
                let b2 = o2.concat(s);
                let lb = log_derivative_at(spec, &b2, z);
                betas.push(lb);
                for &y in ys {
                    let lt = log_derivative_at(spec, &b2, y);
                    worst = worst.max(a * (lt - lb).abs());
                }
            }
            let hi = betas.iter().copied().fold(f64::MIN, f64::max);
            let lo = betas.iter().copied().fold(f64::MAX, f64::min);
            (worst, (a * (hi - lo)).exp())
        })
        .collect();
    Ok(BlockError {
        l,
        max_error: per_context.iter().map(|p| p.0).fold(0.0, f64::max),
        min_context_error: per_context.iter().map(|p| p.0).fold(f64::MAX, f64::min),
        max_beta_ratio: per_context.iter().map(|p| p.1).fold(1.0, f64::max),
    })
}

/// Fits the decoupling constant for `spec` at exponent `a`.
pub fn fit_decoupling_constant(spec: &SystemSpec, a: f64, guards: &Guards) -> Result<DecouplingFit> {
    let gamma = estimate_contraction(spec)?.per_letter;
    let per_l = fit_lengths(spec)
        .into_iter()
        .map(|l| measure_block_error(spec, l, a, guards))
        .collect::<Result<Vec<_>>>()?;
    let c_fit = per_l
        .iter()
        .map(|e| e.max_error * gamma.powi(e.l as i32))
        .fold(0.0, f64::max);
    let ratios: Vec<f64> = per_l
        .windows(2)
        .filter(|w| w[1].max_error > 0.0)
        .map(|w| (w[0].max_error / w[1].max_error).ln())
        .collect();
    let rate = if ratios.is_empty() {
        f64::INFINITY
    } else {
        (ratios.iter().sum::<f64>() / ratios.len() as f64).exp()
    };
    Ok(DecouplingFit {
        a,
        gamma,
        per_l,
        c_fit,
        c: SAFETY * c_fit,
        rate,
    })
}

/// Precomputed block measures for every pair of neighbouring outer words.
struct EtaTable {
    outers: Vec<Word>,
    /// `first[i]`: atoms of `eta_1` with outer word `i`.
    first: Vec<Vec<(u32, f64)>>,
    /// `later[p * n + i]`: atoms of `eta_j` with outer word `i` after outer word `p`.
    later: Vec<Vec<(u32, f64)>>,
}

impl EtaTable {
    fn new(spec: &SystemSpec, group: &GroupTable, l: usize, a: f64, guards: &Guards) -> Result<Self> {
        let outers = outer_words(spec, l, guards)?;
        let idx = letter_indices(spec, group)?;
        let atoms = |outer: &Word, prev: Option<&Word>| -> Result<Vec<(u32, f64)>> {
            inner_slots(spec, outer, prev)
                .iter()
                .map(|s| {
                    let block = outer.concat(s);
                    Ok((cocycle_index(group, &idx, &block), beta(spec, &block, prev, a)?))
                })
                .collect()
        };
        let first = outers.iter().map(|o| atoms(o, None)).collect::<Result<Vec<_>>>()?;
        let later = outers
            .par_iter()
            .flat_map_iter(|p| outers.iter().map(move |o| (p, o)))
            .map(|(p, o)| atoms(o, Some(p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { outers, first, later })
    }
}

/// `exp(c gamma^-L)^(R'-1) sum_contexts eta_1 * ... * eta_R'`.
pub fn decoupled_upper_bound(
    spec: &SystemSpec,
    group: &GroupTable,
    l: usize,
    r_prime: usize,
    fit: &DecouplingFit,
    guards: &Guards,
) -> Result<GroupMeasure> {
    if r_prime == 0 {
        return Err(Error::Argument("R' must be at least 1".into()));
    }
    spec.check_word_guard(l * r_prime, guards)?;
    let table = EtaTable::new(spec, group, l, fit.a, guards)?;
    let n_outer = table.outers.len();
    let n = group.order();
    let partials: Vec<Vec<Complex64>> = (0..n_outer)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n];
            let terms: Vec<(u32, f64)> = table.first[i].clone();
            extend_context(group, &table, i, r_prime - 1, &terms, &mut acc);
            acc
        })
        .collect();
    let scale = fit.block_factor(l).powi(r_prime as i32 - 1);
    let mut total = vec![Complex64::new(0.0, 0.0); n];
    for p in partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x * scale;
        }
    }
    Ok(GroupMeasure::from_dense(group.q(), total))
}

fn extend_context(
    group: &GroupTable,
    table: &EtaTable,
    prev: usize,
    remaining: usize,
    terms: &[(u32, f64)],
    acc: &mut [Complex64],
) {
    if remaining == 0 {
        for &(g, w) in terms {
            acc[g as usize] += w;
        }
        return;
    }
    let n_outer = table.outers.len();
    for i in 0..n_outer {
        let eta = &table.later[prev * n_outer + i];
        let next: Vec<(u32, f64)> = terms
            .iter()
            .flat_map(|&(g, w)| eta.iter().map(move |&(h, b)| (group.mul(g, h), w * b)))
            .collect();
        extend_context(group, table, i, remaining - 1, &next, acc);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HistogramBin {
    /// Upper edge of `bound / mu_1`; `None` for the open last bin.
    pub upper: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DominationReport {
    pub q: u32,
    pub compared: usize,
    pub violations: usize,
    /// Largest `(mu_1 - bound) / mu_1` over violations; 0 when none.
    pub max_violation: f64,
    /// Smallest `bound / mu_1` over the support of `mu_1`.
    pub min_slack: f64,
    pub slack_histogram: Vec<HistogramBin>,
}

impl DominationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Pointwise comparison `mu_1 <= bound` over the whole group.
pub fn verify_domination(mu1: &GroupMeasure, bound: &GroupMeasure) -> Result<DominationReport> {
    mu1.check_same(bound)?;
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut min_slack = f64::INFINITY;
    let mut counts = vec![0usize; SLACK_EDGES.len() + 1];
    let mut compared = 0;
    for (g, m) in mu1.iter() {
        let m = m.norm();
        let b = bound.get(g).re;
        compared += 1;
        let slack = b / m;
        min_slack = min_slack.min(slack);
        if m > b * (1.0 + DOMINATION_RTOL) {
            violations += 1;
            max_violation = max_violation.max((m - b) / m);
        }
        let bin = SLACK_EDGES
            .iter()
            .position(|&e| slack <= e * (1.0 + DOMINATION_RTOL))
            .unwrap_or(SLACK_EDGES.len());
        counts[bin] += 1;
    }
    let slack_histogram = counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            upper: SLACK_EDGES.get(i).copied(),
            count,
        })
        .collect();
    Ok(DominationReport {
        q: mu1.q(),
        compared,
        violations,
        max_violation,
        min_slack: if compared == 0 { 1.0 } else { min_slack },
        slack_histogram,
    })
}

/// Result of the full decoupling pipeline at one `(L, R', q)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DecoupleCase {
    pub l: usize,
    pub r_prime: usize,
    pub q: u32,
    pub mass_mu1: f64,
    pub mass_bound: f64,
    /// `exp(2 c gamma^-L)^(R'-1)`, the allowed upper end of the mass ratio.
    pub mass_ratio_cap: f64,
    pub domination: DominationReport,
}

impl DecoupleCase {
    pub fn mass_ratio(&self) -> f64 {
        self.mass_bound / self.mass_mu1
    }

    pub fn passed(&self) -> bool {
        let r = self.mass_ratio();
        self.domination.passed() && r >= 1.0 - DOMINATION_RTOL && r <= self.mass_ratio_cap * (1.0 + DOMINATION_RTOL)
    }
}

/// Builds `mu_1` with `R = R' L` and its decoupled bound, then compares.
pub fn decouple_case(
    spec: &SystemSpec,
    group: &GroupTable,
    l: usize,
    r_prime: usize,
    fit: &DecouplingFit,
    guards: &Guards,
) -> Result<DecoupleCase> {
    let mu1 = build_mu1(&MeasureParams::new(spec, l * r_prime, fit.a), group, guards)?;
    let bound = decoupled_upper_bound(spec, group, l, r_prime, fit, guards)?;
    let domination = verify_domination(&mu1, &bound)?;
    let cap = (2.0 * fit.c * fit.gamma.powi(-(l as i32)))
        .exp()
        .powi(r_prime as i32 - 1);
    Ok(DecoupleCase {
        l,
        r_prime,
        q: group.q(),
        mass_mu1: mu1.l1(),
        mass_bound: bound.l1(),
        mass_ratio_cap: cap,
        domination,
    })
}

/// Every context's block measures for block `j >= 2`, keyed by the pair of
/// neighbouring outer words. Used by the flatness and gap checks.
pub fn all_etas(
    spec: &SystemSpec,
    group: &GroupTable,
    l: usize,
    a: f64,
    guards: &Guards,
) -> Result<Vec<(BlockContext, EtaMeasure)>> {
    let outers = outer_words(spec, l, guards)?;
    let mut out = Vec::with_capacity(outers.len() * (outers.len() + 1));
    for o in &outers {
        let ctx = BlockContext::new(spec, l, vec![o.clone()])?;
        let eta = build_eta(spec, group, &ctx, 1, a)?;
        out.push((ctx, eta));
    }
    for p in &outers {
        for o in &outers {
            let ctx = BlockContext::new(spec, l, vec![p.clone(), o.clone()])?;
            let eta = build_eta(spec, group, &ctx, 2, a)?;
            out.push((ctx, eta));
        }
    }
    Ok(out)
}
