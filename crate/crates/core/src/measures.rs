//! Finitely supported complex measures on `SL_2(Z/q)`.
//!
//! The transfer measures are sums of Dirac masses at the congruence cocycle
//! of each branch, weighted by the Gibbs weight of the branch. They are
//! built by a depth-first walk that adds letters from the innermost one
//! outwards, so the derivative and the cocycle are both updated by one
//! multiplication per letter and no integer matrices are ever formed.
//!
//! Convention: `(mu * nu)(x) = sum_{g h = x} mu(g) nu(h)` and the action on
//! functions is `(mu * phi)(x) = sum_g mu(g) phi(g^-1 x)`.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::guards::Guards;
use crate::modgroup::{reduce_mod, GroupTable, ModMatrix};
use crate::symdyn::{BasePoint, IntMatrix, SystemSpec, Word};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Chunk length for parallel loops; fixed so results do not depend on the
/// number of threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
enum Coeffs {
    /// Sorted by group index, zero coefficients dropped.
    Sparse(Vec<(u32, Complex64)>),
    Dense(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMeasure {
    q: u32,
    order: usize,
    coeffs: Coeffs,
    l1: f64,
    l2: f64,
}

impl GroupMeasure {
    pub fn zero(group: &GroupTable) -> Self {
        Self::from_dense(group.q(), vec![ZERO; group.order()])
    }

    /// Builds a measure from a dense coefficient vector, switching to the
    /// sparse layout when at most half of the group is charged.
    pub fn from_dense(q: u32, dense: Vec<Complex64>) -> Self {
        let order = dense.len();
        let support = dense.iter().filter(|c| **c != ZERO).count();
        let coeffs = if support * 2 > order {
            Coeffs::Dense(dense)
        } else {
            Coeffs::Sparse(
                dense
                    .into_iter()
                    .enumerate()
                    .filter(|(_, c)| *c != ZERO)
                    .map(|(i, c)| (i as u32, c))
                    .collect(),
            )
        };
        let mut m = Self {
            q,
            order,
            coeffs,
            l1: 0.0,
            l2: 0.0,
        };
        m.refresh_norms();
        m
    }

    pub fn from_pairs(group: &GroupTable, pairs: impl IntoIterator<Item = (u32, Complex64)>) -> Self {
        let mut dense = vec![ZERO; group.order()];
        for (g, c) in pairs {
            dense[g as usize] += c;
        }
        Self::from_dense(group.q(), dense)
    }

    pub fn dirac(group: &GroupTable, g: u32, coef: Complex64) -> Self {
        Self::from_pairs(group, [(g, coef)])
    }

    pub fn uniform(group: &GroupTable, coef: f64) -> Self {
        Self::from_dense(group.q(), vec![Complex64::new(coef, 0.0); group.order()])
    }

    fn refresh_norms(&mut self) {
        let (mut l1, mut l2) = (0.0, 0.0);
        for (_, c) in self.iter() {
            l1 += c.norm();
            l2 += c.norm_sqr();
        }
        self.l1 = l1;
        self.l2 = l2.sqrt();
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn group_order(&self) -> usize {
        self.order
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.coeffs, Coeffs::Dense(_))
    }

    pub fn get(&self, g: u32) -> Complex64 {
        match &self.coeffs {
            Coeffs::Dense(v) => v[g as usize],
            Coeffs::Sparse(v) => v.binary_search_by_key(&g, |&(i, _)| i).map(|k| v[k].1).unwrap_or(ZERO),
        }
    }

    /// Nonzero coefficients in increasing index order.
    pub fn iter(&self) -> Box<dyn Iterator<Item = (u32, Complex64)> + '_> {
        match &self.coeffs {
            Coeffs::Dense(v) => Box::new(
                v.iter()
                    .enumerate()
                    .filter(|(_, c)| **c != ZERO)
                    .map(|(i, c)| (i as u32, *c)),
            ),
            Coeffs::Sparse(v) => Box::new(v.iter().copied()),
        }
    }

    pub fn support(&self) -> Vec<u32> {
        self.iter().map(|(g, _)| g).collect()
    }

    pub fn support_len(&self) -> usize {
        match &self.coeffs {
            Coeffs::Dense(v) => v.iter().filter(|c| **c != ZERO).count(),
            Coeffs::Sparse(v) => v.len(),
        }
    }

    pub fn coverage(&self) -> f64 {
        self.support_len() as f64 / self.order as f64
    }

    pub fn to_dense(&self) -> Vec<Complex64> {
        match &self.coeffs {
            Coeffs::Dense(v) => v.clone(),
            Coeffs::Sparse(v) => {
                let mut d = vec![ZERO; self.order];
                for &(i, c) in v {
                    d[i as usize] = c;
                }
                d
            }
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self::from_dense(self.q, self.to_dense().into_iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut d = self.to_dense();
        for (g, c) in other.iter() {
            d[g as usize] += c;
        }
        Ok(Self::from_dense(self.q, d))
    }

    /// The total variation measure `|mu|`.
    pub fn abs(&self) -> Self {
        Self::from_dense(
            self.q,
            self.to_dense()
                .into_iter()
                .map(|c| Complex64::new(c.norm(), 0.0))
                .collect(),
        )
    }

    pub fn check_same(&self, other: &Self) -> Result<()> {
        if self.q != other.q || self.order != other.order {
            return Err(Error::ModulusMismatch(self.q, other.q));
        }
        Ok(())
    }

    fn check_group(&self, group: &GroupTable) -> Result<()> {
        if self.q != group.q() || self.order != group.order() {
            return Err(Error::ModulusMismatch(self.q, group.q()));
        }
        Ok(())
    }

    /// `(mu * phi)(x) = sum_g mu(g) phi(g^-1 x)`.
    pub fn act(&self, group: &GroupTable, phi: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_group(group)?;
        group.check_len(phi.len())?;
        let terms: Vec<(u32, Complex64)> = self.iter().map(|(g, c)| (group.inverse(g), c)).collect();
        let n = group.order();
        let mut out = vec![ZERO; n];
        let table = group.cayley_table();
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, slot)| {
            let start = chunk * CHUNK;
            for &(ginv, c) in &terms {
                match table {
                    Some(t) => {
                        let row = &t[ginv as usize * n + start..ginv as usize * n + start + slot.len()];
                        for (o, &y) in slot.iter_mut().zip(row) {
                            *o += c * phi[y as usize];
                        }
                    }
                    None => {
                        for (k, o) in slot.iter_mut().enumerate() {
                            *o += c * phi[group.mul(ginv, (start + k) as u32) as usize];
                        }
                    }
                }
            }
        });
        Ok(out)
    }

    /// CSV dump with columns `index,a,b,c,d,re_coef,im_coef` over the support.
    pub fn write_csv<W: Write>(&self, group: &GroupTable, w: W) -> Result<()> {
        self.check_group(group)?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "a", "b", "c", "d", "re_coef", "im_coef"])?;
        for (g, c) in self.iter() {
            let m = group.element(g);
            out.write_record([
                g.to_string(),
                m.a.to_string(),
                m.b.to_string(),
                m.c.to_string(),
                m.d.to_string(),
                format!("{:.17e}", c.re),
                format!("{:.17e}", c.im),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `mu * nu`; accumulation order is fixed by the support order.
pub fn convolve(group: &GroupTable, mu: &GroupMeasure, nu: &GroupMeasure) -> Result<GroupMeasure> {
    mu.check_same(nu)?;
    mu.check_group(group)?;
    let left: Vec<(u32, Complex64)> = mu.iter().collect();
    let right: Vec<(u32, Complex64)> = nu.iter().collect();
    let n = group.order();
    let partials: Vec<Vec<Complex64>> = left
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![ZERO; n];
            for &(g, cg) in chunk {
                for &(h, ch) in &right {
                    acc[group.mul(g, h) as usize] += cg * ch;
                }
            }
            acc
        })
        .collect();
    let mut total = vec![ZERO; n];
    for p in partials {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    Ok(GroupMeasure::from_dense(group.q(), total))
}

/// `reverse(mu)(g) = conj(mu(g^-1))`.
pub fn reverse(group: &GroupTable, mu: &GroupMeasure) -> Result<GroupMeasure> {
    mu.check_group(group)?;
    Ok(GroupMeasure::from_pairs(
        group,
        mu.iter().map(|(g, c)| (group.inverse(g), c.conj())),
    ))
}

/// Product of integer matrices mod `q`, last matrix first:
/// `m_{n-1} ... m_1 m_0`. Only the final product must have determinant 1.
pub fn reversed_product_mod(mats: &[IntMatrix], q: u32) -> Result<ModMatrix> {
    let qi = i64::from(q);
    let mut acc: [[i64; 2]; 2] = [[1 % qi, 0], [0, 1 % qi]];
    for m in mats.iter().rev() {
        let r = m.map(|row| row.map(|e| e.rem_euclid(qi)));
        let mut next = [[0i64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                next[i][j] = (acc[i][0] * r[0][j] + acc[i][1] * r[1][j]).rem_euclid(qi);
            }
        }
        acc = next;
    }
    reduce_mod(acc, q)
}

/// Congruence cocycle of a word: the letter matrices multiplied in reverse
/// written order (innermost letter leftmost), reduced after every step.
pub fn cocycle(spec: &SystemSpec, word: &Word, q: u32) -> Result<ModMatrix> {
    if !spec.is_admissible(word.letters()) {
        return Err(Error::Inadmissible(word.to_string()));
    }
    let mats: Vec<IntMatrix> = word.letters().iter().map(|&l| spec.letter(l).matrix).collect();
    reversed_product_mod(&mats, q)
}

/// Group index of each letter reduced mod `q`.
pub fn letter_indices(spec: &SystemSpec, group: &GroupTable) -> Result<Vec<u32>> {
    spec.letters()
        .iter()
        .map(|l| {
            let m = reduce_mod(l.matrix, group.q())?;
            Ok(group.index_of(&m).expect("reduced letter lies in the group"))
        })
        .collect()
}

/// Group index of the cocycle of `word`.
pub fn cocycle_index(group: &GroupTable, letter_idx: &[u32], word: &Word) -> u32 {
    word.letters()
        .iter()
        .rev()
        .fold(group.identity(), |acc, &l| group.mul(acc, letter_idx[l as usize]))
}

/// Parameters `(s, x, gamma^M)` and lengths of the transfer measures.
#[derive(Debug, Clone)]
pub struct MeasureParams<'a> {
    pub spec: &'a SystemSpec,
    /// Fixed prefix branch `gamma^M`; `M = prefix.len()`.
    pub prefix: Word,
    /// Suffix length `R` in letters.
    pub r: usize,
    pub a: f64,
    pub b: f64,
    /// Evaluation point `x`, with the same conventions as the base point.
    pub x: BasePoint,
}

impl<'a> MeasureParams<'a> {
    pub fn new(spec: &'a SystemSpec, r: usize, a: f64) -> Self {
        Self {
            spec,
            prefix: Word::empty(),
            r,
            a,
            b: 0.0,
            x: spec.base_point(),
        }
    }

    pub fn with_prefix(mut self, prefix: Word) -> Self {
        self.prefix = prefix;
        self
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.b = b;
        self
    }

    pub fn with_x(mut self, x: BasePoint) -> Self {
        self.x = x;
        self
    }

    pub fn with_r(mut self, r: usize) -> Self {
        self.r = r;
        self
    }

    pub fn m(&self) -> usize {
        self.prefix.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::Argument("s = a + ib must be finite".into()));
        }
        if !self.spec.is_admissible(self.prefix.letters()) {
            return Err(Error::Inadmissible(format!("prefix {}", self.prefix)));
        }
        Ok(())
    }

    /// The evaluation point for a suffix whose innermost letter is `innermost`.
    pub fn eval_point(&self, innermost: Option<u16>) -> f64 {
        self.spec.resolve_point(self.x, innermost)
    }

    /// `|(gamma^M)'(o)|^a`, the factor relating `nu` to `mu_1`.
    pub fn prefix_weight(&self) -> f64 {
        let o = self.spec.base_point_for(self.prefix.innermost());
        (self.a * prefix_log_derivative(self.spec, &self.prefix, o)).exp()
    }
}

fn prefix_log_derivative(spec: &SystemSpec, prefix: &Word, mut point: f64) -> f64 {
    let mut total = 0.0;
    for &l in prefix.letters().iter().rev() {
        let letter = spec.letter(l);
        total += letter.log_derivative(point);
        point = letter.apply(point);
    }
    total
}

/// One finished branch of the walk.
#[derive(Debug, Clone, Copy)]
pub struct Leaf {
    /// `gamma(x)`.
    pub image: f64,
    /// `log |gamma'(x)|`.
    pub log_deriv: f64,
    /// Group index of the cocycle.
    pub cocycle: u32,
    pub outermost: u16,
    pub innermost: u16,
}

/// Walks every admissible word of length `n >= 1`, starting each word at
/// `start(innermost)`. Words are sharded by their two innermost letters;
/// shard results are returned in shard order.
pub fn walk_branches<T, S, F>(
    spec: &SystemSpec,
    group: &GroupTable,
    n: usize,
    guards: &Guards,
    start: S,
    init: impl Fn() -> T + Sync,
    visit: F,
) -> Result<Vec<T>>
where
    T: Send,
    S: Fn(u16) -> f64 + Sync,
    F: Fn(&mut T, &Leaf) + Sync,
{
    if n == 0 {
        return Err(Error::Argument("walk needs words of length >= 1".into()));
    }
    spec.check_word_guard(n, guards)?;
    let letter_idx = letter_indices(spec, group)?;
    let k = spec.n_letters() as u16;
    let depth = if n >= 2 && k <= 8 { 2 } else { 1 };
    let mut shards: Vec<Vec<u16>> = Vec::new();
    for first in 0..k {
        if depth == 1 {
            shards.push(vec![first]);
            continue;
        }
        for second in 0..k {
            if spec.can_follow(second, first) {
                shards.push(vec![first, second]);
            }
        }
    }
    Ok(shards
        .par_iter()
        .map(|shard| {
            let mut acc = init();
            let inner = shard[0];
            let x = start(inner);
            let mut frame = Frame {
                point: x,
                log_deriv: 0.0,
                cocycle: group.identity(),
                outer: inner,
            };
            for &l in shard {
                frame = frame.extend(spec, group, &letter_idx, l);
            }
            let walker = Walker {
                spec,
                group,
                letter_idx: &letter_idx,
                innermost: inner,
            };
            walker.descend(frame, n - shard.len(), &mut acc, &visit);
            acc
        })
        .collect())
}

#[derive(Clone, Copy)]
struct Frame {
    point: f64,
    log_deriv: f64,
    cocycle: u32,
    outer: u16,
}

impl Frame {
    #[inline]
    fn extend(self, spec: &SystemSpec, group: &GroupTable, letter_idx: &[u32], l: u16) -> Frame {
        let letter = spec.letter(l);
        Frame {
            point: letter.apply(self.point),
            log_deriv: self.log_deriv + letter.log_derivative(self.point),
            cocycle: group.mul(self.cocycle, letter_idx[l as usize]),
            outer: l,
        }
    }
}

struct Walker<'w> {
    spec: &'w SystemSpec,
    group: &'w GroupTable,
    letter_idx: &'w [u32],
    innermost: u16,
}

impl Walker<'_> {
    fn descend<T, F: Fn(&mut T, &Leaf)>(&self, frame: Frame, remaining: usize, acc: &mut T, visit: &F) {
        if remaining == 0 {
            visit(
                acc,
                &Leaf {
                    image: frame.point,
                    log_deriv: frame.log_deriv,
                    cocycle: frame.cocycle,
                    outermost: frame.outer,
                    innermost: self.innermost,
                },
            );
            return;
        }
        for l in 0..self.spec.n_letters() as u16 {
            if self.spec.can_follow(l, frame.outer) {
                let next = frame.extend(self.spec, self.group, self.letter_idx, l);
                self.descend(next, remaining - 1, acc, visit);
            }
        }
    }
}

fn merge_dense(group: &GroupTable, shards: Vec<Vec<Complex64>>) -> GroupMeasure {
    let mut total = vec![ZERO; group.order()];
    for s in shards {
        for (t, x) in total.iter_mut().zip(s) {
            *t += x;
        }
    }
    GroupMeasure::from_dense(group.q(), total)
}

/// `mu_1 = sum_{gamma^R} |(gamma^R)'(o)|^a delta_{c_q(gamma^R)}`.
pub fn build_mu1(p: &MeasureParams, group: &GroupTable, guards: &Guards) -> Result<GroupMeasure> {
    p.validate()?;
    suffix_sum(p, group, guards, false)
}

/// Weighted suffix sum at the base point; `restrict` keeps only suffixes
/// that may follow the prefix.
fn suffix_sum(p: &MeasureParams, group: &GroupTable, guards: &Guards, restrict: bool) -> Result<GroupMeasure> {
    if p.r == 0 {
        return Ok(GroupMeasure::dirac(group, group.identity(), Complex64::new(1.0, 0.0)));
    }
    let spec = p.spec;
    let a = p.a;
    let last = p.prefix.innermost();
    let shards = walk_branches(
        spec,
        group,
        p.r,
        guards,
        |inner| spec.base_point_for(Some(inner)),
        || vec![ZERO; group.order()],
        |acc, leaf| {
            if restrict && last.is_some_and(|pl| !spec.can_follow(pl, leaf.outermost)) {
                return;
            }
            acc[leaf.cocycle as usize] += Complex64::new((a * leaf.log_deriv).exp(), 0.0);
        },
    )?;
    Ok(merge_dense(group, shards))
}

/// `nu = |(gamma^M)'(o)|^a mu_1`, with the suffix sum restricted to
/// suffixes admissible after the prefix.
pub fn build_nu(p: &MeasureParams, group: &GroupTable, guards: &Guards) -> Result<GroupMeasure> {
    p.validate()?;
    let mu1 = suffix_sum(p, group, guards, true)?;
    Ok(mu1.scale(Complex64::new(p.prefix_weight(), 0.0)))
}

/// `mu = sum_{gamma^R} exp([tau_a^N + i b tau^N](gamma^M gamma^R x)) delta_{c_q(gamma^R)}`.
pub fn build_mu(p: &MeasureParams, group: &GroupTable, guards: &Guards) -> Result<GroupMeasure> {
    p.validate()?;
    let spec = p.spec;
    let (a, b) = (p.a, p.b);
    if p.r == 0 {
        let x = p.eval_point(p.prefix.innermost());
        if let Some(inner) = p.prefix.innermost() {
            if !spec.in_domain(inner, x) {
                return Err(Error::OutsideDomain { x });
            }
        }
        let ld = prefix_log_derivative(spec, &p.prefix, x);
        let w = crate::symdyn::gibbs_weight(ld, a, b);
        return Ok(GroupMeasure::dirac(group, group.identity(), w));
    }
    for inner in 0..spec.n_letters() as u16 {
        let x = p.eval_point(Some(inner));
        if !spec.in_domain(inner, x) {
            return Err(Error::OutsideDomain { x });
        }
    }
    let last = p.prefix.innermost();
    let prefix = &p.prefix;
    let shards = walk_branches(
        spec,
        group,
        p.r,
        guards,
        |inner| p.eval_point(Some(inner)),
        || vec![ZERO; group.order()],
        |acc, leaf| {
            if last.is_some_and(|pl| !spec.can_follow(pl, leaf.outermost)) {
                return;
            }
            let ld = leaf.log_deriv + prefix_log_derivative(spec, prefix, leaf.image);
            acc[leaf.cocycle as usize] += crate::symdyn::gibbs_weight(ld, a, b);
        },
    )?;
    Ok(merge_dense(group, shards))
}

/// Largest termwise discrepancy between the weights of `mu` and `nu`:
/// `max |log|(gamma^M gamma^R)'(x)| - log|(gamma^M)'(o)| - log|(gamma^R)'(o)||`.
pub fn log_distortion(p: &MeasureParams, group: &GroupTable, guards: &Guards) -> Result<f64> {
    p.validate()?;
    if p.r == 0 {
        let x = p.eval_point(p.prefix.innermost());
        let o = p.spec.base_point_for(p.prefix.innermost());
        return Ok((prefix_log_derivative(p.spec, &p.prefix, x) - prefix_log_derivative(p.spec, &p.prefix, o)).abs());
    }
    let spec = p.spec;
    let prefix = &p.prefix;
    let o_prefix = spec.base_point_for(prefix.innermost());
    let prefix_at_o = prefix_log_derivative(spec, prefix, o_prefix);
    let last = prefix.innermost();
    // Walk the suffixes twice in lockstep: once from x, once from o. The
    // walks visit words in the same order, so compare per shard.
    let at_x = walk_branches(
        spec,
        group,
        p.r,
        guards,
        |inner| p.eval_point(Some(inner)),
        Vec::new,
        |acc: &mut Vec<(f64, bool)>, leaf| {
            let keep = !last.is_some_and(|pl| !spec.can_follow(pl, leaf.outermost));
            acc.push((leaf.log_deriv + prefix_log_derivative(spec, prefix, leaf.image), keep));
        },
    )?;
    let at_o = walk_branches(
        spec,
        group,
        p.r,
        guards,
        |inner| spec.base_point_for(Some(inner)),
        Vec::new,
        |acc: &mut Vec<f64>, leaf| acc.push(leaf.log_deriv),
    )?;
    let mut worst: f64 = 0.0;
    for (sx, so) in at_x.iter().zip(&at_o) {
        for (&(lx, keep), &lo) in sx.iter().zip(so) {
            if keep {
                worst = worst.max((lx - prefix_at_o - lo).abs());
            }
        }
    }
    Ok(worst)
}

/// Smallest `C` with `|mu| <= C nu` pointwise; `None` if `mu` charges a
/// point where `nu` vanishes.
pub fn domination_constant(mu: &GroupMeasure, nu: &GroupMeasure) -> Result<Option<f64>> {
    mu.check_same(nu)?;
    let mut c: f64 = 0.0;
    for (g, m) in mu.iter() {
        let v = nu.get(g).re;
        if v <= 0.0 {
            return Ok(None);
        }
        c = c.max(m.norm() / v);
    }
    Ok(Some(c))
}
