//! Symbolic dynamics: alphabets, admissible words and branch evaluation.
//!
//! Two systems are supported. In the Zaremba full shift every letter is a
//! two-digit block `g_a g_b` with `g_a = [[0,1],[1,a]]`, acting on `[0, 1]`
//! as a Mobius map. In the Schottky subshift the letters are hyperbolic
//! generators together with their inverses, each letter `l` maps the
//! complement of `D_{l^-1}` into its interval `D_l`, and a letter may not
//! be followed by its inverse.
//!
//! A [`Word`] stores its letters with the most recently applied letter
//! first, so the branch it denotes is `l_0 o l_1 o ... o l_{n-1}` and the
//! last stored letter acts first.
//!
//! Weights use the convention `weight = |w'(x)|^a * exp(i b log|w'(x)|)`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guards::Guards;

pub type IntMatrix = [[i64; 2]; 2];

/// Tolerance for closed-interval domain checks.
const DOMAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "zaremba")]
    ZarembaFullShift,
    #[serde(rename = "schottky")]
    SchottkySubshift,
}

/// Base point `o`. In Schottky mode a numeric value is the relative
/// position inside the interval of the word's innermost letter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BasePointRepr", into = "BasePointRepr")]
pub enum BasePoint {
    #[default]
    Midpoint,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BasePointRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<BasePointRepr> for BasePoint {
    type Error = String;

    fn try_from(r: BasePointRepr) -> std::result::Result<Self, String> {
        match r {
            BasePointRepr::Name(s) if s == "midpoint" => Ok(BasePoint::Midpoint),
            BasePointRepr::Name(s) => Err(format!("base_point must be \"midpoint\" or a number, got \"{s}\"")),
            BasePointRepr::Value(v) if (0.0..=1.0).contains(&v) => Ok(BasePoint::Value(v)),
            BasePointRepr::Value(v) => Err(format!("base_point {v} is outside [0, 1]")),
        }
    }
}

impl From<BasePoint> for BasePointRepr {
    fn from(b: BasePoint) -> Self {
        match b {
            BasePoint::Midpoint => BasePointRepr::Name("midpoint".into()),
            BasePoint::Value(v) => BasePointRepr::Value(v),
        }
    }
}

/// The JSON system block of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digits: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<IntMatrix>>,
    #[serde(default)]
    pub base_point: BasePoint,
}

impl SystemConfig {
    pub fn zaremba(digits: &[u32]) -> Self {
        Self {
            mode: Mode::ZarembaFullShift,
            digits: Some(digits.to_vec()),
            generators: None,
            base_point: BasePoint::Midpoint,
        }
    }

    /// Two-generator Schottky group `<g, h>` with
    /// `g = [[3,4],[2,3]]` and `h = [[3,1],[8,3]]`; the intervals are
    /// `[1,2]`, `[-2,-1]`, `[1/4,1/2]` and `[-1/2,-1/4]`.
    pub fn default_schottky() -> Self {
        Self {
            mode: Mode::SchottkySubshift,
            digits: None,
            generators: Some(vec![
                [[3, 4], [2, 3]],
                [[3, -4], [-2, 3]],
                [[3, 1], [8, 3]],
                [[3, -1], [-8, 3]],
            ]),
            base_point: BasePoint::Midpoint,
        }
    }

    pub fn with_base_point(mut self, base_point: BasePoint) -> Self {
        self.base_point = base_point;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Letter {
    pub label: String,
    pub matrix: IntMatrix,
    /// Position of the inverse letter (Schottky only).
    pub inverse: Option<usize>,
    /// Interval `D_l` containing the image of the letter (Schottky only).
    pub interval: Option<(f64, f64)>,
}

impl Letter {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        let [[a, b], [c, d]] = self.matrix;
        (a as f64 * x + b as f64) / (c as f64 * x + d as f64)
    }

    /// `log |l'(x)| = -2 log |c x + d|` for a determinant-one letter.
    #[inline]
    pub fn log_derivative(&self, x: f64) -> f64 {
        let [_, [c, d]] = self.matrix;
        -2.0 * (c as f64 * x + d as f64).abs().ln()
    }
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    mode: Mode,
    letters: Vec<Letter>,
    digits: Vec<u32>,
    base_point: BasePoint,
    block_width: usize,
}

/// Zaremba generator `g_a = [[0,1],[1,a]]` (determinant -1).
pub fn zaremba_generator(a: u32) -> IntMatrix {
    [[0, 1], [1, i64::from(a)]]
}

pub fn int_mul(x: &IntMatrix, y: &IntMatrix) -> Option<IntMatrix> {
    let e = |i: usize, j: usize| -> Option<i64> {
        x[i][0].checked_mul(y[0][j])?.checked_add(x[i][1].checked_mul(y[1][j])?)
    };
    Some([[e(0, 0)?, e(0, 1)?], [e(1, 0)?, e(1, 1)?]])
}

fn int_inverse(m: &IntMatrix) -> IntMatrix {
    [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]
}

fn int_det(m: &IntMatrix) -> i128 {
    i128::from(m[0][0]) * i128::from(m[1][1]) - i128::from(m[0][1]) * i128::from(m[1][0])
}

const GENERATOR_NAMES: &[&str] = &["g", "h", "k", "m", "n", "p", "r", "s", "t", "u"];

pub fn build_system(config: &SystemConfig) -> Result<SystemSpec> {
    match config.mode {
        Mode::ZarembaFullShift => build_zaremba(config),
        Mode::SchottkySubshift => build_schottky(config),
    }
}

fn build_zaremba(config: &SystemConfig) -> Result<SystemSpec> {
    let mut digits = config
        .digits
        .clone()
        .ok_or_else(|| Error::InvalidSystem("zaremba mode needs \"digits\"".into()))?;
    if config.generators.is_some() {
        return Err(Error::InvalidSystem("zaremba mode does not take \"generators\"".into()));
    }
    digits.sort_unstable();
    digits.dedup();
    if digits.is_empty() {
        return Err(Error::InvalidSystem("empty digit alphabet".into()));
    }
    if let Some(bad) = digits.iter().find(|&&d| !(1..=9).contains(&d)) {
        return Err(Error::InvalidSystem(format!("digit {bad} outside {{1, ..., 9}}")));
    }
    let mut letters = Vec::with_capacity(digits.len() * digits.len());
    for &a in &digits {
        for &b in &digits {
            let matrix =
                int_mul(&zaremba_generator(a), &zaremba_generator(b)).expect("single-digit products fit in i64");
            letters.push(Letter {
                label: format!("{a}{b}"),
                matrix,
                inverse: None,
                interval: None,
            });
        }
    }
    Ok(SystemSpec {
        mode: Mode::ZarembaFullShift,
        letters,
        digits,
        base_point: config.base_point,
        block_width: 1,
    })
}

fn build_schottky(config: &SystemConfig) -> Result<SystemSpec> {
    let gens = config
        .generators
        .clone()
        .ok_or_else(|| Error::InvalidSystem("schottky mode needs \"generators\"".into()))?;
    if config.digits.is_some() {
        return Err(Error::InvalidSystem("schottky mode does not take \"digits\"".into()));
    }
    if gens.is_empty() {
        return Err(Error::InvalidSystem("empty generator list".into()));
    }
    for m in &gens {
        if int_det(m) != 1 {
            return Err(Error::InvalidSystem(format!("{m:?} does not have determinant 1")));
        }
    }
    let mut inverse = vec![None; gens.len()];
    for (i, m) in gens.iter().enumerate() {
        let target = int_inverse(m);
        if target == *m {
            return Err(Error::InvalidSystem(format!("{m:?} is its own inverse")));
        }
        match gens.iter().position(|x| *x == target) {
            Some(j) => inverse[i] = Some(j),
            None => return Err(Error::InvalidSystem(format!("letter {m:?} has no inverse partner"))),
        }
    }
    let mut labels = vec![String::new(); gens.len()];
    let mut next = 0;
    for i in 0..gens.len() {
        if !labels[i].is_empty() {
            continue;
        }
        let base = GENERATOR_NAMES
            .get(next)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("g{next}"));
        next += 1;
        let j = inverse[i].unwrap();
        labels[j] = format!("{base}^-1");
        labels[i] = base;
    }
    let letters: Vec<Letter> = gens
        .iter()
        .zip(labels)
        .zip(&inverse)
        .map(|((m, label), &inv)| {
            let [[a, _], [c, _]] = *m;
            let interval = (c != 0).then(|| {
                let center = a as f64 / c as f64;
                let radius = 1.0 / (c as f64).abs();
                (center - radius, center + radius)
            });
            Letter {
                label,
                matrix: *m,
                inverse: inv,
                interval,
            }
        })
        .collect();
    let ivs: Vec<(f64, f64)> = letters.iter().filter_map(|l| l.interval).collect();
    for i in 0..ivs.len() {
        for j in i + 1..ivs.len() {
            if ivs[i].0 <= ivs[j].1 && ivs[j].0 <= ivs[i].1 {
                return Err(Error::InvalidSystem(format!(
                    "intervals {:?} and {:?} overlap; generators are not in Schottky position",
                    ivs[i], ivs[j]
                )));
            }
        }
    }
    Ok(SystemSpec {
        mode: Mode::SchottkySubshift,
        letters,
        digits: Vec::new(),
        base_point: config.base_point,
        block_width: 2,
    })
}

/// A word, most recently applied letter first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<u16>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[u16] {
        &self.0
    }

    /// The letter applied first.
    pub fn innermost(&self) -> Option<u16> {
        self.0.last().copied()
    }

    /// The letter applied last.
    pub fn outermost(&self) -> Option<u16> {
        self.0.first().copied()
    }

    /// `self` applied after `inner`.
    pub fn concat(&self, inner: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&inner.0);
        Word(v)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Word {
        Word(self.0[range].to_vec())
    }
}

impl From<Vec<u16>> for Word {
    fn from(v: Vec<u16>) -> Self {
        Word(v)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[derive(Debug, Clone)]
pub struct BranchEval {
    pub word: Word,
    pub x: f64,
    pub image: f64,
    pub log_deriv: f64,
    /// Per-letter increments of `log |w'|`, innermost letter first.
    pub increments: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    /// `sup |l'(x)|` over letters and their domains.
    pub sup_letter_derivative: f64,
    /// Contraction factor per letter, `1 / sup`.
    pub per_letter: f64,
    /// Contraction factor per generator digit.
    pub per_digit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub delta: f64,
    pub n: usize,
    pub words: usize,
    pub bisection_steps: usize,
    /// `Z_n(delta)^(1/n)`.
    pub normalized_partition: f64,
}

impl SystemSpec {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn letters(&self) -> &[Letter] {
        &self.letters
    }

    pub fn letter(&self, id: u16) -> &Letter {
        &self.letters[id as usize]
    }

    pub fn n_letters(&self) -> usize {
        self.letters.len()
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn base_point(&self) -> BasePoint {
        self.base_point
    }

    /// Width of the inner slot isolated in each decoupling block.
    pub fn block_width(&self) -> usize {
        self.block_width
    }

    pub fn digits_per_letter(&self) -> u32 {
        match self.mode {
            Mode::ZarembaFullShift => 2,
            Mode::SchottkySubshift => 1,
        }
    }

    pub fn label(&self, word: &Word) -> String {
        word.letters()
            .iter()
            .map(|&l| self.letters[l as usize].label.as_str())
            .collect()
    }

    /// Whether `next` may be applied directly after `prev` (in written
    /// order `prev next`, i.e. `next` acts first).
    #[inline]
    pub fn can_follow(&self, prev: u16, next: u16) -> bool {
        match self.mode {
            Mode::ZarembaFullShift => true,
            Mode::SchottkySubshift => self.letters[prev as usize].inverse != Some(next as usize),
        }
    }

    pub fn is_admissible(&self, letters: &[u16]) -> bool {
        letters.iter().all(|&l| (l as usize) < self.letters.len())
            && letters.windows(2).all(|w| self.can_follow(w[0], w[1]))
    }

    pub fn word(&self, letters: Vec<u16>) -> Result<Word> {
        if !self.is_admissible(&letters) {
            return Err(Error::Inadmissible(format!("{letters:?}")));
        }
        Ok(Word(letters))
    }

    pub fn word_by_labels(&self, labels: &[&str]) -> Result<Word> {
        let ids = labels
            .iter()
            .map(|s| {
                self.letters
                    .iter()
                    .position(|l| l.label == *s)
                    .map(|i| i as u16)
                    .ok_or_else(|| Error::Argument(format!("unknown letter label {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.word(ids)
    }

    /// Number of admissible words of length `n`, saturating.
    pub fn count_words(&self, n: usize) -> u128 {
        let k = self.letters.len() as u128;
        if n == 0 {
            return 1;
        }
        match self.mode {
            Mode::ZarembaFullShift => k.checked_pow(n as u32).unwrap_or(u128::MAX),
            Mode::SchottkySubshift => {
                let mut total = k;
                for _ in 1..n {
                    total = total.saturating_mul(k - 1);
                }
                total
            }
        }
    }

    pub fn check_word_guard(&self, n: usize, guards: &Guards) -> Result<u128> {
        let count = self.count_words(n);
        if count > u128::from(guards.max_words) {
            return Err(Error::Resource(format!(
                "{count} words of length {n} exceed the guard of {}",
                guards.max_words
            )));
        }
        Ok(count)
    }

    /// The base point used for a word whose innermost letter is `innermost`.
    pub fn base_point_for(&self, innermost: Option<u16>) -> f64 {
        self.resolve_point(self.base_point, innermost)
    }

    /// Resolves a point convention: an absolute value in Zaremba mode, a
    /// relative position in the interval of `innermost` in Schottky mode.
    pub fn resolve_point(&self, p: BasePoint, innermost: Option<u16>) -> f64 {
        match self.mode {
            Mode::ZarembaFullShift => match p {
                BasePoint::Midpoint => 0.5,
                BasePoint::Value(v) => v,
            },
            Mode::SchottkySubshift => {
                let id = innermost.unwrap_or(0);
                match self.letters[id as usize].interval {
                    Some((lo, hi)) => match p {
                        BasePoint::Midpoint => 0.5 * (lo + hi),
                        BasePoint::Value(t) => lo + t * (hi - lo),
                    },
                    None => 0.0,
                }
            }
        }
    }

    /// Whether `x` is in the domain of branches whose innermost letter is `innermost`.
    pub fn in_domain(&self, innermost: u16, x: f64) -> bool {
        match self.mode {
            Mode::ZarembaFullShift => (-DOMAIN_EPS..=1.0 + DOMAIN_EPS).contains(&x),
            Mode::SchottkySubshift => {
                let inside =
                    |iv: Option<(f64, f64)>| iv.is_some_and(|(lo, hi)| x >= lo - DOMAIN_EPS && x <= hi + DOMAIN_EPS);
                let forbidden = self.letters[innermost as usize]
                    .inverse
                    .map(|j| self.letters[j].interval);
                self.letters.iter().any(|l| inside(l.interval)) && !forbidden.is_some_and(inside)
            }
        }
    }

    /// Exact integer matrix of the branch; `None` on overflow.
    pub fn word_matrix(&self, word: &Word) -> Option<IntMatrix> {
        let mut m: IntMatrix = [[1, 0], [0, 1]];
        for &l in word.letters() {
            m = int_mul(&m, &self.letters[l as usize].matrix)?;
        }
        Some(m)
    }
}

/// Enumerates admissible words of length `n` in lexicographic order of
/// their letter ids.
pub fn admissible_words(spec: &SystemSpec, n: usize, guards: &Guards) -> Result<Vec<Word>> {
    let count = spec.check_word_guard(n, guards)?;
    let mut out = Vec::with_capacity(count as usize);
    let mut current = Vec::with_capacity(n);
    extend_words(spec, n, &mut current, &mut out);
    Ok(out)
}

fn extend_words(spec: &SystemSpec, n: usize, current: &mut Vec<u16>, out: &mut Vec<Word>) {
    if current.len() == n {
        out.push(Word(current.clone()));
        return;
    }
    for l in 0..spec.n_letters() as u16 {
        if current.last().is_some_and(|&p| !spec.can_follow(p, l)) {
            continue;
        }
        current.push(l);
        extend_words(spec, n, current, out);
        current.pop();
    }
}

/// Evaluates the branch `word` at `x`, accumulating the derivative letter by
/// letter; returns the evaluation and the weight for `s = a + ib`.
pub fn evaluate_branch(spec: &SystemSpec, word: &Word, x: f64, a: f64, b: f64) -> Result<(BranchEval, Complex64)> {
    if !spec.is_admissible(word.letters()) {
        return Err(Error::Inadmissible(word.to_string()));
    }
    let mut point = x;
    let mut log_deriv = 0.0;
    let mut increments = Vec::with_capacity(word.len());
    if let Some(inner) = word.innermost() {
        if !spec.in_domain(inner, x) {
            return Err(Error::OutsideDomain { x });
        }
    }
    for &l in word.letters().iter().rev() {
        let letter = spec.letter(l);
        let inc = letter.log_derivative(point);
        increments.push(inc);
        log_deriv += inc;
        point = letter.apply(point);
    }
    let weight = gibbs_weight(log_deriv, a, b);
    Ok((
        BranchEval {
            word: word.clone(),
            x,
            image: point,
            log_deriv,
            increments,
        },
        weight,
    ))
}

/// `|w'|^a exp(i b log|w'|)` from `log |w'|`.
#[inline]
pub fn gibbs_weight(log_deriv: f64, a: f64, b: f64) -> Complex64 {
    Complex64::from_polar((a * log_deriv).exp(), b * log_deriv)
}

/// Sup of `|l'|` over the domain of `l`, reported as a contraction factor.
pub fn estimate_contraction(spec: &SystemSpec) -> Result<ContractionEstimate> {
    let mut sup: f64 = 0.0;
    for (i, letter) in spec.letters().iter().enumerate() {
        let s = letter_sup_derivative(spec, i);
        if s.is_nan() || s >= 1.0 {
            return Err(Error::NonContracting {
                label: letter.label.clone(),
                sup: s,
            });
        }
        sup = sup.max(s);
    }
    let per_letter = 1.0 / sup;
    Ok(ContractionEstimate {
        sup_letter_derivative: sup,
        per_letter,
        per_digit: per_letter.powf(1.0 / f64::from(spec.digits_per_letter())),
    })
}

fn letter_sup_derivative(spec: &SystemSpec, i: usize) -> f64 {
    let letter = &spec.letters()[i];
    let [_, [c, d]] = letter.matrix;
    let (c, d) = (c as f64, d as f64);
    // Smallest |c x + d| over a closed interval.
    let min_abs = |lo: f64, hi: f64| -> f64 {
        if c != 0.0 {
            let root = -d / c;
            if root >= lo && root <= hi {
                return 0.0;
            }
        }
        (c * lo + d).abs().min((c * hi + d).abs())
    };
    let m = match spec.mode() {
        Mode::ZarembaFullShift => min_abs(0.0, 1.0),
        Mode::SchottkySubshift => spec
            .letters()
            .iter()
            .enumerate()
            .filter(|&(j, _)| letter.inverse != Some(j))
            .filter_map(|(_, l)| l.interval)
            .map(|(lo, hi)| min_abs(lo, hi))
            .fold(f64::INFINITY, f64::min),
    };
    if c == 0.0 {
        // Parabolic or affine letter: derivative is constant 1/d^2.
        return 1.0 / (d * d);
    }
    if m == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (m * m)
    }
}

/// `log |w'(o)|` for every admissible word of length `n`, in the
/// depth-first order of their construction from the innermost letter.
pub fn branch_log_derivatives(spec: &SystemSpec, n: usize, guards: &Guards) -> Result<Vec<f64>> {
    let count = spec.check_word_guard(n, guards)?;
    let mut out = Vec::with_capacity(count as usize);
    if n == 0 {
        out.push(0.0);
        return Ok(out);
    }
    for first in 0..spec.n_letters() as u16 {
        let o = spec.base_point_for(Some(first));
        let letter = spec.letter(first);
        log_derivative_walk(spec, n - 1, first, letter.apply(o), letter.log_derivative(o), &mut out);
    }
    Ok(out)
}

fn log_derivative_walk(
    spec: &SystemSpec,
    remaining: usize,
    outer: u16,
    point: f64,
    log_deriv: f64,
    out: &mut Vec<f64>,
) {
    if remaining == 0 {
        out.push(log_deriv);
        return;
    }
    for l in 0..spec.n_letters() as u16 {
        // `l` is applied after `outer`, so in written order it precedes it.
        if !spec.can_follow(l, outer) {
            continue;
        }
        let letter = spec.letter(l);
        log_derivative_walk(
            spec,
            remaining - 1,
            l,
            letter.apply(point),
            log_deriv + letter.log_derivative(point),
            out,
        );
    }
}

/// `(1/n) log Z_n(a)` with `Z_n(a) = sum_w |w'(o)|^a`.
pub fn normalized_log_partition(log_derivs: &[f64], n: usize, a: f64) -> f64 {
    let max = log_derivs.iter().map(|&l| a * l).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_derivs.iter().map(|&l| (a * l - max).exp()).sum();
    (max + sum.ln()) / n as f64
}

/// Bisection root of `a -> Z_n(a)^(1/n) - 1` on `[0, 1]`.
pub fn estimate_delta(spec: &SystemSpec, n: usize, tol: f64, guards: &Guards) -> Result<DeltaEstimate> {
    if n < 4 {
        return Err(Error::Argument(format!("word length {n} < 4")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Argument("tolerance must be positive".into()));
    }
    let logs = branch_log_derivatives(spec, n, guards)?;
    let f = |a: f64| normalized_log_partition(&logs, n, a);
    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut f_lo, mut f_hi) = (f(lo), f(hi));
    if f_lo < 0.0 || f_hi >= 0.0 {
        return Err(Error::Estimation(format!(
            "no sign change of the pressure on [0, 1] (f(0) = {f_lo}, f(1) = {f_hi})"
        )));
    }
    let mut steps = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid > f_lo || f_mid < f_hi {
            return Err(Error::Estimation(format!(
                "partition function not monotone near a = {mid}"
            )));
        }
        if f_mid >= 0.0 {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
        steps += 1;
    }
    let delta = 0.5 * (lo + hi);
    Ok(DeltaEstimate {
        delta,
        n,
        words: logs.len(),
        bisection_steps: steps,
        normalized_partition: f(delta).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zaremba12() -> SystemSpec {
        build_system(&SystemConfig::zaremba(&[1, 2])).unwrap()
    }

    #[test]
    fn zaremba_letters_are_digit_blocks() {
        let spec = zaremba12();
        let mats: Vec<IntMatrix> = spec.letters().iter().map(|l| l.matrix).collect();
        assert_eq!(
            mats,
            vec![[[1, 1], [1, 2]], [[1, 2], [1, 3]], [[1, 1], [2, 3]], [[1, 2], [2, 5]]]
        );
        assert!(mats.iter().all(|m| int_det(m) == 1));
        let single = build_system(&SystemConfig::zaremba(&[1])).unwrap();
        assert_eq!(single.letters().len(), 1);
        assert_eq!(single.letters()[0].matrix, [[1, 1], [1, 2]]);
    }

    #[test]
    fn build_errors() {
        assert!(matches!(
            build_system(&SystemConfig::zaremba(&[])),
            Err(Error::InvalidSystem(_))
        ));
        let mut cfg = SystemConfig::default_schottky();
        cfg.generators.as_mut().unwrap().pop();
        assert!(matches!(build_system(&cfg), Err(Error::InvalidSystem(_))));
    }

    #[test]
    fn schottky_pairing_and_intervals() {
        let spec = build_system(&SystemConfig::default_schottky()).unwrap();
        let labels: Vec<&str> = spec.letters().iter().map(|l| l.label.as_str()).collect();
        assert_eq!(labels, ["g", "g^-1", "h", "h^-1"]);
        assert_eq!(spec.letters()[0].inverse, Some(1));
        assert_eq!(spec.letters()[3].inverse, Some(2));
        assert_eq!(spec.letters()[0].interval, Some((1.0, 2.0)));
        assert_eq!(spec.letters()[3].interval, Some((-0.5, -0.25)));
        assert_eq!(spec.block_width(), 2);
    }

    #[test]
    fn word_counts() {
        let z = zaremba12();
        assert_eq!(admissible_words(&z, 3, &Guards::default()).unwrap().len(), 64);
        let s = build_system(&SystemConfig::default_schottky()).unwrap();
        assert_eq!(admissible_words(&s, 1, &Guards::default()).unwrap().len(), 4);
        let two = admissible_words(&s, 2, &Guards::default()).unwrap();
        assert_eq!(two.len(), 12);
        assert!(two.iter().all(|w| s.is_admissible(w.letters())));
        assert_eq!(s.count_words(5), 4 * 81);
        let tight = Guards {
            max_modulus: 32,
            max_words: 10,
        };
        assert!(matches!(admissible_words(&z, 3, &tight), Err(Error::Resource(_))));
    }

    #[test]
    fn branch_examples() {
        let spec = zaremba12();
        let w = spec.word(vec![0]).unwrap();
        let (ev, weight) = evaluate_branch(&spec, &w, 0.0, 0.5, 0.0).unwrap();
        assert!((ev.log_deriv.exp() - 0.25).abs() < 1e-15);
        assert!((weight.re - 0.5).abs() < 1e-15 && weight.im.abs() < 1e-15);

        let w = spec.word(vec![1]).unwrap();
        let (_, weight) = evaluate_branch(&spec, &w, 0.0, 1.0, 0.0).unwrap();
        assert!((weight.re - 1.0 / 9.0).abs() < 1e-15);

        let (ev, weight) = evaluate_branch(&spec, &Word::empty(), 0.3, 0.7, 2.0).unwrap();
        assert_eq!(weight, Complex64::new(1.0, 0.0));
        assert_eq!(ev.image, 0.3);

        assert!(matches!(
            evaluate_branch(&spec, &w, 1.5, 0.5, 0.0),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn weight_modulus_and_phase() {
        let spec = zaremba12();
        let w = spec.word(vec![3, 1, 0, 2]).unwrap();
        let (ev, weight) = evaluate_branch(&spec, &w, 0.4, 0.6, 10.0).unwrap();
        assert!((weight.norm() - (0.6 * ev.log_deriv).exp()).abs() < 1e-15);
        let (_, real) = evaluate_branch(&spec, &w, 0.4, 0.6, 0.0).unwrap();
        assert!((weight.norm() - real.re).abs() < 1e-15);
    }

    #[test]
    fn schottky_domain_checks() {
        let spec = build_system(&SystemConfig::default_schottky()).unwrap();
        let g = spec.word_by_labels(&["g"]).unwrap();
        // inside D_h: allowed for g
        assert!(evaluate_branch(&spec, &g, 0.3, 0.5, 0.0).is_ok());
        // inside D_{g^-1}: forbidden
        assert!(matches!(
            evaluate_branch(&spec, &g, -1.5, 0.5, 0.0),
            Err(Error::OutsideDomain { .. })
        ));
        // in a gap between intervals
        assert!(evaluate_branch(&spec, &g, 0.75, 0.5, 0.0).is_err());
        assert!(spec.word_by_labels(&["g", "g^-1"]).is_err());
    }

    #[test]
    fn contraction_estimates() {
        let c = estimate_contraction(&zaremba12()).unwrap();
        assert!((c.sup_letter_derivative - 0.25).abs() < 1e-15);
        assert!((c.per_letter - 4.0).abs() < 1e-12);
        assert!((c.per_digit - 2.0).abs() < 1e-12);
        let c1 = estimate_contraction(&build_system(&SystemConfig::zaremba(&[1])).unwrap()).unwrap();
        assert!((c1.sup_letter_derivative - 0.25).abs() < 1e-15);

        let s = estimate_contraction(&build_system(&SystemConfig::default_schottky()).unwrap()).unwrap();
        assert!((s.sup_letter_derivative - 0.25).abs() < 1e-12);

        let parabolic = SystemConfig {
            mode: Mode::SchottkySubshift,
            digits: None,
            generators: Some(vec![[[1, 1], [0, 1]], [[1, -1], [0, 1]]]),
            base_point: BasePoint::Midpoint,
        };
        let spec = build_system(&parabolic).unwrap();
        assert!(matches!(estimate_contraction(&spec), Err(Error::NonContracting { .. })));
    }

    #[test]
    fn delta_single_digit_tends_to_zero() {
        let spec = build_system(&SystemConfig::zaremba(&[1])).unwrap();
        let est = estimate_delta(&spec, 8, 1e-6, &Guards::default()).unwrap();
        assert!(est.delta < 1e-5);
    }

    #[test]
    fn delta_monotone_in_alphabet() {
        let g = Guards::default();
        let d12 = estimate_delta(&zaremba12(), 6, 1e-5, &g).unwrap().delta;
        let d123 = estimate_delta(&build_system(&SystemConfig::zaremba(&[1, 2, 3])).unwrap(), 6, 1e-5, &g)
            .unwrap()
            .delta;
        assert!(d12 < d123);
    }

    #[test]
    fn delta_root_normalizes_partition() {
        let tol = 1e-5;
        let est = estimate_delta(&zaremba12(), 6, tol, &Guards::default()).unwrap();
        assert!((est.normalized_partition - 1.0).abs() <= 5.0 * tol);
        assert!(estimate_delta(&zaremba12(), 3, tol, &Guards::default()).is_err());
    }

    #[test]
    fn base_point_config_parses() {
        let cfg: SystemConfig = serde_json::from_str(r#"{"mode":"zaremba","digits":[1,2],"base_point":0.25}"#).unwrap();
        assert_eq!(cfg.base_point, BasePoint::Value(0.25));
        let cfg: SystemConfig =
            serde_json::from_str(r#"{"mode":"zaremba","digits":[1,2],"base_point":"midpoint"}"#).unwrap();
        assert_eq!(cfg.base_point, BasePoint::Midpoint);
        assert!(
            serde_json::from_str::<SystemConfig>(r#"{"mode":"zaremba","digits":[1,2],"base_point":"corner"}"#).is_err()
        );
    }

    #[test]
    fn images_nest_inside_suffix_images() {
        let spec = zaremba12();
        let words = admissible_words(&spec, 4, &Guards::default()).unwrap();
        for w in words {
            // Image of [0,1] under w is contained in the image under its
            // outer part w[0..3].
            let outer = w.slice(0..3);
            let ends = |v: &Word| {
                let a = evaluate_branch(&spec, v, 0.0, 0.0, 0.0).unwrap().0.image;
                let b = evaluate_branch(&spec, v, 1.0, 0.0, 0.0).unwrap().0.image;
                (a.min(b), a.max(b))
            };
            let (lo, hi) = ends(&w);
            let (olo, ohi) = ends(&outer);
            assert!(lo >= olo - 1e-15 && hi <= ohi + 1e-15);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }

    fn arb_word(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u16>> {
        prop::collection::vec(0u16..4, len)
    }

    proptest! {
        #[test]
        fn log_derivative_is_a_cocycle(w1 in arb_word(1..7), w2 in arb_word(1..7), x in 0.0f64..1.0) {
            let spec = zaremba12();
            let (w1, w2) = (Word::from(w1), Word::from(w2));
            let both = w1.concat(&w2);
            let (inner, _) = evaluate_branch(&spec, &w2, x, 1.0, 0.0).unwrap();
            let (outer, _) = evaluate_branch(&spec, &w1, inner.image, 1.0, 0.0).unwrap();
            let (full, _) = evaluate_branch(&spec, &both, x, 1.0, 0.0).unwrap();
            prop_assert!((full.log_deriv - outer.log_deriv - inner.log_deriv).abs() < 1e-10);
            let sum: f64 = full.increments.iter().sum();
            prop_assert!((sum - full.log_deriv).abs() < 1e-10);
            prop_assert!(full.log_deriv < 0.0);
        }

        #[test]
        fn mobius_matrix_matches_letterwise_evaluation(w in arb_word(1..9), x in 0.0f64..1.0) {
            let spec = zaremba12();
            let w = Word::from(w);
            let m = spec.word_matrix(&w).unwrap();
            let [[a, b], [c, d]] = m.map(|r| r.map(|e| e as f64));
            let (ev, _) = evaluate_branch(&spec, &w, x, 1.0, 0.0).unwrap();
            let image = (a * x + b) / (c * x + d);
            let deriv = 1.0 / (c * x + d).powi(2);
            prop_assert!((image - ev.image).abs() < 1e-9);
            prop_assert!((deriv.ln() - ev.log_deriv).abs() < 1e-9);
        }
    }
}
