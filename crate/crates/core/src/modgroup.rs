//! Exact arithmetic and enumeration for `G_q = SL_2(Z/q)`.
//!
//! Elements are enumerated lexicographically on `(a, b, c, d)`, so the
//! position of an element in [`GroupTable`] is stable across runs. Functions
//! on the group are dense vectors indexed by that position.
//!
//! The new subspace `E_q` is the orthogonal complement of every function
//! pulled back from a proper level `q' | q`. Pullbacks from level `q'` are
//! exactly the functions constant on the fibers of reduction `G_q -> G_{q'}`,
//! and fiber averaging is the orthogonal projection onto them. For the
//! maximal proper levels `q/p` these averages commute, so
//! `P = prod_p (I - A_{q/p})` is the orthogonal projection onto `E_q`.

use std::fmt;
use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::guards::Guards;

/// Largest group order for which a full multiplication table is cached.
const CAYLEY_TABLE_MAX_ORDER: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modulus {
    q: u32,
    factors: Vec<(u32, u32)>,
}

impl Modulus {
    /// Accepts any `q >= 1`; level 1 is the trivial group.
    pub fn new(q: u32) -> Result<Self> {
        if q == 0 {
            return Err(Error::Argument("modulus must be positive".into()));
        }
        let mut factors = Vec::new();
        let mut n = q;
        let mut p = 2;
        while p * p <= n {
            if n.is_multiple_of(p) {
                let mut e = 0;
                while n.is_multiple_of(p) {
                    n /= p;
                    e += 1;
                }
                factors.push((p, e));
            }
            p += 1;
        }
        if n > 1 {
            factors.push((n, 1));
        }
        if factors.len() > 3 {
            return Err(Error::Argument(format!(
                "modulus {q} has more than 3 distinct prime factors"
            )));
        }
        Ok(Self { q, factors })
    }

    pub fn value(&self) -> u32 {
        self.q
    }

    pub fn factorization(&self) -> &[(u32, u32)] {
        &self.factors
    }

    pub fn primes(&self) -> impl Iterator<Item = u32> + '_ {
        self.factors.iter().map(|&(p, _)| p)
    }

    pub fn is_square_free(&self) -> bool {
        self.factors.iter().all(|&(_, e)| e == 1)
    }

    /// All divisors in increasing order, including 1 and `q`.
    pub fn divisors(&self) -> Vec<u32> {
        let mut divs = vec![1u32];
        for &(p, e) in &self.factors {
            let current = divs.clone();
            let mut pk = 1;
            for _ in 0..e {
                pk *= p;
                divs.extend(current.iter().map(|d| d * pk));
            }
        }
        divs.sort_unstable();
        divs
    }

    pub fn is_proper_divisor(&self, d: u32) -> bool {
        d >= 1 && d < self.q && self.q.is_multiple_of(d)
    }

    /// `|SL_2(Z/q)| = q^3 prod_{p | q} (1 - p^-2)`, computed exactly.
    pub fn sl2_order(&self) -> u64 {
        let mut order = u64::from(self.q).pow(3);
        for &(p, _) in &self.factors {
            let p = u64::from(p);
            order = order / (p * p) * (p * p - 1);
        }
        order
    }
}

impl fmt::Display for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.q)
    }
}

/// A 2x2 matrix over `Z/q` with determinant 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModMatrix {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
    pub q: u32,
}

impl ModMatrix {
    pub fn new(a: u32, b: u32, c: u32, d: u32, q: u32) -> Result<Self> {
        if q == 0 {
            return Err(Error::Argument("modulus must be positive".into()));
        }
        let m = Self {
            a: a % q,
            b: b % q,
            c: c % q,
            d: d % q,
            q,
        };
        if m.det() != 1 % q {
            return Err(Error::InvalidElement(format!(
                "[[{a},{b}],[{c},{d}]] has determinant {} mod {q}",
                m.det()
            )));
        }
        Ok(m)
    }

    pub fn identity(q: u32) -> Self {
        Self {
            a: 1 % q,
            b: 0,
            c: 0,
            d: 1 % q,
            q,
        }
    }

    pub fn det(&self) -> u32 {
        let q = u64::from(self.q);
        let ad = u64::from(self.a) * u64::from(self.d) % q;
        let bc = u64::from(self.b) * u64::from(self.c) % q;
        ((ad + q - bc) % q) as u32
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.q, other.q);
        let q = self.q;
        Self {
            a: mul_add(self.a, other.a, self.b, other.c, q),
            b: mul_add(self.a, other.b, self.b, other.d, q),
            c: mul_add(self.c, other.a, self.d, other.c, q),
            d: mul_add(self.c, other.b, self.d, other.d, q),
            q,
        }
    }

    pub fn inverse(&self) -> Self {
        let q = self.q;
        Self {
            a: self.d,
            b: (q - self.b) % q,
            c: (q - self.c) % q,
            d: self.a,
            q,
        }
    }

    /// Reduction to a divisor level `q' | q`.
    pub fn reduce(&self, level: u32) -> Self {
        debug_assert!(level > 0 && self.q.is_multiple_of(level));
        Self {
            a: self.a % level,
            b: self.b % level,
            c: self.c % level,
            d: self.d % level,
            q: level,
        }
    }

    pub fn entries(&self) -> [u32; 4] {
        [self.a, self.b, self.c, self.d]
    }

    fn key(&self) -> usize {
        let q = self.q as usize;
        ((self.a as usize * q + self.b as usize) * q + self.c as usize) * q + self.d as usize
    }
}

impl fmt::Display for ModMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{},{}],[{},{}]] mod {}", self.a, self.b, self.c, self.d, self.q)
    }
}

#[inline]
fn mul_add(x1: u32, y1: u32, x2: u32, y2: u32, q: u32) -> u32 {
    ((u64::from(x1) * u64::from(y1) + u64::from(x2) * u64::from(y2)) % u64::from(q)) as u32
}

/// Reduces an integer matrix mod `q`; its determinant must be 1 mod `q`.
pub fn reduce_mod(m: [[i64; 2]; 2], q: u32) -> Result<ModMatrix> {
    if q == 0 {
        return Err(Error::Argument("modulus must be positive".into()));
    }
    let r = |x: i64| x.rem_euclid(i64::from(q)) as u32;
    let det = (i128::from(m[0][0]) * i128::from(m[1][1]) - i128::from(m[0][1]) * i128::from(m[1][0]))
        .rem_euclid(i128::from(q));
    if det != i128::from(1 % q) {
        return Err(Error::InvalidElement(format!("{m:?} has determinant {det} mod {q}")));
    }
    Ok(ModMatrix {
        a: r(m[0][0]),
        b: r(m[0][1]),
        c: r(m[1][0]),
        d: r(m[1][1]),
        q,
    })
}

/// Fibers of the reduction map `G_q -> G_{q'}`.
#[derive(Debug, Clone)]
pub struct LevelFibers {
    pub level: u32,
    /// Fiber id of each element, ids numbered by first appearance.
    pub fiber_of: Vec<u32>,
    pub n_fibers: usize,
    pub fiber_size: usize,
}

impl LevelFibers {
    /// Replaces `v` by its fiber averages.
    pub fn average_in_place(&self, v: &mut [Complex64]) {
        let mut sums = vec![Complex64::new(0.0, 0.0); self.n_fibers];
        for (x, &f) in v.iter().zip(&self.fiber_of) {
            sums[f as usize] += x;
        }
        let inv = 1.0 / self.fiber_size as f64;
        for (x, &f) in v.iter_mut().zip(&self.fiber_of) {
            *x = sums[f as usize] * inv;
        }
    }
}

#[derive(Debug)]
pub struct GroupTable {
    modulus: Modulus,
    elements: Vec<ModMatrix>,
    index: Vec<u32>,
    inverses: Vec<u32>,
    identity: u32,
    cayley: OnceLock<Option<Vec<u16>>>,
}

const NOT_IN_GROUP: u32 = u32::MAX;

impl GroupTable {
    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn q(&self) -> u32 {
        self.modulus.value()
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ModMatrix] {
        &self.elements
    }

    pub fn element(&self, i: u32) -> ModMatrix {
        self.elements[i as usize]
    }

    pub fn identity(&self) -> u32 {
        self.identity
    }

    pub fn inverse(&self, i: u32) -> u32 {
        self.inverses[i as usize]
    }

    pub fn inverses(&self) -> &[u32] {
        &self.inverses
    }

    pub fn index_of(&self, m: &ModMatrix) -> Option<u32> {
        if m.q != self.q() {
            return None;
        }
        match self.index[m.key()] {
            NOT_IN_GROUP => None,
            i => Some(i),
        }
    }

    /// Index of `elements[i] * elements[j]`.
    #[inline]
    pub fn mul(&self, i: u32, j: u32) -> u32 {
        if let Some(table) = self.cayley_table() {
            let n = self.order();
            return u32::from(table[i as usize * n + j as usize]);
        }
        self.mul_direct(i, j)
    }

    #[inline]
    fn mul_direct(&self, i: u32, j: u32) -> u32 {
        let p = self.elements[i as usize].mul(&self.elements[j as usize]);
        self.index[p.key()]
    }

    /// Full multiplication table, row-major, when the group is small enough.
    pub fn cayley_table(&self) -> Option<&[u16]> {
        self.cayley
            .get_or_init(|| {
                let n = self.order();
                if n > CAYLEY_TABLE_MAX_ORDER {
                    return None;
                }
                let mut t = Vec::with_capacity(n * n);
                for i in 0..n as u32 {
                    for j in 0..n as u32 {
                        t.push(self.mul_direct(i, j) as u16);
                    }
                }
                Some(t)
            })
            .as_deref()
    }

    pub fn fibers(&self, level: u32) -> Result<LevelFibers> {
        if !self.modulus.is_proper_divisor(level) {
            return Err(Error::Argument(format!(
                "{level} is not a proper divisor of {}",
                self.q()
            )));
        }
        let l = level as usize;
        let mut ids = vec![NOT_IN_GROUP; l * l * l * l];
        let mut fiber_of = Vec::with_capacity(self.order());
        let mut n_fibers = 0u32;
        for g in &self.elements {
            let key = g.reduce(level).key();
            if ids[key] == NOT_IN_GROUP {
                ids[key] = n_fibers;
                n_fibers += 1;
            }
            fiber_of.push(ids[key]);
        }
        let n_fibers = n_fibers as usize;
        Ok(LevelFibers {
            level,
            fiber_of,
            n_fibers,
            fiber_size: self.order() / n_fibers,
        })
    }

    /// Conditional average of `phi` over the fibers of reduction mod `level`.
    pub fn level_average(&self, phi: &[Complex64], level: u32) -> Result<Vec<Complex64>> {
        self.check_len(phi.len())?;
        let fibers = self.fibers(level)?;
        let mut out = phi.to_vec();
        fibers.average_in_place(&mut out);
        Ok(out)
    }

    /// Index in `coarse` of the reduction of each element of `self`.
    pub fn reduction_map(&self, coarse: &GroupTable) -> Result<Vec<u32>> {
        let level = coarse.q();
        if !self.modulus.is_proper_divisor(level) {
            return Err(Error::Argument(format!(
                "{level} is not a proper divisor of {}",
                self.q()
            )));
        }
        Ok(self
            .elements
            .iter()
            .map(|g| coarse.index[g.reduce(level).key()])
            .collect())
    }

    /// Pulls a function on `G_{q'}` back to `G_q` along reduction.
    pub fn pullback(&self, coarse: &GroupTable, f: &[Complex64]) -> Result<Vec<Complex64>> {
        coarse.check_len(f.len())?;
        let map = self.reduction_map(coarse)?;
        Ok(map.iter().map(|&i| f[i as usize]).collect())
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.order() {
            return Err(Error::Argument(format!(
                "function has {len} values, group has {} elements",
                self.order()
            )));
        }
        Ok(())
    }

    /// CSV dump with columns `index,a,b,c,d,inverse_index`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "a", "b", "c", "d", "inverse_index"])?;
        for (i, g) in self.elements.iter().enumerate() {
            out.write_record([
                i.to_string(),
                g.a.to_string(),
                g.b.to_string(),
                g.c.to_string(),
                g.d.to_string(),
                self.inverses[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Enumerates `SL_2(Z/q)` in lexicographic `(a, b, c, d)` order.
pub fn enumerate_group(q: u32, guards: &Guards) -> Result<GroupTable> {
    if q < 2 || q > guards.max_modulus {
        return Err(Error::Resource(format!(
            "modulus {q} outside the guarded range [2, {}]",
            guards.max_modulus
        )));
    }
    enumerate_level(q)
}

/// Enumeration without the lower bound, so level 1 (the trivial group) works.
pub(crate) fn enumerate_level(q: u32) -> Result<GroupTable> {
    let modulus = Modulus::new(q)?;
    let qs = q as usize;
    let mut index = vec![NOT_IN_GROUP; qs.pow(4)];
    let mut elements = Vec::with_capacity(modulus.sl2_order() as usize);
    let one = 1 % q;
    for a in 0..q {
        for b in 0..q {
            for c in 0..q {
                for d in 0..q {
                    let m = ModMatrix { a, b, c, d, q };
                    if m.det() == one {
                        index[m.key()] = elements.len() as u32;
                        elements.push(m);
                    }
                }
            }
        }
    }
    let inverses = elements.iter().map(|g| index[g.inverse().key()]).collect();
    let identity = index[ModMatrix::identity(q).key()];
    Ok(GroupTable {
        modulus,
        elements,
        index,
        inverses,
        identity,
        cayley: OnceLock::new(),
    })
}

/// Orthogonal projection onto the new subspace `E_q`.
#[derive(Debug, Clone)]
pub struct NewSpaceProjector {
    modulus: Modulus,
    levels: Vec<LevelFibers>,
    dimension: usize,
}

impl NewSpaceProjector {
    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The maximal proper levels `q/p` whose pullbacks are removed.
    pub fn levels(&self) -> impl Iterator<Item = u32> + '_ {
        self.levels.iter().map(|l| l.level)
    }

    pub fn apply_in_place(&self, v: &mut [Complex64]) {
        let mut avg = vec![Complex64::new(0.0, 0.0); v.len()];
        for level in &self.levels {
            avg.copy_from_slice(v);
            level.average_in_place(&mut avg);
            for (x, m) in v.iter_mut().zip(&avg) {
                *x -= m;
            }
        }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = v.to_vec();
        self.apply_in_place(&mut out);
        out
    }
}

pub fn new_space_projector(group: &GroupTable) -> Result<NewSpaceProjector> {
    let modulus = group.modulus().clone();
    let q = modulus.value();
    let primes: Vec<u32> = modulus.primes().collect();
    let levels = primes
        .iter()
        .map(|&p| group.fibers(q / p))
        .collect::<Result<Vec<_>>>()?;
    // Inclusion-exclusion over sets of primes: rank(A_{q'}) = |G_{q'}|.
    let mut dim: i64 = 0;
    for mask in 0u32..(1 << primes.len()) {
        let mut level = q;
        for (i, p) in primes.iter().enumerate() {
            if mask & (1 << i) != 0 {
                level /= p;
            }
        }
        let order = Modulus::new(level)?.sl2_order() as i64;
        if mask.count_ones() % 2 == 0 {
            dim += order;
        } else {
            dim -= order;
        }
    }
    Ok(NewSpaceProjector {
        modulus,
        levels,
        dimension: dim as usize,
    })
}

/// Subtracts the mean, projecting onto `L^2_0(G)`.
pub fn project_mean_zero(v: &mut [Complex64]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<Complex64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}
