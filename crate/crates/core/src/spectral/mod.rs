//! Spectral estimates for convolution operators on `L^2(SL_2(Z/q))`.
//!
//! Norms are computed matrix-free: the operator is applied through the
//! multiplication table and the top eigenvalue of `reverse(mu) * mu` is
//! found by Lanczos (default) or power iteration. Dense eigensolvers are
//! kept as oracles for small groups.

mod checks;
pub mod dense;
mod eigen;
mod sweep;

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{reverse, GroupMeasure};
use crate::modgroup::{new_space_projector, project_mean_zero, GroupTable, NewSpaceProjector};

pub use checks::*;
pub use eigen::{top_eigenvalue, EigenOptions, NormMethod, TopEigen};
pub use sweep::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Full,
    MeanZero,
    NewSpace,
}

/// Convolution by a measure, restricted to a subspace of `L^2(G)`.
pub struct ConvOperator<'g> {
    group: &'g GroupTable,
    measure: GroupMeasure,
    reversed: GroupMeasure,
    subspace: Subspace,
    projector: Option<NewSpaceProjector>,
}

impl<'g> ConvOperator<'g> {
    pub fn new(group: &'g GroupTable, measure: GroupMeasure, subspace: Subspace) -> Result<Self> {
        let reversed = reverse(group, &measure)?;
        let projector = match subspace {
            Subspace::NewSpace => Some(new_space_projector(group)?),
            _ => None,
        };
        Ok(Self {
            group,
            measure,
            reversed,
            subspace,
            projector,
        })
    }

    pub fn group(&self) -> &GroupTable {
        self.group
    }

    pub fn measure(&self) -> &GroupMeasure {
        &self.measure
    }

    pub fn subspace(&self) -> Subspace {
        self.subspace
    }

    pub fn dimension(&self) -> usize {
        match self.subspace {
            Subspace::Full => self.group.order(),
            Subspace::MeanZero => self.group.order() - 1,
            Subspace::NewSpace => self.projector.as_ref().map_or(0, |p| p.dimension()),
        }
    }

    pub fn project(&self, v: &mut [Complex64]) {
        match self.subspace {
            Subspace::Full => {}
            Subspace::MeanZero => project_mean_zero(v),
            Subspace::NewSpace => {
                if let Some(p) = &self.projector {
                    p.apply_in_place(v);
                }
            }
        }
    }

    /// `P(mu * phi)`.
    pub fn apply(&self, phi: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = self.measure.act(self.group, phi)?;
        self.project(&mut out);
        Ok(out)
    }

    /// `P(reverse(mu) * mu * P phi)`, the Gram operator `A* A`.
    pub fn apply_gram(&self, phi: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut x = phi.to_vec();
        self.project(&mut x);
        let y = self.measure.act(self.group, &x)?;
        let mut out = self.reversed.act(self.group, &y)?;
        self.project(&mut out);
        Ok(out)
    }

    /// Whether the measure equals its reversal, so that the operator is
    /// self-adjoint.
    pub fn is_self_adjoint(&self, tol: f64) -> bool {
        self.measure
            .to_dense()
            .iter()
            .zip(self.reversed.to_dense())
            .all(|(a, b)| (a - b).norm() <= tol)
    }
}

/// Operator norm estimate with its certificate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GapReport {
    pub q: u32,
    pub subspace: Subspace,
    pub dim: usize,
    pub l1: f64,
    pub norm: f64,
    /// `1 - norm / l1`.
    pub relative_gap: f64,
    pub iterations: usize,
    pub residual: f64,
    pub seconds: f64,
}

/// Largest singular value of the operator on its subspace.
pub fn operator_norm(op: &ConvOperator, opts: &EigenOptions) -> Result<GapReport> {
    let dim = op.dimension();
    if dim == 0 {
        return Err(Error::Argument("operator norm on a zero-dimensional subspace".into()));
    }
    let start = Instant::now();
    let l1 = op.measure().l1();
    let scale = l1 * l1;
    let top = top_eigenvalue(op.group().order(), |v| op.apply_gram(v), |v| op.project(v), scale, opts).map_err(
        |e| match e {
            Error::Convergence {
                iterations,
                estimate,
                residual,
            } => Error::Convergence {
                iterations,
                estimate: estimate.max(0.0).sqrt(),
                residual,
            },
            other => other,
        },
    )?;
    let norm = top.value.max(0.0).sqrt();
    Ok(GapReport {
        q: op.group().q(),
        subspace: op.subspace(),
        dim,
        l1,
        norm,
        relative_gap: if l1 > 0.0 { 1.0 - norm / l1 } else { 0.0 },
        iterations: top.iterations,
        residual: top.residual,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest eigenvalue of a self-adjoint convolution operator.
pub fn top_self_adjoint_eigenvalue(op: &ConvOperator, opts: &EigenOptions) -> Result<TopEigen> {
    if !op.is_self_adjoint(1e-12 * op.measure().l1().max(1.0)) {
        return Err(Error::Argument("measure is not self-reversed".into()));
    }
    let scale = op.measure().l1();
    let lanczos = EigenOptions {
        method: NormMethod::Lanczos,
        ..opts.clone()
    };
    top_eigenvalue(op.group().order(), |v| op.apply(v), |v| op.project(v), scale, &lanczos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guards::Guards;
    use crate::measures::{build_mu1, MeasureParams};
    use crate::modgroup::enumerate_group;
    use crate::symdyn::{build_system, SystemConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one() -> Complex64 {
        Complex64::new(1.0, 0.0)
    }

    fn random_measure(g: &GroupTable, k: usize, seed: u64, complex: bool) -> GroupMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.order() as u32;
        GroupMeasure::from_pairs(
            g,
            (0..k).map(|_| {
                let im = if complex { rng.random_range(-1.0..1.0) } else { 0.0 };
                (rng.random_range(0..n), Complex64::new(rng.random_range(0.0..1.0), im))
            }),
        )
    }

    #[test]
    fn identity_and_uniform() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let opts = EigenOptions::default();
        let id = ConvOperator::new(&g, GroupMeasure::dirac(&g, g.identity(), one()), Subspace::MeanZero).unwrap();
        let r = operator_norm(&id, &opts).unwrap();
        assert!((r.norm - 1.0).abs() < 1e-10);
        let u = ConvOperator::new(&g, GroupMeasure::uniform(&g, 1.0 / 120.0), Subspace::MeanZero).unwrap();
        assert!(operator_norm(&u, &opts).unwrap().norm < 1e-7);
    }

    #[test]
    fn mu1_at_q2_matches_dense() {
        let spec = build_system(&SystemConfig::zaremba(&[1, 2])).unwrap();
        let g = enumerate_group(2, &Guards::default()).unwrap();
        let mu1 = build_mu1(&MeasureParams::new(&spec, 1, 0.5), &g, &Guards::default()).unwrap();
        let dense = dense::dense_operator_norm(&g, &mu1, Subspace::MeanZero).unwrap();
        let op = ConvOperator::new(&g, mu1, Subspace::MeanZero).unwrap();
        for method in [NormMethod::Lanczos, NormMethod::Power] {
            let opts = EigenOptions {
                method,
                ..EigenOptions::default()
            };
            let r = operator_norm(&op, &opts).unwrap();
            assert!((r.norm - dense).abs() < 1e-8, "{method:?}: {} vs {dense}", r.norm);
        }
    }

    #[test]
    fn lanczos_matches_dense_on_small_groups() {
        for (q, seed) in [(3u32, 1u64), (4, 2), (5, 3), (6, 4), (7, 5)] {
            let g = enumerate_group(q, &Guards::default()).unwrap();
            for sub in [Subspace::Full, Subspace::MeanZero, Subspace::NewSpace] {
                let m = random_measure(&g, 6, seed, true);
                let dense = dense::dense_operator_norm(&g, &m, sub).unwrap();
                let op = ConvOperator::new(&g, m, sub).unwrap();
                let r = operator_norm(&op, &EigenOptions::default()).unwrap();
                assert!(
                    (r.norm - dense).abs() < 1e-7 * dense.max(1.0),
                    "q={q} {sub:?}: {} vs {dense}",
                    r.norm
                );
            }
        }
    }

    #[test]
    fn subspace_norms_are_ordered() {
        let g = enumerate_group(6, &Guards::default()).unwrap();
        let m = random_measure(&g, 10, 11, false);
        let opts = EigenOptions::default();
        let norm = |s| {
            operator_norm(&ConvOperator::new(&g, m.clone(), s).unwrap(), &opts)
                .unwrap()
                .norm
        };
        let (full, zero, new) = (norm(Subspace::Full), norm(Subspace::MeanZero), norm(Subspace::NewSpace));
        assert!(new <= zero + 1e-9 && zero <= full + 1e-9 && full <= m.l1() + 1e-9);
    }

    #[test]
    fn operator_preserves_its_subspace() {
        let g = enumerate_group(4, &Guards::default()).unwrap();
        let m = random_measure(&g, 7, 5, true);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for sub in [Subspace::MeanZero, Subspace::NewSpace] {
            let op = ConvOperator::new(&g, m.clone(), sub).unwrap();
            let mut phi: Vec<Complex64> = (0..g.order())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            op.project(&mut phi);
            let out = m.act(&g, &phi).unwrap();
            let mut p = out.clone();
            op.project(&mut p);
            let residual: f64 = out.iter().zip(&p).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(residual < 1e-9);
        }
    }

    #[test]
    fn left_and_right_conventions_agree() {
        let g = enumerate_group(5, &Guards::default()).unwrap();
        let m = random_measure(&g, 8, 21, true);
        for sub in [Subspace::MeanZero, Subspace::NewSpace] {
            let left = dense::dense_operator_norm(&g, &m, sub).unwrap();
            let right = dense::dense_right_operator_norm(&g, &m, sub).unwrap();
            assert!((left - right).abs() < 1e-10);
        }
    }

    #[test]
    fn non_convergence_carries_estimate() {
        let g = enumerate_group(7, &Guards::default()).unwrap();
        let m = random_measure(&g, 20, 9, false);
        let op = ConvOperator::new(&g, m, Subspace::MeanZero).unwrap();
        let opts = EigenOptions {
            method: NormMethod::Power,
            max_iter: 2,
            tol: 1e-15,
            ..EigenOptions::default()
        };
        match operator_norm(&op, &opts) {
            Err(Error::Convergence {
                iterations, estimate, ..
            }) => {
                assert_eq!(iterations, 2);
                assert!(estimate > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
