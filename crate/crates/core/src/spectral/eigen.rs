use faer::{Mat, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    /// Restarted Lanczos with full reorthogonalization.
    Lanczos,
    /// Power iteration stopped on Rayleigh quotient stagnation.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenOptions {
    pub method: NormMethod,
    /// Lanczos: residual `||Hx - theta x||` relative to the scale.
    /// Power: relative change of the Rayleigh quotient.
    pub tol: f64,
    /// Operator applications allowed.
    pub max_iter: usize,
    pub seed: u64,
    /// Krylov dimension before a restart.
    pub krylov_dim: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            method: NormMethod::Lanczos,
            tol: 1e-8,
            max_iter: 5000,
            seed: 0x5eed,
            krylov_dim: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopEigen {
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn start_vector(n: usize, seed: u64, project: &impl Fn(&mut [Complex64])) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    project(&mut v);
    let nv = norm(&v);
    if nv == 0.0 {
        return Err(Error::Argument("start vector vanishes on the subspace".into()));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    Ok(v)
}

/// Largest eigenvalue of a self-adjoint operator on the range of `project`.
/// `scale` bounds the spectrum and sets the absolute tolerance floor.
pub fn top_eigenvalue(
    n: usize,
    apply: impl Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    project: impl Fn(&mut [Complex64]),
    scale: f64,
    opts: &EigenOptions,
) -> Result<TopEigen> {
    let v0 = start_vector(n, opts.seed, &project)?;
    match opts.method {
        NormMethod::Lanczos => lanczos(v0, apply, scale, opts),
        NormMethod::Power => power(v0, apply, opts),
    }
}

fn tridiagonal_top(alphas: &[f64], betas: &[f64]) -> (f64, Vec<f64>) {
    let m = alphas.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i == j + 1 {
            betas[j]
        } else if j == i + 1 {
            betas[i]
        } else {
            0.0
        }
    });
    let eig = t
        .self_adjoint_eigen(Side::Lower)
        .expect("tridiagonal eigendecomposition");
    let s = eig.S().column_vector();
    let u = eig.U();
    let top = s[m - 1];
    ((top), (0..m).map(|i| u[(i, m - 1)]).collect())
}

fn lanczos(
    mut v0: Vec<Complex64>,
    apply: impl Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    scale: f64,
    opts: &EigenOptions,
) -> Result<TopEigen> {
    let floor = scale.max(f64::MIN_POSITIVE) * 1e-14;
    let m_max = opts.krylov_dim.max(2);
    let mut iterations = 0;
    loop {
        let mut basis: Vec<Vec<Complex64>> = vec![v0.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz = Vec::new();
        for k in 0..m_max {
            let mut w = apply(&basis[k])?;
            iterations += 1;
            let alpha = dot(&basis[k], &w).re;
            axpy(&mut w, Complex64::new(-alpha, 0.0), &basis[k]);
            if k > 0 {
                axpy(&mut w, Complex64::new(-betas[k - 1], 0.0), &basis[k - 1]);
            }
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(&mut w, -c, b);
                }
            }
            alphas.push(alpha);
            let beta = norm(&w);
            let (theta, s) = tridiagonal_top(&alphas, &betas);
            let residual = beta * s[k].abs();
            ritz = s;
            let best = TopEigen {
                value: theta,
                iterations,
                residual,
            };
            let target = opts.tol * theta.abs().max(scale * 1e-6).max(floor);
            if residual <= target || beta <= floor {
                return Ok(best);
            }
            if iterations >= opts.max_iter {
                return Err(Error::Convergence {
                    iterations,
                    estimate: best.value,
                    residual: best.residual,
                });
            }
            betas.push(beta);
            basis.push(w.into_iter().map(|x| x / beta).collect());
        }
        // Restart from the current Ritz vector.
        let n = v0.len();
        let mut next = vec![Complex64::new(0.0, 0.0); n];
        for (coef, b) in ritz.iter().zip(&basis) {
            axpy(&mut next, Complex64::new(*coef, 0.0), b);
        }
        let nn = norm(&next);
        next.iter_mut().for_each(|x| *x /= nn);
        v0 = next;
    }
}

fn power(
    mut x: Vec<Complex64>,
    apply: impl Fn(&[Complex64]) -> Result<Vec<Complex64>>,
    opts: &EigenOptions,
) -> Result<TopEigen> {
    let mut theta_prev = f64::NAN;
    for it in 1..=opts.max_iter {
        let y = apply(&x)?;
        let theta = dot(&x, &y).re;
        let ny = norm(&y);
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b * theta).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if ny == 0.0 {
            return Ok(TopEigen {
                value: 0.0,
                iterations: it,
                residual: 0.0,
            });
        }
        if (theta - theta_prev).abs() <= opts.tol * theta.abs() {
            return Ok(TopEigen {
                value: theta,
                iterations: it,
                residual,
            });
        }
        if it == opts.max_iter {
            return Err(Error::Convergence {
                iterations: it,
                estimate: theta,
                residual,
            });
        }
        theta_prev = theta;
        x = y.into_iter().map(|v| v / ny).collect();
    }
    unreachable!("max_iter is at least one when the loop runs")
}
