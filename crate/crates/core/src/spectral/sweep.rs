use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guards::Guards;
use crate::measures::{build_mu, MeasureParams};
use crate::modgroup::{enumerate_group, GroupTable};
use crate::symdyn::{BasePoint, SystemSpec, Word};

use super::checks::{fit_autocorrelation, linear_fit, nu_autocorrelation, system_generates};
use super::{operator_norm, ConvOperator, EigenOptions, Subspace};

pub const SWEEP_COLUMNS: [&str; 15] = [
    "q",
    "group_order",
    "dim_Eq",
    "l1_mass",
    "opnorm_Eq",
    "ratio",
    "q_pow_minus_quarter",
    "R_used",
    "L",
    "R_prime",
    "a",
    "b",
    "iters",
    "seconds",
    "skipped_reason",
];

/// Largest `R` tried when searching for the autocorrelation bound.
pub const AUTOCORR_R_MAX: usize = 16;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub q_list: Vec<u32>,
    pub l: usize,
    pub a: f64,
    pub b: f64,
    pub prefix: Word,
    pub x: BasePoint,
    /// Coefficient `c` in `R = ceil(c ln q)`; fitted from the
    /// autocorrelation search when absent.
    pub r_coefficient: Option<f64>,
    pub eigen: EigenOptions,
    pub record_timings: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub q: u32,
    pub group_order: Option<usize>,
    pub dim_eq: Option<usize>,
    pub l1_mass: Option<f64>,
    pub opnorm_eq: Option<f64>,
    pub ratio: Option<f64>,
    pub q_pow_minus_quarter: f64,
    pub r_used: Option<usize>,
    pub l: usize,
    pub r_prime: Option<usize>,
    pub a: f64,
    pub b: f64,
    pub iters: Option<usize>,
    pub seconds: Option<f64>,
    pub skipped_reason: Option<String>,
}

impl SweepRow {
    fn skipped(q: u32, cfg: &SweepConfig, reason: String) -> Self {
        Self {
            q,
            group_order: None,
            dim_eq: None,
            l1_mass: None,
            opnorm_eq: None,
            ratio: None,
            q_pow_minus_quarter: (q as f64).powf(-0.25),
            r_used: None,
            l: cfg.l,
            r_prime: None,
            a: cfg.a,
            b: cfg.b,
            iters: None,
            seconds: None,
            skipped_reason: Some(reason),
        }
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped_reason.is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Coefficient used in `R = ceil(c ln q)`.
    pub r_coefficient: f64,
    /// `-slope` of `ln ratio` against `ln q` over computed rows.
    pub alpha: Option<f64>,
}

impl SweepReport {
    /// Whether every computed non-square-free modulus has a positive gap.
    pub fn non_square_free_gaps_positive(&self) -> bool {
        self.rows
            .iter()
            .filter(|r| !r.is_skipped() && !crate::modgroup::Modulus::new(r.q).is_ok_and(|m| m.is_square_free()))
            .all(|r| r.ratio.is_some_and(|x| x < 1.0))
    }
}

/// `ceil(c ln q)` rounded up to a positive multiple of `l`.
pub fn r_for_modulus(c: f64, q: u32, l: usize) -> usize {
    let raw = (c * (q as f64).ln()).ceil().max(1.0) as usize;
    raw.div_ceil(l) * l
}

fn group_for(q: u32, guards: &Guards) -> std::result::Result<GroupTable, String> {
    enumerate_group(q, guards).map_err(|e| e.to_string())
}

/// Fits `c` in `R = c ln q` from the autocorrelation search over the
/// computable moduli of the sweep.
pub fn fit_r_coefficient(spec: &SystemSpec, cfg: &SweepConfig, guards: &Guards) -> Result<f64> {
    let reports = cfg
        .q_list
        .par_iter()
        .filter(|&&q| q >= 3)
        .filter_map(|&q| group_for(q, guards).ok())
        .map(|g| nu_autocorrelation(spec, &g, &cfg.prefix, cfg.a, AUTOCORR_R_MAX, guards))
        .collect::<Result<Vec<_>>>()?;
    fit_autocorrelation(&reports)
        .map(|f| f.c_fit)
        .ok_or_else(|| Error::Estimation("autocorrelation bound not reached for any modulus".into()))
}

fn sweep_one(spec: &SystemSpec, cfg: &SweepConfig, c: f64, q: u32, guards: &Guards) -> Result<SweepRow> {
    let group = match group_for(q, guards) {
        Ok(g) => g,
        Err(reason) => return Ok(SweepRow::skipped(q, cfg, reason)),
    };
    let z = system_generates(spec, &group, cfg.l, guards)?;
    if !z.full {
        return Ok(SweepRow::skipped(
            q,
            cfg,
            format!(
                "inner-slot quotients generate a proper subgroup of order {}",
                z.subgroup_order
            ),
        ));
    }
    let r = r_for_modulus(c, q, cfg.l);
    if let Err(e) = spec.check_word_guard(r + cfg.prefix.len(), guards) {
        return Ok(SweepRow::skipped(q, cfg, e.to_string()));
    }
    let start = Instant::now();
    let params = MeasureParams::new(spec, r, cfg.a)
        .with_prefix(cfg.prefix.clone())
        .with_b(cfg.b)
        .with_x(cfg.x);
    let mu = build_mu(&params, &group, guards)?;
    let op = ConvOperator::new(&group, mu, Subspace::NewSpace)?;
    let gap = operator_norm(&op, &cfg.eigen)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(SweepRow {
        q,
        group_order: Some(group.order()),
        dim_eq: Some(gap.dim),
        l1_mass: Some(gap.l1),
        opnorm_eq: Some(gap.norm),
        ratio: Some(gap.norm / gap.l1),
        q_pow_minus_quarter: (q as f64).powf(-0.25),
        r_used: Some(r),
        l: cfg.l,
        r_prime: Some(r / cfg.l),
        a: cfg.a,
        b: cfg.b,
        iters: Some(gap.iterations),
        seconds: cfg.record_timings.then_some(seconds),
        skipped_reason: None,
    })
}

/// Operator norm of `mu` on the new subspace across moduli, with `R` grown
/// like `ln q`.
pub fn main_sweep(spec: &SystemSpec, cfg: &SweepConfig, guards: &Guards) -> Result<SweepReport> {
    if cfg.l == 0 {
        return Err(Error::Argument("L must be positive".into()));
    }
    let c = match cfg.r_coefficient {
        Some(c) => c,
        None => fit_r_coefficient(spec, cfg, guards)?,
    };
    let rows = cfg
        .q_list
        .par_iter()
        .map(|&q| sweep_one(spec, cfg, c, q, guards))
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.ratio.filter(|&x| x > 0.0).map(|x| ((r.q as f64).ln(), x.ln())))
        .collect();
    let alpha = (pts.len() >= 2).then(|| {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        -linear_fit(&x, &y).0
    });
    Ok(SweepReport {
        rows,
        r_coefficient: c,
        alpha,
    })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(report: &SweepReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_COLUMNS)?;
    for r in &report.rows {
        let skipped = r.is_skipped();
        out.write_record([
            r.q.to_string(),
            opt(&r.group_order),
            opt(&r.dim_eq),
            opt_f(r.l1_mass),
            opt_f(r.opnorm_eq),
            opt_f(r.ratio),
            if skipped {
                String::new()
            } else {
                format!("{:.12e}", r.q_pow_minus_quarter)
            },
            opt(&r.r_used),
            if skipped { String::new() } else { r.l.to_string() },
            opt(&r.r_prime),
            if skipped { String::new() } else { r.a.to_string() },
            if skipped { String::new() } else { r.b.to_string() },
            opt(&r.iters),
            r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default(),
            r.skipped_reason.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symdyn::{build_system, SystemConfig};

    fn cfg(q_list: Vec<u32>) -> SweepConfig {
        SweepConfig {
            q_list,
            l: 2,
            a: 0.53,
            b: 0.0,
            prefix: Word::empty(),
            x: BasePoint::Midpoint,
            r_coefficient: Some(2.0),
            eigen: EigenOptions::default(),
            record_timings: false,
        }
    }

    #[test]
    fn r_rounding() {
        assert_eq!(r_for_modulus(2.0, 5, 2), 4);
        assert_eq!(r_for_modulus(2.0, 16, 3), 6);
        assert_eq!(r_for_modulus(0.1, 2, 2), 2);
    }

    #[test]
    fn small_sweep_and_skip_row() {
        let spec = build_system(&SystemConfig::zaremba(&[1, 2])).unwrap();
        let guards = Guards {
            max_modulus: 6,
            max_words: 5_000_000,
        };
        let report = main_sweep(&spec, &cfg(vec![2, 4, 5, 7]), &guards).unwrap();
        assert_eq!(report.rows.len(), 4);
        let q2 = &report.rows[0];
        assert!(q2.ratio.unwrap().is_finite());
        assert!(report.rows[3].is_skipped());
        let mut buf = Vec::new();
        write_sweep_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_COLUMNS.join(","));
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("7,,,,,,,,,,,,,,"));
    }
}
