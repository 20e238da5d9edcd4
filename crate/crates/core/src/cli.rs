//! Run configuration, the subcommand pipelines and report emission.
//!
//! Every pipeline writes its artifacts into one output directory and returns
//! a [`RunReport`] listing each executed check exactly once. The binary maps
//! the report to an exit status: 0 when nothing failed, 1 otherwise, and 2
//! when the configuration did not validate.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decouple::{decouple_case, fit_decoupling_constant, inner_slots, outer_words, HistogramBin, SLACK_EDGES};
use crate::error::{Error, Result};
use crate::guards::Guards;
use crate::measures::{build_mu, build_mu1, letter_indices, log_distortion, MeasureParams};
use crate::modgroup::{enumerate_group, new_space_projector, GroupTable, Modulus};
use crate::spectral::{
    digit_quotients, fit_autocorrelation, flat_expansion, main_sweep, mu1_decay, nu_autocorrelation, operator_norm,
    pair_quotients, system_generates, trace_identity_check, verify_lemma_expand, write_sweep_csv, zariski_check,
    AutocorrReport, ConvOperator, EigenOptions, GapReport, NormMethod, Subspace, SweepConfig, AUTOCORR_R_MAX,
};
use crate::symdyn::{
    build_system, estimate_contraction, estimate_delta, BasePoint, Mode, SystemConfig, SystemSpec, Word,
};

/// Word lengths of the two independent critical-exponent estimates.
pub const DELTA_LENGTHS: [usize; 2] = [8, 10];
pub const DELTA_TOL: f64 = 1e-6;
/// Allowed disagreement between the two estimates.
pub const DELTA_AGREEMENT: f64 = 0.005;
/// Minimal geometric decay of the decoupling error per letter.
pub const DECAY_RATE_MIN: f64 = 2.0;
pub const FLATNESS_K_MAX: f64 = 1.1;
/// Minimal fitted exponent in `ratio ~ q^-alpha`.
pub const ALPHA_MIN: f64 = 0.15;
/// `min C1 >= UNIFORMITY_FRACTION * median C1` across moduli.
pub const UNIFORMITY_FRACTION: f64 = 0.5;
pub const TRACE_RTOL: f64 = 1e-8;
/// Slack for norm orderings, relative to the mass.
pub const NORM_RTOL: f64 = 1e-7;

/// The exponent `a`: a number in `(0, 1)` or `"auto"` for the estimated
/// critical exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ExponentRepr", into = "ExponentRepr")]
pub enum Exponent {
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<ExponentRepr> for Exponent {
    type Error = String;

    fn try_from(r: ExponentRepr) -> std::result::Result<Self, String> {
        match r {
            ExponentRepr::Name(s) if s == "auto" => Ok(Exponent::Auto),
            ExponentRepr::Name(s) => Err(format!("a must be \"auto\" or a number, got \"{s}\"")),
            ExponentRepr::Value(v) => Ok(Exponent::Value(v)),
        }
    }
}

impl From<Exponent> for ExponentRepr {
    fn from(a: Exponent) -> Self {
        match a {
            Exponent::Auto => ExponentRepr::Name("auto".into()),
            Exponent::Value(v) => ExponentRepr::Value(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub dir: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("sl2lab-out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub q_list: Vec<u32>,
    pub a: Exponent,
    pub b: f64,
    /// Prefix length of the twisted measures.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "R_prime")]
    pub r_prime: usize,
    /// Evaluation point `x` of the measures.
    pub base_point: BasePoint,
    pub method: NormMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub guards: Guards,
    pub outputs: Outputs,
    pub record_timings: bool,
    /// Coefficient `c` in `R = ceil(c ln q)` for the sweep; fitted when absent.
    pub r_coefficient: Option<f64>,
    /// Random coefficient draws per modulus in the perturbation-lemma check.
    pub lemma_draws: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eigen = EigenOptions::default();
        Self {
            system: SystemConfig::zaremba(&[1, 2]),
            q_list: vec![4, 5, 7, 8, 9, 11, 13, 16],
            a: Exponent::Auto,
            b: 0.0,
            m: 0,
            l: 2,
            r_prime: 2,
            base_point: BasePoint::Midpoint,
            method: eigen.method,
            tol: eigen.tol,
            max_iter: eigen.max_iter,
            seed: eigen.seed,
            guards: Guards::default(),
            outputs: Outputs::default(),
            record_timings: false,
            r_coefficient: None,
            lemma_draws: 250,
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON config. Parse errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Exponent::Value(a) = self.a {
            if !(a > 0.0 && a < 1.0) {
                problems.push(format!("a: must lie in (0, 1), got {a}"));
            }
        }
        if !self.b.is_finite() {
            problems.push("b: must be finite".to_string());
        }
        if self.l < 2 {
            problems.push(format!("L: must be at least 2, got {}", self.l));
        } else if self.system.mode == Mode::SchottkySubshift && self.l < 3 {
            problems.push(format!("L: Schottky blocks need at least 3 letters, got {}", self.l));
        }
        if self.r_prime == 0 {
            problems.push("R_prime: must be at least 1".to_string());
        }
        if self.q_list.is_empty() {
            problems.push("q_list: must not be empty".to_string());
        }
        for (i, &q) in self.q_list.iter().enumerate() {
            if q < 2 {
                problems.push(format!("q_list[{i}]: modulus must be at least 2, got {q}"));
            }
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            problems.push(format!("tol: must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            problems.push("max_iter: must be positive".to_string());
        }
        if self.guards.max_modulus == 0 {
            problems.push("guards.max_modulus: must be positive".to_string());
        }
        if self.guards.max_words == 0 {
            problems.push("guards.max_words: must be positive".to_string());
        }
        if let Some(c) = self.r_coefficient {
            if !(c > 0.0 && c.is_finite()) {
                problems.push(format!("r_coefficient: must be positive, got {c}"));
            }
        }
        if let Err(e) = build_system(&self.system) {
            problems.push(format!("system: {e}"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn eigen(&self) -> EigenOptions {
        EigenOptions {
            method: self.method,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            ..EigenOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl Environment {
    fn current() -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    /// The exponent actually used, after resolving `"auto"`.
    pub a_used: f64,
    pub checks: Vec<Check>,
    pub fitted: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub environment: Environment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    /// Human-readable summary, printed by the binary.
    #[serde(skip)]
    pub lines: Vec<String>,
}

impl RunReport {
    fn new(command: Command, config: &RunConfig, a_used: f64) -> Self {
        Self {
            command: command.name().to_string(),
            config: config.clone(),
            a_used,
            checks: Vec::new(),
            fitted: BTreeMap::new(),
            artifacts: Vec::new(),
            environment: Environment::current(),
            wall_seconds: None,
            lines: Vec::new(),
        }
    }

    fn record(&mut self, name: String, status: Status, detail: String) {
        assert!(
            self.checks.iter().all(|c| c.name != name),
            "check {name} recorded twice"
        );
        self.checks.push(Check { name, status, detail });
    }

    fn check(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        let status = if ok { Status::Pass } else { Status::Fail };
        self.record(name.into(), status, detail.into());
    }

    fn skip(&mut self, name: impl Into<String>, reason: impl Into<String>) {
        self.record(name.into(), Status::Skip, reason.into());
    }

    fn fit(&mut self, name: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.fitted.insert(name.into(), value);
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn count(&self, status: Status) -> usize {
        self.checks.iter().filter(|c| c.status == status).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GroupInfo,
    DeltaEstimate,
    BuildMeasure,
    DecoupleVerify,
    Opnorm,
    VerifyLemmas,
    SweepQ,
    SchottkyCheck,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::GroupInfo,
        Command::DeltaEstimate,
        Command::BuildMeasure,
        Command::DecoupleVerify,
        Command::Opnorm,
        Command::VerifyLemmas,
        Command::SweepQ,
        Command::SchottkyCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GroupInfo => "group-info",
            Command::DeltaEstimate => "delta-estimate",
            Command::BuildMeasure => "build-measure",
            Command::DecoupleVerify => "decouple-verify",
            Command::Opnorm => "opnorm",
            Command::VerifyLemmas => "verify-lemmas",
            Command::SweepQ => "sweep-q",
            Command::SchottkyCheck => "schottky-check",
        }
    }

    /// Whether the pipeline uses the exponent `a`.
    fn needs_exponent(self) -> bool {
        !matches!(
            self,
            Command::GroupInfo | Command::DeltaEstimate | Command::SchottkyCheck
        )
    }
}

/// Writes `report.json` into `dir` and returns its path.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    let mut f = fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(path)
}

/// Runs one pipeline, writing its artifacts into `config.outputs.dir`.
pub fn run(command: Command, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let spec = build_system(&config.system)?;
    let out = config.outputs.dir.clone();
    fs::create_dir_all(&out)?;
    let a = match (command.needs_exponent(), config.a) {
        (true, Exponent::Auto) => estimate_delta(&spec, DELTA_LENGTHS[1], DELTA_TOL, &config.guards)?.delta,
        (_, Exponent::Value(v)) => v,
        (false, Exponent::Auto) => f64::NAN,
    };
    let mut report = RunReport::new(command, config, if a.is_finite() { a } else { 0.0 });
    let ctx = Ctx {
        cfg: config,
        spec: &spec,
        a,
        out: &out,
    };
    match command {
        Command::GroupInfo => group_info(&ctx, &mut report)?,
        Command::DeltaEstimate => delta(&ctx, &mut report)?,
        Command::BuildMeasure => build_measure(&ctx, &mut report)?,
        Command::DecoupleVerify => decouple_verify(&ctx, &mut report)?,
        Command::Opnorm => opnorm(&ctx, &mut report)?,
        Command::VerifyLemmas => verify_lemmas(&ctx, &mut report)?,
        Command::SweepQ => sweep(&ctx, &mut report)?,
        Command::SchottkyCheck => schottky_check(&ctx, &mut report)?,
    }
    if config.record_timings {
        report.wall_seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    spec: &'a SystemSpec,
    a: f64,
    out: &'a Path,
}

impl Ctx<'_> {
    fn guards(&self) -> &Guards {
        &self.cfg.guards
    }

    /// The group at `q`, or the reason it was not built.
    fn group(&self, q: u32) -> Result<std::result::Result<GroupTable, String>> {
        match enumerate_group(q, self.guards()) {
            Ok(g) => Ok(Ok(g)),
            Err(Error::Resource(r)) => Ok(Err(r)),
            Err(e) => Err(e),
        }
    }

    /// Prefix of length `M`: the first letter repeated, admissible in both
    /// modes.
    fn prefix(&self) -> Result<Word> {
        self.spec.word(vec![0; self.cfg.m])
    }

    fn params(&self, r: usize) -> Result<MeasureParams<'_>> {
        Ok(MeasureParams::new(self.spec, r, self.a)
            .with_prefix(self.prefix()?)
            .with_b(self.cfg.b)
            .with_x(self.cfg.base_point))
    }

    fn write_csv(&self, report: &mut RunReport, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.out.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        report.artifacts.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&self, report: &mut RunReport, name: &str, value: &T) -> Result<()> {
        let mut f = fs::File::create(self.out.join(name))?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        report.artifacts.push(name.to_string());
        Ok(())
    }
}

fn sci(x: f64) -> String {
    format!("{x:.12e}")
}

fn mobius(n: u32) -> Result<i64> {
    let m = Modulus::new(n)?;
    if !m.is_square_free() {
        return Ok(0);
    }
    Ok(if m.factorization().len() % 2 == 0 { 1 } else { -1 })
}

/// `dim E_q = sum_{d | q} mu(q/d) |SL_2(Z/d)|`.
pub fn new_space_dimension(q: u32) -> Result<u64> {
    let m = Modulus::new(q)?;
    let mut dim = 0i64;
    for d in m.divisors() {
        dim += mobius(q / d)? * Modulus::new(d)?.sl2_order() as i64;
    }
    Ok(dim as u64)
}

fn group_info(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let mut rows = Vec::new();
    for &q in &ctx.cfg.q_list {
        let g = match ctx.group(q)? {
            Ok(g) => g,
            Err(reason) => {
                rows.push(vec![
                    q.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    reason.clone(),
                ]);
                report.skip(format!("group_order_q{q}"), reason);
                continue;
            }
        };
        let expected = g.modulus().sl2_order();
        report.check(
            format!("group_order_q{q}"),
            g.order() as u64 == expected,
            format!("{} elements, closed form {expected}", g.order()),
        );
        let dim = new_space_projector(&g)?.dimension();
        let expected_dim = new_space_dimension(q)?;
        report.check(
            format!("dim_Eq_q{q}"),
            dim as u64 == expected_dim,
            format!("projector rank {dim}, Moebius sum {expected_dim}"),
        );
        report
            .lines
            .push(format!("q = {q}: order = {}, dim E_q = {dim}", g.order()));
        let name = format!("group_q{q}.csv");
        g.write_csv(fs::File::create(ctx.out.join(&name))?)?;
        report.artifacts.push(name);
        rows.push(vec![
            q.to_string(),
            g.order().to_string(),
            dim.to_string(),
            g.modulus().is_square_free().to_string(),
            String::new(),
        ]);
    }
    ctx.write_csv(
        report,
        "group_info.csv",
        &["q", "group_order", "dim_Eq", "square_free", "skipped_reason"],
        &rows,
    )
}

fn delta(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let estimates = DELTA_LENGTHS
        .iter()
        .map(|&n| estimate_delta(ctx.spec, n, DELTA_TOL, ctx.guards()))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = estimates
        .iter()
        .map(|e| {
            vec![
                e.n.to_string(),
                e.words.to_string(),
                sci(e.delta),
                sci(e.normalized_partition),
            ]
        })
        .collect();
    ctx.write_csv(
        report,
        "delta.csv",
        &["n", "words", "delta", "normalized_partition"],
        &rows,
    )?;
    let (d0, d1) = (estimates[0].delta, estimates[1].delta);
    report.check(
        "delta_lengths_agree",
        (d0 - d1).abs() <= DELTA_AGREEMENT,
        format!("n = {}: {d0:.6}, n = {}: {d1:.6}", DELTA_LENGTHS[0], DELTA_LENGTHS[1]),
    );
    report.fit("delta", d1);
    report.fit("gamma", estimate_contraction(ctx.spec)?.per_letter);
    report.lines.push(format!(
        "delta = {d1:.6} (n = {}), {d0:.6} (n = {})",
        DELTA_LENGTHS[1], DELTA_LENGTHS[0]
    ));
    Ok(())
}

fn build_measure(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let r = ctx.cfg.l * ctx.cfg.r_prime;
    let params = ctx.params(r)?;
    params.validate()?;
    let mut rows = Vec::new();
    for &q in &ctx.cfg.q_list {
        let g = match ctx.group(q)? {
            Ok(g) => g,
            Err(reason) => {
                report.skip(format!("measure_q{q}"), reason);
                continue;
            }
        };
        let mu = build_mu(&params, &g, ctx.guards())?;
        let name = format!("mu_q{q}.csv");
        mu.write_csv(&g, fs::File::create(ctx.out.join(&name))?)?;
        report.artifacts.push(name);
        report.check(
            format!("measure_q{q}"),
            mu.l1() > 0.0 && mu.l1().is_finite(),
            format!("mass {:.6e} on {} elements", mu.l1(), mu.support_len()),
        );
        rows.push(vec![
            q.to_string(),
            r.to_string(),
            sci(mu.l1()),
            sci(mu.l2()),
            mu.support_len().to_string(),
            sci(mu.coverage()),
        ]);
    }
    let dist = log_distortion(&params, &enumerate_group(2, &Guards::unlimited())?, ctx.guards())?;
    report.fit("log_distortion", dist);
    ctx.write_csv(
        report,
        "measures.csv",
        &["q", "R", "l1", "l2", "support", "coverage"],
        &rows,
    )
}

#[derive(Serialize)]
struct DecoupleParams<'a> {
    system: &'a SystemConfig,
    a: f64,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "R_prime")]
    r_prime: usize,
    q_list: &'a [u32],
}

#[derive(Serialize)]
struct DecoupleSummary<'a> {
    params: DecoupleParams<'a>,
    fitted_c: f64,
    #[serde(rename = "K")]
    k: f64,
    max_violation: f64,
    slack_histogram: Vec<HistogramBin>,
    fit: &'a crate::decouple::DecouplingFit,
    cases: &'a [crate::decouple::DecoupleCase],
}

fn decouple_verify(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let (l, rp) = (ctx.cfg.l, ctx.cfg.r_prime);
    let fit = fit_decoupling_constant(ctx.spec, ctx.a, ctx.guards())?;
    report.fit("c_fit", fit.c_fit);
    report.fit("c", fit.c);
    report.fit("gamma", fit.gamma);
    report.fit("rate", fit.rate);
    report.fit("K", fit.flatness_k(l));
    for e in &fit.per_l {
        report.fit(format!("max_error_L{}", e.l), e.max_error);
        report.fit(format!("max_beta_ratio_L{}", e.l), e.max_beta_ratio);
    }
    report.check(
        "decoupling_error_rate",
        fit.rate >= DECAY_RATE_MIN,
        format!("error shrinks by {:.3} per letter", fit.rate),
    );
    let k_len = l.max(3);
    let k = fit.flatness_k(k_len);
    if ctx.spec.mode() == Mode::ZarembaFullShift {
        report.check(
            format!("flatness_K_L{k_len}"),
            k < FLATNESS_K_MAX,
            format!("K = {k:.6}"),
        );
    } else {
        report.skip(
            format!("flatness_K_L{k_len}"),
            format!("bound stated for Zaremba systems; K = {k:.6}"),
        );
    }
    let mut cases = Vec::new();
    for &q in &ctx.cfg.q_list {
        let g = match ctx.group(q)? {
            Ok(g) => g,
            Err(reason) => {
                report.skip(format!("domination_q{q}"), reason);
                continue;
            }
        };
        let case = decouple_case(ctx.spec, &g, l, rp, &fit, ctx.guards())?;
        report.check(
            format!("domination_q{q}"),
            case.passed(),
            format!(
                "{} violations over {} elements, min slack {:.6}, mass ratio {:.6} (cap {:.6})",
                case.domination.violations,
                case.domination.compared,
                case.domination.min_slack,
                case.mass_ratio(),
                case.mass_ratio_cap
            ),
        );
        cases.push(case);
    }
    let mut counts = vec![0usize; SLACK_EDGES.len() + 1];
    for c in &cases {
        for (n, bin) in counts.iter_mut().zip(&c.domination.slack_histogram) {
            *n += bin.count;
        }
    }
    let summary = DecoupleSummary {
        params: DecoupleParams {
            system: &ctx.cfg.system,
            a: ctx.a,
            l,
            r_prime: rp,
            q_list: &ctx.cfg.q_list,
        },
        fitted_c: fit.c,
        k: fit.flatness_k(l),
        max_violation: cases.iter().map(|c| c.domination.max_violation).fold(0.0, f64::max),
        slack_histogram: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                upper: SLACK_EDGES.get(i).copied(),
                count,
            })
            .collect(),
        fit: &fit,
        cases: &cases,
    };
    report.lines.push(format!(
        "c = {:.6}, K(L={l}) = {:.6}, max violation = {:e}",
        summary.fitted_c, summary.k, summary.max_violation
    ));
    ctx.write_json(report, "decouple.json", &summary)
}

fn gap_row(r: &GapReport, record_timings: bool) -> Vec<String> {
    vec![
        r.q.to_string(),
        format!("{:?}", r.subspace).to_lowercase(),
        r.dim.to_string(),
        sci(r.l1),
        sci(r.norm),
        sci(r.relative_gap),
        r.iterations.to_string(),
        sci(r.residual),
        if record_timings {
            format!("{:.3}", r.seconds)
        } else {
            String::new()
        },
    ]
}

fn opnorm(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let r = ctx.cfg.l * ctx.cfg.r_prime;
    let params = ctx.params(r)?;
    let eigen = ctx.cfg.eigen();
    let mut rows = Vec::new();
    for &q in &ctx.cfg.q_list {
        let g = match ctx.group(q)? {
            Ok(g) => g,
            Err(reason) => {
                report.skip(format!("norm_order_q{q}"), reason);
                continue;
            }
        };
        let mu = build_mu(&params, &g, ctx.guards())?;
        let zero = operator_norm(&ConvOperator::new(&g, mu.clone(), Subspace::MeanZero)?, &eigen)?;
        let new = operator_norm(&ConvOperator::new(&g, mu, Subspace::NewSpace)?, &eigen)?;
        let slack = NORM_RTOL * zero.l1;
        report.check(
            format!("norm_order_q{q}"),
            new.norm <= zero.norm + slack && zero.norm <= zero.l1 + slack,
            format!(
                "E_q {:.6e} <= mean-zero {:.6e} <= mass {:.6e}",
                new.norm, zero.norm, zero.l1
            ),
        );
        report
            .lines
            .push(format!("q = {q}: ratio on E_q = {:.6}", new.norm / new.l1));
        rows.push(gap_row(&zero, ctx.cfg.record_timings));
        rows.push(gap_row(&new, ctx.cfg.record_timings));
    }
    ctx.write_csv(
        report,
        "opnorm.csv",
        &[
            "q",
            "subspace",
            "dim",
            "l1",
            "norm",
            "relative_gap",
            "iterations",
            "residual",
            "seconds",
        ],
        &rows,
    )
}

/// Coefficients for one randomized draw of the perturbation lemma: mild
/// spread, wide log-uniform spread, or a single spike.
pub fn lemma_coefficients(rng: &mut ChaCha8Rng, n: usize, draw: usize) -> Vec<f64> {
    match draw % 3 {
        0 => (0..n).map(|_| rng.random_range(1.0..1.2)).collect(),
        1 => (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect(),
        _ => {
            let mut k = vec![1.0; n];
            k[rng.random_range(0..n)] = rng.random_range(2.0..50.0);
            k
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct LemmaRow {
    q: u32,
    lemma_draws: usize,
    lemma_violations: usize,
    lemma_skipped: usize,
    min_lemma_slack: f64,
    flat_min_c1: f64,
    flat_max_c1: f64,
    decay_strict: bool,
    c2: f64,
    trace_relative_error: Option<f64>,
    multiplicity: Option<usize>,
    multiplicity_floor: Option<usize>,
    autocorr_r_min: Option<usize>,
    autocorr_stopped: Option<String>,
}

fn lemma_row(ctx: &Ctx, g: &GroupTable) -> Result<(LemmaRow, AutocorrReport)> {
    let q = g.q();
    let eigen = ctx.cfg.eigen();
    let l = ctx.cfg.l;
    let elements = letter_indices(ctx.spec, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ u64::from(q));
    let (mut violations, mut skipped) = (0, 0);
    let mut min_slack = f64::INFINITY;
    for draw in 0..ctx.cfg.lemma_draws {
        let kappa = lemma_coefficients(&mut rng, elements.len(), draw);
        let r = verify_lemma_expand(g, &elements, &kappa, &eigen)?;
        match (r.holds, r.rhs) {
            (Some(holds), Some(rhs)) => {
                violations += usize::from(!holds);
                min_slack = min_slack.min((rhs - r.lhs) / (r.kappa_bar * r.j as f64));
            }
            _ => skipped += 1,
        }
    }
    let flat = flat_expansion(ctx.spec, g, l, ctx.a, &eigen, ctx.guards())?;
    let decay = mu1_decay(ctx.spec, g, l, &[1, 2, 3], ctx.a, &eigen, ctx.guards())?;
    let mu1 = build_mu1(
        &MeasureParams::new(ctx.spec, l * ctx.cfg.r_prime, ctx.a),
        g,
        ctx.guards(),
    )?;
    let trace = trace_identity_check(g, &mu1)?;
    let auto = nu_autocorrelation(ctx.spec, g, &ctx.prefix()?, ctx.a, AUTOCORR_R_MAX, ctx.guards())?;
    let row = LemmaRow {
        q,
        lemma_draws: ctx.cfg.lemma_draws,
        lemma_violations: violations,
        lemma_skipped: skipped,
        min_lemma_slack: min_slack,
        flat_min_c1: flat.min_c1,
        flat_max_c1: flat.max_c1,
        decay_strict: decay.strictly_decreasing,
        c2: decay.c2,
        trace_relative_error: trace.relative_error,
        multiplicity: trace.multiplicity,
        multiplicity_floor: trace.multiplicity_floor,
        autocorr_r_min: auto.r_min,
        autocorr_stopped: auto.stopped.clone(),
    };
    Ok((row, auto))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn verify_lemmas(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let mut groups = Vec::new();
    for &q in &ctx.cfg.q_list {
        match ctx.group(q)? {
            Ok(g) => groups.push(g),
            Err(reason) => report.skip(format!("lemmas_q{q}"), reason),
        }
    }
    let (rows, reports): (Vec<LemmaRow>, Vec<AutocorrReport>) = groups
        .par_iter()
        .map(|g| lemma_row(ctx, g))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    for row in &rows {
        let q = row.q;
        if row.lemma_skipped == row.lemma_draws {
            report.skip(
                format!("lemma_expand_q{q}"),
                "letters do not generate a group with a spectral gap",
            );
        } else {
            report.check(
                format!("lemma_expand_q{q}"),
                row.lemma_violations == 0,
                format!(
                    "{} violations over {} draws, min slack {:.3e}",
                    row.lemma_violations,
                    row.lemma_draws - row.lemma_skipped,
                    row.min_lemma_slack
                ),
            );
        }
        report.check(
            format!("flat_expansion_q{q}"),
            row.flat_min_c1 > 0.0,
            format!("C1 in [{:.6}, {:.6}]", row.flat_min_c1, row.flat_max_c1),
        );
        report.check(
            format!("mu1_decay_q{q}"),
            row.decay_strict && row.c2 > 0.0,
            format!("C2 = {:.6}", row.c2),
        );
        match row.trace_relative_error {
            Some(err) => report.check(
                format!("trace_identity_q{q}"),
                err <= TRACE_RTOL,
                format!("relative error {err:.3e}"),
            ),
            None => report.skip(format!("trace_identity_q{q}"), "group too large for the dense oracle"),
        }
        match (row.multiplicity, row.multiplicity_floor) {
            (Some(m), Some(floor)) => report.check(
                format!("multiplicity_q{q}"),
                m >= floor,
                format!("top eigenvalue multiplicity {m}, floor {floor}"),
            ),
            (Some(m), None) => report.skip(
                format!("multiplicity_q{q}"),
                format!("multiplicity {m}; floor stated for primes"),
            ),
            _ => report.skip(format!("multiplicity_q{q}"), "group too large for the dense oracle"),
        }
        match row.autocorr_r_min {
            Some(r) => report.check(
                format!("autocorrelation_q{q}"),
                true,
                format!("bound reached at R = {r}"),
            ),
            None => report.check(
                format!("autocorrelation_q{q}"),
                false,
                row.autocorr_stopped.clone().unwrap_or_default(),
            ),
        }
        report.fit(format!("C1_min_q{q}"), row.flat_min_c1);
        report.fit(format!("C2_q{q}"), row.c2);
    }
    if rows.len() >= 2 {
        let c1: Vec<f64> = rows.iter().map(|r| r.flat_min_c1).collect();
        let min = c1.iter().copied().fold(f64::INFINITY, f64::min);
        let med = median(c1);
        report.check(
            "flat_expansion_uniform",
            min >= UNIFORMITY_FRACTION * med,
            format!("min C1 {min:.6}, median {med:.6}"),
        );
    }
    if let Some(fit) = fit_autocorrelation(&reports) {
        report.fit("autocorr_c_fit", fit.c_fit);
        report.fit("autocorr_slope", fit.slope);
    }
    report.lines.push(format!(
        "{} passed, {} failed, {} skipped",
        report.count(Status::Pass),
        report.count(Status::Fail),
        report.count(Status::Skip)
    ));
    ctx.write_json(report, "lemmas.json", &rows)
}

fn sweep(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let cfg = SweepConfig {
        q_list: ctx.cfg.q_list.clone(),
        l: ctx.cfg.l,
        a: ctx.a,
        b: ctx.cfg.b,
        prefix: ctx.prefix()?,
        x: ctx.cfg.base_point,
        r_coefficient: ctx.cfg.r_coefficient,
        eigen: ctx.cfg.eigen(),
        record_timings: ctx.cfg.record_timings,
    };
    let sweep = main_sweep(ctx.spec, &cfg, ctx.guards())?;
    write_sweep_csv(&sweep, fs::File::create(ctx.out.join("sweep.csv"))?)?;
    report.artifacts.push("sweep.csv".into());
    report.fit("r_coefficient", sweep.r_coefficient);
    match sweep.alpha {
        Some(alpha) => {
            report.fit("alpha", alpha);
            report.check("decay_exponent", alpha >= ALPHA_MIN, format!("alpha = {alpha:.4}"));
        }
        None => report.skip("decay_exponent", "fewer than two computed moduli"),
    }
    report.check(
        "non_square_free_gaps",
        sweep.non_square_free_gaps_positive(),
        "every computed non-square-free modulus has ratio < 1",
    );
    // Smallest against largest computed power of each prime.
    let mut by_prime: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for row in &sweep.rows {
        let Some(ratio) = row.ratio else { continue };
        let m = Modulus::new(row.q)?;
        if let [(p, _)] = m.factorization() {
            by_prime.entry(*p).or_default().push((row.q, ratio));
        }
    }
    for (p, mut powers) in by_prime {
        powers.sort_by_key(|x| x.0);
        if let (Some(lo), Some(hi)) = (powers.first(), powers.last()) {
            if lo.0 != hi.0 && lo.0 != p {
                report.check(
                    format!("prime_power_ratio_{}_{}", lo.0, hi.0),
                    hi.1 < lo.1,
                    format!("ratio {:.6} at q = {}, {:.6} at q = {}", lo.1, lo.0, hi.1, hi.0),
                );
            }
        }
    }
    for row in &sweep.rows {
        report.lines.push(match (&row.skipped_reason, row.ratio) {
            (Some(reason), _) => format!("q = {}: skipped ({reason})", row.q),
            (None, Some(r)) => format!("q = {}: ratio {r:.6}, q^-1/4 = {:.6}", row.q, row.q_pow_minus_quarter),
            _ => format!("q = {}: no ratio", row.q),
        });
    }
    Ok(())
}

fn schottky_check(ctx: &Ctx, report: &mut RunReport) -> Result<()> {
    let schottky = match ctx.spec.mode() {
        Mode::SchottkySubshift => ctx.spec.clone(),
        Mode::ZarembaFullShift => build_system(&SystemConfig::default_schottky())?,
    };
    let l = ctx.cfg.l.max(3);
    if let (Ok(g), Ok(ginv)) = (schottky.word_by_labels(&["g"]), schottky.word_by_labels(&["g^-1"])) {
        let mut found: Vec<String> = inner_slots(&schottky, &g, Some(&ginv))
            .iter()
            .map(|s| schottky.label(s))
            .collect();
        found.sort();
        let mut expected: Vec<String> = ["gh", "gh^-1", "hg^-1", "hh", "h^-1g^-1", "h^-1h^-1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        expected.sort();
        report.check("inner_pairs", found == expected, found.join(", "));
    } else {
        report.skip("inner_pairs", "generators are not labelled g, h");
    }
    let outers = outer_words(&schottky, l, ctx.guards())?;
    let empty = outers
        .iter()
        .flat_map(|o| outers.iter().map(move |p| (o, p)))
        .filter(|(o, p)| inner_slots(&schottky, o, Some(p)).is_empty())
        .count();
    report.check(
        "inner_slots_nonempty",
        empty == 0,
        format!("{empty} empty slots over {} contexts", outers.len() * outers.len()),
    );
    let zaremba = match ctx.spec.mode() {
        Mode::ZarembaFullShift => ctx.spec.clone(),
        Mode::SchottkySubshift => build_system(&SystemConfig::zaremba(&[1, 2]))?,
    };
    let mut rows = Vec::new();
    for &q in &ctx.cfg.q_list {
        let g = match ctx.group(q)? {
            Ok(g) => g,
            Err(reason) => {
                report.skip(format!("schottky_generates_q{q}"), reason);
                continue;
            }
        };
        let lower = zariski_check(&g, &digit_quotients(&g, zaremba.digits())?);
        report.check(
            format!("lower_triangular_rejected_q{q}"),
            !lower.full,
            format!("subgroup of order {} in {}", lower.subgroup_order, lower.group_order),
        );
        let blocks = zariski_check(&g, &pair_quotients(&g, &letter_indices(&zaremba, &g)?));
        report.check(
            format!("block_pairs_generate_q{q}"),
            blocks.full,
            format!("subgroup of order {} in {}", blocks.subgroup_order, blocks.group_order),
        );
        let slots = system_generates(&schottky, &g, l, ctx.guards())?;
        if slots.full {
            report.check(format!("schottky_generates_q{q}"), true, "full group in every context");
        } else {
            report.skip(
                format!("schottky_generates_q{q}"),
                format!(
                    "proper subgroup of order {} in {}; modulus excluded",
                    slots.subgroup_order, slots.group_order
                ),
            );
        }
        rows.push(vec![
            q.to_string(),
            g.order().to_string(),
            lower.subgroup_order.to_string(),
            blocks.subgroup_order.to_string(),
            slots.subgroup_order.to_string(),
        ]);
    }
    ctx.write_csv(
        report,
        "generation.csv",
        &[
            "q",
            "group_order",
            "lower_triangular",
            "zaremba_block_pairs",
            "schottky_slots_worst",
        ],
        &rows,
    )
}
