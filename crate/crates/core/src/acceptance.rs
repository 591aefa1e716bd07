//! Acceptance suite shared by the test target and `liftrec selftest`.
//!
//! Each criterion returns an [`Outcome`]; nothing here panics on failure.
//! The noisy sweeps of criteria 3 and 11 are computed once in
//! [`InternalRateStudy`] and [`CalderonStudy`] and reused by criterion 8.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calderon::{self, CalderonMode, CalderonProblem, CalderonSystem, StudyRow};
use crate::certify::{self, BoundReport};
use crate::error::Result;
use crate::hilbert::Grid1D;
use crate::internal::{self, InternalProblem, InternalSpaces, RecoveryMode};
use crate::lowrank::{self, RankOneModel, SubdiffForm, DEFAULT_MARGIN};
use crate::pde1d::Potential1D;
use crate::quadratic::{self, QuadraticInstance};
use crate::solvers::{self, AffineOperator, PsdMode, SolverOptions};

/// Result of one criterion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Outcome {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.2} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

struct Builder {
    id: u8,
    name: &'static str,
    start: Instant,
    metrics: BTreeMap<String, f64>,
}

impl Builder {
    fn new(id: u8, name: &'static str) -> Self {
        Builder { id, name, start: Instant::now(), metrics: BTreeMap::new() }
    }

    fn metric(&mut self, key: impl Into<String>, v: f64) {
        self.metrics.insert(key.into(), v);
    }

    fn finish(self, pass: bool, detail: String) -> Outcome {
        Outcome {
            id: self.id,
            name: self.name.to_string(),
            pass,
            detail,
            seconds: self.start.elapsed().as_secs_f64(),
            metrics: self.metrics,
        }
    }

    fn error(self, e: crate::Error) -> Outcome {
        self.finish(false, format!("error: {e}"))
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = gaussian_vector(rng, n);
    &v / v.norm()
}

/// Step potential `1 + q0·𝟙_(0.4,0.6)` with `f ≡ 1`.
pub fn step_problem(spaces: &InternalSpaces, q0: f64) -> Result<InternalProblem> {
    let q = Potential1D::step(&spaces.grid, 1.0, q0, 0.4, 0.6)?;
    InternalProblem::new(spaces, &q, 1.0, 1.0)
}

/// Deltas of the noisy sweeps.
pub const DELTAS: [f64; 4] = [1e-2, 3e-3, 1e-3, 3e-4];

// criterion 1

/// Bisection for `lhs = 1` on the lower bracket `[−0.99, 0]` and on an upper
/// bracket grown from `[0, 2]`.
pub fn criterion_1() -> Outcome {
    let mut b = Builder::new(1, "q0 interval of the sufficient condition");
    let run = || -> Result<(Option<f64>, Option<f64>, f64, f64)> {
        let grid = Grid1D::new(401, 0.0, 1.0)?;
        let spaces = InternalSpaces::new(&grid)?;
        let lower = internal::locate_condition_threshold(&spaces, -0.99, 0.0, 0.4, 0.6, 1.0, 1e-6)?;
        let mut hi = 2.0;
        let mut upper = None;
        while hi <= 64.0 {
            upper = internal::locate_condition_threshold(&spaces, 0.0, hi, 0.4, 0.6, 1.0, 1e-6)?;
            if upper.is_some() {
                break;
            }
            hi *= 2.0;
        }
        let at_lo = internal::step_condition(&spaces, -0.7, 0.4, 0.6, 1.0)?.lhs_normalized;
        let at_hi = internal::step_condition(&spaces, 0.8, 0.4, 0.6, 1.0)?.lhs_normalized;
        Ok((lower, upper, at_lo, at_hi))
    };
    match run() {
        Ok((lower, upper, at_lo, at_hi)) => {
            b.metric("lhs_at_-0.7", at_lo);
            b.metric("lhs_at_0.8", at_hi);
            if let Some(l) = lower {
                b.metric("lower", l);
            }
            if let Some(u) = upper {
                b.metric("upper", u);
            }
            let lo_ok = lower.is_some_and(|l| (-0.75..=-0.65).contains(&l));
            let hi_ok = upper.is_some_and(|u| (0.75..=0.85).contains(&u));
            let elapsed = b.start.elapsed().as_secs_f64();
            let fmt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.4}"));
            let detail = format!(
                "lower {} (want [-0.75,-0.65]), upper {} (want [0.75,0.85]); lhs(-0.7) = {at_lo:.4}, lhs(0.8) = {at_hi:.4}",
                fmt(lower),
                fmt(upper)
            );
            b.finish(lo_ok && hi_ok && elapsed <= 10.0, detail)
        }
        Err(e) => b.error(e),
    }
}

// criterion 2

pub const EXACT_Q0: [f64; 3] = [-0.3, 0.3, 0.5];

pub fn criterion_2() -> Outcome {
    let mut b = Builder::new(2, "exact internal recovery");
    let run = |b: &mut Builder| -> Result<bool> {
        let grid = Grid1D::new(41, 0.0, 1.0)?;
        let spaces = InternalSpaces::new(&grid)?;
        let mut ok = true;
        for q0 in EXACT_Q0 {
            let t = Instant::now();
            let p = step_problem(&spaces, q0)?;
            let cert = internal::certify_internal(&p, DEFAULT_MARGIN)?;
            let rec = internal::recover_internal(&p, &p.noiseless()?, RecoveryMode::Exact, &SolverOptions::default())?;
            let err = rec.relative_error(&p);
            let secs = t.elapsed().as_secs_f64();
            b.metric(format!("w_norm[{q0}]"), cert.least_norm.max_w_norm());
            b.metric(format!("err[{q0}]"), err);
            b.metric(format!("rank_ratio[{q0}]"), rec.rank_ratio);
            ok &= cert.ndsc_pass() && err <= 1e-3 && rec.rank_ratio <= 1e-4 && secs <= 120.0;
        }
        Ok(ok)
    };
    match run(&mut b) {
        Ok(ok) => {
            let detail = EXACT_Q0
                .iter()
                .map(|q0| {
                    format!(
                        "q0={q0}: w={:.3} err={:.1e} s2/s1={:.1e}",
                        b.metrics[&format!("w_norm[{q0}]")],
                        b.metrics[&format!("err[{q0}]")],
                        b.metrics[&format!("rank_ratio[{q0}]")]
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            b.finish(ok, detail)
        }
        Err(e) => b.error(e),
    }
}

// criteria 3 and 8 (internal part)

/// One noisy internal solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyPoint {
    pub delta: f64,
    pub seed: u64,
    pub data_error: f64,
    pub error: f64,
    pub bounds: Option<BoundReport>,
}

/// Noisy sweep for the step potential `q0 = 0.5`, `n = 41`, `λ = δ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InternalRateStudy {
    pub points: Vec<NoisyPoint>,
    pub medians: Vec<f64>,
    pub slope: f64,
    pub seconds: f64,
}

pub const RATE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub fn internal_rate_study() -> Result<InternalRateStudy> {
    let start = Instant::now();
    let grid = Grid1D::new(41, 0.0, 1.0)?;
    let spaces = InternalSpaces::new(&grid)?;
    let p = step_problem(&spaces, 0.5)?;
    let op = internal::assemble_internal_operator(&p)?;
    let cert = internal::certify_internal(&p, DEFAULT_MARGIN)?.least_norm;
    let pvec = cert.p.clone().expect("least-norm certificate carries p");
    let c = 1.0;
    let mut points = Vec::new();
    let mut medians = Vec::new();
    for &delta in &DELTAS {
        let mut errs = Vec::new();
        for &seed in &RATE_SEEDS {
            let m = p.noisy(delta, seed)?;
            let rec = internal::recover_with_operator(&p, &op, &m, RecoveryMode::Noisy { c }, &SolverOptions::default())?;
            let err = rec.relative_error(&p);
            // bounds with the measured data error and the matching c
            let bounds = certify::robustness_bounds(
                &op,
                std::slice::from_ref(&rec.f_hat_whitened),
                &[p.model()],
                &cert.h,
                &pvec,
                c * delta / m.data_error,
                m.data_error,
            )?;
            errs.push(err);
            points.push(NoisyPoint { delta, seed, data_error: m.data_error, error: err, bounds: Some(bounds) });
        }
        medians.push(median(&errs));
    }
    let slope = loglog_slope(&DELTAS, &medians);
    Ok(InternalRateStudy { points, medians, slope, seconds: start.elapsed().as_secs_f64() })
}

pub fn criterion_3(study: &Result<InternalRateStudy>) -> Outcome {
    let mut b = Builder::new(3, "linear robustness rate, internal");
    match study {
        Ok(s) => {
            b.metric("slope", s.slope);
            for (d, m) in DELTAS.iter().zip(&s.medians) {
                b.metric(format!("median_err[{d}]"), *m);
            }
            let meds = s.medians.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>().join(", ");
            let ok = (0.8..=1.2).contains(&s.slope);
            let mut out = b.finish(ok, format!("slope {:.3} (want [0.8,1.2]); median errors {meds}", s.slope));
            out.seconds = s.seconds;
            out
        }
        Err(e) => b.finish(false, format!("error: {e}")),
    }
}

// criterion 4

pub fn criterion_4() -> Outcome {
    let mut b = Builder::new(4, "closed-form certificate dominance");
    let run = |b: &mut Builder| -> Result<(bool, usize, f64)> {
        let grid = Grid1D::new(41, 0.0, 1.0)?;
        let spaces = InternalSpaces::new(&grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst_margin = f64::INFINITY;
        let mut worst_form = 0.0_f64;
        let mut fails = 0;
        for _ in 0..50 {
            let (amp, k, phase, q0) =
                (rng.random_range(0.0..0.5), rng.random_range(1..5) as f64, rng.random_range(0.0..6.3), rng.random_range(-0.5..1.0));
            let vals = grid.nodes.map(|x| {
                let step = if x > 0.3 && x < 0.7 { q0 } else { 0.0 };
                1.0 + amp * (k * std::f64::consts::PI * x + phase).sin() + step
            });
            let q = Potential1D::new(&grid, vals)?;
            let f = rng.random_range(0.5..2.0);
            let p = InternalProblem::new(&spaces, &q, f, f)?;
            let scale = p.q_ref.l2_norm(&grid);
            let (lo, hi) = (p.q_ref.inf / scale - 0.5, p.q_ref.sup / scale + 0.5);
            let alpha = rng.random_range(lo..hi);
            let (exact, bound) = internal::certificate_norm(&p, alpha)?;
            worst_margin = worst_margin.min(bound + 1e-9 - exact);
            if exact > bound + 1e-9 {
                fails += 1;
            }
            let c = internal::sufficient_condition(&p);
            let rel = (c.lhs_normalized - c.lhs_unnormalized).abs() / c.lhs_normalized.abs().max(1e-300);
            worst_form = worst_form.max(rel);
        }
        b.metric("min_slack", worst_margin);
        b.metric("max_form_mismatch", worst_form);
        Ok((fails == 0 && worst_form <= 1e-10, fails, worst_form))
    };
    match run(&mut b) {
        Ok((ok, fails, form)) => {
            let slack = b.metrics["min_slack"];
            b.finish(ok, format!("{fails}/50 violations, min slack {slack:.2e}; condition forms differ by {form:.1e}"))
        }
        Err(e) => b.error(e),
    }
}

// criterion 5

/// Random tangent elements `u aᵀ + b vᵀ` at `model`.
fn random_tangent(rng: &mut ChaCha8Rng, model: &RankOneModel) -> DMatrix<f64> {
    let a = gaussian_vector(rng, model.v.len());
    let bb = gaussian_vector(rng, model.u.len());
    let s: f64 = rng.random_range(-3.0..3.0);
    (&model.u * a.transpose() + bb * model.v.transpose()) * 10f64.powf(s)
}

pub fn criterion_5() -> Outcome {
    let mut b = Builder::new(5, "a-priori estimate on the tangent space");
    let run = |b: &mut Builder| -> Result<bool> {
        let grid = Grid1D::new(41, 0.0, 1.0)?;
        let spaces = InternalSpaces::new(&grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ok = true;
        let mut worst: f64 = 0.0;
        for q0 in EXACT_Q0 {
            let p = step_problem(&spaces, q0)?;
            let op = internal::assemble_internal_operator(&p)?;
            let model = p.model();
            let c_phi = internal::apriori_constant(&p);
            let smin = certify::tangent_injectivity(&op, std::slice::from_ref(&model), certify::TangentKind::General)?;
            b.metric(format!("c_phi[{q0}]"), c_phi);
            b.metric(format!("inv_sigma_min[{q0}]"), 1.0 / smin);
            ok &= 1.0 / smin <= c_phi;
            for _ in 0..500 / EXACT_Q0.len() + 1 {
                let f = random_tangent(&mut rng, &model);
                let lhs = f.norm();
                let rhs = c_phi * op.apply(std::slice::from_ref(&f))?.norm();
                worst = worst.max(lhs / rhs);
                ok &= lhs <= rhs + 1e-9;
            }
        }
        b.metric("max_ratio_over_cphi", worst);
        Ok(ok)
    };
    match run(&mut b) {
        Ok(ok) => {
            let parts = EXACT_Q0
                .iter()
                .map(|q0| {
                    format!(
                        "q0={q0}: C={:.3} 1/smin={:.3}",
                        b.metrics[&format!("c_phi[{q0}]")],
                        b.metrics[&format!("inv_sigma_min[{q0}]")]
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            let w = b.metrics["max_ratio_over_cphi"];
            b.finish(ok, format!("501 samples, max ||F||/(C||PhiF||) = {w:.3}; {parts}"))
        }
        Err(e) => b.error(e),
    }
}

// criterion 6

pub fn criterion_6() -> Outcome {
    let b = Builder::new(6, "subdifferential characterizations and projectors");
    let run = || -> Result<(usize, usize, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut disagreements = 0;
        let mut members = 0;
        let mut proj_err: f64 = 0.0;
        for k in 0..200 {
            let r = rng.random_range(2..7);
            let c = rng.random_range(2..7);
            let model = RankOneModel::new(rng.random_range(0.1..5.0), unit_vector(&mut rng, r), unit_vector(&mut rng, c))?;
            let g = gaussian_matrix(&mut rng, r, c);
            let w = lowrank::project_tangent_complement(&g, &model)?;
            let wn = lowrank::operator_norm(&w)?;
            let h = match k % 4 {
                // inside: ‖W‖ < 1
                0 => model.direction() + &w * (rng.random_range(0.05..0.95) / wn),
                // outside through the norm
                1 => model.direction() + &w * (rng.random_range(1.05..2.0) / wn),
                // outside through the tangent part
                2 => {
                    let t = lowrank::project_tangent(&gaussian_matrix(&mut rng, r, c), &model)?;
                    model.direction() + &w * (0.5 / wn) + t * 0.1
                }
                // generic
                _ => g.clone(),
            };
            let verdicts: Vec<bool> = SubdiffForm::ALL
                .iter()
                .map(|&f| lowrank::subdiff_check(&h, &model, f, false).map(|r| r.holds))
                .collect::<Result<_>>()?;
            if verdicts.iter().any(|&v| v != verdicts[0]) {
                disagreements += 1;
            }
            members += verdicts[0] as usize;
            let m = gaussian_matrix(&mut rng, r, c);
            let pt = lowrank::project_tangent(&m, &model)?;
            let pc = lowrank::project_tangent_complement(&m, &model)?;
            let scale = m.norm();
            proj_err = proj_err
                .max((lowrank::project_tangent(&pt, &model)? - &pt).norm() / scale)
                .max((lowrank::project_tangent_complement(&pc, &model)? - &pc).norm() / scale)
                .max(pt.dot(&pc).abs() / (scale * scale))
                .max((&pt + &pc - &m).norm() / scale)
                .max((pc.norm() - m.norm()).max(0.0) / scale)
                .max((lowrank::operator_norm(&pc)? - lowrank::operator_norm(&m)?).max(0.0) / scale);
            let m2 = gaussian_matrix(&mut rng, r, c);
            let pc2 = lowrank::project_tangent_complement(&m2, &model)?;
            proj_err = proj_err.max(((&pc - &pc2).norm() - (&m - &m2).norm()).max(0.0) / scale);
        }
        Ok((disagreements, members, proj_err))
    };
    match run() {
        Ok((dis, mem, pe)) => {
            let mut b = b;
            b.metric("disagreements", dis as f64);
            b.metric("members", mem as f64);
            b.metric("projector_error", pe);
            b.finish(dis == 0 && pe <= 1e-10, format!("200 instances ({mem} members), {dis} disagreements; projector identities to {pe:.1e}"))
        }
        Err(e) => b.error(e),
    }
}

// criterion 7

fn gap_check(
    name: &str,
    op: &AffineOperator,
    z: &DVector<f64>,
    b: &mut Builder,
) -> Result<(bool, bool)> {
    let (f, rep) = solvers::solve_equality_nnm(op, z, &SolverOptions::default())?;
    if !rep.converged() {
        return Ok((false, true));
    }
    let p = rep.dual.as_ref().expect("equality solves return a dual vector");
    let g = solvers::duality_gap(&f, p, op, z)?;
    let obj: f64 = f.iter().map(lowrank::nuclear_norm).sum::<Result<f64>>()?;
    let pairing = g.per_block.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    b.metric(format!("gap[{name}]"), g.gap / (1.0 + obj));
    b.metric(format!("pairing[{name}]"), pairing);
    Ok((g.gap.abs() <= 1e-6 * (1.0 + obj) && pairing <= 1e-6 && g.dual_feasible, false))
}

pub fn criterion_7() -> Outcome {
    let mut b = Builder::new(7, "duality on converged equality solves");
    let run = |b: &mut Builder| -> Result<(bool, usize, usize)> {
        let grid = Grid1D::new(41, 0.0, 1.0)?;
        let spaces = InternalSpaces::new(&grid)?;
        let mut ok = true;
        let (mut solved, mut skipped) = (0, 0);
        for q0 in EXACT_Q0 {
            let p = step_problem(&spaces, q0)?;
            let op = internal::assemble_internal_operator(&p)?;
            let (pass, skip) = gap_check(&format!("internal q0={q0}"), &op, &p.noiseless()?.z, b)?;
            ok &= pass;
            if skip { skipped += 1 } else { solved += 1 }
        }
        // two-block matrix sensing with a rank-one truth per block
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..3 {
            let shapes = vec![(5, 4), (4, 6)];
            let dim: usize = shapes.iter().map(|(r, c)| r * c).sum();
            let m = 36;
            let a = gaussian_matrix(&mut rng, m, dim) / (m as f64).sqrt();
            let op = AffineOperator::from_dense(shapes.clone(), a)?;
            let truth: Vec<DMatrix<f64>> = shapes
                .iter()
                .map(|&(r, c)| gaussian_vector(&mut rng, r) * gaussian_vector(&mut rng, c).transpose())
                .collect();
            let z = op.apply(&truth)?;
            let (pass, skip) = gap_check(&format!("sensing {trial}"), &op, &z, b)?;
            ok &= pass;
            if skip { skipped += 1 } else { solved += 1 }
        }
        Ok((ok, solved, skipped))
    };
    match run(&mut b) {
        Ok((ok, solved, skipped)) => {
            let gap = b.metrics.iter().filter(|(k, _)| k.starts_with("gap")).fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
            let pair = b.metrics.iter().filter(|(k, _)| k.starts_with("pairing")).fold(0.0_f64, |m, (_, v)| m.max(*v));
            b.finish(
                ok && solved > 0,
                format!("{solved} converged solves ({skipped} not converged); max relative gap {gap:.1e}, max pairing defect {pair:.1e}"),
            )
        }
        Err(e) => b.error(e),
    }
}

// criterion 8

pub fn criterion_8(internal: &Result<InternalRateStudy>, calderon: &Result<CalderonStudy>) -> Outcome {
    let mut b = Builder::new(8, "noisy-recovery bounds");
    let mut all: Vec<&BoundReport> = Vec::new();
    match internal {
        Ok(s) => all.extend(s.points.iter().filter_map(|p| p.bounds.as_ref())),
        Err(e) => return b.finish(false, format!("internal study failed: {e}")),
    }
    let n_internal = all.len();
    match calderon {
        Ok(s) => all.extend(s.noisy.iter().filter_map(|p| p.bounds.as_ref())),
        Err(e) => return b.finish(false, format!("Calderón study failed: {e}")),
    }
    let n_cal = all.len() - n_internal;
    let breg = all.iter().all(|r| r.bregman <= r.bregman_bound + certify::BOUND_SLACK);
    let pred = all.iter().all(|r| r.prediction <= r.prediction_bound + certify::BOUND_SLACK);
    let worst_b = all.iter().fold(0.0_f64, |m, r| m.max(r.bregman / r.bregman_bound));
    let worst_p = all.iter().fold(0.0_f64, |m, r| m.max(r.prediction / r.prediction_bound));
    b.metric("max_bregman_ratio", worst_b);
    b.metric("max_prediction_ratio", worst_p);
    let expected = RATE_SEEDS.len() * DELTAS.len();
    let complete = n_internal == expected && n_cal > 0;
    b.finish(
        breg && pred && complete,
        format!(
            "{n_internal} internal + {n_cal} Calderón solves; max D_H/bound {worst_b:.3}, max prediction/bound {worst_p:.3}"
        ),
    )
}

// criterion 9

/// Membership of `(m − out)/τ` in `∂‖·‖_*(out)`: returns the equality
/// defect and `‖P_T⊥ G‖` for the tangent space of `out`.
pub fn svt_kkt_defect(m: &DMatrix<f64>, out: &DMatrix<f64>, tau: f64) -> Result<(f64, f64)> {
    let g = (m - out) / tau;
    let d = lowrank::svd(out)?;
    let top = d.s.iter().fold(0.0_f64, |a, &x| a.max(x));
    let r = d.s.iter().filter(|&&s| s > 1e-12 * top.max(1.0)).count();
    if r == 0 {
        return Ok((0.0, lowrank::operator_norm(&g)?));
    }
    let u = d.u.columns(0, r).into_owned();
    let v = d.v_t.rows(0, r).transpose();
    let pu = &u * u.transpose();
    let pv = &v * v.transpose();
    let pt = &pu * &g + &g * &pv - &pu * &g * &pv;
    let eq = (&pt - &u * v.transpose()).norm();
    Ok((eq, lowrank::operator_norm(&(&g - &pt))?))
}

/// `argmin ½‖X − M‖² + τ‖X‖_*` through the factorization `X = ABᵀ`,
/// `‖X‖_* = min ½(‖A‖² + ‖B‖²)`, by gradient descent with backtracking.
pub fn factorized_prox_oracle(m: &DMatrix<f64>, tau: f64, seed: u64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let k = r.min(c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian_matrix(&mut rng, r, k) * 0.5;
    let mut bm = gaussian_matrix(&mut rng, c, k) * 0.5;
    let obj = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        0.5 * (a * b.transpose() - m).norm_squared() + 0.5 * tau * (a.norm_squared() + b.norm_squared())
    };
    let mut step = 0.1;
    let mut f = obj(&a, &bm);
    for _ in 0..100_000 {
        let res = &a * bm.transpose() - m;
        let ga = &res * &bm + &a * tau;
        let gb = res.transpose() * &a + &bm * tau;
        let gn = ga.norm_squared() + gb.norm_squared();
        if gn < 1e-28 {
            break;
        }
        loop {
            let a2 = &a - &ga * step;
            let b2 = &bm - &gb * step;
            let f2 = obj(&a2, &b2);
            if f2 <= f - 0.5 * step * gn {
                a = a2;
                bm = b2;
                f = f2;
                step *= 1.2;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break;
            }
        }
    }
    a * bm.transpose()
}

pub fn criterion_9() -> Outcome {
    let mut b = Builder::new(9, "singular value thresholding");
    let run = |b: &mut Builder| -> Result<(usize, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut fails = 0;
        let mut worst_eq: f64 = 0.0;
        for _ in 0..100 {
            let r = rng.random_range(1..8);
            let c = rng.random_range(1..8);
            let m = gaussian_matrix(&mut rng, r, c) * rng.random_range(0.1..10.0);
            let s1 = lowrank::operator_norm(&m)?;
            let tau = s1 * rng.random_range(0.05..1.2);
            let out = lowrank::svt_prox(&m, tau)?;
            let (eq, wn) = svt_kkt_defect(&m, &out, tau)?;
            worst_eq = worst_eq.max(eq);
            if eq > 1e-8 || wn > 1.0 + 1e-8 {
                fails += 1;
            }
        }
        let mut worst_oracle: f64 = 0.0;
        for k in 0..5 {
            let m = gaussian_matrix(&mut rng, 3, 3);
            let out = lowrank::svt_prox(&m, 0.7)?;
            let oracle = factorized_prox_oracle(&m, 0.7, 100 + k);
            worst_oracle = worst_oracle.max((&out - oracle).amax());
        }
        b.metric("kkt_failures", fails as f64);
        b.metric("max_kkt_equality_defect", worst_eq);
        b.metric("max_oracle_gap", worst_oracle);
        Ok((fails, worst_eq, worst_oracle))
    };
    match run(&mut b) {
        Ok((fails, eq, orc)) => b.finish(
            fails == 0 && orc <= 1e-6,
            format!("KKT: {fails}/100 failures (max defect {eq:.1e}); 3x3 oracle gap {orc:.1e}"),
        ),
        Err(e) => b.error(e),
    }
}

// criterion 10

pub const PHASELIFT_SEEDS: [u64; 3] = [1, 2, 3];

pub fn criterion_10() -> Outcome {
    let mut b = Builder::new(10, "PhaseLift, n = 5, m = 20");
    let run = |b: &mut Builder| -> Result<(bool, String)> {
        let opts = SolverOptions::default();
        let mut ok = true;
        let mut certified: Option<(u64, QuadraticInstance, certify::CertificateReport)> = None;
        let mut parts = Vec::new();
        for seed in PHASELIFT_SEEDS {
            let inst = quadratic::make_phase_retrieval(5, 20, seed)?;
            let x = inst.x_true.clone().expect("generated with truth");
            let rec = quadratic::recover_phaselift(&inst, &inst.z, PsdMode::Exact, &opts)?;
            let err = rec.sign_aligned_error(&x);
            let cert = quadratic::certify_phaselift(&inst, DEFAULT_MARGIN)?;
            b.metric(format!("err[seed {seed}]"), err);
            b.metric(format!("w_norm[seed {seed}]"), cert.max_w_norm());
            parts.push(format!("seed {seed}: err {err:.1e} w {:.3}", cert.max_w_norm()));
            ok &= err <= 1e-3;
            if cert.ndsc_pass && certified.is_none() {
                certified = Some((seed, inst, cert));
            }
        }
        match certified {
            Some((seed, inst, cert)) => {
                let x = inst.x_true.clone().expect("generated with truth");
                let mut meds = Vec::new();
                for &delta in &DELTAS {
                    let errs: Vec<f64> = (0..3)
                        .map(|s| {
                            quadratic::noisy_phaselift(&inst, delta, 1.0, 1000 + s, Some(&cert), &opts)
                                .map(|r| r.recovery.sign_aligned_error(&x))
                        })
                        .collect::<Result<_>>()?;
                    meds.push(median(&errs));
                }
                let slope = loglog_slope(&DELTAS, &meds);
                b.metric("slope", slope);
                ok &= (0.8..=1.2).contains(&slope);
                parts.push(format!("noisy slope {slope:.3} on seed {seed}"));
            }
            None => {
                ok = false;
                parts.push("no seed verified the certificate".into());
            }
        }
        Ok((ok, parts.join("; ")))
    };
    match run(&mut b) {
        Ok((ok, detail)) => {
            let fast = b.start.elapsed().as_secs_f64() <= 60.0;
            b.finish(ok && fast, detail)
        }
        Err(e) => b.error(e),
    }
}

// criteria 11 and 8 (Calderón part)

/// Hat values of `q†` for the 17 × 17 configuration.
pub const CALDERON_HATS: [f64; 4] = [1.0, 1.5, 2.0, 1.2];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalderonNoisyPoint {
    pub delta: f64,
    pub error: f64,
    pub iterations: usize,
    pub bounds: Option<BoundReport>,
}

/// The 17 × 17, `m = 4`, `N = 4` run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalderonStudy {
    pub truth_residual: f64,
    pub adjoint_mismatch: f64,
    pub table: Vec<StudyRow>,
    pub w_norm: f64,
    pub tangent_residual: f64,
    pub ndsc_pass: bool,
    pub exact_error: Option<f64>,
    pub exact_residual: Option<f64>,
    pub noisy: Vec<CalderonNoisyPoint>,
    pub noisy_slope: Option<f64>,
    pub seconds: f64,
}

pub fn calderon_study() -> Result<CalderonStudy> {
    let start = Instant::now();
    let p = CalderonProblem::unit_square(17, 2, 4, &CALDERON_HATS)?;
    let sys = CalderonSystem::new(&p)?;
    let clean = p.measurements(None)?;
    let truth_residual = (p.apply_values(&sys.op, &p.truth_stack())? - &clean.z).norm();
    let adjoint_mismatch = sys.op.adjoint_mismatch(100, 11);
    let table = calderon::precertificate_study(&p, &[1, 2, 3])?
        .into_iter()
        .chain(std::iter::once(calderon::certify_with_operator(&p, &sys.op, DEFAULT_MARGIN)?.1))
        .collect::<Vec<_>>();
    let (cert, row) = calderon::certify_with_operator(&p, &sys.op, DEFAULT_MARGIN)?;
    let opts = SolverOptions::default();
    let mut study = CalderonStudy {
        truth_residual,
        adjoint_mismatch,
        table,
        w_norm: row.w_norm,
        tangent_residual: row.tangent_residual,
        ndsc_pass: row.ndsc_pass,
        exact_error: None,
        exact_residual: None,
        noisy: Vec::new(),
        noisy_slope: None,
        seconds: 0.0,
    };
    if row.w_norm < 1.0 {
        let rec = calderon::recover_calderon(&p, &sys, &clean, CalderonMode::Exact, &opts)?;
        study.exact_error = Some(rec.relative_error(&p));
        study.exact_residual = Some(rec.constraint_residual);
    }
    if let Some(cert) = cert.filter(|c| c.ndsc_pass) {
        let pvec = cert.p.clone().expect("least-norm certificate carries p");
        let models = p.models()?;
        let c = 1.0;
        for &delta in &DELTAS {
            let m = p.measurements(Some((delta, 3)))?;
            let rec = calderon::recover_calderon(&p, &sys, &m, CalderonMode::Noisy { c }, &opts)?;
            let fw: Vec<DMatrix<f64>> = rec.stack.iter().map(|f| f.whiten()).collect();
            let bounds =
                certify::robustness_bounds(&sys.op, &fw, &models, &cert.h, &pvec, c * delta / m.data_error, m.data_error)?;
            study.noisy.push(CalderonNoisyPoint {
                delta,
                error: rec.relative_error(&p),
                iterations: rec.report.iterations,
                bounds: Some(bounds),
            });
        }
        let errs: Vec<f64> = study.noisy.iter().map(|n| n.error).collect();
        study.noisy_slope = Some(loglog_slope(&DELTAS, &errs));
    }
    study.seconds = start.elapsed().as_secs_f64();
    Ok(study)
}

pub fn criterion_11(study: &Result<CalderonStudy>) -> Outcome {
    let mut b = Builder::new(11, "Calderón pipeline, 17 x 17, m = 4, N = 4");
    let s = match study {
        Ok(s) => s,
        Err(e) => return b.finish(false, format!("error: {e}")),
    };
    b.metric("truth_residual", s.truth_residual);
    b.metric("adjoint_mismatch", s.adjoint_mismatch);
    b.metric("tangent_residual", s.tangent_residual);
    b.metric("w_norm", s.w_norm);
    let table = s
        .table
        .iter()
        .map(|r| format!("N={}: {:.3}", r.count, r.w_norm))
        .collect::<Vec<_>>()
        .join(", ");
    let mut ok = s.truth_residual <= 1e-9 && s.tangent_residual <= 1e-8 && s.table.len() == 4;
    let mut detail = format!(
        "F† residual {:.1e}, tangent residual {:.1e}, w_norm table [{table}]",
        s.truth_residual, s.tangent_residual
    );
    if s.w_norm < 1.0 {
        let err = s.exact_error.unwrap_or(f64::INFINITY);
        b.metric("exact_error", err);
        ok &= err <= 1e-2;
        detail.push_str(&format!(", exact recovery error {err:.1e}"));
    }
    if let Some(slope) = s.noisy_slope {
        b.metric("noisy_slope", slope);
        detail.push_str(&format!(", noisy slope {slope:.3}"));
    }
    ok &= s.seconds <= 600.0;
    let mut out = b.finish(ok, detail);
    out.seconds = s.seconds;
    out
}

// criterion 12

/// Forward-difference errors of the derivative for `t = 1e−2, 1e−3, 1e−4`.
pub fn frechet_fd_errors(p: &CalderonProblem, h: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = &p.q_nodal;
    let base = calderon::forward_fluxes(p, q)?;
    let d = calderon::frechet_derivative(p, q, h)?;
    let ts = vec![1e-2, 1e-3, 1e-4];
    let errs = ts
        .iter()
        .map(|&t| {
            let shifted = calderon::forward_fluxes(p, &(q + h * t))?;
            Ok(((shifted - &base) / t - &d).norm())
        })
        .collect::<Result<_>>()?;
    Ok((ts, errs))
}

pub fn criterion_12() -> Outcome {
    let mut b = Builder::new(12, "Fréchet derivative of the forward map");
    let run = |b: &mut Builder| -> Result<(bool, String)> {
        let p = CalderonProblem::unit_square(17, 2, 4, &CALDERON_HATS)?;
        let h = p.grid.sample(|x, y| (std::f64::consts::PI * x).sin() * (1.0 + y) - 0.3);
        let (ts, errs) = frechet_fd_errors(&p, &h)?;
        let order = loglog_slope(&ts, &errs);
        let d = calderon::frechet_derivative(&p, &p.q_nodal, &h)?;
        let bil = calderon::derivative_bilinear(&p, &d);
        let asym = (&bil - bil.transpose()).amax();
        let mut profiles_ok = true;
        let mut tails = Vec::new();
        for modes in [8, 16, 32] {
            let s = calderon::compactness_diagnostic(&p, &p.q_nodal, &h, modes)?;
            profiles_ok &= s.iter().all(|&x| x >= 0.0) && s.as_slice().windows(2).all(|w| w[1] <= w[0]);
            tails.push(s[s.len() - 1] / s[0]);
        }
        b.metric("order", order);
        b.metric("asymmetry", asym);
        for (m, t) in [8, 16, 32].iter().zip(&tails) {
            b.metric(format!("tail_ratio[{m}]"), *t);
        }
        let errs_s = errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(", ");
        let tails_s = tails.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(", ");
        Ok((
            order >= 0.9 && asym <= 1e-8 && profiles_ok,
            format!("FD errors {errs_s}, order {order:.3}; asymmetry {asym:.1e}; tail/head for 8/16/32 modes {tails_s}"),
        ))
    };
    match run(&mut b) {
        Ok((ok, d)) => b.finish(ok, d),
        Err(e) => b.error(e),
    }
}

/// All criteria in order; the shared sweeps are computed once.
pub fn run_all() -> Vec<Outcome> {
    let mut out = vec![criterion_1(), criterion_2()];
    let rate = internal_rate_study();
    out.push(criterion_3(&rate));
    out.push(criterion_4());
    out.push(criterion_5());
    out.push(criterion_6());
    out.push(criterion_7());
    let cal = calderon_study();
    out.push(criterion_8(&rate, &cal));
    out.push(criterion_9());
    out.push(criterion_10());
    out.push(criterion_11(&cal));
    out.push(criterion_12());
    out
}
