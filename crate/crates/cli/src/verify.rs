//! Acceptance suite AC-1 .. AC-10.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use gradvi::oracle::{constraint_transfer, regularizing_sequence, transfer_excess};
use gradvi::{
    norm_l2, oracle_steady_state, oracle_vi_step, penalty_stress, spacetime_l2_distance, stability_experiment,
    ConstraintField, ConstraintSpec, ContinuationSchedule, EdgeField, Field, MaterialLaw, OracleOptions,
    PenaltyParams, PenaltyVariant, ProblemSpec, ScalarField, TimeGrid, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::run::{num, run_sweep, solve};
use crate::scenarios::builtin;

pub const CRITERIA: [&str; 10] = [
    "AC-1", "AC-2", "AC-3", "AC-4", "AC-5", "AC-6", "AC-7", "AC-8", "AC-9", "AC-10",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub title: String,
    pub passed: bool,
    /// Measured quantities and the thresholds they were compared with.
    pub metrics: BTreeMap<String, f64>,
    pub detail: String,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!(
            "{:<6} {}  {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub criteria: Vec<Criterion>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            let _ = writeln!(s, "{}", c.line());
        }
        s
    }

    /// Writes `acceptance.json` and `acceptance.txt`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("acceptance.json"), self.summary_json())?;
        std::fs::write(dir.join("acceptance.txt"), self.summary_text())?;
        Ok(())
    }
}

fn short(v: f64) -> String {
    if v == 0.0 || (1e-2..1e3).contains(&v.abs()) {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}

struct Check {
    metrics: BTreeMap<String, f64>,
    ok: bool,
    detail: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check {
            metrics: BTreeMap::new(),
            ok: true,
            detail: Vec::new(),
        }
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    /// Records `value <= limit`.
    fn at_most(&mut self, label: &str, value: f64, limit: f64) {
        let ok = value <= limit;
        self.ok &= ok;
        self.metric(label, value);
        self.metric(&format!("{label}_limit"), limit);
        self.detail
            .push(format!("{label} {} {} {}", short(value), if ok { "<=" } else { ">" }, short(limit)));
    }

    /// Records `value >= limit`.
    fn at_least(&mut self, label: &str, value: f64, limit: f64) {
        let ok = value >= limit;
        self.ok &= ok;
        self.metric(label, value);
        self.metric(&format!("{label}_limit"), limit);
        self.detail
            .push(format!("{label} {} {} {}", short(value), if ok { ">=" } else { "<" }, short(limit)));
    }

    fn holds(&mut self, label: &str, ok: bool) {
        self.ok &= ok;
        self.detail.push(format!("{label} {}", if ok { "yes" } else { "no" }));
    }

    fn runtime(&mut self, elapsed: Duration, limit_s: f64) {
        let ok = elapsed.as_secs_f64() < limit_s;
        self.ok &= ok;
        if !ok {
            self.detail.push(format!("runtime {:.1} s over {limit_s} s", elapsed.as_secs_f64()));
        }
    }

    fn finish(self, id: &str, title: &str) -> Criterion {
        Criterion {
            id: id.to_string(),
            title: title.to_string(),
            passed: self.ok,
            metrics: self.metrics,
            detail: self.detail.join("; "),
        }
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    builtin(name).expect("built-in scenario")
}

fn frozen(spec: &ProblemSpec) -> anyhow::Result<Vec<ConstraintField>> {
    let phi = Trajectory::constant(spec.u0(), spec.time().steps());
    Ok(spec.constraint().fields_along(phi.fields())?.fields)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn ac1(seed: u64) -> anyhow::Result<Check> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = gradvi::Grid::new_1d(1.0, 3)?;
    let mut c = Check::new();
    let mut worst_all = f64::INFINITY;
    for variant in [PenaltyVariant::MagnitudeGap, PenaltyVariant::PowerGap] {
        for p in [1.5, 2.0, 3.0] {
            let law = MaterialLaw::power_law(p, 1.0).with_mu(0.0);
            let mut worst = f64::INFINITY;
            for _ in 0..10_000 {
                let params = PenaltyParams::new(rng.gen_range(0.05..0.9), rng.gen_range(0.0..1e-2), variant)?;
                let g = ConstraintField::new(vec![rng.gen_range(0.1..2.0)])?;
                let xi = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let xj = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let op = |x: [f64; 2]| -> anyhow::Result<Vec<f64>> {
                    let s = penalty_stress(&EdgeField::new(2, x.to_vec())?, &g, &params, &law)?;
                    let a = law.eval_a([0.5, 0.0], 0.0, &x, &grid);
                    Ok(vec![s.as_slice()[0] + a[0], s.as_slice()[1] + a[1]])
                };
                let (ti, tj) = (op(xi)?, op(xj)?);
                let d = (ti[0] - tj[0]) * (xi[0] - xj[0]) + (ti[1] - tj[1]) * (xi[1] - xj[1]);
                worst = worst.min(d);
            }
            let tag = match variant {
                PenaltyVariant::MagnitudeGap => "magnitude",
                PenaltyVariant::PowerGap => "power",
            };
            c.metric(&format!("min_pairing_{tag}_p{p}"), worst);
            worst_all = worst_all.min(worst);
        }
    }
    c.at_least("min pairing", worst_all, -1e-12);
    c.runtime(start.elapsed(), 1.0);
    Ok(c)
}

fn ac2() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("vi-gradient-1d");
    let solved = solve(&cfg)?;
    if let Some(e) = &solved.summary.error {
        bail!("solve failed: {e}");
    }
    let mut c = Check::new();
    let v: Vec<f64> = solved.summary.stages.iter().map(|s| s.summary.violation).collect();
    for (i, x) in v.iter().enumerate() {
        c.metric(&format!("violation_eps_{}", num(cfg.schedule.eps[i])), *x);
    }
    c.holds("nonincreasing", v.windows(2).all(|w| w[1] <= w[0]));
    let spec = &solved.spec;
    let limit = 1e-3 * spec.constraint().bounds().0 * spec.grid().measure() * spec.time().final_time();
    c.at_most("final violation", *v.last().unwrap(), limit);
    c.runtime(start.elapsed(), 30.0);
    Ok(c)
}

/// The 16-node single-step problem used for the oracle comparison.
pub fn oracle_scenario() -> ScenarioConfig {
    let mut cfg = scenario("vi-gradient-1d");
    cfg.name = "oracle-step".into();
    cfg.grid = gradvi::Grid::new_1d(1.0, 16).expect("valid grid");
    cfg.time = TimeGrid::new(0.1, 1).expect("valid time grid");
    cfg.material = MaterialLaw::power_law(2.0, 0.1);
    let mut eps = vec![0.4, 0.2, 0.1, 0.05];
    while *eps.last().unwrap() / 2.0 > 1e-3 {
        eps.push(eps.last().unwrap() / 2.0);
    }
    eps.push(1e-3);
    cfg.schedule = ContinuationSchedule {
        eps,
        delta: vec![1e-6],
        allow_small_eps: true,
        ..Default::default()
    };
    cfg
}

fn ac3() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = oracle_scenario();
    let solved = solve(&cfg)?;
    if let Some(e) = &solved.summary.error {
        bail!("solve failed: {e}");
    }
    let spec = &solved.spec;
    let g = frozen(spec)?;
    let dt = spec.time().dt();
    let oracle = oracle_vi_step(spec.u0(), &g[1], spec, dt, dt, &OracleOptions::default())?;
    let mut c = Check::new();
    c.holds("oracle converged", oracle.converged && oracle.monotone);
    c.metric("oracle_relative_excess", oracle.relative_excess);
    c.holds("constraint active", oracle.relative_excess > -1e-6);
    let dist = solved.result.trajectory.last().sub(&oracle.field)?.max_abs();
    c.at_most("max-norm distance", dist, 1e-3);
    c.at_most("oracle KKT residual", oracle.kkt_residual, 1e-8);
    c.runtime(start.elapsed(), 120.0);
    Ok(c)
}

fn ac4() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("vi-gradient-1d");
    let spec = cfg.build()?;
    let bump = Field::from_fn(spec.grid(), true, |x| (std::f64::consts::PI * x[0]).sin())?;
    let scale = 1e-2 / norm_l2(&bump, spec.grid())?;
    let moved = Field::new(
        spec.u0()
            .as_slice()
            .iter()
            .zip(bump.as_slice())
            .map(|(a, b)| a + scale * b)
            .collect(),
    )?;
    let other = spec.with_initial(moved)?;
    let r = stability_experiment(&spec, &other, &cfg.schedule, &cfg.solver)?;
    let same = stability_experiment(&spec, &spec, &cfg.schedule, &cfg.solver)?;
    let mut c = Check::new();
    c.metric("initial_distance_sq", r.initial_term);
    c.at_most("distance^2 / (e^T |du0|^2)", r.lhs / (r.gronwall * r.initial_term), 1.0);
    c.at_most("identical-data distance", same.lhs.sqrt(), 1e-9);
    c.runtime(start.elapsed(), 60.0);
    Ok(c)
}

fn ac5() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("vi-gradient-1d");
    let spec = cfg.build()?;
    let sizes = [0.02, 0.04, 0.08];
    let mut c = Check::new();
    let mut g_lhs = Vec::new();
    let mut g_term = Vec::new();
    let mut f_lhs = Vec::new();
    let mut f_norm = Vec::new();
    for d in sizes {
        let gs = spec.with_constraint(ConstraintSpec::constant(1.0 + d))?;
        let r = stability_experiment(&spec, &gs, &cfg.schedule, &cfg.solver)?;
        c.metric(&format!("g_lhs_{}", num(d)), r.lhs);
        g_lhs.push(r.lhs);
        g_term.push(r.bound_term);
        let fs = spec.with_source(ScalarField::constant(10.0 + d))?;
        let r = stability_experiment(&spec, &fs, &cfg.schedule, &cfg.solver)?;
        c.metric(&format!("f_lhs_{}", num(d)), r.lhs);
        c.metric(&format!("f_ratio_{}", num(d)), r.ratio);
        f_lhs.push(r.lhs);
        f_norm.push(r.source_term.sqrt());
    }
    c.at_least("g slope", loglog_slope(&g_term, &g_lhs), 0.9);
    c.at_least("f slope", loglog_slope(&f_norm, &f_lhs), 1.8);
    c.runtime(start.elapsed(), 300.0);
    Ok(c)
}

fn ac6() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("sandpile-1d");
    let solved = solve(&cfg)?;
    if let Some(e) = &solved.summary.error {
        bail!("solve failed: {e}");
    }
    let spec = &solved.spec;
    let (reference, steps) = oracle_steady_state(spec, 1.0, &OracleOptions::default(), 1e-10, 500)?;
    let pile = Field::from_fn(spec.grid(), true, |x| x[0].min(1.0 - x[0]))?;
    let mut c = Check::new();
    c.metric("oracle_steps", steps as f64);
    c.metric("reference_vs_pile", reference.sub(&pile)?.max_abs());
    let err = solved.result.trajectory.last().sub(&reference)?.max_abs();
    c.at_most("relative max-norm error", err / reference.max_abs(), 0.02);
    c.runtime(start.elapsed(), 60.0);
    Ok(c)
}

fn ac7() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("vi-gradient-1d");
    let deltas = [1e-2, 1e-4, 1e-6];
    let rows = run_sweep(&cfg, "schedule.delta", &deltas, 1)?;
    let mut c = Check::new();
    let mut scaled = Vec::new();
    for r in &rows {
        let stage = r
            .summary
            .as_ref()
            .and_then(|s| s.last_stage())
            .ok_or_else(|| anyhow!("sweep row {} failed: {:?}", r.value, r.error))?;
        c.metric(&format!("scaled_lp_norm_delta_{}", num(r.value)), stage.summary.scaled_lp_norm);
        scaled.push(stage.summary.scaled_lp_norm);
    }
    let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    c.at_most("relative spread", hi / lo - 1.0, 0.1);
    c.runtime(start.elapsed(), 120.0);
    Ok(c)
}

fn ac8() -> anyhow::Result<Check> {
    let start = Instant::now();
    let cfg = scenario("qvi-memory");
    let solved = solve(&cfg)?;
    if let Some(e) = &solved.summary.error {
        bail!("solve failed: {e}");
    }
    let mut c = Check::new();
    let mut ratio: f64 = 0.0;
    let mut last: f64 = 0.0;
    let mut verification: f64 = 0.0;
    let mut converged = true;
    for s in &solved.summary.stages {
        for w in s.outer_residuals.windows(2) {
            ratio = ratio.max(w[1] / w[0]);
        }
        last = last.max(*s.outer_residuals.last().unwrap());
        verification = verification.max(s.verification);
        converged &= s.converged;
    }
    c.holds("converged", converged);
    c.at_most("largest residual ratio", ratio, 0.9);
    c.at_most("converged residual", last, 1e-8);
    c.at_most("re-evaluation shift", verification, 2e-8);
    c.runtime(start.elapsed(), 300.0);
    Ok(c)
}

/// Radially rescales every slice so that `|Lv_k| <= G_k` holds exactly.
fn feasible_part(spec: &ProblemSpec, traj: &Trajectory, g: &[ConstraintField]) -> anyhow::Result<Trajectory> {
    let mut fields = Vec::with_capacity(traj.steps() + 1);
    for (w, gk) in traj.fields().iter().zip(g) {
        let lu = spec.operator().apply(w)?;
        let rho = (0..lu.points())
            .map(|j| {
                let m = lu.magnitude(j);
                if m > gk.as_slice()[j] {
                    gk.as_slice()[j] / m
                } else {
                    1.0
                }
            })
            .fold(1.0, f64::min);
        fields.push(w.scaled(rho));
    }
    Ok(Trajectory::from_fields(fields)?)
}

fn ac9() -> anyhow::Result<Check> {
    let start = Instant::now();
    let mut c = Check::new();
    for name in ["vi-gradient-1d", "vi-moving-obstacle"] {
        let solved = solve(&scenario(name))?;
        if let Some(e) = &solved.summary.error {
            bail!("{name} failed: {e}");
        }
        let spec = &solved.spec;
        let g = &solved.result.constraint.fields;
        let v = feasible_part(spec, &solved.result.trajectory, g)?;
        let mut dv = Vec::new();
        let mut dg = Vec::new();
        let mut excess: f64 = f64::NEG_INFINITY;
        for n in [4u32, 16, 64] {
            let vn = regularizing_sequence(&v, v.initial(), n, spec.time())?;
            let gn = constraint_transfer(g, n, spec.time())?;
            dv.push(spacetime_l2_distance(vn.fields(), v.fields(), spec.grid(), spec.time())?);
            dg.push(
                gn.iter()
                    .zip(g)
                    .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()))
                    .fold(0.0, f64::max),
            );
            excess = excess.max(transfer_excess(spec.operator(), &vn, &gn)?);
            c.metric(&format!("{name}_v_distance_n{n}"), *dv.last().unwrap());
            c.metric(&format!("{name}_g_distance_n{n}"), *dg.last().unwrap());
        }
        c.holds(&format!("{name} v distance decreasing"), dv.windows(2).all(|w| w[1] < w[0]));
        c.holds(
            &format!("{name} g distance decreasing"),
            dg.windows(2).all(|w| w[1] < w[0] || (w[1] == 0.0 && w[0] == 0.0)),
        );
        c.at_most(&format!("{name} excess"), excess, 1e-9);
    }
    c.runtime(start.elapsed(), 30.0);
    Ok(c)
}

pub fn title(id: &str) -> &'static str {
    match id {
        "AC-1" => "penalized operator monotonicity",
        "AC-2" => "constraint satisfaction as eps decreases",
        "AC-3" => "agreement with the projected-gradient oracle",
        "AC-4" => "contraction in the initial datum",
        "AC-5" => "continuous dependence on f and g",
        "AC-6" => "sandpile steady state",
        "AC-7" => "delta-scaled Lp bound",
        "AC-8" => "QVI fixed point",
        "AC-9" => "regularizing sequence",
        "AC-10" => "determinism",
        _ => "unknown",
    }
}

/// Runs one criterion other than AC-10. Errors become failures.
pub fn run_criterion(id: &str, seed: u64) -> (Criterion, Duration) {
    let start = Instant::now();
    let outcome = match id {
        "AC-1" => ac1(seed),
        "AC-2" => ac2(),
        "AC-3" => ac3(),
        "AC-4" => ac4(),
        "AC-5" => ac5(),
        "AC-6" => ac6(),
        "AC-7" => ac7(),
        "AC-8" => ac8(),
        "AC-9" => ac9(),
        other => Err(anyhow!("no such criterion `{other}`")),
    };
    let criterion = match outcome {
        Ok(check) => check.finish(id, title(id)),
        Err(e) => Criterion {
            id: id.to_string(),
            title: title(id).to_string(),
            passed: false,
            metrics: BTreeMap::new(),
            detail: format!("error: {e:#}"),
        },
    };
    (criterion, start.elapsed())
}

/// Runs the selected criteria (all when `only` is empty). AC-10 repeats the
/// others and compares the serialized summaries byte for byte.
pub fn run_suite(seed: u64, only: &[String], mut progress: impl FnMut(&Criterion, Duration)) -> SuiteReport {
    let selected: Vec<&str> = CRITERIA
        .iter()
        .copied()
        .filter(|id| only.is_empty() || only.iter().any(|o| o == id))
        .collect();
    let base: Vec<&str> = selected.iter().copied().filter(|id| *id != "AC-10").collect();
    let mut criteria = Vec::new();
    for id in &base {
        let (c, elapsed) = run_criterion(id, seed);
        progress(&c, elapsed);
        criteria.push(c);
    }
    if selected.contains(&"AC-10") {
        let start = Instant::now();
        let first = SuiteReport {
            seed,
            criteria: criteria.clone(),
        };
        let repeat_ids: Vec<&str> = if base.is_empty() { vec!["AC-1"] } else { base.clone() };
        let reference = if base.is_empty() {
            SuiteReport {
                seed,
                criteria: vec![run_criterion("AC-1", seed).0],
            }
        } else {
            first
        };
        let second = SuiteReport {
            seed,
            criteria: repeat_ids.iter().map(|id| run_criterion(id, seed).0).collect(),
        };
        let identical = reference.summary_json() == second.summary_json()
            && reference.summary_text() == second.summary_text();
        let c = Criterion {
            id: "AC-10".into(),
            title: title("AC-10").into(),
            passed: identical,
            metrics: BTreeMap::from([("criteria_repeated".to_string(), repeat_ids.len() as f64)]),
            detail: format!(
                "second run of {} summary byte-identical {}",
                repeat_ids.join(","),
                if identical { "yes" } else { "no" }
            ),
        };
        progress(&c, start.elapsed());
        criteria.push(c);
    }
    SuiteReport { seed, criteria }
}
