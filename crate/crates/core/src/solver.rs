//! SPDHG for arbitrary samplings, with deterministic PDHG alongside.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::operators::{axpy, distance, norm, LinOp, VecSpace};
use crate::proximal::{FistaConfig, ProxFn};
use crate::sampling::{Sampling, Scheme};
use crate::stepsize::{check_plan_shape, StepPlan};

/// One dual block: the operator `A_i`, the conjugate `f_i^*` and its
/// strong convexity modulus.
#[derive(Debug, Clone)]
pub struct DualBlock {
    pub op: LinOp,
    pub fstar: ProxFn,
    pub mu: f64,
}

/// `min_x max_y Σ_i ⟨A_i x, y_i⟩ − f_i^*(y_i) + g(x)`
#[derive(Debug, Clone)]
pub struct SaddleProblem {
    primal: VecSpace,
    blocks: Vec<DualBlock>,
    g: ProxFn,
    mu_g: f64,
}

impl SaddleProblem {
    /// Moduli are read off the prox kinds.
    pub fn new(blocks: Vec<(LinOp, ProxFn)>, g: ProxFn) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidParameter("a saddle problem needs at least one dual block".into()))?;
        let primal = first.0.domain().clone();
        for (op, _) in &blocks {
            check_len("dual block domain", primal.len(), op.domain().len())?;
        }
        let mu_g = g.strong_convexity();
        Ok(Self {
            primal,
            blocks: blocks
                .into_iter()
                .map(|(op, fstar)| DualBlock {
                    mu: fstar.strong_convexity(),
                    op,
                    fstar,
                })
                .collect(),
            g,
            mu_g,
        })
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn primal(&self) -> &VecSpace {
        &self.primal
    }

    pub fn blocks(&self) -> &[DualBlock] {
        &self.blocks
    }

    pub fn g(&self) -> &ProxFn {
        &self.g
    }

    pub fn mu_g(&self) -> f64 {
        self.mu_g
    }

    pub fn mus(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.mu).collect()
    }

    pub fn operators(&self) -> Vec<LinOp> {
        self.blocks.iter().map(|b| b.op.clone()).collect()
    }

    /// `A^* y = Σ_i A_i^* y_i`
    pub fn adjoint_sum(&self, y: &[Vec<f64>]) -> Vec<f64> {
        let mut out = self.primal.zeros();
        let mut tmp = self.primal.zeros();
        for (blk, yi) in self.blocks.iter().zip(y) {
            blk.op.adjoint_into(yi, &mut tmp);
            axpy(1.0, &tmp, &mut out);
        }
        out
    }

    pub fn dual_zeros(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.op.codomain().zeros()).collect()
    }

    fn check_state(&self, s: &SolverState) -> Result<()> {
        check_len("state x", self.primal.len(), s.x.len())?;
        check_len("state z", self.primal.len(), s.z.len())?;
        check_len("state zbar", self.primal.len(), s.zbar.len())?;
        check_len("state dual blocks", self.n(), s.y.len())?;
        for (blk, yi) in self.blocks.iter().zip(&s.y) {
            check_len("state dual block", blk.op.codomain().len(), yi.len())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Tracks `A^* y`.
    pub z: Vec<f64>,
    pub zbar: Vec<f64>,
    pub k: usize,
}

impl SolverState {
    pub fn zeros(problem: &SaddleProblem) -> Self {
        let x = problem.primal().zeros();
        Self {
            z: x.clone(),
            zbar: x.clone(),
            x,
            y: problem.dual_zeros(),
            k: 0,
        }
    }

    /// Warm start at `(x, y)` with `z = z̄ = A^* y`.
    pub fn from_primal_dual(problem: &SaddleProblem, x: Vec<f64>, y: Vec<Vec<f64>>) -> Result<Self> {
        let z = problem.adjoint_sum(&y);
        let s = Self {
            x,
            zbar: z.clone(),
            z,
            y,
            k: 0,
        };
        problem.check_state(&s)?;
        Ok(s)
    }

    /// `‖z − A^* y‖ / (1 + ‖A^* y‖)`
    pub fn z_drift(&self, problem: &SaddleProblem) -> f64 {
        let exact = problem.adjoint_sum(&self.y);
        distance(&self.z, &exact) / (1.0 + norm(&exact))
    }

    /// FNV-1a over the bit patterns of `x` and `y` (negative zero folded
    /// into positive zero).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let values = self.x.iter().chain(self.y.iter().flatten());
        for v in values {
            for byte in (v + 0.0).to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.zbar).all(|v| v.is_finite())
    }
}

/// `‖x − x_ref‖ / ‖x_ref‖`
pub fn relative_primal_error(x: &[f64], x_ref: &[f64]) -> Result<f64> {
    check_len("relative error", x_ref.len(), x.len())?;
    let r = norm(x_ref);
    if r == 0.0 {
        return Err(Error::UndefinedMetric("reference has zero norm".into()));
    }
    Ok(distance(x, x_ref) / r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub relative_primal_error: Option<f64>,
    pub wall_time: f64,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub scheme: String,
    pub tau: f64,
    pub sigmas: Vec<f64>,
    pub theta: f64,
    pub seed: u64,
    pub n: usize,
    pub b: usize,
    /// Iterations per epoch.
    pub m: usize,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub meta: RunMeta,
    /// Largest `z`-consistency drift seen at epoch boundaries.
    pub max_z_drift: f64,
}

impl RunRecord {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.relative_primal_error).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,relative_primal_error,wall_time,checksum\n");
        for r in &self.rows {
            let err = r.relative_primal_error.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{:016x}", r.epoch, err, r.wall_time, r.checksum);
        }
        s
    }

    pub fn meta_text(&self) -> String {
        let m = &self.meta;
        let sigmas = m.sigmas.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "scheme={}\ntau={}\nsigmas={}\ntheta={}\nseed={}\nn={}\nb={}\nm={}\ncertified={}\nmax_z_drift={}\n",
            m.scheme, m.tau, sigmas, m.theta, m.seed, m.n, m.b, m.m, m.certified, self.max_z_drift
        )
    }

    /// Writes `<stem>.csv` and the sidecar `<stem>.meta.txt` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv())?;
        fs::write(dir.join(format!("{stem}.meta.txt")), self.meta_text())?;
        Ok(csv)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub epochs: usize,
    /// Defaults to the sampling's epoch length.
    pub iters_per_epoch: Option<usize>,
    pub init: Option<SolverState>,
    pub reference: Option<Vec<f64>>,
    /// Run even without a passing certificate; the record says so.
    pub allow_uncertified: bool,
    /// FISTA iterations per prox call of `g`; defaults to the prox's own.
    pub fista_iters: Option<usize>,
    /// Stored in the record only; the generator is passed separately.
    pub seed: u64,
}

fn block_size(sampling: &Sampling) -> usize {
    match sampling.scheme() {
        Scheme::Serial { .. } => 1,
        Scheme::BSerial { partition, .. } => partition.uniform_size().unwrap_or(0),
        Scheme::BNice { b, .. } => *b,
        Scheme::Full { n } => *n,
    }
}

fn fista_for(g: &ProxFn, iters: Option<usize>) -> Result<Option<FistaConfig>> {
    match g {
        ProxFn::TvL2(tv) => Ok(Some(FistaConfig::new(
            iters.unwrap_or(tv.inner_iters),
            tv.gradient.codomain().len(),
        )?)),
        _ => Ok(None),
    }
}

fn error_of(x: &[f64], reference: Option<&[f64]>) -> Result<Option<f64>> {
    reference.map(|r| relative_primal_error(x, r)).transpose()
}

fn primal_step(problem: &SaddleProblem, tau: f64, state: &mut SolverState, fista: &mut Option<FistaConfig>) -> Result<()> {
    let mut v = state.x.clone();
    axpy(-tau, &state.zbar, &mut v);
    state.x = problem.g.prox_with(tau, &v, fista.as_mut())?;
    Ok(())
}

/// Workspace for one dual block update.
struct DualScratch {
    ax: Vec<Vec<f64>>,
    delta: Vec<f64>,
}

impl DualScratch {
    fn new(problem: &SaddleProblem) -> Self {
        Self {
            ax: problem.dual_zeros(),
            delta: problem.primal().zeros(),
        }
    }
}

/// `y_i ← prox_{σ_i f_i^*}(y_i + σ_i A_i x)`; leaves `A_i^*(y_i^new − y_i^old)`
/// in `scratch.delta`.
fn dual_step(
    problem: &SaddleProblem,
    i: usize,
    sigma: f64,
    state: &mut SolverState,
    scratch: &mut DualScratch,
) -> Result<()> {
    let blk = &problem.blocks[i];
    let ax = &mut scratch.ax[i];
    blk.op.apply_into(&state.x, ax);
    let yi = &state.y[i];
    for (a, y) in ax.iter_mut().zip(yi) {
        *a = y + sigma * *a;
    }
    let new = blk.fstar.prox_with(sigma, ax, None)?;
    for ((a, n), y) in ax.iter_mut().zip(&new).zip(yi) {
        *a = n - y;
    }
    blk.op.adjoint_into(ax, &mut scratch.delta);
    state.y[i] = new;
    Ok(())
}

fn prepare(
    problem: &SaddleProblem,
    plan: &StepPlan,
    opts: &RunOptions,
) -> Result<SolverState> {
    if !plan.is_certified() && !opts.allow_uncertified {
        return Err(Error::Uncertified);
    }
    let state = match &opts.init {
        Some(s) => {
            problem.check_state(s)?;
            s.clone()
        }
        None => SolverState::zeros(problem),
    };
    if let Some(r) = &opts.reference {
        check_len("reference", problem.primal().len(), r.len())?;
    }
    Ok(state)
}

/// Runs SPDHG. Equivalent to [`spdhg_run_observed`] with no observer.
pub fn spdhg_run(
    problem: &SaddleProblem,
    sampling: &Sampling,
    plan: &StepPlan,
    opts: &RunOptions,
    rng: &mut (impl Rng + ?Sized),
) -> Result<(RunRecord, SolverState)> {
    spdhg_run_observed(problem, sampling, plan, opts, rng, &mut |_, _| {})
}

/// Runs SPDHG for `opts.epochs` epochs, calling `observer` after every
/// iteration with the new state and the sampled blocks. Serial samplings take
/// a fast path that performs the same floating-point operations.
pub fn spdhg_run_observed(
    problem: &SaddleProblem,
    sampling: &Sampling,
    plan: &StepPlan,
    opts: &RunOptions,
    rng: &mut (impl Rng + ?Sized),
    observer: &mut dyn FnMut(&SolverState, &[usize]),
) -> Result<(RunRecord, SolverState)> {
    check_plan_shape(problem, sampling, plan)?;
    let mut state = prepare(problem, plan, opts)?;
    let m = opts
        .iters_per_epoch
        .or_else(|| sampling.epoch_length())
        .ok_or_else(|| Error::InvalidParameter("epoch length is undefined for this sampling; set it explicitly".into()))?;
    if m == 0 {
        return Err(Error::InvalidParameter("an epoch has at least one iteration".into()));
    }
    let mut fista = fista_for(&problem.g, opts.fista_iters)?;
    let reference = opts.reference.as_deref();
    let theta = plan.theta;
    let serial = sampling.is_serial();

    let mut scratch = DualScratch::new(problem);
    let mut dz = problem.primal().zeros();
    let mut dzbar = problem.primal().zeros();
    let start = Instant::now();
    let mut rows = vec![EpochRow {
        epoch: 0,
        relative_primal_error: error_of(&state.x, reference)?,
        wall_time: 0.0,
        checksum: state.checksum(),
    }];
    let mut max_z_drift = state.z_drift(problem);
    let mut last_finite = state.clone();

    for epoch in 1..=opts.epochs {
        for _ in 0..m {
            primal_step(problem, plan.tau, &mut state, &mut fista)?;
            let selected = sampling.draw(rng);
            if serial {
                let i = selected[0];
                dual_step(problem, i, plan.sigmas[i], &mut state, &mut scratch)?;
                let d = &scratch.delta;
                for t in 0..d.len() {
                    state.z[t] += d[t];
                    state.zbar[t] = state.z[t] + theta * (d[t] / plan.probabilities[i]);
                }
            } else {
                dz.fill(0.0);
                dzbar.fill(0.0);
                for &i in &selected {
                    dual_step(problem, i, plan.sigmas[i], &mut state, &mut scratch)?;
                    let d = &scratch.delta;
                    for t in 0..d.len() {
                        dz[t] += d[t];
                        dzbar[t] += d[t] / plan.probabilities[i];
                    }
                }
                for t in 0..dz.len() {
                    state.z[t] += dz[t];
                    state.zbar[t] = state.z[t] + theta * dzbar[t];
                }
            }
            state.k += 1;
            if !state.is_finite() {
                return Err(Error::Diverged {
                    iteration: state.k,
                    last_finite: Box::new(last_finite),
                });
            }
            observer(&state, &selected);
        }
        max_z_drift = max_z_drift.max(state.z_drift(problem));
        rows.push(EpochRow {
            epoch,
            relative_primal_error: error_of(&state.x, reference)?,
            wall_time: start.elapsed().as_secs_f64(),
            checksum: state.checksum(),
        });
        last_finite = state.clone();
    }
    let meta = RunMeta {
        scheme: sampling.id(),
        tau: plan.tau,
        sigmas: plan.sigmas.clone(),
        theta,
        seed: opts.seed,
        n: problem.n(),
        b: block_size(sampling),
        m,
        certified: plan.is_certified(),
    };
    Ok((
        RunRecord {
            rows,
            meta,
            max_z_drift,
        },
        state,
    ))
}

/// Deterministic PDHG with dual extrapolation, one iteration at a time.
struct Pdhg<'a> {
    problem: &'a SaddleProblem,
    plan: &'a StepPlan,
    state: SolverState,
    ybar: Vec<Vec<f64>>,
    fista: Option<FistaConfig>,
    ax: Vec<Vec<f64>>,
}

impl<'a> Pdhg<'a> {
    fn new(problem: &'a SaddleProblem, plan: &'a StepPlan, state: SolverState, fista: Option<FistaConfig>) -> Result<Self> {
        if plan.probabilities.iter().any(|p| *p != 1.0) {
            return Err(Error::InvalidParameter("PDHG needs a full-sampling plan (all probabilities 1)".into()));
        }
        check_len("plan sigmas", problem.n(), plan.sigmas.len())?;
        Ok(Self {
            ybar: state.y.clone(),
            ax: problem.dual_zeros(),
            problem,
            plan,
            state,
            fista,
        })
    }

    fn step(&mut self) -> Result<()> {
        let (problem, plan) = (self.problem, self.plan);
        primal_step(problem, plan.tau, &mut self.state, &mut self.fista)?;
        for (i, blk) in problem.blocks.iter().enumerate() {
            let sigma = plan.sigmas[i];
            let ax = &mut self.ax[i];
            blk.op.apply_into(&self.state.x, ax);
            for (a, y) in ax.iter_mut().zip(&self.state.y[i]) {
                *a = y + sigma * *a;
            }
            let new = blk.fstar.prox_with(sigma, ax, None)?;
            for ((yb, n), y) in self.ybar[i].iter_mut().zip(&new).zip(&self.state.y[i]) {
                *yb = n + plan.theta * (n - y);
            }
            self.state.y[i] = new;
        }
        self.state.zbar = problem.adjoint_sum(&self.ybar);
        self.state.k += 1;
        Ok(())
    }

    fn finish(mut self) -> SolverState {
        self.state.z = self.problem.adjoint_sum(&self.state.y);
        self.state
    }
}

/// Deterministic PDHG; one epoch is one iteration.
pub fn pdhg_run(problem: &SaddleProblem, plan: &StepPlan, opts: &RunOptions) -> Result<(RunRecord, SolverState)> {
    let state = prepare(problem, plan, opts)?;
    let fista = fista_for(&problem.g, opts.fista_iters)?;
    let reference = opts.reference.as_deref();
    let mut pdhg = Pdhg::new(problem, plan, state, fista)?;
    let start = Instant::now();
    let mut rows = vec![EpochRow {
        epoch: 0,
        relative_primal_error: error_of(&pdhg.state.x, reference)?,
        wall_time: 0.0,
        checksum: pdhg.state.checksum(),
    }];
    let mut last_finite = pdhg.state.clone();
    for epoch in 1..=opts.epochs {
        pdhg.step()?;
        if !pdhg.state.is_finite() {
            return Err(Error::Diverged {
                iteration: pdhg.state.k,
                last_finite: Box::new(last_finite),
            });
        }
        rows.push(EpochRow {
            epoch,
            relative_primal_error: error_of(&pdhg.state.x, reference)?,
            wall_time: start.elapsed().as_secs_f64(),
            checksum: pdhg.state.checksum(),
        });
        last_finite.clone_from(&pdhg.state);
    }
    let meta = RunMeta {
        scheme: "pdhg".into(),
        tau: plan.tau,
        sigmas: plan.sigmas.clone(),
        theta: plan.theta,
        seed: opts.seed,
        n: problem.n(),
        b: problem.n(),
        m: 1,
        certified: plan.is_certified(),
    };
    Ok((
        RunRecord {
            rows,
            meta,
            max_z_drift: 0.0,
        },
        pdhg.finish(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub x: Vec<f64>,
    /// `‖x^{k+1} − x^k‖ / ‖x^k‖` at the last iteration.
    pub residual: f64,
    pub iterations: usize,
    pub state: SolverState,
}

/// Long deterministic PDHG run used as the ground truth for error curves.
pub fn compute_reference(
    problem: &SaddleProblem,
    plan: &StepPlan,
    iters: usize,
    fista_iters: Option<usize>,
    init: Option<SolverState>,
) -> Result<Reference> {
    if iters == 0 {
        return Err(Error::InvalidParameter("reference needs at least one iteration".into()));
    }
    let opts = RunOptions {
        init,
        ..Default::default()
    };
    let state = prepare(problem, plan, &opts)?;
    let mut pdhg = Pdhg::new(problem, plan, state, fista_for(&problem.g, fista_iters)?)?;
    let mut previous = pdhg.state.x.clone();
    let mut residual = f64::NAN;
    for k in 0..iters {
        if k + 1 == iters {
            previous.clone_from(&pdhg.state.x);
        }
        pdhg.step()?;
        if !pdhg.state.is_finite() {
            let last = SolverState {
                x: previous,
                ..pdhg.state.clone()
            };
            return Err(Error::Diverged {
                iteration: pdhg.state.k,
                last_finite: Box::new(last),
            });
        }
    }
    let px = norm(&previous);
    if px > 0.0 {
        residual = distance(&pdhg.state.x, &previous) / px;
    } else if norm(&pdhg.state.x) == 0.0 {
        residual = 0.0;
    }
    let state = pdhg.finish();
    Ok(Reference {
        x: state.x.clone(),
        residual,
        iterations: iters,
        state,
    })
}

/// The weighted distance `c‖x − x̂‖²_X + ‖y − ŷ‖²_Y` with
/// `X = 1/τ + 2μ_g`, `Y_i = (1/σ_i + 2μ_i)/p_i` and `c = 1 − θ‖D‖`.
pub fn weighted_distance(
    problem: &SaddleProblem,
    plan: &StepPlan,
    norm_d: f64,
    state: &SolverState,
    x_hat: &[f64],
    y_hat: &[Vec<f64>],
) -> f64 {
    let c = 1.0 - plan.theta * norm_d;
    let wx = 1.0 / plan.tau + 2.0 * problem.mu_g();
    let mut total = c * wx * distance(&state.x, x_hat).powi(2);
    for (i, blk) in problem.blocks().iter().enumerate() {
        let wy = (1.0 / plan.sigmas[i] + 2.0 * blk.mu) / plan.probabilities[i];
        total += wy * distance(&state.y[i], &y_hat[i]).powi(2);
    }
    total
}
