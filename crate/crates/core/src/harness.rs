//! Experiment driver behind the `spdhg-bench` binary. Every command writes
//! CSV or `key=value` text.
//!
//! Configs are JSON. Every field has a default, so `{}` is a valid config
//! describing the 32×32, 12-coil desk instance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri_bench::{
    build_problem, complexify, export_instance, read_key_values, realify, InstanceSpec, MriInstance, MriNorms,
};
use crate::sampling::{
    consecutive_partition, count_partitions, enumerate_partitions, equidistant_partition, run_rng, Partition, Sampling,
};
use crate::solver::{compute_reference, pdhg_run, spdhg_run, RunOptions, RunRecord, SaddleProblem};
use crate::stepsize::{
    bnice_norm_b, plan_bnice_convex, plan_bserial_convex, plan_serial_convex, rate_bnice_sc, rate_bserial_sc,
    rate_full_sc, rate_per_epoch, rate_serial_optimized_sc, rate_serial_uniform_sc, NormCache, ProbabilityMode,
    RateInputs, StepPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PlanMode {
    /// Plans with `θ = 1` for merely convex problems.
    Convex { gamma: f64 },
    /// Linear-rate plans for strongly convex problems.
    StronglyConvex { rho: f64 },
}

impl Default for PlanMode {
    fn default() -> Self {
        PlanMode::StronglyConvex { rho: 0.99 }
    }
}

/// Where a b-serial partition comes from: `"consecutive"`, `"equidistant"`
/// or an explicit one-based list such as `"1,4,7,10|2,5,8,11|3,6,9,12"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionSource(pub String);

impl PartitionSource {
    pub fn resolve(&self, n: usize, b: usize) -> Result<Partition> {
        match self.0.as_str() {
            "consecutive" => consecutive_partition(n, b),
            "equidistant" => equidistant_partition(n, b),
            text => {
                let p: Partition = text.parse()?;
                if p.n() != n || p.uniform_size() != Some(b) {
                    return Err(Error::InvalidParameter(format!(
                        "partition {text:?} is not a partition of {n} indices into blocks of {b}"
                    )));
                }
                Ok(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    Serial {
        #[serde(default)]
        probabilities: ProbabilityMode,
    },
    BSerial {
        b: usize,
        partition: PartitionSource,
        #[serde(default)]
        probabilities: ProbabilityMode,
    },
    BNice {
        b: usize,
    },
    /// SPDHG drawing every block each iteration.
    Full,
    /// Deterministic PDHG.
    Pdhg,
}

fn mode_name(m: ProbabilityMode) -> &'static str {
    match m {
        ProbabilityMode::Uniform => "uniform",
        ProbabilityMode::Optimized => "optimized",
    }
}

impl SchemeSpec {
    /// File-name friendly label.
    pub fn label(&self) -> String {
        match self {
            SchemeSpec::Serial { probabilities } => format!("serial_{}", mode_name(*probabilities)),
            SchemeSpec::BSerial {
                b,
                partition,
                probabilities,
            } => {
                let source = match partition.0.as_str() {
                    s @ ("consecutive" | "equidistant") => s.to_string(),
                    s => format!("p{:08x}", fnv1a(s.as_bytes()) as u32),
                };
                format!("bserial_b{b}_{source}_{}", mode_name(*probabilities))
            }
            SchemeSpec::BNice { b } => format!("bnice_b{b}"),
            SchemeSpec::Full => "full".into(),
            SchemeSpec::Pdhg => "pdhg".into(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Inner FISTA iterations spent on the prox of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum FistaPolicy {
    /// Fixed count per prox call.
    PerCall { iters: usize },
    /// Fixed count per epoch, split evenly over the epoch's prox calls.
    PerEpoch { budget: usize },
}

impl Default for FistaPolicy {
    fn default() -> Self {
        FistaPolicy::PerCall { iters: 20 }
    }
}

impl FistaPolicy {
    pub fn per_call(self, iters_per_epoch: usize) -> usize {
        match self {
            FistaPolicy::PerCall { iters } => iters,
            FistaPolicy::PerEpoch { budget } => (budget / iters_per_epoch.max(1)).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub b: usize,
    pub probabilities: ProbabilityMode,
    /// Largest partition count the sweep will enumerate.
    pub budget: u128,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            b: 4,
            probabilities: ProbabilityMode::Optimized,
            budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub schemes: Vec<SchemeSpec>,
    pub plan: PlanMode,
    /// Independent runs averaged per scheme.
    pub runs: usize,
    pub epochs: usize,
    pub reference_iters: usize,
    pub reference_fista_iters: usize,
    pub fista: FistaPolicy,
    /// Run `r` draws from the generator seeded with `seed + r`.
    pub seed: u64,
    pub partitions: SweepConfig,
    /// Enumeration budget for `rates`.
    pub rates_budget: u128,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSpec::default(),
            schemes: vec![
                SchemeSpec::Serial {
                    probabilities: ProbabilityMode::Optimized,
                },
                SchemeSpec::Pdhg,
            ],
            plan: PlanMode::default(),
            runs: 40,
            epochs: 50,
            reference_iters: 10_000,
            reference_fista_iters: 50,
            fista: FistaPolicy::default(),
            seed: 0,
            partitions: SweepConfig::default(),
            rates_budget: 100_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        let fista = match self.fista {
            FistaPolicy::PerCall { iters } => iters,
            FistaPolicy::PerEpoch { budget } => budget,
        };
        if fista == 0 || self.reference_fista_iters == 0 {
            return Err(Error::InvalidParameter("FISTA budgets must be positive".into()));
        }
        let n = self.instance.coils;
        for s in &self.schemes {
            match s {
                SchemeSpec::BSerial { b, partition, .. } => {
                    partition.resolve(n, *b)?;
                }
                SchemeSpec::BNice { b } => {
                    Sampling::b_nice(n, *b)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn rho(&self) -> Result<f64> {
        match self.plan {
            PlanMode::StronglyConvex { rho } => Ok(rho),
            PlanMode::Convex { .. } => Err(Error::InvalidParameter(
                "rate sweeps need the strongly_convex plan mode".into(),
            )),
        }
    }
}

/// Norm cache backed by the exact benchmark norms.
pub fn mri_norms(instance: &MriInstance, problem: &SaddleProblem) -> Result<NormCache> {
    Ok(NormCache::for_problem(problem).with_oracle(Arc::new(MriNorms::for_instance(instance)?)))
}

/// A plan with the sampling it was made for.
#[derive(Debug, Clone)]
pub struct PlannedScheme {
    pub sampling: Sampling,
    pub plan: StepPlan,
    /// Iterations per epoch.
    pub m: usize,
    /// `θ^m` for strongly convex plans.
    pub rate_per_epoch: Option<f64>,
}

fn block_probs(partition: &Partition, plan: &StepPlan) -> Vec<f64> {
    partition.blocks().iter().map(|b| plan.probabilities[b[0]]).collect()
}

/// Builds and certifies the step plan for one scheme.
pub fn plan_scheme(
    problem: &SaddleProblem,
    cache: &NormCache,
    spec: &SchemeSpec,
    mode: PlanMode,
) -> Result<PlannedScheme> {
    let n = problem.n();
    let (sampling, plan) = match mode {
        PlanMode::StronglyConvex { rho } => {
            let inputs = RateInputs::from_problem(problem, cache.block_norms()?, rho)?;
            match spec {
                SchemeSpec::Serial { probabilities } => {
                    let plan = match probabilities {
                        ProbabilityMode::Uniform => rate_serial_uniform_sc(&inputs)?,
                        ProbabilityMode::Optimized => rate_serial_optimized_sc(&inputs)?,
                    };
                    (Sampling::serial(plan.probabilities.clone())?, plan)
                }
                SchemeSpec::BSerial {
                    b,
                    partition,
                    probabilities,
                } => {
                    let partition = partition.resolve(n, *b)?;
                    let norms = cache.partition_norms(&partition)?;
                    let plan = rate_bserial_sc(&inputs, &partition, &norms, *probabilities)?;
                    let probs = block_probs(&partition, &plan);
                    (Sampling::b_serial(partition, probs)?, plan)
                }
                SchemeSpec::BNice { b } => {
                    let plan = rate_bnice_sc(&inputs, *b, bnice_norm_b(cache, *b)?)?;
                    (Sampling::b_nice(n, *b)?, plan)
                }
                SchemeSpec::Full | SchemeSpec::Pdhg => (Sampling::full(n)?, rate_full_sc(&inputs, cache.full_norm()?)?),
            }
        }
        PlanMode::Convex { gamma } => match spec {
            SchemeSpec::Serial { probabilities } => {
                let sampling = match probabilities {
                    ProbabilityMode::Uniform => Sampling::serial_uniform(n)?,
                    ProbabilityMode::Optimized => {
                        let inputs = RateInputs::from_problem(problem, cache.block_norms()?, 0.99)?;
                        Sampling::serial(rate_serial_optimized_sc(&inputs)?.probabilities)?
                    }
                };
                let plan = plan_serial_convex(&cache.block_norms()?, &sampling.inclusion_probs(), gamma)?;
                (sampling, plan)
            }
            SchemeSpec::BSerial {
                b,
                partition,
                probabilities,
            } => {
                if *probabilities == ProbabilityMode::Optimized {
                    return Err(Error::InvalidParameter(
                        "optimized block probabilities need the strongly_convex plan mode".into(),
                    ));
                }
                let partition = partition.resolve(n, *b)?;
                let norms = cache.partition_norms(&partition)?;
                let probs = vec![1.0 / partition.m() as f64; partition.m()];
                let plan = plan_bserial_convex(&norms, &partition, &probs, gamma)?;
                (Sampling::b_serial(partition, probs)?, plan)
            }
            SchemeSpec::BNice { b } => (Sampling::b_nice(n, *b)?, plan_bnice_convex(problem, *b, gamma)?),
            SchemeSpec::Full | SchemeSpec::Pdhg => {
                let one = Partition::new(n, vec![(0..n).collect()])?;
                let plan = plan_bserial_convex(&[cache.full_norm()?], &one, &[1.0], gamma)?;
                (Sampling::full(n)?, plan)
            }
        },
    };
    let m = sampling.epoch_length().ok_or_else(|| {
        Error::InvalidParameter("b-nice sampling with b not dividing n has no epoch length".into())
    })?;
    let plan = plan.certified(problem, &sampling)?;
    if !plan.is_certified() {
        return Err(Error::Uncertified);
    }
    let rate = match mode {
        PlanMode::StronglyConvex { .. } => Some(rate_per_epoch(plan.theta, m)?),
        PlanMode::Convex { .. } => None,
    };
    Ok(PlannedScheme {
        sampling,
        plan,
        m,
        rate_per_epoch: rate,
    })
}

/// Reference solution plus the instance it belongs to.
#[derive(Debug, Clone)]
pub struct ReferenceArtifacts {
    pub instance: MriInstance,
    pub problem: SaddleProblem,
    pub x: Vec<f64>,
    pub residual: f64,
    /// True when an existing reference on disk was reused.
    pub reused: bool,
}

fn reference_fingerprint(cfg: &ExperimentConfig) -> Result<String> {
    let key = serde_json::json!({
        "instance": cfg.instance,
        "reference_iters": cfg.reference_iters,
        "reference_fista_iters": cfg.reference_fista_iters,
        "plan": cfg.plan,
    });
    Ok(serde_json::to_string(&key)?)
}

fn load_reference(dir: &Path, fingerprint: &str, len: usize) -> Option<(Vec<f64>, f64)> {
    let meta = read_key_values(&dir.join("meta.txt")).ok()?;
    if meta.get("fingerprint")? != fingerprint {
        return None;
    }
    let residual: f64 = meta.get("residual")?.parse().ok()?;
    let bytes = fs::read(dir.join("reference.bin")).ok()?;
    if bytes.len() != len * 8 {
        return None;
    }
    let x = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some((x, residual))
}

/// Plan used for the long reference run: the strongly convex PDHG plan when
/// the problem allows it, otherwise the convex one.
pub fn reference_plan(problem: &SaddleProblem, cache: &NormCache, mode: PlanMode) -> Result<StepPlan> {
    let n = problem.n();
    let full = Sampling::full(n)?;
    let plan = match mode {
        PlanMode::StronglyConvex { rho } if problem.mu_g() > 0.0 => {
            rate_full_sc(&RateInputs::from_problem(problem, cache.block_norms()?, rho)?, cache.full_norm()?)?
        }
        PlanMode::StronglyConvex { .. } => {
            let one = Partition::new(n, vec![(0..n).collect()])?;
            plan_bserial_convex(&[cache.full_norm()?], &one, &[1.0], 0.99)?
        }
        PlanMode::Convex { gamma } => {
            let one = Partition::new(n, vec![(0..n).collect()])?;
            plan_bserial_convex(&[cache.full_norm()?], &one, &[1.0], gamma)?
        }
    };
    let plan = plan.certified(problem, &full)?;
    if !plan.is_certified() {
        return Err(Error::Uncertified);
    }
    Ok(plan)
}

/// Loads the reference under `<out>/reference` if it matches the config,
/// otherwise computes and stores it.
pub fn ensure_reference(cfg: &ExperimentConfig, out: &Path) -> Result<ReferenceArtifacts> {
    let (instance, problem) = build_problem(&cfg.instance)?;
    let dir = out.join("reference");
    let fingerprint = reference_fingerprint(cfg)?;
    if let Some((x, residual)) = load_reference(&dir, &fingerprint, problem.primal().len()) {
        return Ok(ReferenceArtifacts {
            instance,
            problem,
            x,
            residual,
            reused: true,
        });
    }
    let cache = mri_norms(&instance, &problem)?;
    let plan = reference_plan(&problem, &cache, cfg.plan)?;
    let reference = compute_reference(
        &problem,
        &plan,
        cfg.reference_iters.max(1),
        Some(cfg.reference_fista_iters),
        None,
    )?;
    fs::create_dir_all(&dir)?;
    export_instance(&instance, &dir.join("instance"))?;
    let bytes: Vec<u8> = reference.x.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join("reference.bin"), bytes)?;
    let [r, c] = cfg.instance.shape;
    fs::write(dir.join("reference.hdr"), format!("complex128 little-endian\nshape {r} {c}\n"))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "fingerprint={fingerprint}");
    let _ = writeln!(meta, "residual={}", reference.residual);
    let _ = writeln!(meta, "iterations={}", reference.iterations);
    let _ = writeln!(meta, "relative_error_to_truth={}", {
        let truth = realify(&instance.x_true);
        crate::solver::relative_primal_error(&reference.x, &truth).unwrap_or(f64::NAN)
    });
    fs::write(dir.join("meta.txt"), meta)?;
    debug_assert_eq!(complexify(&reference.x).len(), r * c);
    Ok(ReferenceArtifacts {
        instance,
        problem,
        x: reference.x,
        residual: reference.residual,
        reused: false,
    })
}

/// What a command produced and which schemes failed.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, String)>,
}

impl Outcome {
    /// 0 on full success, 2 when some schemes failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Per-epoch aggregate over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub rate_per_epoch: Option<f64>,
}

impl Curve {
    fn from_records(label: String, records: &[RunRecord], rate: Option<f64>) -> Result<Self> {
        let errors: Vec<Vec<f64>> = records.iter().map(|r| r.errors()).collect();
        let epochs = errors[0].len();
        if errors.iter().any(|e| e.len() != epochs) {
            return Err(Error::UndefinedMetric("runs logged different epoch counts".into()));
        }
        let column = |k: usize| errors.iter().map(move |e| e[k]);
        Ok(Self {
            label,
            mean: (0..epochs).map(|k| column(k).sum::<f64>() / errors.len() as f64).collect(),
            min: (0..epochs).map(|k| column(k).fold(f64::INFINITY, f64::min)).collect(),
            max: (0..epochs).map(|k| column(k).fold(f64::NEG_INFINITY, f64::max)).collect(),
            rate_per_epoch: rate,
        })
    }

    /// Columns `epoch,mean,min,max,theory_rate_value`; the last is
    /// `ϑ^epoch` times the initial mean error, empty without a rate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean,min,max,theory_rate_value\n");
        for k in 0..self.mean.len() {
            let theory = self
                .rate_per_epoch
                .map(|r| (r.powi(k as i32) * self.mean[0]).to_string())
                .unwrap_or_default();
            let _ = writeln!(s, "{k},{},{},{},{theory}", self.mean[k], self.min[k], self.max[k]);
        }
        s
    }

    /// First epoch whose mean error is at most `tol`.
    pub fn epochs_to(&self, tol: f64) -> Option<usize> {
        self.mean.iter().position(|e| *e <= tol)
    }
}

fn run_scheme(
    cfg: &ExperimentConfig,
    reference: &ReferenceArtifacts,
    cache: &NormCache,
    spec: &SchemeSpec,
) -> Result<(Curve, StepPlan, Sampling)> {
    let problem = &reference.problem;
    let planned = plan_scheme(problem, cache, spec, cfg.plan)?;
    let fista_iters = cfg.fista.per_call(planned.m);
    let opts = |r: u64| RunOptions {
        epochs: cfg.epochs,
        reference: Some(reference.x.clone()),
        fista_iters: Some(fista_iters),
        seed: cfg.seed.wrapping_add(r),
        ..Default::default()
    };
    let records: Vec<RunRecord> = if *spec == SchemeSpec::Pdhg {
        vec![pdhg_run(problem, &planned.plan, &opts(0))?.0]
    } else {
        (0..cfg.runs as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = run_rng(cfg.seed, r);
                spdhg_run(problem, &planned.sampling, &planned.plan, &opts(r), &mut rng).map(|(rec, _)| rec)
            })
            .collect::<Result<_>>()?
    };
    let curve = Curve::from_records(spec.label(), &records, planned.rate_per_epoch)?;
    Ok((curve, planned.plan, planned.sampling))
}

/// Averaged convergence curves, one CSV per scheme. A failing scheme is
/// reported in the outcome and in `run_summary.txt` without touching the
/// others' files.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<(Outcome, Vec<Curve>)> {
    let reference = ensure_reference(cfg, out)?;
    let cache = mri_norms(&reference.instance, &reference.problem)?;
    let mut outcome = Outcome::default();
    let mut curves = Vec::new();
    let mut summary = String::new();
    for spec in &cfg.schemes {
        let label = spec.label();
        match run_scheme(cfg, &reference, &cache, spec) {
            Ok((curve, plan, sampling)) => {
                let csv = out.join(format!("run_{label}.csv"));
                fs::write(&csv, curve.to_csv())?;
                fs::write(out.join(format!("plan_{label}.txt")), plan.to_record(&sampling.id()))?;
                let _ = writeln!(summary, "{label}=ok");
                outcome.written.push(csv);
                curves.push(curve);
            }
            Err(e) => {
                let _ = writeln!(summary, "{label}=failed: {e}");
                outcome.failures.push((label, e.to_string()));
            }
        }
    }
    fs::write(out.join("run_summary.txt"), summary)?;
    Ok((outcome, curves))
}

/// Rates of every partition in a sweep, with the notable ones picked out.
#[derive(Debug, Clone)]
pub struct PartitionReport {
    pub n: usize,
    pub b: usize,
    /// Enumeration order.
    pub rows: Vec<(Partition, f64)>,
    pub best: (Partition, f64),
    pub worst: (Partition, f64),
    pub consecutive: (Partition, f64),
    pub equidistant: (Partition, f64),
}

fn rate_inputs(problem: &SaddleProblem, cache: &NormCache, rho: f64) -> Result<RateInputs> {
    RateInputs::from_problem(problem, cache.block_norms()?, rho)
}

fn all_subsets_of_size(partitions: &[Partition]) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = partitions.iter().flat_map(|p| p.blocks().iter().cloned()).collect();
    subsets.sort_unstable();
    subsets.dedup();
    subsets
}

/// `ϑ = θ^m` of b-serial sampling for every partition into blocks of `b`.
pub fn partition_rates(
    problem: &SaddleProblem,
    cache: &NormCache,
    rho: f64,
    b: usize,
    mode: ProbabilityMode,
    budget: u128,
) -> Result<Vec<(Partition, f64)>> {
    let n = problem.n();
    let count = count_partitions(n, b)?;
    if count > budget {
        return Err(Error::BudgetExceeded { count, budget });
    }
    let inputs = rate_inputs(problem, cache, rho)?;
    let partitions: Vec<Partition> = enumerate_partitions(n, b)?.collect();
    cache.prefill(&all_subsets_of_size(&partitions))?;
    partitions
        .into_par_iter()
        .map(|p| {
            let norms = cache.partition_norms(&p)?;
            let plan = rate_bserial_sc(&inputs, &p, &norms, mode)?;
            let rate = rate_per_epoch(plan.theta, p.m())?;
            Ok((p, rate))
        })
        .collect()
}

fn quote(p: &Partition) -> String {
    format!("\"{p}\"")
}

/// Sweeps all partitions for `cfg.partitions.b`; writes
/// `partitions_n{n}_b{b}.csv` and `partitions_n{n}_b{b}_extremal.txt`.
pub fn cmd_partitions(cfg: &ExperimentConfig, out: &Path) -> Result<(Outcome, PartitionReport)> {
    let rho = cfg.rho()?;
    let n = cfg.instance.coils;
    let sweep = &cfg.partitions;
    let count = count_partitions(n, sweep.b)?;
    if count > sweep.budget {
        return Err(Error::BudgetExceeded {
            count,
            budget: sweep.budget,
        });
    }
    let (instance, problem) = build_problem(&cfg.instance)?;
    let cache = mri_norms(&instance, &problem)?;
    let rows = partition_rates(&problem, &cache, rho, sweep.b, sweep.probabilities, sweep.budget)?;

    let pick = |better: fn(f64, f64) -> bool| {
        rows.iter()
            .skip(1)
            .fold(rows[0].clone(), |acc, r| if better(r.1, acc.1) { r.clone() } else { acc })
    };
    let best = pick(|a, b| a < b);
    let worst = pick(|a, b| a > b);
    let find = |p: Partition| {
        let rate = rows.iter().find(|(q, _)| *q == p).map(|r| r.1).unwrap_or(f64::NAN);
        (p, rate)
    };
    let report = PartitionReport {
        n,
        b: sweep.b,
        consecutive: find(consecutive_partition(n, sweep.b)?),
        equidistant: find(equidistant_partition(n, sweep.b)?),
        best,
        worst,
        rows,
    };

    fs::create_dir_all(out)?;
    let stem = format!("partitions_n{n}_b{}", sweep.b);
    let mut csv = String::from("partition,rate\n");
    for (p, r) in &report.rows {
        let _ = writeln!(csv, "{},{r}", quote(p));
    }
    let csv_path = out.join(format!("{stem}.csv"));
    fs::write(&csv_path, csv)?;
    let mut extremal = String::new();
    for (name, (p, r)) in [
        ("best", &report.best),
        ("worst", &report.worst),
        ("consecutive", &report.consecutive),
        ("equidistant", &report.equidistant),
    ] {
        let _ = writeln!(extremal, "{name}={p}");
        let _ = writeln!(extremal, "{name}_rate={r}");
    }
    let ext_path = out.join(format!("{stem}_extremal.txt"));
    fs::write(&ext_path, extremal)?;
    Ok((
        Outcome {
            written: vec![csv_path, ext_path],
            failures: Vec::new(),
        },
        report,
    ))
}

/// Uniform b-serial rates over all partitions and the b-nice rate, for one b.
#[derive(Debug, Clone, PartialEq)]
pub struct RatesForB {
    pub b: usize,
    pub bserial: Vec<(Partition, f64)>,
    pub bnice: f64,
}

impl RatesForB {
    pub fn median_bserial(&self) -> f64 {
        let mut v: Vec<f64> = self.bserial.iter().map(|r| r.1).collect();
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            0.5 * (v[k / 2 - 1] + v[k / 2])
        }
    }
}

/// For every divisor `b` of `n`: all uniform b-serial rates and the b-nice
/// rate. Writes `rates.csv` (one row per rate) and `rates_summary.csv`.
pub fn cmd_rates(cfg: &ExperimentConfig, out: &Path) -> Result<(Outcome, Vec<RatesForB>)> {
    let rho = cfg.rho()?;
    let n = cfg.instance.coils;
    let (instance, problem) = build_problem(&cfg.instance)?;
    let cache = mri_norms(&instance, &problem)?;
    let inputs = rate_inputs(&problem, &cache, rho)?;
    let mut outcome = Outcome::default();
    let mut table = Vec::new();
    for b in (1..=n).filter(|b| n.is_multiple_of(*b)) {
        let result = partition_rates(&problem, &cache, rho, b, ProbabilityMode::Uniform, cfg.rates_budget).and_then(
            |bserial| {
                let plan = rate_bnice_sc(&inputs, b, bnice_norm_b(&cache, b)?)?;
                Ok(RatesForB {
                    b,
                    bserial,
                    bnice: rate_per_epoch(plan.theta, n / b)?,
                })
            },
        );
        match result {
            Ok(r) => table.push(r),
            Err(e) => outcome.failures.push((format!("b={b}"), e.to_string())),
        }
    }
    fs::create_dir_all(out)?;
    let mut rows = String::from("b,kind,partition,rate\n");
    let mut summary = String::from("b,count,min,median,max,bnice\n");
    for r in &table {
        for (p, rate) in &r.bserial {
            let _ = writeln!(rows, "{},bserial_uniform,{},{rate}", r.b, quote(p));
        }
        let _ = writeln!(rows, "{},bnice,,{}", r.b, r.bnice);
        let (lo, hi) = r
            .bserial
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
        let _ = writeln!(
            summary,
            "{},{},{lo},{},{hi},{}",
            r.b,
            r.bserial.len(),
            r.median_bserial(),
            r.bnice
        );
    }
    let rows_path = out.join("rates.csv");
    let summary_path = out.join("rates_summary.csv");
    fs::write(&rows_path, rows)?;
    fs::write(&summary_path, summary)?;
    outcome.written = vec![rows_path, summary_path];
    Ok((outcome, table))
}

/// Persists the instance and its reference under `<out>/reference`; reuses
/// an existing one built from the same settings.
pub fn cmd_reference(cfg: &ExperimentConfig, out: &Path) -> Result<(Outcome, ReferenceArtifacts)> {
    let artifacts = ensure_reference(cfg, out)?;
    Ok((
        Outcome {
            written: vec![out.join("reference")],
            failures: Vec::new(),
        },
        artifacts,
    ))
}
