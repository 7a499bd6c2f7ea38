//! Step sizes for SPDHG. Planners pick `τ, σ_i, θ`; the step-size operator
//! `D` and its spectral norm certify the result.
//!
//! `D` acts on the dual product space as
//! `(Dz)_i = s_i A_i Σ_j p_ij s_j A_j^* z_j` with `s_i = sqrt(τσ_i)/p_i`.
//! The same matrix-free form with `s_i = 1` is the expected Gram operator
//! `E(A_S A_S^*)`, and with `s_i = 1/p_i` it is `B = Q E(A_S A_S^*) Q`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::operators::{
    axpy, dense_top_eigenvalue, operator_norm, psd_norm, to_dense, BlockRowOp, LinOp, LinearMap, NormEstimate,
    VecSpace,
};
use crate::sampling::{Partition, Sampling};
use crate::solver::SaddleProblem;

/// Dual dimension up to which `‖D‖` is computed by a dense eigensolver.
pub const DENSE_LIMIT: usize = 512;
/// Relative slack demanded by [`certify`]: pass iff `‖D‖(1 + slack) < 1/θ`.
pub const CERT_SLACK: f64 = 1e-6;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 50_000;
const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertMethod {
    Dense,
    Power,
}

impl CertMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CertMethod::Dense => "dense",
            CertMethod::Power => "power",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub norm_d: f64,
    pub method: CertMethod,
    /// `1/θ − ‖D‖`
    pub margin: f64,
    pub passed: bool,
    /// The power method ran out of iterations; never counts as a pass.
    pub inconclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub tau: f64,
    pub sigmas: Vec<f64>,
    pub theta: f64,
    pub probabilities: Vec<f64>,
    pub certificate: Option<Certificate>,
    /// Blocks with a zero operator; their dual step is unconstrained.
    pub degenerate: Vec<usize>,
}

impl StepPlan {
    pub fn n(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_certified(&self) -> bool {
        self.certificate.as_ref().is_some_and(|c| c.passed)
    }

    /// Certifies against `θ = self.theta` and stores the certificate.
    pub fn certified(mut self, problem: &SaddleProblem, sampling: &Sampling) -> Result<Self> {
        self.certificate = Some(certify(problem, sampling, &self, self.theta)?);
        Ok(self)
    }

    /// Plain-text `key=value` record.
    pub fn to_record(&self, scheme_id: &str) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "scheme={scheme_id}");
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "sigmas={}", join(&self.sigmas));
        let _ = writeln!(s, "theta={}", self.theta);
        let _ = writeln!(s, "probabilities={}", join(&self.probabilities));
        match &self.certificate {
            Some(c) => {
                let _ = writeln!(s, "norm_d={}", c.norm_d);
                let _ = writeln!(s, "margin={}", c.margin);
                let _ = writeln!(s, "method={}", c.method.as_str());
                let _ = writeln!(s, "passed={}", c.passed);
                let _ = writeln!(s, "inconclusive={}", c.inconclusive);
            }
            None => {
                let _ = writeln!(s, "passed=false");
            }
        }
        s
    }
}

/// `(Gz)_i = s_i A_i Σ_j p_ij s_j A_j^* z_j`
#[derive(Debug)]
pub struct SampledGram {
    ops: Vec<LinOp>,
    pair: Vec<Vec<f64>>,
    scale: Vec<f64>,
    offsets: Vec<usize>,
    space: VecSpace,
}

impl SampledGram {
    pub fn new(ops: Vec<LinOp>, sampling: &Sampling, scale: Vec<f64>) -> Result<Self> {
        let n = ops.len();
        check_len("sampled Gram blocks", sampling.n(), n)?;
        check_len("sampled Gram scales", n, scale.len())?;
        let stacked = BlockRowOp::new(ops.clone())?;
        let mut pair = vec![vec![0.0; n]; n];
        for (i, row) in pair.iter_mut().enumerate() {
            for (j, p) in row.iter_mut().enumerate() {
                *p = sampling.pair_prob(i, j)?;
            }
        }
        Ok(Self {
            ops,
            pair,
            scale,
            offsets: stacked.offsets().to_vec(),
            space: stacked.codomain().clone(),
        })
    }

    pub fn into_linop(self) -> LinOp {
        LinOp::new(self)
    }
}

impl LinearMap for SampledGram {
    fn domain(&self) -> &VecSpace {
        &self.space
    }
    fn codomain(&self) -> &VecSpace {
        &self.space
    }
    fn forward(&self, z: &[f64], out: &mut [f64]) {
        let primal_len = self.ops[0].domain().len();
        let w: Vec<Vec<f64>> = self
            .ops
            .iter()
            .enumerate()
            .map(|(j, op)| {
                let mut wj = vec![0.0; primal_len];
                op.adjoint_into(&z[self.offsets[j]..self.offsets[j + 1]], &mut wj);
                wj.iter_mut().for_each(|v| *v *= self.scale[j]);
                wj
            })
            .collect();
        let mut u = vec![0.0; primal_len];
        for (i, op) in self.ops.iter().enumerate() {
            u.fill(0.0);
            for (j, wj) in w.iter().enumerate() {
                if self.pair[i][j] != 0.0 {
                    axpy(self.pair[i][j], wj, &mut u);
                }
            }
            let out_i = &mut out[self.offsets[i]..self.offsets[i + 1]];
            op.apply_into(&u, out_i);
            out_i.iter_mut().for_each(|v| *v *= self.scale[i]);
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.forward(y, out);
    }
}

pub(crate) fn check_plan_shape(problem: &SaddleProblem, sampling: &Sampling, plan: &StepPlan) -> Result<()> {
    let n = problem.n();
    check_len("sampling blocks", n, sampling.n())?;
    check_len("plan sigmas", n, plan.sigmas.len())?;
    check_len("plan probabilities", n, plan.probabilities.len())?;
    for i in 0..n {
        let p = sampling.inclusion_prob(i)?;
        if !(p > 0.0) {
            return Err(Error::ImproperSampling { index: i, prob: p });
        }
        if (p - plan.probabilities[i]).abs() > PROB_TOL {
            return Err(Error::InvalidParameter(format!(
                "plan probability {} for block {i} disagrees with the sampling ({p})",
                plan.probabilities[i]
            )));
        }
    }
    Ok(())
}

/// The step-size operator `D` for `plan` under `sampling`.
pub fn assemble_d(problem: &SaddleProblem, sampling: &Sampling, plan: &StepPlan) -> Result<LinOp> {
    check_plan_shape(problem, sampling, plan)?;
    let scale = plan
        .sigmas
        .iter()
        .zip(&plan.probabilities)
        .map(|(s, p)| (plan.tau * s).sqrt() / p)
        .collect();
    Ok(SampledGram::new(problem.operators(), sampling, scale)?.into_linop())
}

/// Norm of a self-adjoint PSD operator: dense eigenvalue when small, power
/// method otherwise.
pub fn psd_operator_norm(op: &LinOp) -> Result<(NormEstimate, CertMethod)> {
    if op.domain().len() <= DENSE_LIMIT {
        let value = dense_top_eigenvalue(&to_dense(op)).max(0.0);
        Ok((
            NormEstimate {
                value,
                iterations: 0,
                converged: true,
            },
            CertMethod::Dense,
        ))
    } else {
        Ok((psd_norm(op, POWER_TOL, POWER_MAX_ITER, 0)?, CertMethod::Power))
    }
}

/// Checks `‖D‖ < 1/θ` with relative slack [`CERT_SLACK`].
pub fn certify(problem: &SaddleProblem, sampling: &Sampling, plan: &StepPlan, theta: f64) -> Result<Certificate> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("theta {theta} must lie in (0, 1]")));
    }
    let d = assemble_d(problem, sampling, plan)?;
    let (est, method) = psd_operator_norm(&d)?;
    let inconclusive = !est.converged;
    Ok(Certificate {
        norm_d: est.value,
        method,
        margin: 1.0 / theta - est.value,
        passed: !inconclusive && est.value * (1.0 + CERT_SLACK) < 1.0 / theta,
        inconclusive,
    })
}

/// `v_i = ‖D‖ p_i`
pub fn eso_from_d(norm_d: f64, probabilities: &[f64]) -> Result<Vec<f64>> {
    if !(norm_d >= 0.0) {
        return Err(Error::InvalidParameter(format!("‖D‖ = {norm_d} must be nonnegative")));
    }
    Ok(probabilities.iter().map(|p| norm_d * p).collect())
}

/// Exact norms derived from problem structure, preferred over the power
/// method when a problem provides them.
pub trait NormOracle: Send + Sync + std::fmt::Debug {
    /// `‖Ã‖` for the rows in `subset` (sorted, deduplicated) stacked.
    fn subset_norm(&self, subset: &[usize]) -> Result<f64>;

    /// `‖B‖` for uniform b-nice sampling, when the structure allows it.
    fn bnice_norm_b(&self, _b: usize) -> Option<Result<f64>> {
        None
    }
}

/// Operator norms of single blocks and stacked groups of blocks, computed
/// once and shared across sweeps.
#[derive(Debug)]
pub struct NormCache {
    ops: Vec<LinOp>,
    tol: f64,
    max_iter: usize,
    seed: u64,
    oracle: Option<Arc<dyn NormOracle>>,
    cache: Mutex<HashMap<Vec<usize>, f64>>,
}

impl NormCache {
    pub fn new(ops: Vec<LinOp>) -> Self {
        Self {
            ops,
            tol: POWER_TOL,
            max_iter: POWER_MAX_ITER,
            seed: 0,
            oracle: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn for_problem(problem: &SaddleProblem) -> Self {
        Self::new(problem.operators())
    }

    pub fn with_power_settings(mut self, tol: f64, max_iter: usize, seed: u64) -> Self {
        self.tol = tol;
        self.max_iter = max_iter;
        self.seed = seed;
        self
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn NormOracle>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn oracle(&self) -> Option<&dyn NormOracle> {
        self.oracle.as_deref()
    }

    pub fn n(&self) -> usize {
        self.ops.len()
    }

    pub fn operators(&self) -> &[LinOp] {
        &self.ops
    }

    fn compute(&self, subset: &[usize]) -> Result<f64> {
        if let Some(oracle) = &self.oracle {
            return oracle.subset_norm(subset);
        }
        let rows = subset.iter().map(|&i| self.ops[i].clone()).collect();
        let stacked = BlockRowOp::new(rows)?.into_linop();
        let est = operator_norm(&stacked, self.tol, self.max_iter, self.seed)?;
        if !est.converged {
            return Err(Error::Degenerate(format!(
                "power method did not converge for blocks {subset:?} after {} iterations",
                est.iterations
            )));
        }
        Ok(est.value)
    }

    /// `‖Ã‖` for the rows in `subset` stacked.
    pub fn subset_norm(&self, subset: &[usize]) -> Result<f64> {
        let mut key = subset.to_vec();
        key.sort_unstable();
        key.dedup();
        if key.is_empty() {
            return Err(Error::InvalidParameter("empty block subset".into()));
        }
        if let Some(&i) = key.last() {
            if i >= self.n() {
                return Err(Error::IndexOutOfRange { index: i, n: self.n() });
            }
        }
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            return Ok(*v);
        }
        let v = self.compute(&key)?;
        self.cache.lock().unwrap().insert(key, v);
        Ok(v)
    }

    pub fn block_norms(&self) -> Result<Vec<f64>> {
        (0..self.n()).map(|i| self.subset_norm(&[i])).collect()
    }

    pub fn full_norm(&self) -> Result<f64> {
        self.subset_norm(&(0..self.n()).collect::<Vec<_>>())
    }

    pub fn partition_norms(&self, partition: &Partition) -> Result<Vec<f64>> {
        partition.blocks().iter().map(|b| self.subset_norm(b)).collect()
    }

    /// Computes missing entries in parallel.
    pub fn prefill(&self, subsets: &[Vec<usize>]) -> Result<()> {
        let missing: Vec<Vec<usize>> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            subsets
                .iter()
                .map(|s| {
                    let mut k = s.clone();
                    k.sort_unstable();
                    k
                })
                .filter(|k| !cache.contains_key(k) && seen.insert(k.clone()))
                .collect()
        };
        let values: Vec<(Vec<usize>, Result<f64>)> = missing
            .into_par_iter()
            .map(|k| {
                let v = self.compute(&k);
                (k, v)
            })
            .collect();
        let mut cache = self.cache.lock().unwrap();
        for (k, v) in values {
            cache.insert(k, v?);
        }
        Ok(())
    }
}

/// `‖E(A_S A_S^*)‖`, the sampled Gram operator with unit scales.
pub fn expected_gram_norm(ops: &[LinOp], sampling: &Sampling) -> Result<NormEstimate> {
    let gram = SampledGram::new(ops.to_vec(), sampling, vec![1.0; ops.len()])?.into_linop();
    Ok(psd_operator_norm(&gram)?.0)
}

/// `‖B‖ = ‖Q E(A_S A_S^*) Q‖` for uniform b-nice sampling. At `b = 1` and
/// `b = n` the operator is block diagonal or rank-structured and the value
/// comes straight from cached norms.
pub fn bnice_norm_b(cache: &NormCache, b: usize) -> Result<f64> {
    let n = cache.n();
    let sampling = Sampling::b_nice(n, b)?;
    if b == n {
        let a = cache.full_norm()?;
        return Ok(a * a);
    }
    if b == 1 {
        let max = cache.block_norms()?.into_iter().fold(0.0, f64::max);
        return Ok(n as f64 * max * max);
    }
    if let Some(v) = cache.oracle().and_then(|o| o.bnice_norm_b(b)) {
        return v;
    }
    let q = n as f64 / b as f64;
    let gram = SampledGram::new(cache.operators().to_vec(), &sampling, vec![q; n])?.into_linop();
    let (est, _) = psd_operator_norm(&gram)?;
    if !est.converged {
        return Err(Error::Degenerate("power method did not converge for ‖B‖".into()));
    }
    Ok(est.value)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma {gamma} must lie in (0, 1)")))
    }
}

/// Serial sampling, convex case: `τσ_i‖A_i‖² = γ p_i` for every block.
pub fn plan_serial_convex(norms: &[f64], probabilities: &[f64], gamma: f64) -> Result<StepPlan> {
    check_gamma(gamma)?;
    check_len("serial plan probabilities", norms.len(), probabilities.len())?;
    if norms.is_empty() {
        return Err(Error::InvalidParameter("no blocks".into()));
    }
    for (i, &p) in probabilities.iter().enumerate() {
        if !(p > 0.0) {
            return Err(Error::ImproperSampling { index: i, prob: p });
        }
    }
    if norms.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::InvalidParameter("block norms must be finite and nonnegative".into()));
    }
    let degenerate: Vec<usize> = (0..norms.len()).filter(|&i| norms[i] == 0.0).collect();
    let tau = norms
        .iter()
        .zip(probabilities)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, p)| (p / (a * a)).sqrt())
        .fold(f64::INFINITY, f64::min);
    let tau = if tau.is_finite() { gamma.sqrt() * tau } else { 1.0 };
    let sigmas: Vec<f64> = norms
        .iter()
        .zip(probabilities)
        .map(|(a, p)| if *a > 0.0 { gamma * p / (tau * a * a) } else { 0.0 })
        .collect();
    // a zero block never constrains its dual step; give it the largest one
    let fallback = sigmas.iter().cloned().fold(0.0, f64::max);
    let fallback = if fallback > 0.0 { fallback } else { 1.0 / tau };
    let sigmas = sigmas
        .into_iter()
        .zip(norms)
        .map(|(s, a)| if *a > 0.0 { s } else { fallback })
        .collect();
    Ok(StepPlan {
        tau,
        sigmas,
        theta: 1.0,
        probabilities: probabilities.to_vec(),
        certificate: None,
        degenerate,
    })
}

/// b-serial sampling, convex case: the serial rule applied to blocks,
/// with each block's dual step shared by its members.
pub fn plan_bserial_convex(
    block_norms: &[f64],
    partition: &Partition,
    block_probs: &[f64],
    gamma: f64,
) -> Result<StepPlan> {
    check_len("block norms", partition.m(), block_norms.len())?;
    let block = plan_serial_convex(block_norms, block_probs, gamma)?;
    let n = partition.n();
    let mut sigmas = vec![0.0; n];
    let mut probabilities = vec![0.0; n];
    let mut degenerate = Vec::new();
    for (j, members) in partition.blocks().iter().enumerate() {
        for &i in members {
            sigmas[i] = block.sigmas[j];
            probabilities[i] = block_probs[j];
            if block.degenerate.contains(&j) {
                degenerate.push(i);
            }
        }
    }
    degenerate.sort_unstable();
    Ok(StepPlan {
        tau: block.tau,
        sigmas,
        theta: 1.0,
        probabilities,
        certificate: None,
        degenerate,
    })
}

/// Uniform b-nice sampling, convex case: `τσ = γ b²/(n²‖E(A_S A_S^*)‖)`
/// with `τ = σ`.
pub fn plan_bnice_convex(problem: &SaddleProblem, b: usize, gamma: f64) -> Result<StepPlan> {
    check_gamma(gamma)?;
    let n = problem.n();
    let sampling = Sampling::b_nice(n, b)?;
    let est = expected_gram_norm(&problem.operators(), &sampling)?;
    if !est.converged {
        return Err(Error::Uncertified);
    }
    if est.value == 0.0 {
        return Err(Error::Degenerate("all operators are zero".into()));
    }
    let (nf, bf) = (n as f64, b as f64);
    let step = (gamma * bf * bf / (nf * nf * est.value)).sqrt();
    Ok(StepPlan {
        tau: step,
        sigmas: vec![step; n],
        theta: 1.0,
        probabilities: vec![bf / nf; n],
        certificate: None,
        degenerate: Vec::new(),
    })
}

/// Inputs of the linear-rate formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInputs {
    pub mu_g: f64,
    pub mus: Vec<f64>,
    pub norms: Vec<f64>,
    pub rho: f64,
}

impl RateInputs {
    pub fn from_problem(problem: &SaddleProblem, norms: Vec<f64>, rho: f64) -> Result<Self> {
        let inputs = Self {
            mu_g: problem.mu_g(),
            mus: problem.mus(),
            norms,
            rho,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn n(&self) -> usize {
        self.mus.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_len("rate norms", self.mus.len(), self.norms.len())?;
        if self.mus.is_empty() {
            return Err(Error::InvalidParameter("no blocks".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!("rho {} must lie in (0, 1)", self.rho)));
        }
        if !(self.mu_g > 0.0) {
            return Err(Error::NotStronglyConvex(format!(
                "mu_g = {}; use a convex planner",
                self.mu_g
            )));
        }
        if let Some(i) = self.mus.iter().position(|m| !(*m > 0.0)) {
            return Err(Error::NotStronglyConvex(format!(
                "mu_{i} = {}; use a convex planner",
                self.mus[i]
            )));
        }
        if self.norms.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter("norms must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// `α_i = 1 + ‖A_i‖²/(μ_g μ_i ρ²)`
    pub fn alphas(&self) -> Vec<f64> {
        let r2 = self.rho * self.rho;
        self.norms
            .iter()
            .zip(&self.mus)
            .map(|(a, mu)| 1.0 + a * a / (self.mu_g * mu * r2))
            .collect()
    }
}

fn theta_uniform(p: f64, max_sqrt: f64) -> f64 {
    1.0 - 2.0 * p / (1.0 + max_sqrt)
}

fn nondegenerate(alpha_sqrt: f64) -> Result<f64> {
    let d = alpha_sqrt - 1.0;
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::Degenerate("a block with zero norm makes the dual step unbounded".into()))
    }
}

fn general_from_products(inputs: &RateInputs, probabilities: &[f64], bp: &[f64]) -> Result<StepPlan> {
    let r2 = inputs.rho * inputs.rho;
    let mut theta = f64::NEG_INFINITY;
    let mut sigma = f64::INFINITY;
    let mut tau = f64::INFINITY;
    for i in 0..inputs.n() {
        let p = probabilities[i];
        let sb = (1.0 + bp[i] / (inputs.mu_g * inputs.mus[i] * r2)).sqrt();
        theta = theta.max(1.0 - 2.0 * p / (1.0 + sb));
        sigma = sigma.min(1.0 / (inputs.mus[i] * nondegenerate(sb)?));
        let denom = 1.0 - 2.0 * p + sb;
        if !(denom > 0.0) {
            return Err(Error::Degenerate(format!(
                "primal step denominator 1 − 2p_i + √β_i = {denom} for block {i}"
            )));
        }
        tau = tau.min(p / (inputs.mu_g * denom));
    }
    Ok(StepPlan {
        tau,
        sigmas: vec![sigma; inputs.n()],
        theta,
        probabilities: probabilities.to_vec(),
        certificate: None,
        degenerate: Vec::new(),
    })
}

/// Rate and step sizes for an arbitrary sampling, given `‖B‖`.
pub fn rate_general_sc(inputs: &RateInputs, sampling: &Sampling, norm_b: f64) -> Result<StepPlan> {
    inputs.validate()?;
    check_len("sampling blocks", inputs.n(), sampling.n())?;
    if !(norm_b >= 0.0) {
        return Err(Error::InvalidParameter(format!("‖B‖ = {norm_b} must be nonnegative")));
    }
    let probabilities = sampling.inclusion_probs();
    let bp: Vec<f64> = probabilities.iter().map(|p| norm_b * p).collect();
    general_from_products(inputs, &probabilities, &bp)
}

/// Uniform serial sampling.
pub fn rate_serial_uniform_sc(inputs: &RateInputs) -> Result<StepPlan> {
    inputs.validate()?;
    let n = inputs.n();
    let nf = n as f64;
    let sa: Vec<f64> = inputs.alphas().iter().map(|a| a.sqrt()).collect();
    let max_sa = sa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let d = nondegenerate(max_sa)?;
    let p = 1.0 / nf;
    Ok(StepPlan {
        tau: 1.0 / (inputs.mu_g * (nf - 2.0 + nf * max_sa)),
        sigmas: inputs.mus.iter().map(|mu| 1.0 / (mu * d)).collect(),
        theta: theta_uniform(p, max_sa),
        probabilities: vec![p; n],
        certificate: None,
        degenerate: Vec::new(),
    })
}

/// Serial sampling with the rate-optimal probabilities
/// `p_i = (1 + √α_i)/(n + Σ_j √α_j)`.
pub fn rate_serial_optimized_sc(inputs: &RateInputs) -> Result<StepPlan> {
    inputs.validate()?;
    let nf = inputs.n() as f64;
    let sa: Vec<f64> = inputs.alphas().iter().map(|a| a.sqrt()).collect();
    let total = nf + sa.iter().sum::<f64>();
    let sigmas = sa
        .iter()
        .zip(&inputs.mus)
        .map(|(s, mu)| Ok(1.0 / (mu * nondegenerate(*s)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(StepPlan {
        tau: 1.0 / (inputs.mu_g * (total - 2.0)),
        sigmas,
        theta: 1.0 - 2.0 / total,
        probabilities: sa.iter().map(|s| (1.0 + s) / total).collect(),
        certificate: None,
        degenerate: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    #[default]
    Uniform,
    Optimized,
}

/// b-serial sampling over `partition`: the serial formulas applied to the
/// stacked block operators, `μ̃_j` being the smallest modulus in the block.
pub fn rate_bserial_sc(
    inputs: &RateInputs,
    partition: &Partition,
    block_norms: &[f64],
    mode: ProbabilityMode,
) -> Result<StepPlan> {
    inputs.validate()?;
    check_len("partition size", inputs.n(), partition.n())?;
    check_len("block norms", partition.m(), block_norms.len())?;
    let reduced = RateInputs {
        mu_g: inputs.mu_g,
        mus: partition
            .blocks()
            .iter()
            .map(|b| b.iter().map(|&i| inputs.mus[i]).fold(f64::INFINITY, f64::min))
            .collect(),
        norms: block_norms.to_vec(),
        rho: inputs.rho,
    };
    let block = match mode {
        ProbabilityMode::Uniform => rate_serial_uniform_sc(&reduced)?,
        ProbabilityMode::Optimized => rate_serial_optimized_sc(&reduced)?,
    };
    let n = partition.n();
    let mut sigmas = vec![0.0; n];
    let mut probabilities = vec![0.0; n];
    for (j, members) in partition.blocks().iter().enumerate() {
        for &i in members {
            sigmas[i] = block.sigmas[j];
            probabilities[i] = block.probabilities[j];
        }
    }
    Ok(StepPlan {
        sigmas,
        probabilities,
        ..block
    })
}

/// Uniform b-nice sampling given `‖B‖`. At `b = 1` the product `‖B‖p_i`
/// is `max_j ‖A_j‖²` and is formed from the norms directly.
pub fn rate_bnice_sc(inputs: &RateInputs, b: usize, norm_b: f64) -> Result<StepPlan> {
    inputs.validate()?;
    let n = inputs.n();
    let sampling = Sampling::b_nice(n, b)?;
    if !(norm_b >= 0.0) {
        return Err(Error::InvalidParameter(format!("‖B‖ = {norm_b} must be nonnegative")));
    }
    let p = b as f64 / n as f64;
    let bp = if b == 1 {
        let max = inputs.norms.iter().cloned().fold(0.0, f64::max);
        max * max
    } else {
        norm_b * p
    };
    let mut plan = general_from_products(inputs, &sampling.inclusion_probs(), &vec![bp; n])?;
    // same expression as the uniform serial rate, so the two agree exactly
    let r2 = inputs.rho * inputs.rho;
    let max_sb = inputs
        .mus
        .iter()
        .map(|mu| (1.0 + bp / (inputs.mu_g * mu * r2)).sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    plan.theta = theta_uniform(p, max_sb);
    Ok(plan)
}

/// Deterministic PDHG with strongly convex `g` and `f^*`.
pub fn rate_full_sc(inputs: &RateInputs, norm_a: f64) -> Result<StepPlan> {
    let n = inputs.n();
    let one = Partition::new(n, vec![(0..n).collect()])?;
    rate_bserial_sc(inputs, &one, &[norm_a], ProbabilityMode::Uniform)
}

/// `θ^m`
pub fn rate_per_epoch(theta: f64, m: usize) -> Result<f64> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("theta {theta} must lie in (0, 1]")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("an epoch has at least one iteration".into()));
    }
    Ok(theta.powi(m as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::dense;
    use crate::proximal::ProxFn;
    use crate::sampling::consecutive_partition;

    fn scalar_problem(a: &[f64]) -> SaddleProblem {
        let blocks = a
            .iter()
            .map(|&ai| (dense(1, 1, vec![ai]).unwrap(), ProxFn::L2ConjDataFit { data: vec![0.0] }))
            .collect();
        SaddleProblem::new(blocks, ProxFn::Zero).unwrap()
    }

    fn inputs(ratio: &[f64]) -> RateInputs {
        // ‖A_i‖²/(μ_g μ_i ρ²) = ratio_i with μ_g = μ_i = 1, ρ = 0.5
        RateInputs {
            mu_g: 1.0,
            mus: vec![1.0; ratio.len()],
            norms: ratio.iter().map(|r| (r * 0.25).sqrt()).collect(),
            rho: 0.5,
        }
    }

    #[test]
    fn full_scalar_d_and_failing_certificate() {
        let problem = scalar_problem(&[2.0]);
        let sampling = Sampling::full(1).unwrap();
        let plan = StepPlan {
            tau: 0.75,
            sigmas: vec![0.5],
            theta: 1.0,
            probabilities: vec![1.0],
            certificate: None,
            degenerate: vec![],
        };
        let d = assemble_d(&problem, &sampling, &plan).unwrap();
        let out = d.apply(&[1.0]).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-15);
        let cert = certify(&problem, &sampling, &plan, 1.0).unwrap();
        assert!(!cert.passed);
        assert!((cert.norm_d - 1.5).abs() < 1e-12);
        assert!(cert.margin < 0.0);
    }

    #[test]
    fn serial_plan_products() {
        let plan = plan_serial_convex(&[1.0], &[1.0], 0.25).unwrap();
        assert!((plan.tau * plan.sigmas[0] - 0.25).abs() < 1e-15);
        let plan = plan_serial_convex(&[2.0, 2.0, 2.0], &[1.0 / 3.0; 3], 0.99).unwrap();
        assert!(plan.sigmas.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
        let norms = [0.5, 1.5, 3.0];
        let probs = [0.2, 0.3, 0.5];
        let plan = plan_serial_convex(&norms, &probs, 0.99).unwrap();
        for i in 0..3 {
            assert!((plan.tau * plan.sigmas[i] * norms[i] * norms[i] - 0.99 * probs[i]).abs() < 1e-14);
        }
        let problem = scalar_problem(&norms);
        let cert = certify(&problem, &Sampling::serial(probs.to_vec()).unwrap(), &plan, 1.0).unwrap();
        assert!(cert.passed);
        assert!((cert.norm_d - 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_block_is_flagged() {
        let plan = plan_serial_convex(&[0.0, 1.0], &[0.5, 0.5], 0.5).unwrap();
        assert_eq!(plan.degenerate, vec![0]);
        assert!(plan.sigmas[0] > 0.0);
    }

    #[test]
    fn bserial_singletons_match_serial() {
        let norms = [0.7, 1.1, 0.4, 2.0];
        let probs = [0.25; 4];
        let partition = consecutive_partition(4, 1).unwrap();
        let a = plan_bserial_convex(&norms, &partition, &probs, 0.9).unwrap();
        let b = plan_serial_convex(&norms, &probs, 0.9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tau_inflation_breaks_certificate() {
        let problem = scalar_problem(&[1.0, 2.0]);
        let sampling = Sampling::serial_uniform(2).unwrap();
        let mut plan = plan_serial_convex(&[1.0, 2.0], &[0.5, 0.5], 0.99).unwrap();
        assert!(certify(&problem, &sampling, &plan, 1.0).unwrap().passed);
        plan.tau *= 10.0;
        let cert = certify(&problem, &sampling, &plan, 1.0).unwrap();
        assert!(!cert.passed && cert.margin < 0.0);
    }

    #[test]
    fn eso_scaling() {
        assert_eq!(eso_from_d(0.0, &[0.3, 0.7]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(eso_from_d(0.5, &[0.25, 0.75]).unwrap(), vec![0.125, 0.375]);
        assert!(eso_from_d(-1.0, &[1.0]).is_err());
    }

    #[test]
    fn rate_examples() {
        let one = inputs(&[8.0]);
        let plan = rate_general_sc(&one, &Sampling::full(1).unwrap(), 8.0 * 0.25).unwrap();
        assert!((plan.theta - 0.5).abs() < 1e-15);
        let full = rate_full_sc(&one, one.norms[0]).unwrap();
        assert!((full.theta - 0.5).abs() < 1e-15);

        let two = inputs(&[8.0, 8.0]);
        let us = rate_serial_uniform_sc(&two).unwrap();
        assert!((us.theta - 0.75).abs() < 1e-15);
        let os = rate_serial_optimized_sc(&two).unwrap();
        assert!((os.theta - us.theta).abs() < 1e-15);
        assert!(os.probabilities.iter().all(|p| (p - 0.5).abs() < 1e-15));

        let single = rate_serial_uniform_sc(&one).unwrap();
        assert!((single.theta - full.theta).abs() < 1e-15);
    }

    #[test]
    fn general_matches_uniform_serial_on_symmetric_blocks() {
        let two = inputs(&[8.0, 8.0]);
        // serial: ‖B‖ = max_i ‖A_i‖²/p_i
        let norm_b = two.norms[0].powi(2) * 2.0;
        let g = rate_general_sc(&two, &Sampling::serial_uniform(2).unwrap(), norm_b).unwrap();
        let us = rate_serial_uniform_sc(&two).unwrap();
        assert!((g.theta - us.theta).abs() < 1e-15);
    }

    #[test]
    fn not_strongly_convex_rejected() {
        let mut bad = inputs(&[1.0]);
        bad.mu_g = 0.0;
        assert!(matches!(rate_serial_uniform_sc(&bad), Err(Error::NotStronglyConvex(_))));
        let mut bad = inputs(&[1.0, 1.0]);
        bad.mus[1] = 0.0;
        assert!(matches!(rate_serial_optimized_sc(&bad), Err(Error::NotStronglyConvex(_))));
    }

    #[test]
    fn degenerate_corner_guarded() {
        // p = 1 and β = 1 make the primal denominator vanish
        let zero = RateInputs {
            mu_g: 1.0,
            mus: vec![1.0],
            norms: vec![0.0],
            rho: 0.9,
        };
        assert!(matches!(
            rate_general_sc(&zero, &Sampling::full(1).unwrap(), 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn per_epoch_rates() {
        assert_eq!(rate_per_epoch(1.0, 7).unwrap(), 1.0);
        assert!((rate_per_epoch(0.99, 12).unwrap() - 0.886385).abs() < 1e-6);
        assert_eq!(rate_per_epoch(0.3, 1).unwrap(), 0.3);
        assert!(rate_per_epoch(0.0, 1).is_err());
        assert!(rate_per_epoch(0.5, 0).is_err());
    }

    #[test]
    fn bnice_b1_equals_uniform_serial() {
        let r = RateInputs {
            mu_g: 0.3,
            mus: vec![1.0; 4],
            norms: vec![0.5, 1.2, 0.8, 1.0],
            rho: 0.99,
        };
        let un = rate_bnice_sc(&r, 1, 4.0 * 1.44).unwrap();
        let us = rate_serial_uniform_sc(&r).unwrap();
        assert_eq!(un.theta, us.theta);
    }

    #[test]
    fn norm_cache_reuses_values() {
        let problem = scalar_problem(&[3.0, 4.0]);
        let cache = NormCache::for_problem(&problem);
        assert!((cache.subset_norm(&[1]).unwrap() - 4.0).abs() < 1e-8);
        assert!((cache.full_norm().unwrap() - 5.0).abs() < 1e-8);
        assert_eq!(cache.subset_norm(&[1, 0]).unwrap(), cache.full_norm().unwrap());
        assert!(cache.subset_norm(&[2]).is_err());
    }
}
