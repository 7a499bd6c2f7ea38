//! Proximity operators `prox_{s h}(v) = argmin_u ½‖v − u‖² + s·h(u)`.
//!
//! Every kind except TV + ℓ2 has a closed form. The
//! TV + ℓ2 regularizer is handled by FISTA on the dual of its TV term, with a
//! warm-start buffer that persists across calls inside one solver run.

use crate::error::{check_len, Error, Result};
use crate::operators::{dot, LinOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvVariant {
    /// ℓ1 norm over every difference entry.
    #[default]
    Anisotropic,
    /// ℓ2 norm over all differences at a pixel, summed over pixels.
    Isotropic,
}

/// `λ1‖∇u‖_1 + (λ2/2)‖u‖²`
#[derive(Debug, Clone)]
pub struct TvL2 {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gradient: LinOp,
    pub variant: TvVariant,
    /// Default FISTA iterations per prox call.
    pub inner_iters: usize,
}

#[derive(Debug, Clone)]
pub enum ProxFn {
    Zero,
    /// `(weight/2)‖u − shift‖²`
    L2SquaredShifted { weight: f64, shift: Vec<f64> },
    /// `weight·‖u‖_1`
    L1Norm { weight: f64 },
    /// Convex conjugate of `½‖· − data‖²`, i.e. `½‖u‖² + ⟨data, u⟩`.
    L2ConjDataFit { data: Vec<f64> },
    TvL2(TvL2),
}

/// Inner-solver state for [`ProxFn::TvL2`]; one per solver run.
#[derive(Debug, Clone)]
pub struct FistaConfig {
    pub inner_iters: usize,
    pub warm_start: Vec<f64>,
}

impl FistaConfig {
    pub fn new(inner_iters: usize, dual_len: usize) -> Result<Self> {
        if inner_iters == 0 {
            return Err(Error::InvalidParameter("FISTA needs at least one inner iteration".into()));
        }
        Ok(Self {
            inner_iters,
            warm_start: vec![0.0; dual_len],
        })
    }

    pub fn for_tv(tv: &TvL2) -> Result<Self> {
        Self::new(tv.inner_iters, tv.gradient.codomain().len())
    }
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("prox step {step} must be positive")))
    }
}

impl ProxFn {
    pub fn tv_l2(lambda1: f64, lambda2: f64, gradient: LinOp, variant: TvVariant, inner_iters: usize) -> Result<Self> {
        if lambda1 < 0.0 || lambda2 < 0.0 {
            return Err(Error::InvalidParameter("TV/L2 weights must be nonnegative".into()));
        }
        if inner_iters == 0 {
            return Err(Error::InvalidParameter("FISTA needs at least one inner iteration".into()));
        }
        Ok(ProxFn::TvL2(TvL2 {
            lambda1,
            lambda2,
            gradient,
            variant,
            inner_iters,
        }))
    }

    /// Modulus of strong convexity.
    pub fn strong_convexity(&self) -> f64 {
        match self {
            ProxFn::Zero | ProxFn::L1Norm { .. } => 0.0,
            ProxFn::L2SquaredShifted { weight, .. } => *weight,
            ProxFn::L2ConjDataFit { .. } => 1.0,
            ProxFn::TvL2(tv) => tv.lambda2,
        }
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(match self {
            ProxFn::Zero => 0.0,
            ProxFn::L2SquaredShifted { weight, shift } => {
                check_len("prox shift", shift.len(), u.len())?;
                0.5 * weight * u.iter().zip(shift).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            }
            ProxFn::L1Norm { weight } => weight * u.iter().map(|v| v.abs()).sum::<f64>(),
            ProxFn::L2ConjDataFit { data } => {
                check_len("prox data", data.len(), u.len())?;
                0.5 * dot(u, u) + dot(data, u)
            }
            ProxFn::TvL2(tv) => {
                let g = tv.gradient.apply(u)?;
                tv.lambda1 * tv_norm(tv, &g) + 0.5 * tv.lambda2 * dot(u, u)
            }
        })
    }

    /// Exact for the closed-form kinds; TV uses a fresh zero warm start and
    /// the default inner iteration count.
    pub fn prox(&self, step: f64, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            ProxFn::TvL2(tv) => {
                let mut cfg = FistaConfig::for_tv(tv)?;
                self.prox_with(step, v, Some(&mut cfg))
            }
            _ => self.prox_with(step, v, None),
        }
    }

    /// Like [`prox`](Self::prox), but TV reuses (and updates) `fista`.
    pub fn prox_with(&self, step: f64, v: &[f64], fista: Option<&mut FistaConfig>) -> Result<Vec<f64>> {
        check_step(step)?;
        match self {
            ProxFn::Zero => Ok(v.to_vec()),
            ProxFn::L2SquaredShifted { weight, shift } => {
                check_len("prox shift", shift.len(), v.len())?;
                let sw = step * weight;
                Ok(v.iter()
                    .zip(shift)
                    .map(|(vi, bi)| (vi + sw * bi) / (1.0 + sw))
                    .collect())
            }
            ProxFn::L1Norm { weight } => {
                let t = step * weight;
                Ok(v.iter().map(|&vi| soft_threshold(vi, t)).collect())
            }
            ProxFn::L2ConjDataFit { data } => prox_l2conj_datafit(step, data, v),
            ProxFn::TvL2(tv) => match fista {
                Some(cfg) => prox_tv_l2(cfg, tv, step, v),
                None => {
                    let mut cfg = FistaConfig::for_tv(tv)?;
                    prox_tv_l2(&mut cfg, tv, step, v)
                }
            },
        }
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Prox of `σ·f^*` for `f = ½‖· − b‖²`: `(v − σ b)/(1 + σ)`.
pub fn prox_l2conj_datafit(sigma: f64, b: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_step(sigma)?;
    check_len("data-fit prox", b.len(), v.len())?;
    Ok(v.iter()
        .zip(b)
        .map(|(vi, bi)| (vi - sigma * bi) / (1.0 + sigma))
        .collect())
}

fn tv_norm(tv: &TvL2, g: &[f64]) -> f64 {
    match tv.variant {
        TvVariant::Anisotropic => g.iter().map(|v| v.abs()).sum(),
        TvVariant::Isotropic => {
            let groups = PixelGroups::new(tv);
            (0..groups.pixels)
                .map(|p| groups.indices(p).map(|k| g[k] * g[k]).sum::<f64>().sqrt())
                .sum()
        }
    }
}

/// Index layout of the stacked gradient `[axis, pixel, component]`.
struct PixelGroups {
    pixels: usize,
    components: usize,
    plane: usize,
}

impl PixelGroups {
    fn new(tv: &TvL2) -> Self {
        let dom = tv.gradient.domain();
        let components = dom.field().components();
        Self {
            pixels: dom.points(),
            components,
            plane: dom.len(),
        }
    }

    fn indices(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        (0..2).flat_map(move |ax| {
            (0..self.components).map(move |k| ax * self.plane + p * self.components + k)
        })
    }
}

fn project_dual(tv: &TvL2, q: &mut [f64], radius: f64) {
    match tv.variant {
        TvVariant::Anisotropic => q.iter_mut().for_each(|v| *v = v.clamp(-radius, radius)),
        TvVariant::Isotropic => {
            let groups = PixelGroups::new(tv);
            for p in 0..groups.pixels {
                let n = groups.indices(p).map(|k| q[k] * q[k]).sum::<f64>().sqrt();
                if n > radius {
                    let s = if n > 0.0 { radius / n } else { 0.0 };
                    for k in groups.indices(p) {
                        q[k] *= s;
                    }
                }
            }
        }
    }
}

/// Approximates `argmin_u ½‖v − u‖² + τλ1‖∇u‖_1 + (τλ2/2)‖u‖²`.
///
/// With `a = 1 + τλ2` the minimizer is `u = (v − ∇^*q)/a` for the dual
/// `q ∈ {‖q‖_∞ ≤ τλ1}` minimizing `‖v − ∇^*q‖²/(2a)`; FISTA runs on `q`
/// starting from `cfg.warm_start`, which is overwritten with the final `q`.
pub fn prox_tv_l2(cfg: &mut FistaConfig, tv: &TvL2, tau: f64, v: &[f64]) -> Result<Vec<f64>> {
    check_step(tau)?;
    if cfg.inner_iters == 0 {
        return Err(Error::InvalidParameter("FISTA needs at least one inner iteration".into()));
    }
    let grad = &tv.gradient;
    check_len("TV prox input", grad.domain().len(), v.len())?;
    check_len("FISTA warm-start buffer", grad.codomain().len(), cfg.warm_start.len())?;

    let a = 1.0 + tau * tv.lambda2;
    let radius = tau * tv.lambda1;
    let grad_norm = grad.cached_norm().unwrap_or(8f64.sqrt());
    let step = if grad_norm > 0.0 { a / (grad_norm * grad_norm) } else { 1.0 };

    let mut q = std::mem::take(&mut cfg.warm_start);
    project_dual(tv, &mut q, radius);
    let mut p = q.clone();
    let mut t = 1.0f64;
    let mut u = vec![0.0; v.len()];
    let mut div = vec![0.0; v.len()];
    let mut gu = vec![0.0; q.len()];

    for _ in 0..cfg.inner_iters {
        grad.adjoint_into(&p, &mut div);
        for ((ui, vi), di) in u.iter_mut().zip(v).zip(&div) {
            *ui = (vi - di) / a;
        }
        grad.apply_into(&u, &mut gu);
        let mut q_next: Vec<f64> = p.iter().zip(&gu).map(|(pi, gi)| pi + step * gi).collect();
        project_dual(tv, &mut q_next, radius);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        for ((pi, qn), qo) in p.iter_mut().zip(&q_next).zip(&q) {
            *pi = qn + momentum * (qn - qo);
        }
        q = q_next;
        t = t_next;
    }

    grad.adjoint_into(&q, &mut div);
    for ((ui, vi), di) in u.iter_mut().zip(v).zip(&div) {
        *ui = (vi - di) / a;
    }
    cfg.warm_start = q;
    Ok(u)
}

/// `½‖v − u‖² + step·h(u)`, the objective every prox minimizes.
pub fn moreau_objective(f: &ProxFn, step: f64, v: &[f64], u: &[f64]) -> Result<f64> {
    let d: f64 = v.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(0.5 * d + step * f.value(u)?)
}
