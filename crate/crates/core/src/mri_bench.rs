//! Synthetic parallel MRI. Coils sit on a circle around a phantom and k-space
//! is subsampled by rows, giving the saddle problem
//! `min_x Σ_i ½‖S F (c_i ⊙ x) − b_i‖² + λ1‖∇x‖_1 + (λ2/2)‖x‖²`.

use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{diagonal_complex, dft2, gradient_op, subsample, Boundary, Field, LinOp, VecSpace};
use crate::proximal::{ProxFn, TvVariant};
use crate::solver::SaddleProblem;
use crate::stepsize::NormOracle;

/// Interleaves real and imaginary parts, the layout of complex spaces.
pub fn realify(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn complexify(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Pixel `(i, j)` in coordinates where the grid spans `[-1, 1]` along its
/// longer side.
fn pixel_coords(shape: [usize; 2], i: usize, j: usize) -> (f64, f64) {
    let h = (shape[0].max(shape[1]) as f64 - 1.0) / 2.0;
    let u = (j as f64 - (shape[1] as f64 - 1.0) / 2.0) / h;
    let v = (i as f64 - (shape[0] as f64 - 1.0) / 2.0) / h;
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    #[default]
    Blobs,
    Rings,
}

/// Piecewise-constant magnitude in `[0, 1]` with a smooth linear phase.
pub fn make_phantom(shape: [usize; 2], kind: PhantomKind, seed: u64) -> Result<Vec<Complex64>> {
    if shape[0] < 8 || shape[1] < 8 {
        return Err(Error::UnsupportedShape(format!("phantom needs at least 8x8, got {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut mag = vec![0.0; shape[0] * shape[1]];
    let inside_body = |u: f64, v: f64| (u / 0.85).powi(2) + (v / 0.95).powi(2) <= 1.0;
    match kind {
        PhantomKind::Blobs => {
            let blobs: Vec<[f64; 6]> = (0..6)
                .map(|_| {
                    let r = 0.6 * rng.random::<f64>().sqrt();
                    let phi = rng.random_range(0.0..2.0 * PI);
                    [
                        r * phi.cos(),
                        r * phi.sin(),
                        rng.random_range(0.08..0.35),
                        rng.random_range(0.08..0.35),
                        rng.random_range(0.0..PI),
                        rng.random_range(0.15..0.45),
                    ]
                })
                .collect();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    let (u, v) = pixel_coords(shape, i, j);
                    if !inside_body(u, v) {
                        continue;
                    }
                    let mut m = 0.3;
                    for &[cu, cv, ax, ay, rot, level] in &blobs {
                        let (du, dv) = (u - cu, v - cv);
                        let (p, q) = (du * rot.cos() + dv * rot.sin(), -du * rot.sin() + dv * rot.cos());
                        if (p / ax).powi(2) + (q / ay).powi(2) <= 1.0 {
                            m += level;
                        }
                    }
                    mag[i * shape[1] + j] = f64::min(m, 1.0);
                }
            }
        }
        PhantomKind::Rings => {
            let mut radii: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..0.8)).collect();
            radii.sort_by(f64::total_cmp);
            let levels: Vec<f64> = (0..4).map(|_| rng.random_range(0.2..0.7)).collect();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    let (u, v) = pixel_coords(shape, i, j);
                    if !inside_body(u, v) {
                        continue;
                    }
                    let r = u.hypot(v);
                    let mut m = 0.2;
                    for (rk, lk) in radii.iter().zip(&levels) {
                        if (r - rk).abs() < 0.06 {
                            m = *lk;
                        }
                    }
                    mag[i * shape[1] + j] = f64::min(m, 1.0);
                }
            }
        }
    }
    Ok(mag
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let (u, v) = pixel_coords(shape, k / shape[1], k % shape[1]);
            Complex64::from_polar(m, PI / 4.0 * (a * u + b * v))
        })
        .collect())
}

/// Receiver coils spaced evenly on the circle through the grid corners.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilArray {
    pub shape: [usize; 2],
    pub decay: f64,
    /// Angular position of each coil.
    pub angles: Vec<f64>,
    /// Common factor making the largest sum of squares equal to 1.
    pub scale: f64,
    pub maps: Vec<Vec<Complex64>>,
}

fn raw_sensitivity(angle: f64, decay: f64, u: f64, v: f64) -> Complex64 {
    let (pu, pv) = (SQRT_2 * angle.cos(), SQRT_2 * angle.sin());
    let d2 = (u - pu).powi(2) + (v - pv).powi(2);
    let tangential = -u * angle.sin() + v * angle.cos();
    Complex64::from_polar((-decay * d2).exp(), decay * tangential)
}

impl CoilArray {
    pub fn n(&self) -> usize {
        self.maps.len()
    }

    /// Sensitivity of coil `j` at continuous coordinates `(u, v)`.
    pub fn sensitivity_at(&self, j: usize, u: f64, v: f64) -> Complex64 {
        raw_sensitivity(self.angles[j], self.decay, u, v) * self.scale
    }

    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut sos = vec![0.0; self.shape[0] * self.shape[1]];
        for map in &self.maps {
            for (s, c) in sos.iter_mut().zip(map) {
                *s += c.norm_sqr();
            }
        }
        sos
    }

    pub fn max_abs(&self, j: usize) -> f64 {
        self.maps[j].iter().fold(0.0, |m, c| m.max(c.norm()))
    }
}

/// Magnitude `exp(−decay·d²)` in the distance `d` to the coil, phase
/// `decay·⟨p, t⟩` with `t` tangent to the circle at the coil.
pub fn make_coil_maps(shape: [usize; 2], n: usize, decay: f64) -> Result<CoilArray> {
    if n == 0 {
        return Err(Error::InvalidParameter("at least one coil is needed".into()));
    }
    if !(decay >= 0.0) || !decay.is_finite() {
        return Err(Error::InvalidParameter(format!("coil decay {decay} must be nonnegative")));
    }
    let angles: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
    let maps: Vec<Vec<Complex64>> = angles
        .iter()
        .map(|&a| {
            (0..shape[0] * shape[1])
                .map(|k| {
                    let (u, v) = pixel_coords(shape, k / shape[1], k % shape[1]);
                    raw_sensitivity(a, decay, u, v)
                })
                .collect()
        })
        .collect();
    let mut coils = CoilArray {
        shape,
        decay,
        angles,
        scale: 1.0,
        maps,
    };
    let peak = coils.sum_of_squares().into_iter().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::IllPosed("coil maps vanish everywhere".into()));
    }
    coils.scale = 1.0 / peak.sqrt();
    for map in &mut coils.maps {
        map.iter_mut().for_each(|c| *c *= coils.scale);
    }
    Ok(coils)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Full,
    #[default]
    UniformRows,
    Random,
}

/// Cartesian k-space sampling by whole rows (phase-encoding lines), in the
/// unshifted DFT layout where row 0 is the zero frequency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub shape: [usize; 2],
    pub rows: Vec<bool>,
}

impl Mask {
    pub fn kept_rows(&self) -> usize {
        self.rows.iter().filter(|r| **r).count()
    }

    /// One flag per grid point, row-major.
    pub fn points(&self) -> Vec<bool> {
        self.rows
            .iter()
            .flat_map(|&r| std::iter::repeat_n(r, self.shape[1]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &r in &self.rows {
            let ch = if r { '1' } else { '0' };
            s.extend(std::iter::repeat_n(ch, self.shape[1]));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let cols = lines.first().map(|l| l.trim().len()).unwrap_or(0);
        if cols == 0 {
            return Err(Error::Parse("empty mask".into()));
        }
        let mut rows = Vec::with_capacity(lines.len());
        for line in &lines {
            let line = line.trim();
            if line.len() != cols || line.chars().any(|c| c != '0' && c != '1') {
                return Err(Error::Parse(format!("bad mask row {line:?}")));
            }
            let kept = line.starts_with('1');
            if line.chars().any(|c| (c == '1') != kept) {
                return Err(Error::Parse("mask rows must be all kept or all dropped".into()));
            }
            rows.push(kept);
        }
        Ok(Self {
            shape: [rows.len(), cols],
            rows,
        })
    }
}

/// Signed frequency of DFT row `k`.
fn frequency(k: usize, rows: usize) -> i64 {
    if k < rows.div_ceil(2) {
        k as i64
    } else {
        k as i64 - rows as i64
    }
}

/// Width of the always-kept low-frequency band.
pub fn center_band(rows: usize) -> usize {
    (rows / 8).max(2).min(rows)
}

/// Keeps `round(fraction·rows)` rows: the low-frequency band plus the rest
/// chosen by `kind`.
pub fn make_mask(shape: [usize; 2], kind: MaskKind, fraction: f64, seed: u64) -> Result<Mask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("mask fraction {fraction} must lie in (0, 1]")));
    }
    let r = shape[0];
    if kind == MaskKind::Full || fraction == 1.0 {
        return Ok(Mask {
            shape,
            rows: vec![true; r],
        });
    }
    let kept = (fraction * r as f64).round() as usize;
    let w = center_band(r) as i64;
    if kept < w as usize {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} keeps {kept} rows, fewer than the {w}-row center band"
        )));
    }
    let mut rows = vec![false; r];
    // rows outside the band, ordered from lowest to highest signed frequency
    let mut others: Vec<usize> = Vec::new();
    for k in 0..r {
        let f = frequency(k, r);
        if f >= -w / 2 && f < w - w / 2 {
            rows[k] = true;
        } else {
            others.push(k);
        }
    }
    others.sort_by_key(|&k| frequency(k, r));
    let need = kept - (r - others.len());
    let picks: Vec<usize> = match kind {
        MaskKind::UniformRows => (0..need)
            .map(|t| ((t as f64 + 0.5) * others.len() as f64 / need as f64) as usize)
            .collect(),
        MaskKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, others.len(), need).into_vec()
        }
        MaskKind::Full => unreachable!(),
    };
    for p in picks {
        rows[others[p]] = true;
    }
    Ok(Mask { shape, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LambdaMode {
    /// Picks `λ1, λ2` so that `λ1‖∇x_true‖_1` and `(λ2/2)‖x_true‖²` are the
    /// given shares of the data energy `½Σ‖b_i‖²`.
    Auto { tv_share: f64, l2_share: f64 },
    Literal { lambda1: f64, lambda2: f64 },
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Auto {
            tv_share: 0.03,
            l2_share: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub shape: [usize; 2],
    pub coils: usize,
    pub decay: f64,
    pub phantom: PhantomKind,
    pub mask: MaskKind,
    pub fraction: f64,
    /// `None` means noiseless data.
    pub snr_db: Option<f64>,
    pub lambda: LambdaMode,
    pub tv: TvVariant,
    pub fista_iters: usize,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            shape: [32, 32],
            coils: 12,
            decay: 1.0,
            phantom: PhantomKind::Blobs,
            mask: MaskKind::UniformRows,
            fraction: 0.5,
            snr_db: Some(30.0),
            lambda: LambdaMode::default(),
            tv: TvVariant::Anisotropic,
            fista_iters: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MriInstance {
    pub spec: InstanceSpec,
    pub x_true: Vec<Complex64>,
    pub coils: CoilArray,
    pub mask: Mask,
    /// Realified `b_i`.
    pub data: Vec<Vec<f64>>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub noise_sigma: f64,
}

/// Smallest sum of squares tolerated anywhere on the grid.
pub const SOS_FLOOR: f64 = 1e-6;

fn forward_ops(coils: &CoilArray, mask: &Mask) -> Result<Vec<LinOp>> {
    let shape = coils.shape;
    let space = VecSpace::complex(&shape)?;
    let s = subsample(space, &mask.points())?;
    let f = dft2(shape)?;
    let sf = s.compose(&f)?;
    coils
        .maps
        .iter()
        .enumerate()
        .map(|(j, map)| {
            let c = diagonal_complex(&shape, map.clone())?;
            Ok(sf.compose(&c)?.with_cached_norm(coils.max_abs(j)))
        })
        .collect()
}

fn assemble(inst: &MriInstance) -> Result<SaddleProblem> {
    let ops = forward_ops(&inst.coils, &inst.mask)?;
    let grad = gradient_op(&inst.coils.shape, Field::Complex, Boundary::Neumann)?;
    let g = ProxFn::tv_l2(inst.lambda1, inst.lambda2, grad, inst.spec.tv, inst.spec.fista_iters)?;
    let blocks = ops
        .into_iter()
        .zip(&inst.data)
        .map(|(op, b)| (op, ProxFn::L2ConjDataFit { data: b.clone() }))
        .collect();
    SaddleProblem::new(blocks, g)
}

/// Generates the instance described by `spec` and its saddle problem.
pub fn build_problem(spec: &InstanceSpec) -> Result<(MriInstance, SaddleProblem)> {
    let shape = spec.shape;
    let x_true = make_phantom(shape, spec.phantom, spec.seed)?;
    let coils = make_coil_maps(shape, spec.coils, spec.decay)?;
    let min_sos = coils.sum_of_squares().into_iter().fold(f64::INFINITY, f64::min);
    if min_sos < SOS_FLOOR {
        return Err(Error::IllPosed(format!(
            "coil sum of squares drops to {min_sos:e}; lower the decay or add coils"
        )));
    }
    let mask = make_mask(shape, spec.mask, spec.fraction, spec.seed.wrapping_add(1))?;
    let ops = forward_ops(&coils, &mask)?;
    let xr = realify(&x_true);
    let mut data: Vec<Vec<f64>> = ops.iter().map(|op| op.apply(&xr)).collect::<Result<_>>()?;

    let entries: usize = data.iter().map(|b| b.len() / 2).sum();
    let power: f64 = data.iter().flatten().map(|v| v * v).sum::<f64>() / entries as f64;
    let noise_sigma = match spec.snr_db {
        Some(db) => (power * 10f64.powf(-db / 10.0)).sqrt(),
        None => 0.0,
    };
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
        let normal = Normal::new(0.0, noise_sigma / SQRT_2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in data.iter_mut().flatten() {
            *v += normal.sample(&mut rng);
        }
    }

    let (lambda1, lambda2) = match spec.lambda {
        LambdaMode::Literal { lambda1, lambda2 } => (lambda1, lambda2),
        LambdaMode::Auto { tv_share, l2_share } => {
            let energy = 0.5 * data.iter().flatten().map(|v| v * v).sum::<f64>();
            let grad = gradient_op(&shape, Field::Complex, Boundary::Neumann)?;
            let tv_only = ProxFn::tv_l2(1.0, 0.0, grad, spec.tv, 1)?;
            let tv = tv_only.value(&xr)?;
            let sq: f64 = xr.iter().map(|v| v * v).sum();
            if !(tv > 0.0 && sq > 0.0) {
                return Err(Error::IllPosed("phantom has no structure to calibrate against".into()));
            }
            (tv_share * energy / tv, l2_share * energy / (0.5 * sq))
        }
    };
    let inst = MriInstance {
        spec: spec.clone(),
        x_true,
        coils,
        mask,
        data,
        lambda1,
        lambda2,
        noise_sigma,
    };
    let problem = assemble(&inst)?;
    Ok((inst, problem))
}

fn write_complex(dir: &Path, name: &str, dims: &[usize], values: &[Complex64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 16);
    for c in values {
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    fs::write(dir.join(format!("{name}.bin")), bytes)?;
    let dims = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
    fs::write(dir.join(format!("{name}.hdr")), format!("complex128 little-endian\nshape {dims}\n"))?;
    Ok(())
}

fn read_complex(dir: &Path, name: &str) -> Result<(Vec<usize>, Vec<Complex64>)> {
    let hdr = fs::read_to_string(dir.join(format!("{name}.hdr")))?;
    let dims: Vec<usize> = hdr
        .lines()
        .find_map(|l| l.strip_prefix("shape "))
        .ok_or_else(|| Error::Parse(format!("{name}.hdr has no shape line")))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad dimension {t:?} in {name}.hdr"))))
        .collect::<Result<_>>()?;
    let bytes = fs::read(dir.join(format!("{name}.bin")))?;
    let count: usize = dims.iter().product();
    if bytes.len() != count * 16 {
        return Err(Error::Parse(format!(
            "{name}.bin holds {} bytes, header implies {}",
            bytes.len(),
            count * 16
        )));
    }
    let values = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((dims, values))
}

/// Writes `x_true`, coil maps and data as binary arrays with text headers,
/// the mask as a 0/1 grid and everything else as `key=value` lines.
pub fn export_instance(inst: &MriInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let [r, c] = inst.coils.shape;
    write_complex(dir, "x_true", &[r, c], &inst.x_true)?;
    let maps: Vec<Complex64> = inst.coils.maps.iter().flatten().copied().collect();
    write_complex(dir, "coils", &[inst.coils.n(), r, c], &maps)?;
    let per_coil = inst.data[0].len() / 2;
    let data: Vec<Complex64> = inst.data.iter().flat_map(|b| complexify(b)).collect();
    write_complex(dir, "data", &[inst.data.len(), per_coil], &data)?;
    fs::write(dir.join("mask.txt"), inst.mask.to_text())?;

    let mut meta = String::new();
    let _ = writeln!(meta, "spec={}", serde_json::to_string(&inst.spec)?);
    let _ = writeln!(meta, "lambda1={}", inst.lambda1);
    let _ = writeln!(meta, "lambda2={}", inst.lambda2);
    let _ = writeln!(meta, "noise_sigma={}", inst.noise_sigma);
    let _ = writeln!(meta, "coil_scale={}", inst.coils.scale);
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

pub(crate) fn read_key_values(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn meta_f64(meta: &HashMap<String, String>, key: &str) -> Result<f64> {
    meta.get(key)
        .ok_or_else(|| Error::Parse(format!("meta.txt lacks {key}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("meta.txt has a bad {key}")))
}

/// Reads a directory written by [`export_instance`].
pub fn import_instance(dir: &Path) -> Result<(MriInstance, SaddleProblem)> {
    let meta = read_key_values(&dir.join("meta.txt"))?;
    let spec: InstanceSpec = serde_json::from_str(meta.get("spec").ok_or_else(|| Error::Parse("meta.txt lacks spec".into()))?)?;
    let (xdims, x_true) = read_complex(dir, "x_true")?;
    let (cdims, maps) = read_complex(dir, "coils")?;
    let (ddims, data) = read_complex(dir, "data")?;
    if xdims != spec.shape || cdims.len() != 3 || cdims[1..] != spec.shape || ddims.len() != 2 || ddims[0] != cdims[0] {
        return Err(Error::Parse("array headers disagree with the instance spec".into()));
    }
    let mask = Mask::from_text(&fs::read_to_string(dir.join("mask.txt"))?)?;
    if mask.shape != spec.shape || mask.kept_rows() * spec.shape[1] != ddims[1] {
        return Err(Error::Parse("mask disagrees with the data".into()));
    }
    let points = spec.shape[0] * spec.shape[1];
    let n = cdims[0];
    let coils = CoilArray {
        shape: spec.shape,
        decay: spec.decay,
        angles: (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect(),
        scale: meta_f64(&meta, "coil_scale")?,
        maps: maps.chunks_exact(points).map(|m| m.to_vec()).collect(),
    };
    let inst = MriInstance {
        data: data.chunks_exact(ddims[1]).map(realify).collect(),
        lambda1: meta_f64(&meta, "lambda1")?,
        lambda2: meta_f64(&meta, "lambda2")?,
        noise_sigma: meta_f64(&meta, "noise_sigma")?,
        spec,
        x_true,
        coils,
        mask,
    };
    let problem = assemble(&inst)?;
    Ok((inst, problem))
}

/// Exact norms of the benchmark operators. With a row mask and a unitary DFT,
/// `A_i^* A_i = C_i^* (P ⊗ I) C_i` where `P` projects each image column onto
/// the kept frequencies, so every Gram operator splits into one small
/// Hermitian matrix per image column.
#[derive(Debug, Clone)]
pub struct MriNorms {
    rows: usize,
    cols: usize,
    projector: DMatrix<Complex64>,
    maps: Vec<Vec<Complex64>>,
}

impl MriNorms {
    pub fn new(coils: &CoilArray, mask: &Mask) -> Result<Self> {
        if coils.shape != mask.shape {
            return Err(Error::InvalidParameter("coil and mask shapes differ".into()));
        }
        let [rows, cols] = coils.shape;
        let kept: Vec<usize> = (0..rows).filter(|&u| mask.rows[u]).collect();
        let projector = DMatrix::from_fn(rows, rows, |j, k| {
            let d = j as f64 - k as f64;
            kept.iter()
                .map(|&u| Complex64::from_polar(1.0, 2.0 * PI * u as f64 * d / rows as f64))
                .sum::<Complex64>()
                / rows as f64
        });
        Ok(Self {
            rows,
            cols,
            projector,
            maps: coils.maps.clone(),
        })
    }

    pub fn for_instance(inst: &MriInstance) -> Result<Self> {
        Self::new(&inst.coils, &inst.mask)
    }

    /// `A_i^* A_i` restricted to image column `c`.
    fn gram(&self, i: usize, c: usize) -> DMatrix<Complex64> {
        let a = |r: usize| self.maps[i][r * self.cols + c];
        DMatrix::from_fn(self.rows, self.rows, |j, k| a(j).conj() * self.projector[(j, k)] * a(k))
    }

    fn top(m: DMatrix<Complex64>) -> f64 {
        m.symmetric_eigenvalues().max()
    }

    fn check(&self, subset: &[usize]) -> Result<()> {
        match subset.iter().find(|&&i| i >= self.maps.len()) {
            Some(&index) => Err(Error::IndexOutOfRange {
                index,
                n: self.maps.len(),
            }),
            None if subset.is_empty() => Err(Error::InvalidParameter("empty block subset".into())),
            None => Ok(()),
        }
    }

    pub fn subset_norm(&self, subset: &[usize]) -> Result<f64> {
        self.check(subset)?;
        let top = (0..self.cols)
            .map(|c| {
                let mut h = DMatrix::zeros(self.rows, self.rows);
                for &i in subset {
                    h += self.gram(i, c);
                }
                Self::top(h)
            })
            .fold(0.0, f64::max);
        Ok(top.max(0.0).sqrt())
    }

    /// `‖B‖ = (n/b)² ‖E(A_S A_S^*)‖` for uniform b-nice sampling. Writing
    /// `E(A_S A_S^*) = q AA^* + (p − q) diag(A_i A_i^*)` with `p = b/n` and
    /// `q` the pair probability gives `E = GG^*` for a `G` whose Gram
    /// operator `G^*G` again splits by image column.
    pub fn bnice_norm_b(&self, b: usize) -> Result<f64> {
        let n = self.maps.len();
        let sampling = crate::sampling::Sampling::b_nice(n, b)?;
        let p = sampling.inclusion_prob(0)?;
        let q = if n > 1 { sampling.pair_prob(0, 1)? } else { p };
        let r = (p - q).max(0.0);
        let (wq, wx) = (q, (q * r).sqrt());
        let dim = self.rows;
        let top = (0..self.cols)
            .map(|c| {
                let mut m = DMatrix::zeros((n + 1) * dim, (n + 1) * dim);
                for i in 0..n {
                    let k = self.gram(i, c);
                    let lo = (i + 1) * dim;
                    let mut corner = m.view_mut((0, 0), (dim, dim));
                    corner += &k * Complex64::from(wq);
                    m.view_mut((0, lo), (dim, dim)).copy_from(&(&k * Complex64::from(wx)));
                    m.view_mut((lo, 0), (dim, dim)).copy_from(&(&k * Complex64::from(wx)));
                    m.view_mut((lo, lo), (dim, dim)).copy_from(&(&k * Complex64::from(r)));
                }
                Self::top(m)
            })
            .fold(0.0, f64::max);
        let scale = n as f64 / b as f64;
        Ok(scale * scale * top.max(0.0))
    }
}

impl NormOracle for MriNorms {
    fn subset_norm(&self, subset: &[usize]) -> Result<f64> {
        MriNorms::subset_norm(self, subset)
    }

    fn bnice_norm_b(&self, b: usize) -> Option<Result<f64>> {
        Some(MriNorms::bnice_norm_b(self, b))
    }
}
