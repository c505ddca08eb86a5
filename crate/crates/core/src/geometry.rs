//! Implicit fluid domain: a rounded unit square (or cube) minus a smooth blob
//! of circles (or spheres).
//!
//! Every query goes through one scalar field `g`, negative in the fluid, zero
//! on its boundary and positive outside (past the box or inside an obstacle).
//! The box enters as an exact rounded-box signed distance, the obstacles as a
//! log-sum-exp blend of circle implicits, and the two are merged with the same
//! log-sum-exp smooth max.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

/// Fixed-size gradient/normal storage; only the first `dim` entries are used.
pub type Vector = [f64; MAX_DIM];

/// Gradient magnitude below which normals are treated as undefined.
pub const GRADIENT_FLOOR: f64 = 1e-8;

pub const DEFAULT_CORNER_RADIUS: f64 = 0.2;
pub const DEFAULT_BLEND_K: f64 = 30.0;
pub const DEFAULT_BAND_EPS: f64 = 0.05;
pub const PROJECTION_TOL: f64 = 1e-6;
pub const PROJECTION_MAX_ITER: usize = 20;
/// Any projected point satisfies `g <= PROJECTION_ACCEPT`.
pub const PROJECTION_ACCEPT: f64 = 1e-5;
const MAX_HALVINGS: usize = 30;

const SAMPLE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    #[serde(rename = "c")]
    pub center: Vec<f64>,
    #[serde(rename = "r")]
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Obstacle configuration plus the bounding rounded box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    pub circles: Vec<Circle>,
    #[serde(default = "default_corner_radius")]
    pub corner_radius: f64,
    #[serde(default = "default_blend_k")]
    pub blend_k: f64,
    #[serde(default = "default_band_eps")]
    pub band_eps: f64,
}

fn default_corner_radius() -> f64 {
    DEFAULT_CORNER_RADIUS
}

fn default_blend_k() -> f64 {
    DEFAULT_BLEND_K
}

fn default_band_eps() -> f64 {
    DEFAULT_BAND_EPS
}

impl DomainSpec {
    pub fn new(dim: usize, circles: Vec<Circle>) -> Self {
        Self {
            dim,
            circles,
            corner_radius: DEFAULT_CORNER_RADIUS,
            blend_k: DEFAULT_BLEND_K,
            band_eps: DEFAULT_BAND_EPS,
        }
    }

    /// The rounded box with no obstacles.
    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidDomain(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        for (i, c) in self.circles.iter().enumerate() {
            if c.center.len() != self.dim {
                return Err(Error::InvalidDomain(format!(
                    "circle {i} has a {}-dimensional center",
                    c.center.len()
                )));
            }
            if c.center.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDomain(format!("circle {i} has a non-finite center")));
            }
            if !(c.radius > 0.0 && c.radius.is_finite()) {
                return Err(Error::InvalidDomain(format!("circle {i} radius must be positive")));
            }
        }
        if !(self.blend_k > 0.0 && self.blend_k.is_finite()) {
            return Err(Error::InvalidDomain("blend_k must be positive".into()));
        }
        if !(self.band_eps > 0.0 && self.band_eps.is_finite()) {
            return Err(Error::InvalidDomain("band_eps must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.corner_radius) {
            return Err(Error::InvalidDomain("corner_radius must lie in [0, 0.5]".into()));
        }
        Ok(())
    }

    /// Conditioning vector `[c_1, r_1, ..., c_m, r_m]`.
    pub fn encoding(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.circles.len() * (self.dim + 1));
        for c in &self.circles {
            out.extend_from_slice(&c.center);
            out.push(c.radius);
        }
        out
    }

    pub fn field(&self, p: &[f64]) -> f64 {
        composite_field(p, self)
    }

    pub fn field_and_gradient(&self, p: &[f64]) -> (f64, Vector) {
        composite_field_grad(p, self)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        composite_field(p, self) <= 0.0
    }
}

/// `||p - c||^2 - r^2`.
pub fn circle_field(p: &[f64], c: &[f64], r: f64) -> f64 {
    let d2: f64 = p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
    d2 - r * r
}

/// Log-sum-exp blend of the negated circle fields, divided by `k`.
/// Positive inside the obstacle union. `-inf` when there are no circles.
pub fn blob_field(p: &[f64], spec: &DomainSpec) -> f64 {
    blob_field_grad(p, spec).0
}

fn blob_field_grad(p: &[f64], spec: &DomainSpec) -> (f64, Vector) {
    let dim = spec.dim;
    let k = spec.blend_k;
    let mut grad = [0.0; MAX_DIM];
    if spec.circles.is_empty() {
        return (f64::NEG_INFINITY, grad);
    }
    let exps: Vec<f64> = spec
        .circles
        .iter()
        .map(|c| -k * circle_field(p, &c.center, c.radius))
        .collect();
    let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (c, e) in spec.circles.iter().zip(&exps) {
        let weight = (e - max).exp();
        sum += weight;
        for a in 0..dim {
            grad[a] += weight * -2.0 * (p[a] - c.center[a]);
        }
    }
    for g in grad.iter_mut().take(dim) {
        *g /= sum;
    }
    ((max + sum.ln()) / k, grad)
}

/// Exact signed distance to the unit box `[0,1]^dim` with rounded corners,
/// negative inside.
pub fn rounded_box_sdf(p: &[f64], corner_radius: f64) -> f64 {
    rounded_box_sdf_grad(p, p.len(), corner_radius).0
}

/// Rounded-box SDF and its gradient. At medial points the gradient uses
/// `sign(0) = 0`, so the exact center has zero gradient.
fn rounded_box_sdf_grad(p: &[f64], dim: usize, corner_radius: f64) -> (f64, Vector) {
    let half = 0.5 - corner_radius;
    let mut offset = [0.0; MAX_DIM];
    let mut q = [0.0; MAX_DIM];
    let mut outside2 = 0.0;
    let mut max_q = f64::NEG_INFINITY;
    let mut arg_max = 0;
    for a in 0..dim {
        offset[a] = p[a] - 0.5;
        q[a] = offset[a].abs() - half;
        if q[a] > 0.0 {
            outside2 += q[a] * q[a];
        }
        if q[a] > max_q {
            max_q = q[a];
            arg_max = a;
        }
    }
    let outside = outside2.sqrt();
    let sdf = outside + max_q.min(0.0) - corner_radius;
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut grad = [0.0; MAX_DIM];
    if outside > 0.0 {
        for a in 0..dim {
            grad[a] = sign(offset[a]) * q[a].max(0.0) / outside;
        }
    } else {
        grad[arg_max] = sign(offset[arg_max]);
    }
    (sdf, grad)
}

/// Smooth maximum of the box SDF and the obstacle blob:
/// `ln(e^{k s_box} + e^{k f_blob}) / k`.
pub fn composite_field(p: &[f64], spec: &DomainSpec) -> f64 {
    composite_field_grad(p, spec).0
}

pub fn composite_field_grad(p: &[f64], spec: &DomainSpec) -> (f64, Vector) {
    let dim = spec.dim;
    let k = spec.blend_k;
    let (s, grad_s) = rounded_box_sdf_grad(p, dim, spec.corner_radius);
    let (f, grad_f) = blob_field_grad(p, spec);
    if f == f64::NEG_INFINITY {
        return (s, grad_s);
    }
    let max = s.max(f);
    let ws = (k * (s - max)).exp();
    let wf = (k * (f - max)).exp();
    let total = ws + wf;
    let mut grad = [0.0; MAX_DIM];
    for a in 0..dim {
        grad[a] = (ws * grad_s[a] + wf * grad_f[a]) / total;
    }
    (max + total.ln() / k, grad)
}

/// Smooth bump supported on `|g| <= eps`, with value 1 on the boundary.
pub fn indicator_from_field(g: f64, eps: f64) -> f64 {
    let a = g.abs();
    if a > eps {
        return 0.0;
    }
    let r = a / eps;
    let d = 2.0 * r * r * r - 3.0 * r * r + 1.0;
    if d < 0.0 {
        0.0
    } else {
        d.powi(4)
    }
}

/// One inside the fluid, the boundary bump in the outer band, zero beyond.
pub fn mask_from_field(g: f64, eps: f64) -> f64 {
    if g < 0.0 {
        1.0
    } else if g <= eps {
        indicator_from_field(g, eps)
    } else {
        0.0
    }
}

pub fn boundary_indicator(p: &[f64], spec: &DomainSpec) -> f64 {
    indicator_from_field(composite_field(p, spec), spec.band_eps)
}

pub fn mask(p: &[f64], spec: &DomainSpec) -> f64 {
    mask_from_field(composite_field(p, spec), spec.band_eps)
}

/// `grad g / |grad g|`, pointing out of the fluid.
pub fn boundary_normal(p: &[f64], spec: &DomainSpec) -> Option<Vector> {
    let (_, grad) = composite_field_grad(p, spec);
    normalized(&grad, spec.dim)
}

fn normalized(v: &Vector, dim: usize) -> Option<Vector> {
    let norm = v[..dim].iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < GRADIENT_FLOOR {
        return None;
    }
    let mut out = [0.0; MAX_DIM];
    for a in 0..dim {
        out[a] = v[a] / norm;
    }
    Some(out)
}

/// Damped Newton projection onto `g <= 0`. Points already inside are returned
/// as is. Fails when the gradient vanishes or `max_iter` steps do not reach
/// `g <= PROJECTION_ACCEPT`; see [`project_or_fallback`].
pub fn project_to_domain(
    p: &[f64],
    spec: &DomainSpec,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let dim = spec.dim;
    let (mut g, mut grad) = composite_field_grad(p, spec);
    if g <= 0.0 {
        return Ok(p.to_vec());
    }
    let mut q = p.to_vec();
    let fail = |q: &[f64], g: f64| Error::ProjectionFailed {
        point: q.to_vec(),
        value: g,
    };
    for _ in 0..max_iter {
        if g <= tol {
            break;
        }
        let n2: f64 = grad[..dim].iter().map(|x| x * x).sum();
        if n2.sqrt() < GRADIENT_FLOOR {
            return Err(fail(&q, g));
        }
        // Halve the Newton step until g decreases; full steps can cycle where
        // the blend narrows a gap between an obstacle and a wall.
        let mut scale = 1.0;
        let mut trial = q.clone();
        for _ in 0..MAX_HALVINGS {
            for a in 0..dim {
                trial[a] = q[a] - scale * g * grad[a] / n2;
            }
            if composite_field(&trial, spec) < g {
                break;
            }
            scale *= 0.5;
        }
        q.copy_from_slice(&trial);
        (g, grad) = composite_field_grad(&q, spec);
    }
    if let Some(n) = normalized(&grad, dim) {
        for a in 0..dim {
            q[a] -= tol * n[a];
        }
        g = composite_field(&q, spec);
    }
    if g <= PROJECTION_ACCEPT && q.iter().all(|x| x.is_finite()) {
        Ok(q)
    } else {
        Err(fail(&q, g))
    }
}

/// A sampled point with its mask, boundary weight and (in the band) normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub position: Vec<f64>,
    pub mask_w: f64,
    pub band_wb: f64,
    pub normal: Option<Vec<f64>>,
}

impl SamplePoint {
    pub fn annotate(p: &[f64], spec: &DomainSpec) -> Self {
        let (g, grad) = composite_field_grad(p, spec);
        let eps = spec.band_eps;
        let mut band_wb = indicator_from_field(g, eps);
        let mut mask_w = mask_from_field(g, eps);
        let mut normal = None;
        if band_wb > 0.0 {
            match normalized(&grad, spec.dim) {
                Some(n) => normal = Some(n[..spec.dim].to_vec()),
                None => {
                    // No usable normal: drop the point from the band.
                    band_wb = 0.0;
                    if g >= 0.0 {
                        mask_w = 0.0;
                    }
                }
            }
        }
        Self {
            position: p.to_vec(),
            mask_w,
            band_wb,
            normal,
        }
    }
}

/// Uniform samples on `[-eps, 1 + eps]^dim`, annotated. Deterministic per seed
/// and independent of the thread count (fixed chunks, one stream per chunk).
pub fn sample_points(spec: &DomainSpec, n: usize, rng_seed: u64) -> Vec<SamplePoint> {
    let lo = -spec.band_eps;
    let hi = 1.0 + spec.band_eps;
    let dim = spec.dim;
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(chunk as u64);
            let count = SAMPLE_CHUNK.min(n - chunk * SAMPLE_CHUNK);
            let mut out = Vec::with_capacity(count);
            let mut p = vec![0.0; dim];
            for _ in 0..count {
                for x in p.iter_mut() {
                    *x = rng.random_range(lo..hi);
                }
                out.push(SamplePoint::annotate(&p, spec));
            }
            out
        })
        .collect()
}

/// Stratified-jittered points strictly inside the fluid (`g < 0`), flattened
/// `n x dim`. Draws successive jittered grids over the unit box until `n`
/// points are accepted.
pub fn sample_interior(spec: &DomainSpec, n: usize, rng_seed: u64) -> Vec<f64> {
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let per_axis = ((n as f64).powf(1.0 / dim as f64).ceil() as usize).max(1);
    let cells = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(n * dim);
    let mut accepted = 0;
    let mut p = vec![0.0; dim];
    let mut rounds = 0;
    while accepted < n {
        let mut order: Vec<usize> = (0..cells).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for &cell in &order {
            let mut rest = cell;
            for x in p.iter_mut() {
                let idx = rest % per_axis;
                rest /= per_axis;
                *x = (idx as f64 + rng.random::<f64>()) / per_axis as f64;
            }
            if composite_field(&p, spec) < 0.0 {
                out.extend_from_slice(&p);
                accepted += 1;
                if accepted == n {
                    break;
                }
            }
        }
        rounds += 1;
        if rounds > 64 && accepted == 0 {
            break;
        }
    }
    out
}

/// Coarse set of interior points close to the boundary, used as a fallback
/// when Newton projection fails.
#[derive(Clone, Debug)]
pub struct BoundaryCache {
    dim: usize,
    points: Vec<f64>,
}

impl BoundaryCache {
    pub fn new(spec: &DomainSpec, resolution: usize) -> Self {
        let dim = spec.dim;
        let total = resolution.pow(dim as u32);
        let mut near = Vec::new();
        let mut interior = Vec::new();
        let mut p = vec![0.0; dim];
        for cell in 0..total {
            let mut rest = cell;
            for x in p.iter_mut() {
                *x = ((rest % resolution) as f64 + 0.5) / resolution as f64;
                rest /= resolution;
            }
            let g = composite_field(&p, spec);
            if g <= 0.0 {
                if g >= -spec.band_eps {
                    near.extend_from_slice(&p);
                }
                interior.extend_from_slice(&p);
            }
        }
        let points = if near.is_empty() { interior } else { near };
        Self { dim, points }
    }

    pub fn nearest(&self, p: &[f64]) -> Option<Vec<f64>> {
        self.points
            .chunks_exact(self.dim)
            .min_by(|a, b| dist2(a, p).total_cmp(&dist2(b, p)))
            .map(|q| q.to_vec())
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Project with the default tolerances, falling back to the nearest cached
/// boundary point.
pub fn project_or_fallback(p: &[f64], spec: &DomainSpec, cache: &BoundaryCache) -> Option<Vec<f64>> {
    project_to_domain(p, spec, PROJECTION_TOL, PROJECTION_MAX_ITER)
        .ok()
        .or_else(|| cache.nearest(p))
}
