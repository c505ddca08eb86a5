//! Guide curves and least-squares fitting of basis coefficients to their
//! tangents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisProvider;
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;

pub const DEFAULT_SAMPLES_PER_CURVE: usize = 64;
pub const DEFAULT_RIDGE: f64 = 1e-6;
const MIN_CONTROL_SPACING: f64 = 1e-9;
const MIN_TANGENT: f64 = 1e-8;

/// Interpolating centripetal Catmull-Rom curve through the control points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideCurve {
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub closed: bool,
    /// Multiplies the unit tangents.
    #[serde(default = "unit_speed")]
    pub speed: f64,
}

fn unit_speed() -> f64 {
    1.0
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_CURVE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchScene {
    pub domain: DomainSpec,
    #[serde(default)]
    pub curves: Vec<GuideCurve>,
    #[serde(default = "default_samples")]
    pub samples_per_curve: usize,
}

impl SketchScene {
    pub fn new(domain: DomainSpec) -> Self {
        Self {
            domain,
            curves: Vec::new(),
            samples_per_curve: DEFAULT_SAMPLES_PER_CURVE,
        }
    }
}

struct Segment {
    p1: Vec<f64>,
    p2: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Segment {
    fn new(p0: &[f64], p1: &[f64], p2: &[f64], p3: &[f64]) -> Self {
        let t01 = dist(p0, p1).sqrt();
        let t12 = dist(p1, p2).sqrt();
        let t23 = dist(p2, p3).sqrt();
        let d = p1.len();
        let mut m1 = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for a in 0..d {
            let chord = p2[a] - p1[a];
            m1[a] = chord + t12 * ((p1[a] - p0[a]) / t01 - (p2[a] - p0[a]) / (t01 + t12));
            m2[a] = chord + t12 * ((p3[a] - p2[a]) / t23 - (p3[a] - p1[a]) / (t12 + t23));
        }
        Self {
            p1: p1.to_vec(),
            p2: p2.to_vec(),
            m1,
            m2,
        }
    }

    /// Position and derivative at local parameter `s` in `[0, 1]`.
    fn eval(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        let (s2, s3) = (s * s, s * s * s);
        let h = [2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2];
        let dh = [6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s];
        let d = self.p1.len();
        let mut pos = vec![0.0; d];
        let mut vel = vec![0.0; d];
        for a in 0..d {
            let c = [self.p1[a], self.m1[a], self.p2[a], self.m2[a]];
            pos[a] = (0..4).map(|i| h[i] * c[i]).sum();
            vel[a] = (0..4).map(|i| dh[i] * c[i]).sum();
        }
        (pos, vel)
    }
}

impl GuideCurve {
    pub fn open(points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            closed: false,
            speed: 1.0,
        }
    }

    pub fn closed(points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            closed: true,
            speed: 1.0,
        }
    }

    fn control_points(&self) -> Result<Vec<Vec<f64>>> {
        let mut pts = self.points.clone();
        if self.closed && pts.len() > 2 && dist(&pts[0], pts.last().unwrap()) <= MIN_CONTROL_SPACING {
            pts.pop();
        }
        if pts.len() < 2 {
            return Err(Error::DegenerateCurve("fewer than two control points".into()));
        }
        let d = pts[0].len();
        if pts.iter().any(|p| p.len() != d || p.iter().any(|x| !x.is_finite())) {
            return Err(Error::DegenerateCurve("inconsistent or non-finite control points".into()));
        }
        let n = pts.len();
        let pairs = if self.closed { n } else { n - 1 };
        for i in 0..pairs {
            if dist(&pts[i], &pts[(i + 1) % n]) <= MIN_CONTROL_SPACING {
                return Err(Error::DegenerateCurve(format!("control points {i} and {} coincide", (i + 1) % n)));
            }
        }
        Ok(pts)
    }

    fn segments(&self) -> Result<Vec<Segment>> {
        let pts = self.control_points()?;
        let n = pts.len();
        let reflect = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect() };
        let segs = if self.closed {
            (0..n)
                .map(|i| Segment::new(&pts[(i + n - 1) % n], &pts[i], &pts[(i + 1) % n], &pts[(i + 2) % n]))
                .collect()
        } else {
            (0..n - 1)
                .map(|i| {
                    let p0 = if i == 0 { reflect(&pts[0], &pts[1]) } else { pts[i - 1].clone() };
                    let p3 = if i + 2 >= n {
                        reflect(&pts[n - 1], &pts[n - 2])
                    } else {
                        pts[i + 2].clone()
                    };
                    Segment::new(&p0, &pts[i], &pts[i + 1], &p3)
                })
                .collect()
        };
        Ok(segs)
    }

    /// Position and derivative at global parameter `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let segs = self.segments()?;
        Ok(eval_segments(&segs, t))
    }
}

fn eval_segments(segs: &[Segment], t: f64) -> (Vec<f64>, Vec<f64>) {
    let u = t * segs.len() as f64;
    let idx = (u.floor() as usize).min(segs.len() - 1);
    segs[idx].eval(u - idx as f64)
}

/// Samples uniformly spaced in parameter space with unit tangents scaled by
/// the curve speed. Samples with a vanishing derivative are skipped.
pub fn sample_curve(curve: &GuideCurve, n_samples: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let segs = curve.segments()?;
    let n = n_samples.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = if curve.closed {
            i as f64 / n as f64
        } else if n == 1 {
            0.0
        } else {
            i as f64 / (n - 1) as f64
        };
        let (pos, vel) = eval_segments(&segs, t);
        let speed = vel.iter().map(|x| x * x).sum::<f64>().sqrt();
        if speed < MIN_TANGENT {
            continue;
        }
        out.push((pos, vel.iter().map(|v| v / speed * curve.speed).collect()));
    }
    if out.is_empty() {
        return Err(Error::DegenerateCurve("no sample has a usable tangent".into()));
    }
    Ok(out)
}

/// Point/target pairs for a least-squares coefficient fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitProblem {
    pub dim: usize,
    /// Flattened `n x dim`.
    pub points: Vec<f64>,
    /// Flattened `n x dim`.
    pub targets: Vec<f64>,
    pub ridge: f64,
}

impl FitProblem {
    pub fn new(dim: usize, ridge: f64) -> Self {
        Self {
            dim,
            points: Vec::new(),
            targets: Vec::new(),
            ridge,
        }
    }

    pub fn push(&mut self, p: &[f64], target: &[f64]) {
        self.points.extend_from_slice(p);
        self.targets.extend_from_slice(target);
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: Vec<f64>,
    /// `sum_i || sum_k phi_k(c_i) alpha_k - t_i ||^2`.
    pub residual: f64,
    pub n_samples: usize,
}

/// Solve `min_alpha || A alpha - t ||^2 + ridge ||alpha||^2` through the
/// normal equations. `basis` holds the evaluated fields at the problem points.
pub fn solve_least_squares(basis: &ndarray::Array2<f64>, dim: usize, targets: &[f64], ridge: f64) -> Result<FitResult> {
    let n = basis.nrows();
    let b = basis.ncols() / dim;
    if targets.len() != n * dim {
        return Err(Error::DimMismatch { expected: n * dim, got: targets.len() });
    }
    if n == 0 {
        return Err(Error::InvalidConfig("fit needs at least one sample".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("non-finite fit target".into()));
    }
    let mut gram = DMatrix::<f64>::zeros(b, b);
    let mut rhs = DVector::<f64>::zeros(b);
    for (i, row) in basis.rows().into_iter().enumerate() {
        let t = &targets[i * dim..(i + 1) * dim];
        for k in 0..b {
            let phik = &row.as_slice().unwrap()[k * dim..(k + 1) * dim];
            rhs[k] += phik.iter().zip(t).map(|(x, y)| x * y).sum::<f64>();
            for l in k..b {
                let phil = &row.as_slice().unwrap()[l * dim..(l + 1) * dim];
                gram[(k, l)] += phik.iter().zip(phil).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    for k in 0..b {
        for l in 0..k {
            gram[(k, l)] = gram[(l, k)];
        }
        gram[(k, k)] += ridge;
    }
    let scale = (0..b).map(|k| gram[(k, k)]).fold(0.0, f64::max);
    let chol = gram.clone().cholesky().ok_or(Error::SingularSystem)?;
    if ridge == 0.0 {
        let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
        if !(min_pivot > scale * 1e-14) {
            return Err(Error::SingularSystem);
        }
    }
    let alpha = chol.solve(&rhs);
    let mut residual = 0.0;
    for (i, row) in basis.rows().into_iter().enumerate() {
        for a in 0..dim {
            let v: f64 = (0..b).map(|k| row[k * dim + a] * alpha[k]).sum();
            residual += (v - targets[i * dim + a]).powi(2);
        }
    }
    Ok(FitResult {
        alpha: alpha.iter().copied().collect(),
        residual,
        n_samples: n,
    })
}

/// Least-squares coefficients reproducing the problem's targets.
pub fn fit_alpha(provider: &BasisProvider, domain: &DomainSpec, problem: &FitProblem) -> Result<FitResult> {
    if problem.dim != provider.dim() {
        return Err(Error::DimMismatch { expected: provider.dim(), got: problem.dim });
    }
    if problem.len() < provider.b() {
        log::warn!(
            "fitting {} coefficients from only {} samples",
            provider.b(),
            problem.len()
        );
    }
    let basis = provider.evaluate_batch(domain, &problem.points)?;
    solve_least_squares(&basis, problem.dim, &problem.targets, problem.ridge)
}

/// Sample every curve, drop samples outside the fluid, and collect a fit
/// problem.
pub fn scene_problem(scene: &SketchScene, ridge: f64) -> Result<FitProblem> {
    let mut problem = FitProblem::new(scene.domain.dim, ridge);
    for (ci, curve) in scene.curves.iter().enumerate() {
        let mut dropped = 0;
        for (p, t) in sample_curve(curve, scene.samples_per_curve)? {
            if scene.domain.field(&p) > 0.0 {
                dropped += 1;
                continue;
            }
            problem.push(&p, &t);
        }
        if dropped > 0 {
            log::warn!("curve {ci}: {dropped} samples outside the fluid were dropped");
        }
    }
    Ok(problem)
}

/// Initial coefficients for a scene; zero when it has no usable samples.
pub fn fit_scene(provider: &BasisProvider, scene: &SketchScene, ridge: f64) -> Result<FitResult> {
    let problem = scene_problem(scene, ridge)?;
    if problem.is_empty() {
        return Ok(FitResult {
            alpha: vec![0.0; provider.b()],
            residual: 0.0,
            n_samples: 0,
        });
    }
    fit_alpha(provider, &scene.domain, &problem)
}
