//! Basis providers: the trained network conditioned on a domain, or the
//! closed-form divergence-free eigenbasis of the empty unit square.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, SamplePoint};
use crate::losses::pointwise_divergence;
use crate::nn::{assemble_input, AnyMlp, ForwardBundle, Mlp};
use crate::real::Real;

/// Stream-function modes `psi = sin(k1 pi x) sin(k2 pi y)` on `[0,1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBasis {
    pub modes: Vec<(u32, u32)>,
}

impl AnalyticBasis {
    /// The `b` lowest modes ordered by `k1^2 + k2^2`, ties by `(k1, k2)`.
    pub fn lowest(b: usize) -> Self {
        let side = (b as f64).sqrt().ceil() as u32 + 2;
        let mut modes: Vec<(u32, u32)> = (1..=side)
            .flat_map(|k1| (1..=side).map(move |k2| (k1, k2)))
            .collect();
        modes.sort_by_key(|&(k1, k2)| (k1 * k1 + k2 * k2, k1, k2));
        modes.truncate(b);
        Self { modes }
    }

    /// `phi = (k2 pi sin(k1 pi x) cos(k2 pi y), -k1 pi cos(k1 pi x) sin(k2 pi y))`.
    pub fn mode_value(k1: u32, k2: u32, p: &[f64]) -> [f64; 2] {
        let (a, b) = (k1 as f64 * PI, k2 as f64 * PI);
        let (sx, cx) = (a * p[0]).sin_cos();
        let (sy, cy) = (b * p[1]).sin_cos();
        [b * sx * cy, -a * cx * sy]
    }

    /// Jacobian `J[a][c] = d phi_a / d p_c`; its trace cancels exactly.
    pub fn mode_jacobian(k1: u32, k2: u32, p: &[f64]) -> [[f64; 2]; 2] {
        let (a, b) = (k1 as f64 * PI, k2 as f64 * PI);
        let (sx, cx) = (a * p[0]).sin_cos();
        let (sy, cy) = (b * p[1]).sin_cos();
        let diag = a * b * cx * cy;
        [[diag, -b * b * sx * sy], [a * a * sx * sy, -diag]]
    }
}

/// Network-backed basis; conditioned on a domain at evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralBasis {
    pub model: AnyMlp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BasisProvider {
    Neural(NeuralBasis),
    Analytic(AnalyticBasis),
}

impl From<AnyMlp> for BasisProvider {
    fn from(model: AnyMlp) -> Self {
        BasisProvider::Neural(NeuralBasis { model })
    }
}

impl From<AnalyticBasis> for BasisProvider {
    fn from(a: AnalyticBasis) -> Self {
        BasisProvider::Analytic(a)
    }
}

fn neural_eval<T: Real>(
    model: &Mlp<T>,
    domain: &DomainSpec,
    points: &[f64],
    jacobian: bool,
) -> Result<ForwardBundle<f64>> {
    let c = &model.config;
    if domain.dim != c.dim {
        return Err(Error::DimMismatch { expected: c.dim, got: domain.dim });
    }
    if domain.circles.len() != c.m {
        return Err(Error::DimMismatch { expected: c.m, got: domain.circles.len() });
    }
    let x = assemble_input::<T>(points, c.dim, &domain.encoding());
    if jacobian {
        Ok(model.forward_with_tangents(x.view())?.to_f64())
    } else {
        Ok(ForwardBundle {
            dim: c.dim,
            value: model.forward(x.view())?.mapv(|v| v.to_f64()),
            tangents: Vec::new(),
        })
    }
}

impl BasisProvider {
    pub fn analytic(b: usize) -> Self {
        BasisProvider::Analytic(AnalyticBasis::lowest(b))
    }

    pub fn dim(&self) -> usize {
        match self {
            BasisProvider::Neural(n) => n.model.config().dim,
            BasisProvider::Analytic(_) => 2,
        }
    }

    pub fn b(&self) -> usize {
        match self {
            BasisProvider::Neural(n) => n.model.config().b,
            BasisProvider::Analytic(a) => a.modes.len(),
        }
    }

    fn check_points(&self, points: &[f64]) -> Result<()> {
        let dim = self.dim();
        if !points.len().is_multiple_of(dim) {
            return Err(Error::DimMismatch { expected: dim, got: points.len() % dim });
        }
        Ok(())
    }

    /// Basis values at `n` flattened points, `n x dim*b`, basis-major columns.
    pub fn evaluate_batch(&self, domain: &DomainSpec, points: &[f64]) -> Result<Array2<f64>> {
        Ok(self.eval(domain, points, false)?.value)
    }

    /// Values and point-Jacobian columns.
    pub fn evaluate_with_jacobian(&self, domain: &DomainSpec, points: &[f64]) -> Result<ForwardBundle<f64>> {
        self.eval(domain, points, true)
    }

    fn eval(&self, domain: &DomainSpec, points: &[f64], jacobian: bool) -> Result<ForwardBundle<f64>> {
        self.check_points(points)?;
        match self {
            BasisProvider::Neural(n) => match &n.model {
                AnyMlp::F32(m) => neural_eval(m, domain, points, jacobian),
                AnyMlp::F64(m) => neural_eval(m, domain, points, jacobian),
            },
            BasisProvider::Analytic(a) => {
                let n = points.len() / 2;
                let b = a.modes.len();
                let mut value = Array2::zeros((n, 2 * b));
                let mut tangents = if jacobian {
                    vec![Array2::zeros((n, 2 * b)); 2]
                } else {
                    Vec::new()
                };
                for (i, p) in points.chunks_exact(2).enumerate() {
                    for (k, &(k1, k2)) in a.modes.iter().enumerate() {
                        let v = AnalyticBasis::mode_value(k1, k2, p);
                        value[[i, 2 * k]] = v[0];
                        value[[i, 2 * k + 1]] = v[1];
                        if jacobian {
                            let j = AnalyticBasis::mode_jacobian(k1, k2, p);
                            for comp in 0..2 {
                                for c in 0..2 {
                                    tangents[c][[i, 2 * k + comp]] = j[comp][c];
                                }
                            }
                        }
                    }
                }
                Ok(ForwardBundle { dim: 2, value, tangents })
            }
        }
    }

    /// The `b` basis vectors at one point.
    pub fn evaluate(&self, domain: &DomainSpec, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        let dim = self.dim();
        if p.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: p.len() });
        }
        let row = self.evaluate_batch(domain, p)?;
        Ok(row.row(0).to_vec().chunks(dim).map(<[f64]>::to_vec).collect())
    }

    /// `sum_k phi_k(p) alpha_k` at one point.
    pub fn velocity(&self, domain: &DomainSpec, alpha: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: p.len() });
        }
        self.velocities(domain, alpha, p)
    }

    /// Velocities at flattened points, flattened `n x dim`.
    pub fn velocities(&self, domain: &DomainSpec, alpha: &[f64], points: &[f64]) -> Result<Vec<f64>> {
        let basis = self.evaluate_batch(domain, points)?;
        combine(&basis, self.dim(), alpha)
    }
}

/// Apply coefficients to evaluated basis rows.
pub fn combine(basis: &Array2<f64>, dim: usize, alpha: &[f64]) -> Result<Vec<f64>> {
    let b = basis.ncols() / dim;
    if alpha.len() != b {
        return Err(Error::DimMismatch { expected: b, got: alpha.len() });
    }
    let mut out = vec![0.0; basis.nrows() * dim];
    for (i, row) in basis.rows().into_iter().enumerate() {
        for (k, &ak) in alpha.iter().enumerate() {
            for a in 0..dim {
                out[i * dim + a] += row[k * dim + a] * ak;
            }
        }
    }
    Ok(out)
}

fn positions(samples: &[SamplePoint]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.position.iter().copied()).collect()
}

/// Monte Carlo inner products `G_kl = sum_i <phi_k, phi_l> w_i / W`.
pub fn gram_matrix(provider: &BasisProvider, domain: &DomainSpec, samples: &[SamplePoint]) -> Result<Array2<f64>> {
    let w: f64 = samples.iter().map(|s| s.mask_w).sum();
    if w == 0.0 {
        return Err(Error::DegenerateMask);
    }
    let basis = provider.evaluate_batch(domain, &positions(samples))?;
    let (dim, b) = (provider.dim(), provider.b());
    let mut g = Array2::zeros((b, b));
    for (row, s) in basis.rows().into_iter().zip(samples) {
        if s.mask_w == 0.0 {
            continue;
        }
        for k in 0..b {
            for l in k..b {
                let ip: f64 = (0..dim).map(|a| row[k * dim + a] * row[l * dim + a]).sum();
                g[[k, l]] += ip * s.mask_w;
            }
        }
    }
    for k in 0..b {
        for l in k..b {
            g[[k, l]] /= w;
            g[[l, k]] = g[[k, l]];
        }
    }
    Ok(g)
}

/// Mean over off-diagonal pairs of `|G_kl| / sqrt(G_kk G_ll)`.
pub fn gram_offdiag_ratio(g: &Array2<f64>) -> f64 {
    let b = g.nrows();
    if b < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..b {
        for l in 0..b {
            if k != l {
                let denom = (g[[k, k]] * g[[l, l]]).sqrt();
                sum += if denom > 0.0 { g[[k, l]].abs() / denom } else { 1.0 };
            }
        }
    }
    sum / (b * (b - 1)) as f64
}

/// Weighted histogram on `[lo, hi]` whose masses sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    /// Range is `[0, max value]` (or `[0, 1]` when every value is 0).
    pub fn weighted(values: &[f64], weights: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let hi = values
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let mut mass = vec![0.0; bins];
        let mut total = 0.0;
        for (&v, &w) in values.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            let idx = ((v / hi) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
            mass[idx] += w;
            total += w;
        }
        if total > 0.0 {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        Self { lo: 0.0, hi, mass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceStats {
    /// Mask-weighted mean of `|div phi_k|` over points and bases.
    pub mean: f64,
    pub histogram: Histogram,
}

pub fn divergence_stats(
    provider: &BasisProvider,
    domain: &DomainSpec,
    samples: &[SamplePoint],
    bins: usize,
) -> Result<DivergenceStats> {
    let bundle = provider.evaluate_with_jacobian(domain, &positions(samples))?;
    let div = pointwise_divergence(&bundle)?;
    let b = provider.b();
    let mut values = Vec::with_capacity(div.len());
    let mut weights = Vec::with_capacity(div.len());
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (row, s) in div.rows().into_iter().zip(samples) {
        for &d in row {
            values.push(d.abs());
            weights.push(s.mask_w);
            acc += d.abs() * s.mask_w;
        }
        wsum += s.mask_w * b as f64;
    }
    Ok(DivergenceStats {
        mean: if wsum > 0.0 { acc / wsum } else { 0.0 },
        histogram: Histogram::weighted(&values, &weights, bins),
    })
}

/// Cell-centred grid on the unit square (cube), x fastest, flattened.
pub fn grid_points(dim: usize, res: &[usize]) -> Vec<f64> {
    let total: usize = res.iter().product();
    let mut out = Vec::with_capacity(total * dim);
    for idx in 0..total {
        let mut rest = idx;
        for &r in res.iter().take(dim) {
            out.push(((rest % r) as f64 + 0.5) / r as f64);
            rest /= r;
        }
    }
    out
}

/// What to sample on a grid.
#[derive(Clone, Debug)]
pub enum FieldSelect<'a> {
    Basis(usize),
    Velocity(&'a [f64]),
}

/// Field on a regular grid, zeroed outside the fluid, flattened `n x dim`.
pub fn sample_grid(
    provider: &BasisProvider,
    domain: &DomainSpec,
    field: &FieldSelect,
    res: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = provider.dim();
    let points = grid_points(dim, res);
    let basis = provider.evaluate_batch(domain, &points)?;
    let alpha: Vec<f64> = match field {
        FieldSelect::Velocity(a) => a.to_vec(),
        FieldSelect::Basis(k) => {
            if *k >= provider.b() {
                return Err(Error::DimMismatch { expected: provider.b(), got: *k });
            }
            (0..provider.b()).map(|i| if i == *k { 1.0 } else { 0.0 }).collect()
        }
    };
    let mut values = combine(&basis, dim, &alpha)?;
    for (p, v) in points.chunks_exact(dim).zip(values.chunks_exact_mut(dim)) {
        if domain.field(p) > 0.0 {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok((points, values))
}

/// CSV with header `x,y[,z],u,v[,w]`, one row per grid point.
pub fn grid_csv(points: &[f64], values: &[f64], dim: usize) -> String {
    let mut out = String::new();
    out.push_str(if dim == 3 { "x,y,z,u,v,w\n" } else { "x,y,u,v\n" });
    for (p, v) in points.chunks_exact(dim).zip(values.chunks_exact(dim)) {
        let cells: Vec<String> = p.iter().chain(v).map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
