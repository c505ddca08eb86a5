//! Physics losses on sampled basis fields and their weighted aggregate.
//!
//! All losses read a [`ForwardBundle`] (values and point-Jacobian columns of
//! the `b` fields at `n` points) together with the matching sample
//! annotations. Interior losses are normalized by `S = W b` with
//! `W = sum_i w(p_i)`, the boundary loss by `S_b = b sum_i w_b(p_i)` and the
//! orthogonality loss by `S_o = W b (b - 1) / 2`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SamplePoint;
use crate::nn::ForwardBundle;

/// Added to the cosine-similarity denominator so zero vectors contribute 0.
pub const COSSIM_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the smoothness (Dirichlet energy) term.
    pub w_drch: f64,
    pub w_div: f64,
    pub w_orth: f64,
    pub w_bc: f64,
    pub w_len: f64,
    pub w_small: f64,
    /// Hinge threshold for the small-basis penalty.
    pub delta: f64,
    /// Target mean basis length.
    pub c_target: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_drch: 0.01,
            w_div: 5.0,
            w_orth: 100.0,
            w_bc: 30.0,
            w_len: 100.0,
            w_small: 100.0,
            delta: 0.05,
            c_target: 0.37,
        }
    }
}

impl LossWeights {
    pub fn zeros() -> Self {
        Self {
            w_drch: 0.0,
            w_div: 0.0,
            w_orth: 0.0,
            w_bc: 0.0,
            w_len: 0.0,
            w_small: 0.0,
            ..Self::default()
        }
    }
}

/// Squared pair inner products (default) or the raw, unsquared sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoForm {
    #[default]
    Squared,
    Raw,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub div: f64,
    pub bc: f64,
    pub orth: f64,
    pub len: f64,
    pub small: f64,
    pub smooth: f64,
    pub total: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_b")]
    pub s_b: f64,
    #[serde(rename = "S_o")]
    pub s_o: f64,
    /// Set when `W = 0`: the interior losses were reported as 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl LossReport {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.w_drch * self.smooth
            + w.w_div * self.div
            + w.w_orth * self.orth
            + w.w_bc * self.bc
            + w.w_len * self.len
            + w.w_small * self.small
    }

    /// Component-wise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.div += r.div / n;
            out.bc += r.bc / n;
            out.orth += r.orth / n;
            out.len += r.len / n;
            out.small += r.small / n;
            out.smooth += r.smooth / n;
            out.total += r.total / n;
            out.w += r.w / n;
            out.s += r.s / n;
            out.s_b += r.s_b / n;
            out.s_o += r.s_o / n;
            out.degenerate |= r.degenerate;
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        [self.div, self.bc, self.orth, self.len, self.small, self.smooth, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
struct Normalizers {
    w: f64,
    wb: f64,
    b: usize,
}

impl Normalizers {
    fn of(samples: &[SamplePoint], b: usize) -> Self {
        Self {
            w: samples.iter().map(|s| s.mask_w).sum(),
            wb: samples.iter().map(|s| s.band_wb).sum(),
            b,
        }
    }

    fn s(&self) -> f64 {
        self.w * self.b as f64
    }

    fn s_b(&self) -> f64 {
        self.wb * self.b as f64
    }

    fn s_o(&self) -> f64 {
        self.w * (self.b * self.b.saturating_sub(1)) as f64 / 2.0
    }
}

fn check(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<()> {
    if bundle.n() != samples.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} bundle rows for {} samples",
            bundle.n(),
            samples.len()
        )));
    }
    Ok(())
}

fn need_tangents(bundle: &ForwardBundle<f64>) -> Result<()> {
    if bundle.has_tangents() {
        Ok(())
    } else {
        Err(Error::MissingTangents)
    }
}

#[inline]
fn vec_of(bundle: &ForwardBundle<f64>, i: usize, k: usize, out: &mut [f64]) {
    let d = bundle.dim;
    for (a, o) in out.iter_mut().enumerate() {
        *o = bundle.value[[i, k * d + a]];
    }
}

#[inline]
fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `div phi_k(p_i)` for every point and basis, `n x b`.
pub fn pointwise_divergence(bundle: &ForwardBundle<f64>) -> Result<Array2<f64>> {
    need_tangents(bundle)?;
    let d = bundle.dim;
    Ok(Array2::from_shape_fn((bundle.n(), bundle.b()), |(i, k)| {
        (0..d).map(|a| bundle.tangents[a][[i, k * d + a]]).sum()
    }))
}

/// `cossim(phi_k(p_i), n(p_i))^2`, zero where no normal is present, `n x b`.
pub fn pointwise_cossim2(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<Array2<f64>> {
    check(bundle, samples)?;
    let d = bundle.dim;
    let mut phi = vec![0.0; d];
    let mut out = Array2::zeros((bundle.n(), bundle.b()));
    for (i, s) in samples.iter().enumerate() {
        let Some(n) = &s.normal else { continue };
        for k in 0..bundle.b() {
            vec_of(bundle, i, k, &mut phi);
            let c = dot(&phi, n) / (l2(&phi) * l2(n) + COSSIM_GUARD);
            out[[i, k]] = c * c;
        }
    }
    Ok(out)
}

pub fn loss_div(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<f64> {
    check(bundle, samples)?;
    let div = pointwise_divergence(bundle)?;
    let norm = Normalizers::of(samples, bundle.b());
    if norm.w == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, s)| div.row(i).iter().map(|d| d * d).sum::<f64>() * s.mask_w)
        .sum();
    Ok(sum / norm.s())
}

pub fn loss_bc(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<f64> {
    let c2 = pointwise_cossim2(bundle, samples)?;
    let norm = Normalizers::of(samples, bundle.b());
    if norm.wb == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, s)| c2.row(i).sum() * s.band_wb)
        .sum();
    Ok(sum / norm.s_b())
}

pub fn loss_orth(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<f64> {
    orth_with(bundle, samples, OrthoForm::Squared)
}

/// Unsquared pair sum; may be negative.
pub fn loss_orth_raw(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<f64> {
    orth_with(bundle, samples, OrthoForm::Raw)
}

fn orth_with(bundle: &ForwardBundle<f64>, samples: &[SamplePoint], form: OrthoForm) -> Result<f64> {
    check(bundle, samples)?;
    let b = bundle.b();
    let norm = Normalizers::of(samples, b);
    if b < 2 || norm.w == 0.0 {
        return Ok(0.0);
    }
    let d = bundle.dim;
    let mut sum = 0.0;
    let mut pk = vec![0.0; d];
    let mut pl = vec![0.0; d];
    for (i, s) in samples.iter().enumerate() {
        if s.mask_w == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for k in 0..b {
            vec_of(bundle, i, k, &mut pk);
            for l in k + 1..b {
                vec_of(bundle, i, l, &mut pl);
                let q = dot(&pk, &pl);
                acc += match form {
                    OrthoForm::Squared => q * q,
                    OrthoForm::Raw => q,
                };
            }
        }
        sum += acc * s.mask_w;
    }
    Ok(sum / norm.s_o())
}

fn mean_lengths(bundle: &ForwardBundle<f64>, samples: &[SamplePoint], w: f64) -> Vec<f64> {
    let d = bundle.dim;
    let mut phi = vec![0.0; d];
    let mut means = vec![0.0; bundle.b()];
    for (i, s) in samples.iter().enumerate() {
        for (k, m) in means.iter_mut().enumerate() {
            vec_of(bundle, i, k, &mut phi);
            *m += l2(&phi) * s.mask_w;
        }
    }
    means.iter_mut().for_each(|m| *m /= w);
    means
}

pub fn loss_len(bundle: &ForwardBundle<f64>, samples: &[SamplePoint], c_target: f64) -> Result<f64> {
    check(bundle, samples)?;
    let norm = Normalizers::of(samples, bundle.b());
    if norm.w == 0.0 {
        return Err(Error::DegenerateMask);
    }
    let means = mean_lengths(bundle, samples, norm.w);
    Ok(means.iter().map(|m| (m - c_target).powi(2)).sum::<f64>() / bundle.b() as f64)
}

pub fn loss_small(bundle: &ForwardBundle<f64>, samples: &[SamplePoint], delta: f64) -> Result<f64> {
    check(bundle, samples)?;
    let norm = Normalizers::of(samples, bundle.b());
    if norm.w == 0.0 {
        return Ok(0.0);
    }
    let d = bundle.dim;
    let mut phi = vec![0.0; d];
    let mut sum = 0.0;
    for (i, s) in samples.iter().enumerate() {
        for k in 0..bundle.b() {
            vec_of(bundle, i, k, &mut phi);
            sum += (delta - l2(&phi)).max(0.0) * s.mask_w;
        }
    }
    Ok(sum / norm.s())
}

pub fn loss_smooth(bundle: &ForwardBundle<f64>, samples: &[SamplePoint]) -> Result<f64> {
    check(bundle, samples)?;
    need_tangents(bundle)?;
    let norm = Normalizers::of(samples, bundle.b());
    if norm.w == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            bundle
                .tangents
                .iter()
                .map(|t| t.row(i).iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                * s.mask_w
        })
        .sum();
    Ok(sum / norm.s())
}

pub fn loss_total(
    bundle: &ForwardBundle<f64>,
    samples: &[SamplePoint],
    weights: &LossWeights,
    ortho: OrthoForm,
) -> Result<LossReport> {
    Ok(total_impl(bundle, samples, weights, ortho, false)?.0)
}

/// Loss report plus `d total / d value` and `d total / d tangent_j`.
pub fn loss_total_with_grad(
    bundle: &ForwardBundle<f64>,
    samples: &[SamplePoint],
    weights: &LossWeights,
    ortho: OrthoForm,
) -> Result<(LossReport, ForwardBundle<f64>)> {
    let (report, grad) = total_impl(bundle, samples, weights, ortho, true)?;
    Ok((report, grad.expect("gradient requested")))
}

fn total_impl(
    bundle: &ForwardBundle<f64>,
    samples: &[SamplePoint],
    weights: &LossWeights,
    ortho: OrthoForm,
    want_grad: bool,
) -> Result<(LossReport, Option<ForwardBundle<f64>>)> {
    check(bundle, samples)?;
    need_tangents(bundle)?;
    let n = bundle.n();
    let b = bundle.b();
    let d = bundle.dim;
    let norm = Normalizers::of(samples, b);
    let mut report = LossReport {
        w: norm.w,
        s: norm.s(),
        s_b: norm.s_b(),
        s_o: norm.s_o(),
        degenerate: norm.w == 0.0,
        ..Default::default()
    };
    let mut grad = want_grad.then(|| ForwardBundle {
        dim: d,
        value: Array2::zeros((n, d * b)),
        tangents: vec![Array2::zeros((n, d * b)); d],
    });

    let interior = norm.w > 0.0;
    let band = norm.wb > 0.0;
    let inv_s = if interior { 1.0 / norm.s() } else { 0.0 };
    let inv_sb = if band { 1.0 / norm.s_b() } else { 0.0 };
    let inv_so = if interior && b >= 2 { 1.0 / norm.s_o() } else { 0.0 };
    let means = if interior {
        mean_lengths(bundle, samples, norm.w)
    } else {
        vec![0.0; b]
    };
    if interior {
        report.len = means
            .iter()
            .map(|m| (m - weights.c_target).powi(2))
            .sum::<f64>()
            / b as f64;
    }

    let mut phis = vec![0.0; b * d];
    for (i, s) in samples.iter().enumerate() {
        let w = s.mask_w;
        let wb = s.band_wb;
        for k in 0..b {
            vec_of(bundle, i, k, &mut phis[k * d..(k + 1) * d]);
        }
        for k in 0..b {
            let phi = &phis[k * d..(k + 1) * d];
            let len = l2(phi);
            let col = k * d;

            // divergence and smoothness
            let div: f64 = (0..d).map(|a| bundle.tangents[a][[i, col + a]]).sum();
            report.div += div * div * w * inv_s;
            let mut frob = 0.0;
            for t in &bundle.tangents {
                for a in 0..d {
                    frob += t[[i, col + a]].powi(2);
                }
            }
            report.smooth += frob * w * inv_s;

            // small-basis hinge
            let hinge = (weights.delta - len).max(0.0);
            report.small += hinge * w * inv_s;

            // boundary alignment
            let mut cs = 0.0;
            let mut denom = 0.0;
            let mut nn = 0.0;
            let mut q = 0.0;
            if let (Some(normal), true) = (&s.normal, wb > 0.0) {
                nn = l2(normal);
                q = dot(phi, normal);
                denom = len * nn + COSSIM_GUARD;
                cs = q / denom;
                report.bc += cs * cs * wb * inv_sb;
            }

            let Some(g) = grad.as_mut() else { continue };
            for a in 0..d {
                g.tangents[a][[i, col + a]] += weights.w_div * 2.0 * div * w * inv_s;
                for (c, t) in bundle.tangents.iter().enumerate() {
                    g.tangents[c][[i, col + a]] += weights.w_drch * 2.0 * t[[i, col + a]] * w * inv_s;
                }
            }
            if len > 0.0 {
                let dlen = if interior {
                    weights.w_len * 2.0 * (means[k] - weights.c_target) / b as f64 * w / norm.w
                } else {
                    0.0
                };
                let dsmall = if hinge > 0.0 { -weights.w_small * w * inv_s } else { 0.0 };
                for a in 0..d {
                    g.value[[i, col + a]] += (dlen + dsmall) * phi[a] / len;
                }
            }
            if let (Some(normal), true) = (&s.normal, cs != 0.0) {
                let scale = weights.w_bc * 2.0 * cs * wb * inv_sb;
                for a in 0..d {
                    let dcs = normal[a] / denom - q * nn * phi[a] / (len * denom * denom);
                    g.value[[i, col + a]] += scale * dcs;
                }
            }
        }

        // pairwise orthogonality
        if b >= 2 && w > 0.0 {
            for k in 0..b {
                for l in k + 1..b {
                    let (pk, pl) = (&phis[k * d..(k + 1) * d], &phis[l * d..(l + 1) * d]);
                    let q = dot(pk, pl);
                    let (val, dq) = match ortho {
                        OrthoForm::Squared => (q * q, 2.0 * q),
                        OrthoForm::Raw => (q, 1.0),
                    };
                    report.orth += val * w * inv_so;
                    if let Some(g) = grad.as_mut() {
                        let scale = weights.w_orth * dq * w * inv_so;
                        for a in 0..d {
                            g.value[[i, k * d + a]] += scale * pl[a];
                            g.value[[i, l * d + a]] += scale * pk[a];
                        }
                    }
                }
            }
        }
    }
    report.total = report.weighted_total(weights);
    Ok((report, grad))
}
