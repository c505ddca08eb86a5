//! Semi-Lagrangian time stepping in coefficient space.
//!
//! Each step back-traces a fresh set of interior points through the current
//! velocity, copies the upstream velocity, and least-squares projects it back
//! onto the basis conditioned on the next domain.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{combine, BasisProvider};
use crate::error::{Error, Result};
use crate::geometry::{self, BoundaryCache, DomainSpec};
use crate::seed::derive_seed;
use crate::sketch::{solve_least_squares, DEFAULT_RIDGE};

const FALLBACK_RESOLUTION: usize = 64;

/// Domain at a point in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub t: f64,
    pub domain: DomainSpec,
}

/// Time-sorted domain keyframes with per-circle linear interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTimeline {
    pub keyframes: Vec<Keyframe>,
}

impl DomainTimeline {
    pub fn fixed(domain: DomainSpec) -> Self {
        Self {
            keyframes: vec![Keyframe { t: 0.0, domain }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .keyframes
            .first()
            .ok_or_else(|| Error::InvalidConfig("timeline has no keyframes".into()))?;
        for k in &self.keyframes {
            k.domain.validate()?;
            if k.domain.circles.len() != first.domain.circles.len() || k.domain.dim != first.domain.dim {
                return Err(Error::InvalidConfig("keyframes must share dim and circle count".into()));
            }
        }
        if self.keyframes.windows(2).any(|w| !(w[0].t <= w[1].t)) {
            return Err(Error::InvalidConfig("keyframes must be time-sorted".into()));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> DomainSpec {
        let ks = &self.keyframes;
        let i = ks.partition_point(|k| k.t <= t);
        if i == 0 {
            return ks[0].domain.clone();
        }
        if i == ks.len() {
            return ks[i - 1].domain.clone();
        }
        let (a, b) = (&ks[i - 1], &ks[i]);
        let s = (t - a.t) / (b.t - a.t);
        let mut out = a.domain.clone();
        for (c, (ca, cb)) in out.circles.iter_mut().zip(a.domain.circles.iter().zip(&b.domain.circles)) {
            for (x, (xa, xb)) in c.center.iter_mut().zip(ca.center.iter().zip(&cb.center)) {
                *x = xa + (xb - xa) * s;
            }
            c.radius = ca.radius + (cb.radius - ca.radius) * s;
        }
        out
    }
}

/// Particles seeded uniformly in a disc (ball), clipped to the fluid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSource {
    pub center: Vec<f64>,
    pub radius: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_projection_points: usize,
    pub ridge: f64,
    pub frames: usize,
    /// Velocity grid resolution per axis in frame records.
    pub grid: usize,
    /// Particle sources; when empty, `n_particles` are spread over the fluid.
    pub particle_sources: Vec<ParticleSource>,
    pub n_particles: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.005,
            n_projection_points: 4096,
            ridge: DEFAULT_RIDGE,
            frames: 100,
            grid: 64,
            particle_sources: Vec::new(),
            n_particles: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub step: u64,
    pub time: f64,
    pub alpha: Vec<f64>,
    pub domain: DomainSpec,
    /// Points used for the projection that produced `alpha`, flattened.
    pub projection_points: Vec<f64>,
    /// Flattened particle positions.
    pub particles: Vec<f64>,
    /// Projection points dropped in the last step.
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub grid: GridFrame,
    pub particles: Vec<Vec<f64>>,
}

impl FrameRecord {
    pub fn file_name(index: usize) -> String {
        format!("frame_{index:05}.json")
    }

    pub fn write(&self, dir: impl AsRef<Path>, index: usize) -> Result<()> {
        fs::write(dir.as_ref().join(Self::file_name(index)), serde_json::to_vec(self)?)?;
        Ok(())
    }
}

/// Velocity on a cell-centred `nx x ny` grid (the `z = 0.5` slice in 3D),
/// zero outside the fluid.
pub fn velocity_grid(
    provider: &BasisProvider,
    domain: &DomainSpec,
    alpha: &[f64],
    nx: usize,
    ny: usize,
) -> Result<GridFrame> {
    let dim = provider.dim();
    let mut points = Vec::with_capacity(nx * ny * dim);
    for j in 0..ny {
        for i in 0..nx {
            points.push((i as f64 + 0.5) / nx as f64);
            points.push((j as f64 + 0.5) / ny as f64);
            if dim == 3 {
                points.push(0.5);
            }
        }
    }
    let vel = provider.velocities(domain, alpha, &points)?;
    let mut u = Vec::with_capacity(nx * ny);
    let mut v = Vec::with_capacity(nx * ny);
    for (p, w) in points.chunks_exact(dim).zip(vel.chunks_exact(dim)) {
        let inside = domain.field(p) <= 0.0;
        u.push(if inside { w[0] } else { 0.0 });
        v.push(if inside { w[1] } else { 0.0 });
    }
    Ok(GridFrame { nx, ny, u, v })
}

pub struct Simulator<'a> {
    pub provider: &'a BasisProvider,
    pub config: SimConfig,
    pub timeline: DomainTimeline,
}

impl<'a> Simulator<'a> {
    pub fn new(provider: &'a BasisProvider, config: SimConfig, timeline: DomainTimeline) -> Result<Self> {
        if !(config.dt >= 0.0 && config.dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be finite and non-negative".into()));
        }
        if config.n_projection_points < provider.b() {
            return Err(Error::InvalidConfig("need at least b projection points".into()));
        }
        timeline.validate()?;
        if timeline.keyframes[0].domain.dim != provider.dim() {
            return Err(Error::DimMismatch {
                expected: provider.dim(),
                got: timeline.keyframes[0].domain.dim,
            });
        }
        Ok(Self {
            provider,
            config,
            timeline,
        })
    }

    fn time_of(&self, step: u64) -> f64 {
        step as f64 * self.config.dt
    }

    pub fn initial_particles(&self) -> Vec<f64> {
        let domain = self.timeline.at(0.0);
        let seed = derive_seed(self.config.seed, u64::MAX);
        if self.config.particle_sources.is_empty() {
            return geometry::sample_interior(&domain, self.config.n_particles, seed);
        }
        let dim = domain.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for src in &self.config.particle_sources {
            let mut placed = 0;
            let mut attempts = 0;
            while placed < src.count && attempts < src.count * 1000 {
                attempts += 1;
                let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                if offset.iter().map(|x| x * x).sum::<f64>() > 1.0 {
                    continue;
                }
                let p: Vec<f64> = src.center.iter().zip(&offset).map(|(c, o)| c + src.radius * o).collect();
                if domain.field(&p) <= 0.0 {
                    out.extend_from_slice(&p);
                    placed += 1;
                }
            }
        }
        out
    }

    pub fn initial_state(&self, alpha: Vec<f64>) -> Result<SimState> {
        if alpha.len() != self.provider.b() {
            return Err(Error::DimMismatch {
                expected: self.provider.b(),
                got: alpha.len(),
            });
        }
        Ok(SimState {
            step: 0,
            time: 0.0,
            alpha,
            domain: self.timeline.at(0.0),
            projection_points: Vec::new(),
            particles: self.initial_particles(),
            dropped: 0,
        })
    }

    /// Advance the coefficients by one step. Particles are carried over
    /// unchanged; see [`Simulator::advect_particles`].
    pub fn step(&self, state: &SimState) -> Result<SimState> {
        let dim = self.provider.dim();
        let dt = self.config.dt;
        let current = self.timeline.at(self.time_of(state.step));
        let next_time = self.time_of(state.step + 1);
        let next = self.timeline.at(next_time);
        let n = self.config.n_projection_points;
        let points = geometry::sample_interior(&next, n, derive_seed(self.config.seed, state.step + 1));
        let n = points.len() / dim;

        let basis_here = self.provider.evaluate_batch(&current, &points)?;
        let velocity = combine(&basis_here, dim, &state.alpha)?;

        let mut fallback: Option<BoundaryCache> = None;
        let mut origins = Vec::with_capacity(points.len());
        let mut kept = Vec::with_capacity(n);
        let mut origin = vec![0.0; dim];
        for i in 0..n {
            for a in 0..dim {
                origin[a] = points[i * dim + a] - velocity[i * dim + a] * dt;
            }
            if current.field(&origin) > 0.0 {
                match geometry::project_to_domain(&origin, &current, geometry::PROJECTION_TOL, geometry::PROJECTION_MAX_ITER) {
                    Ok(q) => origins.extend_from_slice(&q),
                    Err(_) => {
                        let cache = fallback.get_or_insert_with(|| BoundaryCache::new(&current, FALLBACK_RESOLUTION));
                        match cache.nearest(&origin) {
                            Some(q) => origins.extend_from_slice(&q),
                            None => continue,
                        }
                    }
                }
            } else {
                origins.extend_from_slice(&origin);
            }
            kept.push(i);
        }
        let dropped = n - kept.len();
        if dropped * 2 > n {
            return Err(Error::TooManyDropped { dropped, total: n });
        }
        let targets = self.provider.velocities(&current, &state.alpha, &origins)?;

        let basis_next = if current == next {
            basis_here.select(ndarray::Axis(0), &kept)
        } else {
            let kept_points: Vec<f64> = kept.iter().flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied()).collect();
            self.provider.evaluate_batch(&next, &kept_points)?
        };
        let fit = solve_least_squares(&basis_next, dim, &targets, self.config.ridge)?;
        if fit.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(SimState {
            step: state.step + 1,
            time: next_time,
            alpha: fit.alpha,
            domain: next,
            projection_points: points,
            particles: state.particles.clone(),
            dropped,
        })
    }

    /// Explicit Euler over one step with the current velocity; particles that
    /// leave the next domain are projected back onto it.
    pub fn advect_particles(&self, state: &SimState) -> Result<Vec<f64>> {
        let dim = self.provider.dim();
        if state.particles.is_empty() {
            return Ok(Vec::new());
        }
        let current = self.timeline.at(self.time_of(state.step));
        let next = self.timeline.at(self.time_of(state.step + 1));
        let vel = self.provider.velocities(&current, &state.alpha, &state.particles)?;
        let mut out = Vec::with_capacity(state.particles.len());
        let mut fallback: Option<BoundaryCache> = None;
        for (p, v) in state.particles.chunks_exact(dim).zip(vel.chunks_exact(dim)) {
            let q: Vec<f64> = p.iter().zip(v).map(|(x, u)| x + u * self.config.dt).collect();
            if next.field(&q) <= 0.0 {
                out.extend_from_slice(&q);
                continue;
            }
            let cache = fallback.get_or_insert_with(|| BoundaryCache::new(&next, FALLBACK_RESOLUTION));
            let landed = geometry::project_or_fallback(&q, &next, cache).unwrap_or_else(|| p.to_vec());
            out.extend_from_slice(&landed);
        }
        Ok(out)
    }

    pub fn record(&self, state: &SimState) -> Result<FrameRecord> {
        let grid = self.config.grid;
        Ok(FrameRecord {
            t: state.time,
            alpha: state.alpha.clone(),
            grid: velocity_grid(self.provider, &state.domain, &state.alpha, grid, grid)?,
            particles: state
                .particles
                .chunks_exact(self.provider.dim())
                .map(<[f64]>::to_vec)
                .collect(),
        })
    }

    /// One particle advection and one coefficient step.
    pub fn advance(&self, state: &SimState) -> Result<SimState> {
        let particles = self.advect_particles(state)?;
        let mut next = self.step(state)?;
        next.particles = particles;
        Ok(next)
    }

    /// Initial record plus one record per frame, handed to `sink` in order.
    pub fn run(&self, alpha0: Vec<f64>, mut sink: impl FnMut(usize, &FrameRecord) -> Result<()>) -> Result<SimState> {
        let mut state = self.initial_state(alpha0)?;
        sink(0, &self.record(&state)?)?;
        for frame in 1..=self.config.frames {
            state = self.advance(&state)?;
            sink(frame, &self.record(&state)?)?;
        }
        Ok(state)
    }
}
