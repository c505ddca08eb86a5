//! Fixtures shared by the benchmarks: desk-scale models and domains.

use kinebasis::geometry::{sample_interior, Circle, DomainSpec};
use kinebasis::nn::{Mlp, MlpConfig};
use kinebasis::{AnyMlp, BasisProvider};

pub const DIM: usize = 2;
pub const BASES: usize = 10;
pub const CIRCLES: usize = 10;

/// Ten obstacles on a ring around the centre.
pub fn ring_domain() -> DomainSpec {
    let circles = (0..CIRCLES)
        .map(|i| {
            let a = i as f64 / CIRCLES as f64 * std::f64::consts::TAU;
            Circle::new(vec![0.5 + 0.2 * a.cos(), 0.5 + 0.2 * a.sin()], 0.04)
        })
        .collect();
    DomainSpec::new(DIM, circles)
}

pub fn model<T: kinebasis::Real>(width: usize, layers: usize) -> Mlp<T> {
    Mlp::init_kaiming(MlpConfig::new(DIM, BASES, CIRCLES, layers, width), 1).expect("valid config")
}

pub fn neural_provider(width: usize, layers: usize) -> BasisProvider {
    BasisProvider::from(AnyMlp::F32(model::<f32>(width, layers)))
}

pub fn interior_points(domain: &DomainSpec, n: usize) -> Vec<f64> {
    sample_interior(domain, n, 3)
}
