//! Dataset generation, the epoch/batch training loop and evaluation metrics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisProvider, Histogram};
use crate::error::{Error, Result};
use crate::geometry::{sample_points, Circle, DomainSpec, SamplePoint};
use crate::losses::{
    loss_total, loss_total_with_grad, pointwise_cossim2, pointwise_divergence, LossReport, LossWeights, OrthoForm,
};
use crate::nn::{adam_step, assemble_input, AdamConfig, ForwardBundle, Mlp, MlpConfig, OptimizerState};
use crate::real::Real;
use crate::seed::{derive_seed, derive_seed_path};

pub const CENTER_RANGE: (f64, f64) = (0.225, 0.675);
pub const RADIUS_RANGE: (f64, f64) = (0.03, 0.09);
/// Half-width of the box around a cluster anchor that member centres are drawn from.
pub const CLUSTER_SPREAD: f64 = 0.08;

const TRAIN_STREAM: u64 = 0x0074_7261_696e;
const TEST_STREAM: u64 = 0x7465_7374;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub b: usize,
    /// Circles per domain; fixes the conditioning width.
    pub m: usize,
    pub n_domains: usize,
    pub n_test_domains: usize,
    pub n_points_per_domain: usize,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub width: usize,
    pub n_layers: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub disable_smooth: bool,
    pub sharp_corners: bool,
    pub ortho_raw: bool,
    /// Points per domain used for evaluation metrics (the first ones of each set).
    pub eval_points: usize,
    pub histogram_bins: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            b: 10,
            m: 10,
            n_domains: 16,
            n_test_domains: 8,
            n_points_per_domain: 20_000,
            n_epochs: 10,
            batch_size: 2000,
            width: 64,
            n_layers: 4,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seed: 7,
            disable_smooth: false,
            sharp_corners: false,
            ortho_raw: false,
            eval_points: 4096,
            histogram_bins: 64,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("b", self.b),
            ("m", self.m),
            ("n_domains", self.n_domains),
            ("n_points_per_domain", self.n_points_per_domain),
            ("batch_size", self.batch_size),
            ("width", self.width),
            ("n_layers", self.n_layers),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !(2..=3).contains(&self.dim) {
            return Err(Error::InvalidConfig("dim must be 2 or 3".into()));
        }
        if self.batch_size > self.n_points_per_domain {
            return Err(Error::InvalidConfig("batch_size exceeds n_points_per_domain".into()));
        }
        self.mlp_config().validate()
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig::new(self.dim, self.b, self.m, self.n_layers, self.width)
    }

    /// Loss weights after ablation switches.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if self.disable_smooth {
            w.w_drch = 0.0;
        }
        w
    }

    pub fn ortho_form(&self) -> OrthoForm {
        if self.ortho_raw {
            OrthoForm::Raw
        } else {
            OrthoForm::Squared
        }
    }

    /// Optimizer steps in one epoch: one per (possibly partial) batch of each domain.
    pub fn steps_per_epoch(&self) -> usize {
        self.n_domains * self.n_points_per_domain.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSampleSet {
    pub domain: DomainSpec,
    pub samples: Vec<SamplePoint>,
    pub split: Split,
}

impl DomainSampleSet {
    pub fn positions(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        self.samples[range].iter().flat_map(|s| s.position.iter().copied()).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random obstacle layout: `m` independent circles, or circles grouped around
/// two or three anchors so that the union forms fewer, larger components.
pub fn random_domain(config: &TrainConfig, rng: &mut ChaCha8Rng) -> DomainSpec {
    let dim = config.dim;
    let n_clusters = match rng.random_range(0..3) {
        0 => config.m,
        1 => 2,
        _ => 3,
    };
    let anchors: Vec<Vec<f64>> = (0..n_clusters.min(config.m))
        .map(|_| (0..dim).map(|_| uniform(rng, CENTER_RANGE)).collect())
        .collect();
    let circles = (0..config.m)
        .map(|i| {
            let anchor = &anchors[i % anchors.len()];
            let center = if n_clusters >= config.m {
                anchor.clone()
            } else {
                anchor
                    .iter()
                    .map(|a| {
                        let lo = (a - CLUSTER_SPREAD).max(CENTER_RANGE.0);
                        let hi = (a + CLUSTER_SPREAD).min(CENTER_RANGE.1);
                        uniform(rng, (lo, hi))
                    })
                    .collect()
            };
            Circle::new(center, uniform(rng, RADIUS_RANGE))
        })
        .collect();
    let mut domain = DomainSpec::new(dim, circles);
    if config.sharp_corners {
        domain.corner_radius = 0.0;
    }
    domain
}

fn generate_split(config: &TrainConfig, split: Split, count: usize) -> Vec<DomainSampleSet> {
    let stream = match split {
        Split::Train => TRAIN_STREAM,
        Split::Test => TEST_STREAM,
    };
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_path(config.seed, &[stream, i as u64, 0]));
            let domain = random_domain(config, &mut rng);
            let samples = sample_points(
                &domain,
                config.n_points_per_domain,
                derive_seed_path(config.seed, &[stream, i as u64, 1]),
            );
            DomainSampleSet { domain, samples, split }
        })
        .collect()
}

/// Training sets followed by held-out test sets drawn from disjoint seed streams.
pub fn generate_dataset(config: &TrainConfig) -> Vec<DomainSampleSet> {
    let mut sets = generate_split(config, Split::Train, config.n_domains);
    sets.extend(generate_split(config, Split::Test, config.n_test_domains));
    sets
}

/// Loss means and per-point histograms over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: LossReport,
    /// Mask-weighted mean of `|div phi_k|`.
    pub mean_abs_div: f64,
    pub div_histogram: Histogram,
    /// Band-weighted histogram of squared basis/normal cosine similarity.
    pub bc_histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub skipped_batches: usize,
    /// Mean weighted total over this epoch's optimizer steps.
    pub batch_loss: f64,
    pub train: SplitMetrics,
    pub test: Option<SplitMetrics>,
}

struct DomainEval {
    report: LossReport,
    div: Vec<f64>,
    div_w: Vec<f64>,
    cos: Vec<f64>,
    cos_w: Vec<f64>,
}

type ForwardFn<'a> = dyn Fn(&DomainSampleSet, &[f64]) -> Result<ForwardBundle<f64>> + Sync + 'a;

fn evaluate_set(
    set: &DomainSampleSet,
    config: &TrainConfig,
    forward: &ForwardFn<'_>,
) -> Result<DomainEval> {
    let n = set.samples.len().min(config.eval_points.max(1));
    let samples = &set.samples[..n];
    let bundle = forward(set, &set.positions(0..n))?;
    let report = loss_total(&bundle, samples, &config.effective_weights(), config.ortho_form())?;
    let div = pointwise_divergence(&bundle)?;
    let cos = pointwise_cossim2(&bundle, samples)?;
    let b = bundle.b();
    let mut out = DomainEval {
        report,
        div: Vec::with_capacity(n * b),
        div_w: Vec::with_capacity(n * b),
        cos: Vec::with_capacity(n * b),
        cos_w: Vec::with_capacity(n * b),
    };
    for (i, s) in samples.iter().enumerate() {
        for k in 0..b {
            out.div.push(div[[i, k]].abs());
            out.div_w.push(s.mask_w);
            out.cos.push(cos[[i, k]]);
            out.cos_w.push(s.band_wb);
        }
    }
    Ok(out)
}

fn evaluate_with(
    sets: &[DomainSampleSet],
    config: &TrainConfig,
    forward: &ForwardFn<'_>,
) -> Result<SplitMetrics> {
    let evals = sets
        .par_iter()
        .map(|s| evaluate_set(s, config, forward))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<LossReport> = evals.iter().map(|e| e.report.clone()).collect();
    let concat = |f: fn(&DomainEval) -> &Vec<f64>| evals.iter().flat_map(|e| f(e).iter().copied()).collect::<Vec<_>>();
    let (div, div_w, cos, cos_w) = (concat(|e| &e.div), concat(|e| &e.div_w), concat(|e| &e.cos), concat(|e| &e.cos_w));
    let wsum: f64 = div_w.iter().sum();
    let mean_abs_div = if wsum > 0.0 {
        div.iter().zip(&div_w).map(|(d, w)| d * w).sum::<f64>() / wsum
    } else {
        0.0
    };
    let bins = config.histogram_bins;
    Ok(SplitMetrics {
        loss: LossReport::mean(&reports),
        mean_abs_div,
        div_histogram: Histogram::weighted(&div, &div_w, bins),
        bc_histogram: Histogram::weighted(&cos, &cos_w, bins),
    })
}

/// Metrics of a raw model over `sets`, evaluated in parallel over domains and
/// reduced in set order.
pub fn evaluate<T: Real>(model: &Mlp<T>, sets: &[DomainSampleSet], config: &TrainConfig) -> Result<SplitMetrics> {
    if let Some(s) = sets.iter().find(|s| s.domain.dim != model.config.dim) {
        return Err(Error::DimMismatch {
            expected: model.config.dim,
            got: s.domain.dim,
        });
    }
    evaluate_with(sets, config, &|set, points| {
        let x = assemble_input::<T>(points, set.domain.dim, &set.domain.encoding());
        Ok(model.forward_with_tangents(x.view())?.to_f64())
    })
}

/// Metrics of any basis provider (neural or analytic) over `sets`.
pub fn evaluate_provider(provider: &BasisProvider, sets: &[DomainSampleSet], config: &TrainConfig) -> Result<SplitMetrics> {
    evaluate_with(sets, config, &|set, points| provider.evaluate_with_jacobian(&set.domain, points))
}

pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Mlp<T>,
    pub optimizer: OptimizerState<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Mlp::init_kaiming(config.mlp_config(), derive_seed(config.seed, 0x696e_6974))?;
        Ok(Self::from_model(config, model))
    }

    pub fn from_model(config: TrainConfig, model: Mlp<T>) -> Self {
        let optimizer = OptimizerState::new(config.adam.clone(), &model);
        Self {
            config,
            model,
            optimizer,
        }
    }

    /// One forward/backward/Adam update on a single-domain batch. Returns the
    /// loss report, or `None` if the gradient was non-finite and the batch skipped.
    pub fn step(&mut self, set: &DomainSampleSet, indices: &[usize]) -> Result<Option<LossReport>> {
        let dim = set.domain.dim;
        let samples: Vec<SamplePoint> = indices.iter().map(|&i| set.samples[i].clone()).collect();
        let points: Vec<f64> = samples.iter().flat_map(|s| s.position.iter().copied()).collect();
        let x = assemble_input::<T>(&points, dim, &set.domain.encoding());
        let (bundle, tape) = self.model.forward_tape(x.view())?;
        let (report, upstream) = loss_total_with_grad(
            &bundle.to_f64(),
            &samples,
            &self.config.effective_weights(),
            self.config.ortho_form(),
        )?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.optimizer.epoch + 1,
                step: self.optimizer.step as usize,
            });
        }
        let grads = self.model.backward(&tape, &ForwardBundle::<T>::from_f64(&upstream))?;
        match adam_step(&mut self.model, &grads, &mut self.optimizer) {
            Ok(()) => Ok(Some(report)),
            Err(Error::NonFiniteGradient) => {
                log::warn!("non-finite gradient at step {}; batch skipped", self.optimizer.step);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// One pass over every training domain in shuffled order.
    pub fn epoch(&mut self, train: &[DomainSampleSet]) -> Result<(usize, usize, f64)> {
        let epoch = self.optimizer.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_path(
            self.config.seed,
            &[SHUFFLE_STREAM, epoch as u64],
        )));
        let (mut steps, mut skipped, mut loss_sum) = (0, 0, 0.0);
        for &d in &order {
            let set = &train[d];
            let mut points: Vec<usize> = (0..set.samples.len()).collect();
            points.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed_path(
                self.config.seed,
                &[SHUFFLE_STREAM, epoch as u64, d as u64],
            )));
            for batch in points.chunks(self.config.batch_size) {
                match self.step(set, batch)? {
                    Some(r) => {
                        loss_sum += r.total;
                        steps += 1;
                    }
                    None => skipped += 1,
                }
            }
        }
        let mean = if steps > 0 { loss_sum / steps as f64 } else { 0.0 };
        Ok((steps, skipped, mean))
    }

    /// Run all epochs, handing the model and its metrics to `on_epoch` after each.
    pub fn run(
        &mut self,
        dataset: &[DomainSampleSet],
        mut on_epoch: impl FnMut(&Mlp<T>, &MetricsRecord) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        let train: Vec<DomainSampleSet> = dataset.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let test: Vec<DomainSampleSet> = dataset.iter().filter(|s| s.split == Split::Test).cloned().collect();
        if train.is_empty() {
            return Err(Error::InvalidConfig("dataset has no training domains".into()));
        }
        let mut records = Vec::with_capacity(self.config.n_epochs);
        for epoch in 0..self.config.n_epochs {
            self.optimizer.epoch = epoch;
            let lr = self.optimizer.lr();
            let (steps, skipped_batches, batch_loss) = self.epoch(&train)?;
            let record = MetricsRecord {
                epoch: epoch + 1,
                lr,
                steps,
                skipped_batches,
                batch_loss,
                train: evaluate(&self.model, &train, &self.config)?,
                test: if test.is_empty() {
                    None
                } else {
                    Some(evaluate(&self.model, &test, &self.config)?)
                },
            };
            log::info!(
                "epoch {} lr {:.3e} batch loss {:.4} train total {:.4}",
                record.epoch,
                lr,
                batch_loss,
                record.train.loss.total
            );
            on_epoch(&self.model, &record)?;
            records.push(record);
        }
        Ok(records)
    }
}

/// Initialize and train a model of precision `T` on `dataset`.
pub fn train<T: Real>(
    config: &TrainConfig,
    dataset: &[DomainSampleSet],
    on_epoch: impl FnMut(&Mlp<T>, &MetricsRecord) -> Result<()>,
) -> Result<(Mlp<T>, Vec<MetricsRecord>)> {
    let mut trainer = Trainer::<T>::new(config.clone())?;
    let records = trainer.run(dataset, on_epoch)?;
    Ok((trainer.model, records))
}
