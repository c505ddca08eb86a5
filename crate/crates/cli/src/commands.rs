use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use kinebasis::basis::{grid_csv, sample_grid, FieldSelect};
use kinebasis::nn::{load_checkpoint, save_checkpoint, save_sidecar};
use kinebasis::sim::{DomainTimeline, SimConfig, Simulator};
use kinebasis::sketch::{fit_scene, FitResult};
use kinebasis::training::{self, evaluate_provider, generate_dataset, Precision, Split, SplitMetrics};
use kinebasis::{AnyMlp, BasisProvider, DomainSpec, Mlp, Real, SketchScene, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{BasisArgs, ExportArgs, FitArgs, MetricsArgs, ServeArgs, SimulateArgs, TrainArgs};
use crate::exit::{CliError, CliResult};
use crate::server;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn to_json_line<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec(value).map_err(CliError::input)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_provider(args: &BasisArgs, precision: Option<Precision>) -> CliResult<BasisProvider> {
    if let Some(b) = args.analytic {
        if b == 0 {
            return Err(CliError::input("--analytic needs at least one mode"));
        }
        return Ok(BasisProvider::analytic(b));
    }
    let path = args.model.as_ref().expect("clap requires --model or --analytic");
    let model = load_checkpoint(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let model = match (model, precision) {
        (AnyMlp::F32(m), Some(Precision::F64)) => AnyMlp::F64(m.cast()),
        (AnyMlp::F64(m), Some(Precision::F32)) => AnyMlp::F32(m.cast()),
        (m, _) => m,
    };
    Ok(BasisProvider::from(model))
}

pub fn train(args: &TrainArgs, precision: Option<Precision>) -> CliResult {
    let config = args.config(precision.unwrap_or_default());
    config.validate()?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.out.with_file_name("metrics.jsonl"));
    ensure_parent(&args.out)?;
    save_sidecar(&args.out, &config)?;
    let dataset = generate_dataset(&config);
    let mut log = BufWriter::new(File::create(&metrics_path)?);
    match config.precision {
        Precision::F32 => train_as::<f32>(&config, &dataset, &args.out, &mut log)?,
        Precision::F64 => train_as::<f64>(&config, &dataset, &args.out, &mut log)?,
    }
    log.flush()?;
    log::info!("wrote {} and {}", args.out.display(), metrics_path.display());
    Ok(())
}

fn train_as<T: Real>(
    config: &TrainConfig,
    dataset: &[training::DomainSampleSet],
    out: &Path,
    log: &mut impl Write,
) -> CliResult {
    let mut trainer = training::Trainer::<T>::new(config.clone())?;
    save_checkpoint(&trainer.model, out)?;
    let mut io_error = None;
    let result = trainer.run(dataset, |model: &Mlp<T>, record| {
        save_checkpoint(model, out)?;
        if let Err(e) = to_json_line(record).and_then(|line| log.write_all(&line).map_err(CliError::from)) {
            io_error = Some(e);
        }
        Ok(())
    });
    if let Err(e) = result {
        log.flush()?;
        return Err(e.into());
    }
    io_error.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct MetricsOutput {
    train: SplitMetrics,
    test: Option<SplitMetrics>,
}

pub fn metrics(args: &MetricsArgs, precision: Option<Precision>) -> CliResult {
    let provider = load_provider(&args.basis, precision)?;
    let mut config = TrainConfig {
        dim: args.data.dim,
        m: args.data.circles,
        n_domains: args.data.domains,
        n_test_domains: args.data.test_domains,
        n_points_per_domain: args.data.points,
        seed: args.data.seed,
        sharp_corners: args.data.sharp_corners,
        eval_points: args.data.eval_points,
        histogram_bins: args.data.bins,
        weights: args.loss.weights(),
        disable_smooth: args.loss.disable_smooth,
        ortho_raw: args.loss.ortho_raw,
        batch_size: 1,
        ..TrainConfig::default()
    };
    match &provider {
        BasisProvider::Neural(n) => {
            let c = n.model.config();
            config.dim = c.dim;
            config.m = c.m;
            config.b = c.b;
        }
        BasisProvider::Analytic(_) => {
            if config.dim != 2 {
                return Err(CliError::input("the analytic basis is two-dimensional"));
            }
            config.b = provider.b();
        }
    }
    if config.n_points_per_domain == 0 || config.n_domains == 0 {
        return Err(CliError::input("need at least one domain and one point"));
    }
    let data = generate_dataset(&config);
    let split = |s: Split| data.iter().filter(|d| d.split == s).cloned().collect::<Vec<_>>();
    let (train, test) = (split(Split::Train), split(Split::Test));
    let output = MetricsOutput {
        train: evaluate_provider(&provider, &train, &config)?,
        test: if test.is_empty() {
            None
        } else {
            Some(evaluate_provider(&provider, &test, &config)?)
        },
    };
    write_output(args.out.as_deref(), &to_json_line(&output)?)
}

pub fn fit(args: &FitArgs, precision: Option<Precision>) -> CliResult {
    let provider = load_provider(&args.basis, precision)?;
    let scene: SketchScene = read_json(&args.scene)?;
    scene.domain.validate()?;
    let result = fit_scene(&provider, &scene, args.ridge)?;
    write_output(args.out.as_deref(), &to_json_line(&result)?)
}

pub fn simulate(args: &SimulateArgs, precision: Option<Precision>) -> CliResult {
    let provider = load_provider(&args.basis, precision)?;
    let mut scene: SketchScene = read_json(&args.scene)?;
    let timeline = match &args.keyframes {
        Some(p) => read_json::<DomainTimeline>(p)?,
        None => DomainTimeline::fixed(scene.domain.clone()),
    };
    timeline.validate()?;
    scene.domain = timeline.at(0.0);
    let alpha0 = fit_scene(&provider, &scene, args.ridge)?.alpha;
    let config = SimConfig {
        dt: args.dt,
        n_projection_points: args.points,
        ridge: args.ridge,
        frames: args.frames,
        grid: args.grid,
        n_particles: args.particles,
        seed: args.seed,
        ..SimConfig::default()
    };
    let sim = Simulator::new(&provider, config, timeline)?;
    fs::create_dir_all(&args.out)?;
    let dim = provider.dim();
    sim.run(alpha0, |i, record| {
        record.write(&args.out, i)?;
        if args.csv {
            let domain = sim.timeline.at(record.t);
            let (points, values) = sample_grid(&provider, &domain, &FieldSelect::Velocity(&record.alpha), &vec![args.grid; dim])?;
            fs::write(args.out.join(format!("frame_{i:05}.csv")), grid_csv(&points, &values, dim))?;
        }
        Ok(())
    })
    .map_err(|e| match e {
        kinebasis::Error::Io(_) | kinebasis::Error::Json(_) => CliError::input(e),
        e => CliError::sim(e),
    })?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AlphaFile {
    Plain(Vec<f64>),
    Fit(FitResult),
}

pub fn export(args: &ExportArgs, precision: Option<Precision>) -> CliResult {
    let provider = load_provider(&args.basis, precision)?;
    let domain: DomainSpec = match (&args.domain, &args.scene) {
        (Some(p), _) => read_json(p)?,
        (None, Some(p)) => read_json::<SketchScene>(p)?.domain,
        (None, None) => match provider {
            BasisProvider::Analytic(_) => {
                let mut d = DomainSpec::empty(2);
                d.corner_radius = 0.0;
                d
            }
            BasisProvider::Neural(_) => return Err(CliError::input("--domain or --scene is required for a model")),
        },
    };
    domain.validate()?;
    let alpha = match &args.alpha {
        Some(p) => Some(match read_json::<AlphaFile>(p)? {
            AlphaFile::Plain(a) => a,
            AlphaFile::Fit(f) => f.alpha,
        }),
        None => None,
    };
    let field = match (&alpha, args.basis_index) {
        (Some(a), _) => FieldSelect::Velocity(a),
        (None, Some(k)) => FieldSelect::Basis(k),
        (None, None) => unreachable!("clap requires --basis-index or --alpha"),
    };
    if args.res == 0 {
        return Err(CliError::input("--res must be positive"));
    }
    let dim = provider.dim();
    let (points, values) = sample_grid(&provider, &domain, &field, &vec![args.res; dim])?;
    write_output(args.out.as_deref(), grid_csv(&points, &values, dim).as_bytes())
}

pub fn serve(args: &ServeArgs, precision: Option<Precision>) -> CliResult {
    let provider = Arc::new(load_provider(&args.basis, precision)?);
    let listener = TcpListener::bind((args.host.as_str(), args.port))
        .map_err(|e| CliError::input(format!("bind {}:{}: {e}", args.host, args.port)))?;
    let addr = listener.local_addr()?;
    println!("listening ws://{addr}");
    std::io::stdout().flush()?;
    let config = SimConfig {
        n_projection_points: args.points,
        seed: args.seed,
        ..SimConfig::default()
    };
    server::serve(listener, provider, config)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}
