use kinebasis::nn::{load_checkpoint, save_checkpoint};
use kinebasis::training::{evaluate, generate_dataset, train, Split};
use kinebasis::{AnyMlp, TrainConfig};

fn tiny() -> TrainConfig {
    TrainConfig {
        n_domains: 3,
        n_test_domains: 2,
        n_points_per_domain: 400,
        n_epochs: 3,
        batch_size: 100,
        width: 16,
        n_layers: 3,
        b: 4,
        eval_points: 400,
        ..TrainConfig::default()
    }
}

#[test]
fn reloaded_checkpoint_reproduces_logged_test_metrics() {
    let c = tiny();
    let data = generate_dataset(&c);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.nkbf");
    let (_, records) = train::<f64>(&c, &data, |m, _| save_checkpoint(m, &path)).unwrap();
    let AnyMlp::F64(model) = load_checkpoint(&path).unwrap() else {
        panic!("expected an f64 checkpoint");
    };
    let test: Vec<_> = data.iter().filter(|s| s.split == Split::Test).cloned().collect();
    let again = evaluate(&model, &test, &c).unwrap();
    assert_eq!(Some(again), records.last().unwrap().test.clone());
}

#[test]
fn training_is_deterministic_in_f64() {
    let c = tiny();
    let data = generate_dataset(&c);
    let (a, ra) = train::<f64>(&c, &data, |_, _| Ok(())).unwrap();
    let (b, rb) = train::<f64>(&c, &data, |_, _| Ok(())).unwrap();
    assert_eq!(a.layers, b.layers);
    assert_eq!(ra, rb);
}

#[test]
fn loss_decreases_on_a_small_run() {
    let c = TrainConfig { n_epochs: 4, ..tiny() };
    let data = generate_dataset(&c);
    let (_, r) = train::<f32>(&c, &data, |_, _| Ok(())).unwrap();
    assert!(r.last().unwrap().train.loss.total < r[0].train.loss.total);
}

#[test]
fn test_split_uses_unseen_domains() {
    let data = generate_dataset(&tiny());
    let train_domains: Vec<_> = data.iter().filter(|s| s.split == Split::Train).map(|s| &s.domain).collect();
    for s in data.iter().filter(|s| s.split == Split::Test) {
        assert!(!train_domains.contains(&&s.domain));
    }
}
