use p3hf::checkpoint::Checkpoint;
use p3hf::cli::{micro_config, micro_model, micro_spec};
use p3hf::config::{ModelConfig, OptimizerKind};
use p3hf::data::{generate_synthetic, Dataset, FeatureDims, GeneratorSpec};
use p3hf::disentangle::{argmax, EventDiscriminator};
use p3hf::gradcheck::relative_error;
use p3hf::model::Model;
use p3hf::optim::Optimizer;
use p3hf::par::Execution;
use p3hf::params::{Group, ParamStore};
use p3hf::tape::Graph;
use p3hf::train::{evaluate, fit, Trainer};
use p3hf::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        visual_dim: 6,
        audio_dim: 5,
        personality_dim: 4,
        d1: 6,
        d2: 6,
        d3: 4,
        window: 3,
        heads: 2,
        batch_size: 4,
        max_epochs: 3,
        lr_main: p3hf::config::LrSchedule { hi: 1e-2, lo: 1e-3 },
        ..ModelConfig::default()
    }
}

fn tiny_data(config: &ModelConfig) -> (Dataset, Dataset) {
    let spec = GeneratorSpec {
        subjects_per_class: [4, 4, 4],
        events: config.events,
        min_frames: 3,
        max_frames: 6,
        dims: FeatureDims {
            visual: config.visual_dim,
            audio: config.audio_dim,
            personality: config.personality_dim,
        },
        personality_tokens: 2,
        ..GeneratorSpec::default()
    };
    generate_synthetic(&spec).unwrap().split(0.25, 0).unwrap()
}

fn values(store: &ParamStore, group: Group) -> Vec<Tensor> {
    store
        .ids_in(group)
        .into_iter()
        .map(|id| store.get(id).clone())
        .collect()
}

fn bits(ts: &[Tensor]) -> Vec<u64> {
    ts.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn steps_touch_only_their_group() {
    let config = tiny_config();
    let (train, _) = tiny_data(&config);
    let mut trainer = Trainer::new(Model::new(&config).unwrap()).unwrap();
    let batch = &train.samples[..4];
    for _ in 0..3 {
        let grads = trainer.batch_gradients(batch, Execution::Sequential).unwrap();
        let (main0, disc0) = (
            values(&trainer.model.store, Group::Main),
            values(&trainer.model.store, Group::Discriminator),
        );
        trainer.step_discriminator(&grads.disc, 0.05);
        let (main1, disc1) = (
            values(&trainer.model.store, Group::Main),
            values(&trainer.model.store, Group::Discriminator),
        );
        assert_eq!(bits(&main0), bits(&main1), "step 1 moved a main parameter");
        assert_ne!(bits(&disc0), bits(&disc1));
        trainer.step_main(&grads.main, 0.05);
        let (main2, disc2) = (
            values(&trainer.model.store, Group::Main),
            values(&trainer.model.store, Group::Discriminator),
        );
        assert_eq!(bits(&disc1), bits(&disc2), "step 2 moved a discriminator parameter");
        assert_ne!(bits(&main1), bits(&main2));
    }
}

#[test]
fn without_disentangling_terms_main_gradient_is_the_classification_gradient() {
    let config = ModelConfig {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
        ..tiny_config()
    };
    let (train, _) = tiny_data(&config);
    let trainer = Trainer::new(Model::new(&config).unwrap()).unwrap();
    let sample = &train.samples[0];
    let grads = trainer
        .batch_gradients(std::slice::from_ref(sample), Execution::Sequential)
        .unwrap();

    let model = &trainer.model;
    let padded = model.pad(sample, model.target_frames([sample])).unwrap();
    let mut g = Graph::new();
    let p = model.store.bind(&mut g).unwrap();
    let losses = model.losses(&mut g, &p, &padded).unwrap();
    g.backward(losses.dep).unwrap();
    for (k, id) in trainer.main_ids().iter().enumerate() {
        let expected = g
            .grad(p.var(*id))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(model.store.get(*id).shape()));
        for (a, b) in grads.main[k].data().iter().zip(expected.data()) {
            assert!(
                (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
                "{}",
                model.store.entries()[id.index()].name
            );
        }
    }
    // the classification loss never reaches the discriminator
    for id in trainer.disc_ids() {
        assert!(g.grad(p.var(*id)).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    }
}

/// Central-difference gradient of `loss` over one parameter group.
fn numeric_gradient(model: &Model, sample: &p3hf::data::Sample, group: Group, eps: f64) -> Vec<f64> {
    let eval = |store: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let p = store.bind_where(&mut g, |_| false).unwrap();
        let l = model.losses(&mut g, &p, sample).unwrap();
        let v = match group {
            Group::Main => l.main,
            Group::Discriminator => l.forward.disc,
        };
        g.value(v).item()
    };
    let mut out = Vec::new();
    let mut store = model.store.clone();
    for id in model.store.ids_in(group) {
        for c in 0..store.get(id).len() {
            let base = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = base + eps;
            let up = eval(&store);
            store.get_mut(id).data_mut()[c] = base - eps;
            let down = eval(&store);
            store.get_mut(id).data_mut()[c] = base;
            out.push((up - down) / (2.0 * eps));
        }
    }
    out
}

#[test]
fn sgd_step_moves_by_minus_lr_times_numeric_gradient() {
    let mut model = micro_model(0).unwrap();
    model.config.optimizer = OptimizerKind::Sgd;
    model.config.weight_decay = 0.0;
    model.config.clip_norm = None;
    let data = generate_synthetic(&micro_spec(&micro_config(0), 0)).unwrap();
    let sample = data.samples[0].clone();
    let padded = model.pad(&sample, model.target_frames([&sample])).unwrap();
    let num_main = numeric_gradient(&model, &padded, Group::Main, 1e-4);
    let num_disc = numeric_gradient(&model, &padded, Group::Discriminator, 1e-4);

    let mut trainer = Trainer::new(model).unwrap();
    let before = trainer.model.store.clone();
    // a unit step keeps the parameter difference free of cancellation error
    let lr = 1.0;
    trainer
        .train_step(std::slice::from_ref(&sample), lr, lr, Execution::Sequential)
        .unwrap();
    let delta = |group: Group| -> Vec<f64> {
        before
            .ids_in(group)
            .into_iter()
            .flat_map(|id| {
                let (a, b) = (before.get(id), trainer.model.store.get(id));
                a.data().iter().zip(b.data()).map(|(x, y)| y - x).collect::<Vec<_>>()
            })
            .collect()
    };
    for (group, numeric) in [(Group::Main, num_main), (Group::Discriminator, num_disc)] {
        let d = delta(group);
        assert_eq!(d.len(), numeric.len());
        let worst = d
            .iter()
            .zip(&numeric)
            .map(|(&d, &n)| relative_error(-d / lr, n))
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{group:?}: {worst:e}");
    }
}

#[test]
fn zero_patience_stops_at_first_stale_epoch() {
    let config = ModelConfig {
        patience: 0,
        max_epochs: 12,
        ..tiny_config()
    };
    let (train, val) = tiny_data(&config);
    let out = fit(&config, &train, &val, Execution::Sequential).unwrap();
    let first_stale = out.history.iter().position(|h| !h.improved);
    match first_stale {
        Some(i) => assert_eq!(out.history.len(), i + 1),
        None => assert_eq!(out.history.len(), config.max_epochs),
    }
    assert!(out.history[out.best_epoch].improved);
}

#[test]
fn fit_is_deterministic_across_execution_modes() {
    let config = tiny_config();
    let (train, val) = tiny_data(&config);
    let a = fit(&config, &train, &val, Execution::Sequential).unwrap();
    let b = fit(&config, &train, &val, Execution::Parallel).unwrap();
    let c = fit(&config, &train, &val, Execution::Sequential).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
    assert_eq!(
        serde_json::to_string(&a.history).unwrap(),
        serde_json::to_string(&b.history).unwrap()
    );
}

#[test]
fn restored_checkpoint_reproduces_evaluation_bitwise() {
    let config = tiny_config();
    let (train, val) = tiny_data(&config);
    let out = fit(&config, &train, &val, Execution::Sequential).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path, &config).unwrap();
    assert_eq!(loaded.to_bytes(), out.checkpoint.to_bytes());
    let restored = Trainer::from_checkpoint(&config, &loaded).unwrap();
    let a = evaluate(&out.trainer.model, &val, Execution::Sequential).unwrap();
    let b = evaluate(&restored.model, &val, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.metrics, out.history[out.best_epoch].validation);
    // a different config is refused
    let other = ModelConfig { d3: 5, ..config };
    assert!(Checkpoint::load(&path, &other).is_err());
}

#[test]
fn overlapping_splits_are_rejected() {
    let config = tiny_config();
    let (train, _) = tiny_data(&config);
    assert!(fit(&config, &train, &train, Execution::Sequential).is_err());
}

/// A discriminator trained on public features that carry no event
/// information cannot beat chance on held-out features.
#[test]
fn discriminator_on_uninformative_features_sits_at_chance() {
    let (events, dim, frames) = (3, 4, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut draw = |n: usize| -> Vec<Vec<Tensor>> {
        (0..n)
            .map(|_| {
                (0..events)
                    .map(|_| {
                        let d: Vec<f64> = (0..frames * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                        Tensor::matrix(frames, dim, d)
                    })
                    .collect()
            })
            .collect()
    };
    let (train, test) = (draw(60), draw(60));

    let mut store = ParamStore::new();
    let disc = EventDiscriminator::new(&mut store, &mut rng, dim, events);
    let ids = store.ids_in(Group::Discriminator);
    let shapes: Vec<Vec<usize>> = ids.iter().map(|&i| store.get(i).shape().to_vec()).collect();
    let mut opt = Optimizer::new(
        OptimizerKind::AdamW,
        0.0,
        &shapes.iter().map(Vec::as_slice).collect::<Vec<_>>(),
    );
    for _ in 0..200 {
        let mut total: Option<Vec<Tensor>> = None;
        for pubs in &train {
            let mut g = Graph::new();
            let p = store.bind(&mut g).unwrap();
            let vars: Vec<_> = pubs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
            let out = disc.loss(&mut g, &p, &vars).unwrap();
            g.backward(out.loss).unwrap();
            let grads: Vec<Tensor> = ids.iter().map(|&i| g.grad(p.var(i)).unwrap().clone()).collect();
            match &mut total {
                None => total = Some(grads),
                Some(t) => t.iter_mut().zip(&grads).for_each(|(a, b)| a.add_assign(b).unwrap()),
            }
        }
        let mut grads = total.unwrap();
        grads
            .iter_mut()
            .for_each(|t| t.scale_in_place(1.0 / train.len() as f64));
        let mut params: Vec<&mut Tensor> = store.entries_mut().iter_mut().map(|e| &mut e.value).collect();
        opt.update(&mut params, &grads, 0.01);
    }

    let (mut correct, mut total) = (0usize, 0usize);
    for pubs in &test {
        let mut g = Graph::new();
        let p = store.bind_where(&mut g, |_| false).unwrap();
        for (k, t) in pubs.iter().enumerate() {
            let x = g.constant(t.clone()).unwrap();
            let logits = disc.logits(&mut g, &p, x).unwrap();
            let logits = g.value(logits);
            for r in 0..frames {
                correct += usize::from(argmax(logits.row_slice(r)) == k);
                total += 1;
            }
        }
    }
    let acc = correct as f64 / total as f64;
    assert!((acc - 1.0 / 3.0).abs() <= 0.05, "held-out accuracy {acc}");
}
