use pcl_core::data::{gen_synthetic, task_view, Dataset, SyntheticSpec};
use pcl_core::model::{Pooling, SdsmConfig, SdsmModel};
use pcl_core::rng::seeded;
use pcl_core::stream::{
    average_forgetting, evaluate, run_stream, Exemplar, Learner, ReplayBuffer, StreamSetup,
    TaskSchedule, TrainConfig,
};
use rand::Rng as _;

fn blobs(k: usize, seed: u64) -> (Dataset, Dataset) {
    gen_synthetic(&SyntheticSpec {
        num_classes: k,
        dim: 16,
        samples_per_class: 100,
        separation: 6.0,
        stddev: 1.0,
        seed,
    })
    .unwrap()
}

fn model_cfg(k: usize) -> SdsmConfig {
    SdsmConfig {
        input_dim: 16,
        patch_len: 4,
        hidden_dim: 16,
        num_classes: k,
        pooling: Pooling::Mean,
    }
}

fn setup(seed: u64) -> StreamSetup {
    let mut train = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    train.adam.lr = 1e-2;
    StreamSetup {
        schedule: TaskSchedule::contiguous(5, 2, 10),
        model: model_cfg(10),
        train,
    }
}

#[test]
fn repeated_steps_on_one_batch_reduce_the_loss() {
    let (train, _) = blobs(4, 3);
    let batch: Vec<Exemplar> = (0..8)
        .map(|i| {
            let idx = train.class_indices(i % 4)[i / 4];
            (train.input(idx).to_vec(), train.label(idx))
        })
        .collect();
    let mut learner = Learner::new(model_cfg(4), TrainConfig::default()).unwrap();
    // the first step registers every class; start counting after it
    let mut prev = learner.step(&batch, false).unwrap().l_total;
    let mut decreases = 0;
    for _ in 0..50 {
        let l = learner.step(&batch, false).unwrap().l_total;
        if l < prev {
            decreases += 1;
        }
        prev = l;
    }
    assert!(decreases >= 45, "{decreases} of 50");
}

#[test]
fn repeating_a_task_forgets_nothing() {
    let (train, test) = blobs(2, 5);
    let mut learner = Learner::new(model_cfg(2), setup(0).train).unwrap();
    let order = task_view(&train, &[0, 1], 0).unwrap();
    let (first, second) = order.split_at(order.len() / 2);
    let all_test: Vec<usize> = (0..test.len()).collect();
    let mut rows = Vec::new();
    for (t, part) in [first, second].into_iter().enumerate() {
        for chunk in part.chunks(10) {
            let batch: Vec<Exemplar> = chunk
                .iter()
                .map(|&i| (train.input(i).to_vec(), train.label(i)))
                .collect();
            learner.train_step(&batch).unwrap();
        }
        let acc = evaluate(&learner, &test, &all_test).unwrap();
        // both "tasks" are the same classes, so each row repeats one accuracy
        rows.push(vec![acc; t + 1]);
    }
    let forgetting = average_forgetting(&rows).unwrap();
    assert!(forgetting <= 0.02, "{rows:?}");
}

#[test]
fn accuracy_matrix_is_lower_triangular() {
    let (train, test) = blobs(10, 1);
    let out = run_stream(&setup(1), &train, &test, None).unwrap();
    let rows = &out.ledger.rows;
    assert_eq!(rows.len(), 5);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), i + 1);
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert!(out.ledger.avg_accuracy > 0.2);
    assert_eq!(out.steps.len(), 5 * 2 * 80 / 10);
    assert_eq!(out.feedback.len(), out.steps.len());
}

#[test]
fn task_data_is_only_read_while_its_task_is_active() {
    let (train, test) = blobs(10, 2);
    let s = setup(2);
    let out = run_stream(&s, &train, &test, None).unwrap();
    let mut last_task = 0;
    for a in &out.access_log {
        assert!(a.active_task >= last_task);
        last_task = a.active_task;
        assert!(s.schedule.tasks[a.active_task].contains(&train.label(a.sample)));
    }
    assert_eq!(out.access_log.len(), train.len());
    let mut seen: Vec<usize> = out.access_log.iter().map(|a| a.sample).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), train.len());
}

#[test]
fn ledger_is_deterministic() {
    let (train, test) = blobs(10, 4);
    let a = run_stream(&setup(4), &train, &test, None).unwrap();
    let b = run_stream(&setup(4), &train, &test, None).unwrap();
    assert_eq!(a.ledger.to_json(), b.ledger.to_json());
    assert_eq!(a.steps_csv(), b.steps_csv());
    let c = run_stream(&setup(5), &train, &test, None).unwrap();
    assert_ne!(a.steps_csv(), c.steps_csv());
}

#[test]
fn zero_frozen_feedback_matches_no_feedback_bitwise() {
    let (train, test) = blobs(10, 6);
    let mut frozen = setup(6);
    frozen.train.freeze_feedback = true;
    let mut off = setup(6);
    off.train.use_mf = false;
    let echo = serde_json::json!({});
    let a = run_stream(&frozen, &train, &test, Some(echo.clone())).unwrap();
    let b = run_stream(&off, &train, &test, Some(echo)).unwrap();
    assert_eq!(a.ledger.to_json(), b.ledger.to_json());
    assert_eq!(a.steps_csv(), b.steps_csv());
    for (p, q) in a
        .learner
        .model
        .params()
        .iter()
        .zip(b.learner.model.params())
    {
        assert_eq!(p.tensor.values(), q.tensor.values());
    }
}

#[test]
fn hidden_norm_is_bounded_by_length_gate_and_token_norms() {
    let mut rng = seeded(9);
    for pooling in [Pooling::Mean, Pooling::Last] {
        let cfg = SdsmConfig {
            pooling,
            ..model_cfg(3)
        };
        let model = SdsmModel::new(cfg, &mut rng).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fb: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tr = model.forward(&x, Some(&fb)).unwrap();
            let tokens = model.embed(&x).unwrap();
            let (l, n) = tokens.dims2().unwrap();
            let u_max = (0..l)
                .map(|i| {
                    tokens.values()[i * n..(i + 1) * n]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max);
            let b_max = tr
                .gates_b
                .iter()
                .flat_map(|g| g.values().iter().copied())
                .fold(0.0, f64::max);
            assert!(tr
                .gates_a
                .iter()
                .all(|g| g.values().iter().all(|&a| a < 1.0)));
            let bound = l as f64 * b_max * u_max;
            assert!(
                tr.hidden.norm() <= bound * (1.0 + 1e-12),
                "{} > {bound}",
                tr.hidden.norm()
            );
        }
    }
}

#[test]
fn reservoir_keeps_every_position_equally_likely() {
    let (m, n, trials) = (5usize, 100usize, 20_000u32);
    let mut rng = seeded(21);
    let mut counts = vec![0u32; n];
    for _ in 0..trials {
        let mut buf = ReplayBuffer::new(m);
        for i in 0..n {
            buf.reservoir_insert(i, &mut rng);
        }
        assert_eq!(buf.len(), m);
        for &i in buf.items() {
            counts[i] += 1;
        }
    }
    let p = m as f64 / n as f64;
    let sd = (p * (1.0 - p) / f64::from(trials)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let freq = f64::from(c) / f64::from(trials);
        // loose enough for 100 simultaneous comparisons
        assert!((freq - p).abs() <= 4.5 * sd, "item {i}: {freq}");
    }
}
