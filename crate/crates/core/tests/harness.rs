use std::fs;

use decel_lab::harness::{
    load_checkpoint, load_checkpoint_from, save_checkpoint, save_checkpoint_to, zsl_report,
    PairRule, RunDir, RunStatus,
};
use decel_lab::interference::abs_mean_decompose;
use decel_lab::trainer::{build_model, train, ModelConfig, RunConfig, TrainConfig};
use decel_lab::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(n_bytes: usize) -> Vec<u8> {
    const WORDS: [&str; 12] = [
        "the", "cat", "sat", "on", "a", "mat", "and", "dog", "ran", "far", "away", "home",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::with_capacity(n_bytes + 8);
    while out.len() < n_bytes {
        out.extend_from_slice(WORDS[rng.random_range(0..WORDS.len())].as_bytes());
        out.push(if rng.random_range(0..8) == 0 {
            b'\n'
        } else {
            b' '
        });
    }
    out.truncate(n_bytes);
    out
}

fn tiny_cfg(steps: u64) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            vocab_size: 256,
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            mlp_dim: 32,
            seq_len: 16,
            seed: 5,
        },
        train: TrainConfig {
            batch_sequences: 4,
            total_steps: steps,
            warmup_steps: 4,
            peak_lr: 3e-3,
            eval_sequences: 2,
            ..TrainConfig::default()
        },
    }
}

fn file_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut st = build_model(&tiny_cfg(8).model).unwrap();
    st.step = 3;
    st.adam_m
        .flat_mut()
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = i as f64 * 1e-3);
    rand::RngCore::next_u64(&mut st.rng);
    let manifest = save_checkpoint(&st, dir.path()).unwrap();

    let names: Vec<&str> = manifest.tensors.iter().map(|e| e.name.as_str()).collect();
    let want: Vec<&str> = st
        .params
        .layout()
        .specs()
        .iter()
        .map(|s| s.name.as_str())
        .collect();
    assert_eq!(names, want);

    let back = load_checkpoint(dir.path(), 3).unwrap();
    assert_eq!(back.step, 3);
    assert_eq!(back.rng_state(), st.rng_state());
    for (a, b) in [
        (&st.params, &back.params),
        (&st.adam_m, &back.adam_m),
        (&st.adam_v, &back.adam_v),
    ] {
        assert!(a
            .flat()
            .iter()
            .zip(b.flat())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let first = dir.path().join("checkpoints/step_3");
    let second = dir.path().join("again");
    save_checkpoint_to(&back, &second).unwrap();
    assert_eq!(file_bytes(&first), file_bytes(&second));
}

#[test]
fn tampered_blob_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let st = build_model(&tiny_cfg(8).model).unwrap();
    save_checkpoint(&st, dir.path()).unwrap();
    let blob = dir.path().join("checkpoints/step_0/param.h0.mlp.fc.w.bin");
    let mut bytes = fs::read(&blob).unwrap();
    bytes[17] ^= 0x40;
    fs::write(&blob, bytes).unwrap();
    match load_checkpoint(dir.path(), 0) {
        Err(Error::Checksum { tensor, .. }) => assert_eq!(tensor, "h0.mlp.fc.w"),
        other => panic!("expected checksum error, got {:?}", other.map(|s| s.step)),
    }
    fs::remove_file(&blob).unwrap();
    assert!(matches!(
        load_checkpoint_from(&dir.path().join("checkpoints/step_0")),
        Err(Error::Checksum { .. })
    ));
    assert!(load_checkpoint(dir.path(), 1).is_err());
}

#[test]
fn train_writes_a_complete_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(40);
    let summary = train(&cfg, corpus(6000), dir.path()).unwrap();
    assert!(summary.final_loss < summary.initial_loss);
    assert!((summary.initial_loss / 256f64.ln() - 1.0).abs() < 0.01);

    let run = RunDir::open(dir.path()).unwrap();
    let m = run.manifest().unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.checkpoint_steps, vec![1, 2, 4, 8, 16, 32, 40]);
    assert_eq!(run.config().unwrap(), cfg);
    let ts = run.token_set().unwrap();
    assert_eq!(ts.n_tokens, 32);
    for &s in &m.checkpoint_steps {
        assert_eq!(run.snapshot(s).unwrap().len(), 32);
        let st = run.checkpoint(s).unwrap();
        assert_eq!(st.step, s);
        let u = run.update(s).unwrap();
        assert_eq!(u.len(), st.params.len());
    }
    // The update after checkpoint t is the exact parameter difference.
    let a = run.checkpoint(1).unwrap();
    let b = run.checkpoint(2).unwrap();
    let u = run.update(1).unwrap();
    for ((x, y), d) in a.params.flat().iter().zip(b.params.flat()).zip(u.values()) {
        assert_eq!(y - x, *d);
    }

    let curve = run.loss_curve().unwrap();
    assert_eq!(curve.len(), 40);
    let lines = fs::read_to_string(run.log_path()).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in [
        "step",
        "loss",
        "lr",
        "grad_norm",
        "update_norm",
        "cos_update_grad",
        "source",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert_eq!(first["source"], "train_batch");

    let rows = zsl_report(&run, &PairRule::Doubling).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.d));
        assert!((r.abs_dl - r.m * r.c).abs() <= 1e-12 * r.abs_dl.max(1e-300));
    }
}

#[test]
fn rerun_reproduces_every_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny_cfg(9);
    train(&cfg, corpus(4000), a.path()).unwrap();
    train(&cfg, corpus(4000), b.path()).unwrap();
    assert_eq!(
        fs::read(a.path().join("log.jsonl")).unwrap(),
        fs::read(b.path().join("log.jsonl")).unwrap()
    );
    for sub in [
        "checkpoints/step_8",
        "checkpoints/step_9",
        "eval",
        "updates/step_9",
    ] {
        assert_eq!(
            file_bytes(&a.path().join(sub)),
            file_bytes(&b.path().join(sub)),
            "{sub}"
        );
    }
    let mut other = cfg.clone();
    other.model.seed = 6;
    let c = tempfile::tempdir().unwrap();
    train(&other, corpus(4000), c.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("log.jsonl")).unwrap(),
        fs::read(c.path().join("log.jsonl")).unwrap()
    );
}

#[test]
fn zsl_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    train(&tiny_cfg(8), corpus(4000), dir.path()).unwrap();
    let run = RunDir::open(dir.path()).unwrap();
    fs::remove_file(run.snapshot_path(4)).unwrap();
    let err = zsl_report(&run, &PairRule::Doubling).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
    assert!(err.to_string().contains("step 4"), "{err}");

    decel_lab::harness::blob::write_f64_array(&run.snapshot_path(4), &[1.0; 5]).unwrap();
    let err = zsl_report(&run, &PairRule::Explicit(vec![(2, 4)])).unwrap_err();
    assert!(err.to_string().contains("token-set mismatch"), "{err}");
}

#[test]
fn hand_built_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    train(&tiny_cfg(5), corpus(4000), dir.path()).unwrap();
    let run = RunDir::open(dir.path()).unwrap();
    let n = run.token_set().unwrap().n_tokens;
    let base: Vec<f64> = (0..n).map(|i| 3.0 + i as f64 * 0.01).collect();
    run.write_snapshot(1, &base).unwrap();
    run.write_snapshot(2, &base).unwrap();
    let row = &zsl_report(&run, &PairRule::Explicit(vec![(1, 2)])).unwrap()[0];
    assert_eq!((row.d, row.m, row.abs_dl), (0.0, 0.0, 0.0));

    let mut moved = base.clone();
    let dl: Vec<f64> = (0..n).map(|i| [2.0, -1.0, 1.0][i % 3]).collect();
    moved.iter_mut().zip(&dl).for_each(|(a, d)| *a += d);
    run.write_snapshot(4, &moved).unwrap();
    let row = &zsl_report(&run, &PairRule::Explicit(vec![(2, 4)])).unwrap()[0];
    let want = abs_mean_decompose(
        &decel_lab::interference::ValueSeries::new(
            moved.iter().zip(&base).map(|(a, b)| a - b).collect(),
        )
        .unwrap(),
    );
    assert_eq!((row.d, row.m), (want.d, want.m));
    assert_eq!(row.n_tokens, n);
}

#[test]
fn train_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&tiny_cfg(8), Vec::new(), dir.path()),
        Err(Error::InvalidInput(_))
    ));
    let mut cfg = tiny_cfg(8);
    cfg.model.vocab_size = 64;
    assert!(train(&cfg, corpus(4000), dir.path()).is_err());
    let mut cfg = tiny_cfg(8);
    cfg.train.warmup_steps = 8;
    assert!(matches!(
        train(&cfg, corpus(4000), dir.path()),
        Err(Error::Config(_))
    ));
}
