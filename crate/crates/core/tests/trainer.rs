mod common;

use common::{overfit_one_batch, tiny_experiment};
use mucap_core::model::{load_checkpoint, Model};
use mucap_core::trainer::{
    build_corpus, model_config_for, sweep_alpha, train, write_sweep_csv, CheckpointSink, RunLog, SweepRow, TrainConfig,
    SWEEP_CSV_HEADER,
};
use mucap_core::Error;

fn fresh(exp: &mucap_core::trainer::ExperimentConfig, splits: &mucap_core::trainer::Splits) -> Model {
    Model::new(model_config_for(exp, &splits.vocab), 7).unwrap()
}

#[test]
fn overfits_a_single_batch() {
    let o = overfit_one_batch();
    assert!(o.last < 0.1 * o.initial, "{} -> {}", o.initial, o.last);
    for s in &o.batch {
        let got = o.model.generate(&s.music, &s.lyrics, 23).unwrap();
        assert_eq!(got, s.caption[1..]);
    }
}

#[test]
fn identical_config_gives_identical_runlogs() {
    let exp = tiny_experiment();
    let splits = build_corpus(&exp).unwrap();
    let run = || train(fresh(&exp, &splits), &exp.train, &splits.train, &splits.eval, None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert!(!a.log.steps.is_empty());
    for (x, y) in a.last.params.iter().zip(b.last.params.iter()) {
        assert!(x
            .1
            .data()
            .iter()
            .zip(y.1.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let steps: Vec<usize> = a.log.steps.iter().map(|s| s.step).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn alpha_zero_keeps_head_at_init() {
    let mut exp = tiny_experiment();
    exp.train.alpha = 0.0;
    let splits = build_corpus(&exp).unwrap();
    let init = fresh(&exp, &splits);
    let out = train(init.clone(), &exp.train, &splits.train, &splits.eval, None).unwrap();
    let head = init.head_params();
    for id in [head.music_proj, head.text_proj] {
        assert_eq!(init.params.get(id).data(), out.last.params.get(id).data());
    }
    let dec = init.decoder_params().output;
    assert_ne!(init.params.get(dec).data(), out.last.params.get(dec).data());
}

#[test]
fn frozen_music_encoder_is_unchanged() {
    let mut exp = tiny_experiment();
    exp.train.freeze_music_encoder = true;
    let splits = build_corpus(&exp).unwrap();
    let init = fresh(&exp, &splits);
    let out = train(init.clone(), &exp.train, &splits.train, &splits.eval, None).unwrap();
    let mut moved_other = false;
    for id in init.params.ids() {
        let same = init.params.get(id).data() == out.last.params.get(id).data();
        if init.is_music_param(id) {
            assert!(same, "{} moved", init.params.name(id));
        } else {
            moved_other |= !same;
        }
    }
    assert!(moved_other);
}

#[test]
fn nan_loss_aborts_with_step() {
    let exp = tiny_experiment();
    let splits = build_corpus(&exp).unwrap();
    let mut model = fresh(&exp, &splits);
    let id = model.decoder_params().output_bias;
    model.params.get_mut(id).data_mut()[4] = f64::NAN;
    match train(model, &exp.train, &splits.train, &splits.eval, None) {
        Err(Error::Diverged { step }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn bad_config_and_empty_corpus_rejected() {
    let exp = tiny_experiment();
    let splits = build_corpus(&exp).unwrap();
    let model = fresh(&exp, &splits);
    let bad = TrainConfig {
        lr: 0.0,
        ..exp.train.clone()
    };
    assert!(train(model.clone(), &bad, &splits.train, &splits.eval, None).is_err());
    assert!(train(model, &exp.train, &[], &splits.eval, None).is_err());
}

#[test]
fn checkpoints_per_epoch_and_best_reproduces_eval_loss() {
    let exp = tiny_experiment();
    let splits = build_corpus(&exp).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sink = CheckpointSink {
        dir: dir.path(),
        extra: serde_json::to_value(&exp).unwrap(),
    };
    let out = train(
        fresh(&exp, &splits),
        &exp.train,
        &splits.train,
        &splits.eval,
        Some(&sink),
    )
    .unwrap();
    for e in 0..exp.train.epochs {
        assert!(dir.path().join(format!("epoch-{e:03}.ckpt")).exists());
    }
    let (loaded, extra) = load_checkpoint(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(extra, sink.extra);
    let refs: Vec<_> = splits.test.iter().collect();
    let opts = exp.train.loss_options();
    let a = out.best.eval_losses(&refs, opts).unwrap();
    let b = loaded.eval_losses(&refs, opts).unwrap();
    assert_eq!(a.2.to_bits(), b.2.to_bits());
    let best = out.log.epochs[out.best_epoch].rouge_l;
    assert!(out.log.epochs.iter().all(|e| e.rouge_l <= best));
}

#[test]
fn runlog_jsonl_round_trip_from_training() {
    let exp = tiny_experiment();
    let splits = build_corpus(&exp).unwrap();
    let out = train(fresh(&exp, &splits), &exp.train, &splits.train, &splits.eval, None).unwrap();
    let mut buf = Vec::new();
    let cfg = serde_json::to_value(&exp).unwrap();
    out.log.write_jsonl(&mut buf, &cfg).unwrap();
    let (back, c) = RunLog::read_jsonl(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back, out.log);
    assert_eq!(c, Some(cfg));
}

#[test]
fn sweep_rows_cover_alpha_by_seed() {
    let exp = tiny_experiment();
    let alphas = [0.0, 0.5];
    let runs = sweep_alpha(&exp, &alphas, 2).unwrap();
    assert_eq!(runs.len(), alphas.len() * exp.seeds.len());
    let rows: Vec<SweepRow> = runs.iter().map(SweepRow::from_run).collect();
    let order: Vec<(f64, u64)> = rows.iter().map(|r| (r.alpha, r.seed)).collect();
    assert_eq!(order, vec![(0.0, 0), (0.0, 1), (0.5, 0), (0.5, 1)]);
    let means = SweepRow::seed_means(&rows);
    assert_eq!(means.len(), 2);
    assert!((means[0].rouge_l - (rows[0].rouge_l + rows[1].rouge_l) / 2.0).abs() < 1e-15);

    // one worker gives the same table
    let serial: Vec<SweepRow> = sweep_alpha(&exp, &alphas, 1)
        .unwrap()
        .iter()
        .map(SweepRow::from_run)
        .collect();
    assert_eq!(serial, rows);

    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows, &serde_json::json!({"alphas": alphas})).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: "));
    assert_eq!(lines.next().unwrap(), SWEEP_CSV_HEADER.join(","));
    assert_eq!(lines.count(), 4);
    assert!(sweep_alpha(&exp, &[], 1).is_err());
    assert!(sweep_alpha(&exp, &[-1.0], 1).is_err());
}
