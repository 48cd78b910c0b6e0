use super::report::{cmd_report, final_records, summary_table, welch_p};
use super::*;

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset = DatasetCfg {
        n_labeled: 10,
        n_unlabeled: 12,
        height: 16,
        width: 16,
        seed: 5,
        ..ExperimentConfig::default().dataset
    };
    cfg.protocol = ProtocolCfg { fractions: vec![0.5, 1.0], folds: 2, repeats: 1, master_seed: 3 };
    cfg.segnet.max_epochs = 6;
    cfg.segnet.patience = 6;
    cfg.rest.k_iterations = 3;
    cfg.rest.batch_size = 4;
    cfg.expert.min_shift = 4;
    cfg.expert.max_shift = 8;
    cfg.expert.abort_accuracy = 0.0;
    cfg.output.dir = out.display().to_string();
    cfg
}

#[test]
fn config_round_trips_exactly() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);

    let mut cfg = ExperimentConfig::default();
    cfg.segnet.lr = 0.00314;
    cfg.protocol.fractions = vec![0.25, 1.0];
    cfg.rest.stab_delta = 0.0125;
    cfg.output.dir = "elsewhere/out".into();
    assert_eq!(ExperimentConfig::parse(&cfg.serialize()).unwrap(), cfg);
}

#[test]
fn partial_config_keeps_defaults() {
    let cfg = ExperimentConfig::parse("[rest]\nk_iterations = 7\n").unwrap();
    assert_eq!(cfg.rest.k_iterations, 7);
    assert_eq!(cfg.rest.tau_phase, ExperimentConfig::default().rest.tau_phase);
    assert_eq!(cfg.dataset, ExperimentConfig::default().dataset);
}

#[test]
fn config_parse_errors_are_config_class() {
    for text in [
        "[dataset]\nn_labeled = many\n",
        "[dataset]\nbogus_key = 1\n",
        "no equals sign here\n",
        "[protocol]\nfractions = 0.3\n",
        "[protocol]\nfolds = 1\n",
        "[policy]\ntheta_pos = 0.1\ntheta_neg = 0.5\n",
    ] {
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text:?} -> {err}");
    }
}

#[test]
fn error_display_is_single_line_and_coded() {
    let e = CliError::Data("first\nsecond".into());
    let s = e.to_string();
    assert!(s.starts_with("error[data]: "));
    assert!(!s.contains('\n'));
    assert_eq!(CliError::Config(String::new()).exit_code(), 2);
    assert_eq!(CliError::Data(String::new()).exit_code(), 3);
    assert_eq!(CliError::Numeric(String::new()).exit_code(), 4);
}

#[test]
fn run_ids_are_distinct_per_method_and_fraction() {
    let cfg = ExperimentConfig::default();
    let ids = [
        run_id(&cfg, "supervised", 0.25),
        run_id(&cfg, "supervised", 0.5),
        run_id(&cfg, "rest", 0.25),
        run_id(&cfg, "rest", 0.5),
    ];
    for i in 0..ids.len() {
        assert_eq!(ids[i].len(), 12);
        for j in i + 1..ids.len() {
            assert_ne!(ids[i], ids[j]);
        }
    }
    assert_eq!(run_id(&cfg, "rest", 0.5), run_id(&cfg, "rest", 0.5));
}

#[test]
fn generate_writes_manifest_and_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir_a.path());
    let digest_a = cmd_generate(&cfg, dir_a.path()).unwrap();
    let digest_b = cmd_generate(&cfg, dir_b.path()).unwrap();
    assert_eq!(digest_a, digest_b);

    let rows = manifest::read(&dir_a.path().join("data/manifest.tsv")).unwrap();
    assert_eq!(rows.len(), cfg.dataset.n_labeled + cfg.dataset.n_unlabeled);

    let split = load_dataset(dir_a.path()).unwrap();
    assert_eq!(split.labeled.len(), cfg.dataset.n_labeled);
    assert_eq!(split.unlabeled.len(), cfg.dataset.n_unlabeled);
    assert_eq!(split.folds.len(), cfg.protocol.folds);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("generate"));
}

#[test]
fn supervised_then_rest_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_generate(&cfg, dir.path()).unwrap();

    let records = cmd_train_supervised(&cfg, dir.path(), 1.0).unwrap();
    assert_eq!(records.len(), cfg.protocol.folds * cfg.protocol.repeats);
    assert!(records.iter().all(|r| r.method == "supervised" && r.iteration == 0));
    assert!(metrics_path(dir.path(), "supervised", 1.0).exists());

    // k iteration rows plus one closing row for the returned model per cell
    let rest_records = cmd_rest(&cfg, dir.path(), 1.0).unwrap();
    assert_eq!(
        rest_records.len(),
        cfg.protocol.folds * cfg.protocol.repeats * (cfg.rest.k_iterations + 1)
    );
    assert!(rest_records.iter().all(|r| r.method == "rest"));
    assert!(ckpt_path(dir.path(), "rest", 1.0, 0, 0).exists());

    let out = cmd_report(&cfg, dir.path(), &[]).unwrap();
    assert!(out.table_txt.is_some());
    assert!(!out.curve_files.is_empty());
    assert!(!out.triptych_files.is_empty());
}

#[test]
fn rest_without_supervised_checkpoint_fails_clearly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_generate(&cfg, dir.path()).unwrap();
    let err = cmd_rest(&cfg, dir.path(), 1.0).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("train-supervised"), "{err}");
}

#[test]
fn resolve_out_dir_honors_env_override() {
    // run serially inside one test to avoid env races
    let cfg = tiny_config(Path::new("cfg-dir"));
    std::env::remove_var("REST_LAB_OUT");
    assert_eq!(resolve_out_dir(&cfg), PathBuf::from("cfg-dir"));
    std::env::set_var("REST_LAB_OUT", "env-dir");
    assert_eq!(resolve_out_dir(&cfg), PathBuf::from("env-dir"));
    std::env::remove_var("REST_LAB_OUT");
}

fn fixture_values(mean: f64, sd: f64) -> Vec<f64> {
    let mut v = vec![mean - sd; 12];
    v.extend(vec![mean + sd; 12]);
    v.push(mean);
    v
}

fn fixture_records(method: &str, fraction: f64, f1s: &[f64]) -> Vec<MetricsRecord> {
    f1s.iter()
        .enumerate()
        .map(|(i, &f1)| MetricsRecord {
            run_id: format!("{method}-{fraction}"),
            method: method.into(),
            labeled_fraction: fraction,
            repeat: i / 5,
            fold: i % 5,
            iteration: if method == "rest" { 5 } else { 0 },
            f1,
            sensitivity: 0.9,
            fps_per_image: 0.5,
            reward: None,
        })
        .collect()
}

#[test]
fn report_table_matches_reference_statistics() {
    let pre = fixture_values(0.745, 0.018);
    let post = fixture_values(0.802, 0.014);
    let mut records = fixture_records("supervised", 0.5, &pre);
    records.extend(fixture_records("rest", 0.5, &post));
    // second fraction written first: rows must still sort ascending
    let mut more = fixture_records("supervised", 0.25, &pre);
    more.extend(fixture_records("rest", 0.25, &pre));
    more.extend(records);
    let rows = summary_table(&more).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].fraction < rows[1].fraction);
    let row = &rows[1];
    assert!((row.pre_f1.0 - 0.745).abs() < 1e-12);
    assert!((row.pre_f1.1 - 0.018).abs() < 1e-12);
    assert!((row.post_f1.0 - 0.802).abs() < 1e-12);
    assert!(row.p_f1 < 0.001, "p = {}", row.p_f1);
    // identical pre and post at 25% labeled
    assert_eq!(rows[0].p_f1, 1.0);
}

#[test]
fn report_rejects_mismatched_folds() {
    let pre = fixture_values(0.7, 0.01);
    let post = fixture_values(0.8, 0.01);
    let mut records = fixture_records("supervised", 0.5, &pre);
    let mut post_records = fixture_records("rest", 0.5, &post);
    post_records.pop();
    records.extend(post_records);
    let err = summary_table(&records).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("supervised-0.5"), "{err}");
}

#[test]
fn final_records_pick_best_f1_per_cell() {
    let mut records = Vec::new();
    for (it, f1) in [(1usize, 0.4), (2, 0.7), (3, 0.5), (4, 0.7)] {
        records.push(MetricsRecord {
            run_id: "x".into(),
            method: "rest".into(),
            labeled_fraction: 1.0,
            repeat: 0,
            fold: 0,
            iteration: it,
            f1,
            sensitivity: 0.0,
            fps_per_image: 0.0,
            reward: None,
        });
    }
    let finals = final_records(&records, "rest", 1.0);
    assert_eq!(finals.len(), 1);
    // best F1 wins; ties go to the later iteration
    assert_eq!(finals[0].iteration, 4);
    assert_eq!(finals[0].f1, 0.7);
}

#[test]
fn welch_p_handles_degenerate_pairs() {
    assert_eq!(welch_p(&[0.5; 10], &[0.5; 10]), 1.0);
    assert_eq!(welch_p(&[0.5; 10], &[0.9; 10]), 0.0);
    let p = welch_p(&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3]);
    assert_eq!(p, 1.0);
}
