use facesplat::camera::{load_dataset, Split};
use facesplat::faceswap::{digest_file, transform_dataset, TransformOptions, TransformSpec};
use facesplat::gsplat::{GsTrainConfig, InitConfig};
use facesplat::imaging::{save_image, ImageRGB, WHITE};
use facesplat::pipeline::*;
use std::path::Path;

fn small_config(data: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        dataset: data.to_path_buf(),
        out: out.to_path_buf(),
        seed: 3,
        gs: GsTrainConfig {
            iterations: 40,
            ..GsTrainConfig::default()
        },
        gs_init: InitConfig {
            count: 200,
            ..InitConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn fixture(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    make_fixture(FixtureKind::CloudScene, 5, 10, 24, &data).unwrap();
    data
}

#[test]
fn runs_are_reproducible_and_persist_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let a = run_pipeline(&small_config(&data, &dir.path().join("a"))).unwrap();
    let b = run_pipeline(&small_config(&data, &dir.path().join("b"))).unwrap();
    assert_eq!(a.without_wall_time(), b.without_wall_time());
    assert_eq!(a.rows.len(), 2);
    for name in ["report.json", "report.csv", "report.md", "model.ply", "losses.json", "config.json", "renders/test/r_004.png"] {
        assert!(dir.path().join("a").join(name).is_file(), "{name}");
    }
    assert!(!dir.path().join("a/.lock").exists());
    let stored = EvalReport::load(&dir.path().join("a/report.json")).unwrap();
    assert_eq!(stored, a);
    let agg = Aggregates::from_rows(&stored.rows);
    assert!((agg.mean_psnr.unwrap() - stored.aggregates.mean_psnr.unwrap()).abs() < 1e-9);
}

#[test]
fn identity_transform_matches_the_untransformed_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let with = run_pipeline(&small_config(&data, &dir.path().join("id"))).unwrap();
    let without = run_pipeline(&PipelineConfig {
        transform: TransformChoice::None,
        ..small_config(&data, &dir.path().join("none"))
    })
    .unwrap();
    assert_eq!(with.rows, without.rows);
    assert_eq!(with.aggregates, without.aggregates);
}

#[test]
fn protocol_a_scores_against_transformed_held_out_views() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let target = dir.path().join("target.png");
    save_image(&ImageRGB::from_fn(24, 24, |x, _| [0.3, 0.2 + 0.02 * x as f64, 0.6]), &target).unwrap();
    let cfg = PipelineConfig {
        transform: TransformChoice::ColorMatch,
        target: Some(target.clone()),
        ..small_config(&data, &dir.path().join("run"))
    };
    run_pipeline(&cfg).unwrap();
    let test = load_dataset(&data, Split::Test, WHITE).unwrap();
    let offline = transform_dataset(
        &test,
        &TransformSpec::color_match(&target),
        &dir.path().join("offline"),
        &TransformOptions {
            split: Split::Test,
            ..TransformOptions::default()
        },
    )
    .unwrap();
    for rec in &offline.manifest.records {
        let in_run = dir.path().join("run/ground_truth/test").join(rec.output.file_name().unwrap());
        assert_eq!(digest_file(&in_run).unwrap(), rec.output_sha256);
    }
}

#[test]
fn output_directory_is_guarded() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let out = dir.path().join("out");
    let cfg = small_config(&data, &out);
    run_pipeline(&cfg).unwrap();
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(&err, PipelineError::Stage { source, .. } if matches!(**source, PipelineError::OutputExists(_))), "{err}");
    run_pipeline(&PipelineConfig { overwrite: true, ..cfg.clone() }).unwrap();

    std::fs::write(out.join(".lock"), "").unwrap();
    let err = run_pipeline(&PipelineConfig { overwrite: true, ..cfg }).unwrap_err();
    assert!(err.to_string().contains("in use"), "{err}");
}

#[test]
fn failures_carry_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let cfg = small_config(&dir.path().join("missing"), &dir.path().join("o1"));
    assert_eq!(run_pipeline(&cfg).unwrap_err().stage(), Some(Stage::Load));

    let cfg = PipelineConfig {
        transform: TransformChoice::External,
        external_cmd: Some("exit 2 # {source} {target} {out}".into()),
        target: Some(data.join("test/r_004.png")),
        ..small_config(&data, &dir.path().join("o2"))
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Transform));
    assert!(err.to_string().starts_with("[transform]"), "{err}");
}

#[test]
fn protocol_b_uses_the_other_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let other = dir.path().join("other");
    make_fixture(FixtureKind::CloudScene, 99, 10, 24, &other).unwrap();
    let cfg = PipelineConfig {
        protocol: Protocol::B,
        target_dataset: Some(other),
        ..small_config(&data, &dir.path().join("b"))
    };
    let report = run_pipeline(&cfg).unwrap();
    assert!(report.to_markdown().contains(PROTOCOL_B_NOTE));
    assert!(!dir.path().join("b/ground_truth").exists());
}

#[test]
fn novel_views_are_deterministic() {
    let cloud = random_cloud(1);
    let model = TrainedModel::Gs { cloud, background: WHITE };
    let intr = fixture_intrinsics(16).unwrap();
    assert!(render_novel_views(&model, &[], &intr).unwrap().is_empty());
    let pose = ring_poses(3)[1];
    let imgs = render_novel_views(&model, &[pose, pose], &intr).unwrap();
    assert_eq!(imgs[0], imgs[1]);
}
