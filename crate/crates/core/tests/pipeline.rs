use std::fs;
use std::path::Path;

use mcvd_core::config::RunConfig;
use mcvd_core::dataset::{gen_dataset, open_dataset, load_training_samples, Manifest, Split};
use mcvd_core::eval::{run_report, CenterMethod, ReportOptions};
use mcvd_core::nn::Frame;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.experiment.k = 2;
    cfg.experiment.scenarios = 10;
    cfg.experiment.seed = 42;
    cfg.physical.n_molecules_per_tx = 300;
    cfg
}

/// Every file under `root`, relative path and contents, in sorted order.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generation_is_reproducible_and_resumable() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_dataset(&cfg, a.path()).unwrap();
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    one_thread.install(|| gen_dataset(&cfg, b.path())).unwrap();
    let full = snapshot(a.path());
    assert_eq!(full, snapshot(b.path()));
    assert!(full.iter().any(|(p, _)| p.ends_with("features.csv")));

    // Simulate an interrupted run: one scenario missing and the manifest
    // still marked incomplete.
    fs::remove_dir_all(b.path().join("scenario_00003")).unwrap();
    fs::remove_file(b.path().join("scenario_00007").join("meta.toml")).unwrap();
    let manifest = fs::read_to_string(b.path().join("manifest.toml")).unwrap();
    fs::write(
        b.path().join("manifest.toml"),
        manifest.replace("complete = true", "complete = false"),
    )
    .unwrap();
    assert!(open_dataset(b.path()).is_err());
    gen_dataset(&cfg, b.path()).unwrap();
    assert_eq!(full, snapshot(b.path()));
}

#[test]
fn changed_configuration_is_refused() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.physical.d_max_um = 14.0;
    let err = gen_dataset(&other, dir.path()).unwrap_err();
    assert_eq!(err.category(), "invalid-input");
    // Settings outside the dataset (training, output) do not invalidate it.
    let mut training_only = cfg.clone();
    training_only.training.epochs = 3;
    gen_dataset(&training_only, dir.path()).unwrap();
}

#[test]
fn missing_dataset_names_the_path() {
    let err = open_dataset(Path::new("/nonexistent/mcvd-data")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/mcvd-data"), "{err}");
}

#[test]
fn report_is_deterministic_and_complete() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(m, Manifest::load(dir.path()).unwrap());
    let opts = ReportOptions::from_config(&cfg);
    let r1 = run_report(dir.path(), &opts).unwrap();
    let r2 = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_report(dir.path(), &opts))
        .unwrap();
    assert_eq!(r1.table1_csv(), r2.table1_csv());
    assert_eq!(r1.table3_csv(), r2.table3_csv());
    assert_eq!(r1.scenarios.len(), 10);

    let table1 = r1.table1_csv();
    let mut lines = table1.lines();
    assert_eq!(lines.next(), Some("method,k,mean_deg,instances,failures"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for m in [
        CenterMethod::DensityMinCovDet,
        CenterMethod::MinCovDet,
        CenterMethod::Density,
        CenterMethod::KMeans,
        CenterMethod::Gmm,
    ] {
        let s = r1.angular_summary(m);
        assert!(s.mean_deg.unwrap() < 60.0, "{m}: {s:?}");
    }

    let out = tempfile::tempdir().unwrap();
    let files = r1.write_csvs(out.path()).unwrap();
    assert_eq!(files.len(), 3 + 2 * 5);
    for f in files {
        assert!(fs::metadata(&f).unwrap().len() > 0, "{}", f.display());
    }
}

#[test]
fn nearby_transmitters_are_found_almost_exactly() {
    // Transmitters just outside the receiver with many molecules: every
    // method should land within a couple of degrees.
    let mut cfg = small_config();
    cfg.experiment.scenarios = 6;
    cfg.experiment.min_separation_deg = 90.0;
    cfg.physical.d_min_um = 5.5;
    cfg.physical.d_max_um = 5.6;
    cfg.physical.n_molecules_per_tx = 2000;
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&cfg, dir.path()).unwrap();
    let mut opts = ReportOptions::from_config(&cfg);
    opts.methods = Some(vec![CenterMethod::KMeans, CenterMethod::DensityMinCovDet]);
    let r = run_report(dir.path(), &opts).unwrap();
    for m in [CenterMethod::KMeans, CenterMethod::DensityMinCovDet] {
        let mean = r.angular_summary(m).mean_deg.unwrap();
        assert!(mean < 2.0, "{m}: {mean}");
    }
}

#[test]
fn training_samples_follow_the_split() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&cfg, dir.path()).unwrap();
    let train = load_training_samples(dir.path(), Split::Train, Frame::Canonical).unwrap();
    let val = load_training_samples(dir.path(), Split::Val, Frame::Canonical).unwrap();
    let test = load_training_samples(dir.path(), Split::Test, Frame::Canonical).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));
}
