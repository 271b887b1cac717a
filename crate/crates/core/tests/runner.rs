use qahsim::runner::{self, read_summary, run_texture, write_texture_run, GridSpec, Mode, RunConfig};
use qahsim::TransitionPhase;

fn small_sse_config() -> RunConfig {
    RunConfig {
        grid: GridSpec {
            kmin: -1.8,
            kmax: 1.8,
            n: 9,
        },
        n_configs: 300,
        mode: Mode::Both,
        classify_texture_n: 31,
        ep_grid_n: 24,
        ..RunConfig::weak_noise_default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn summary_round_trips_through_files() {
    let run = run_texture(&RunConfig::weak_noise_default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_texture_run(&run, dir.path()).unwrap();
    for f in ["texture.csv", "dbis.json", "summary.json", "timing.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let back = read_summary(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back, run.summary);

    let csv = std::fs::read_to_string(dir.path().join("texture.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("kx,ky,sbar_x,sbar_y,sbar_z,omega,defined"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 225);
    let t = &run.summary.texture;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[2..5], t.s_bar[i]);
        assert_eq!(r[5], t.omega[i]);
    }
}

#[test]
fn weak_noise_summary() {
    let s = run_texture(&RunConfig::weak_noise_default()).unwrap().summary;
    assert_eq!(s.failed_cells, 0);
    assert_eq!(s.classification.phase, TransitionPhase::Stable);
    assert!(s.dbis.as_ref().unwrap().is_closed());
    assert_eq!(s.windings, vec![Some(1)]);
    assert_eq!(s.chern_number.map(i32::abs), Some(1));
}

#[test]
fn reruns_are_identical_across_worker_counts() {
    let cfg = small_sse_config();
    let one = in_pool(1, || run_texture(&cfg).unwrap());
    let four = in_pool(4, || run_texture(&cfg).unwrap());
    let (d1, d4) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_texture_run(&one, d1.path()).unwrap();
    write_texture_run(&four, d4.path()).unwrap();
    for f in ["texture.csv", "dbis.json", "summary.json"] {
        let a = std::fs::read(d1.path().join(f)).unwrap();
        let b = std::fs::read(d4.path().join(f)).unwrap();
        assert!(a == b, "{f} differs between 1 and 4 workers");
    }
    assert!(one.summary.mode_difference_rms.unwrap() < 0.1);
}

#[test]
fn seed_changes_sse_results() {
    let a = run_texture(&small_sse_config()).unwrap().summary;
    let b = run_texture(&RunConfig {
        seed: 1,
        ..small_sse_config()
    })
    .unwrap()
    .summary;
    assert_ne!(a.texture.s_bar, b.texture.s_bar);
}

#[test]
fn canonical_transition_suite() {
    let rows = runner::run_transition_suite(&runner::canonical_transition_configs()).unwrap();
    let phases: Vec<TransitionPhase> = rows.iter().map(|r| r.phase).collect();
    assert_eq!(
        phases,
        [TransitionPhase::Stable, TransitionPhase::TypeI, TransitionPhase::TypeII]
    );
}

#[test]
fn invalid_configs_are_rejected_with_all_errors() {
    let mut cfg = RunConfig::weak_noise_default();
    cfg.grid.n = 1;
    cfg.noise.wx = -1.0;
    match run_texture(&cfg) {
        Err(runner::RunError::Config(errs)) => assert_eq!(errs.len(), 2, "{errs:?}"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
