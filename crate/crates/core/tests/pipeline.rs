use std::path::Path;

use weaktm::config::PipelineConfig;
use weaktm::pipeline::{full_run, load_trajectory, spectrum_stage};

fn small(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.apply_overrides(&[
        "--n-steps", "2e6",
        "--grid", "30",
        "--n-starts", "150",
        "--m", "100",
        "--m-density", "200",
        "--n-anchors", "30",
        "--rc-lattice", "12",
        "--n-eq-starts", "100",
        "--oracle-trials", "300",
        "--csv-stride", "100",
    ])
    .unwrap();
    c.output = out.to_path_buf();
    c.validate().unwrap();
    c
}

/// File bytes, with the output directory blanked in JSON reports.
fn without_output_dir(p: &Path) -> Vec<u8> {
    let bytes = std::fs::read(p).unwrap();
    if p.extension().is_some_and(|e| e == "json") {
        let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        v["config"]["output"] = serde_json::Value::Null;
        return serde_json::to_vec(&v).unwrap();
    }
    bytes
}

#[test]
fn full_run_is_bit_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = full_run(&small(a.path())).unwrap();
    full_run(&small(b.path())).unwrap();
    assert_eq!(ra.report.criteria.len(), 9);
    for name in [
        "acceptance.json",
        "spectrum.csv",
        "embedding.csv",
        "residuals.csv",
        "rc_xi1.csv",
        "oracle.json",
        "trajectory.csv",
    ] {
        let x = without_output_dir(&a.path().join(name));
        let y = without_output_dir(&b.path().join(name));
        assert!(x == y, "{name} differs between runs");
    }
    let text = std::fs::read_to_string(a.path().join("residuals.csv")).unwrap();
    assert!(text.starts_with("start_x1,start_x2,anchor_y,residual,rho_hat\n"));
    assert_eq!(text.lines().count(), 1 + 150 + 1);
}

#[test]
fn cached_trajectory_matches_fresh_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (fresh, i1) = load_trajectory(&cfg).unwrap();
    let (cached, i2) = load_trajectory(&cfg).unwrap();
    assert!(!i1.cached && i2.cached);
    assert_eq!(fresh.as_flat(), cached.as_flat());
}

#[test]
fn operator_lag_equals_tau_for_any_stride() {
    let dir = tempfile::tempdir().unwrap();
    for (stride, tau) in [(1, 0.05), (5, 0.05), (10, 0.5), (25, 0.5)] {
        let mut c = small(dir.path());
        c.n_steps = 200_000;
        c.record_stride = stride;
        c.tau = tau;
        c.validate().unwrap();
        assert_eq!(c.lag_samples() * stride, (tau / c.dt).round() as usize);
        let (t, _) = load_trajectory(&c).unwrap();
        let s = spectrum_stage(&c, &t, &c.grid_partition().unwrap()).unwrap();
        assert!((s.op.lag - tau).abs() < 1e-12, "stride {stride}: lag {}", s.op.lag);
    }
}

#[test]
fn leading_eigenvalue_is_stable_under_grid_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(dir.path());
    c.n_steps = 10_000_000;
    let (t, _) = load_trajectory(&c).unwrap();
    let mut l1 = Vec::new();
    for n in [40, 50, 60] {
        c.grid = n;
        let s = spectrum_stage(&c, &t, &c.grid_partition().unwrap()).unwrap();
        l1.push(s.report.lambda[1]);
    }
    for w in l1.windows(2) {
        assert!((w[0] - w[1]).abs() < 0.01, "{l1:?}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let o = weaktm::pipeline::oracle_stage(&cfg).unwrap();
            let sampler = weaktm::dynamics::EndpointSampler::new(
                &weaktm::potential::Banana,
                cfg.simulation().unwrap(),
                64,
                cfg.coupling,
            )
            .unwrap();
            let clouds = sampler.sample_many(&weaktm::pipeline::uniform_starts(&cfg)[..40]).unwrap();
            let flat: Vec<f64> = clouds.iter().flat_map(|c| c.iter().flatten().copied().collect::<Vec<_>>()).collect();
            serde_json::to_string(&(o, flat)).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}
