use sigma2_pde::io::{read_grid, sidecar_path, write_grid, GridHeader};
use sigma2_pde::legendre::gradient_map_monotonicity;
use sigma2_pde::profile::{onshell_diagonal, Bump, Profile};
use sigma2_pde::scaling::{hessian_scaling_experiment, ScalingFamily};
use sigma2_pde::solver::initial_guess;
use sigma2_pde::suites::{invariance_suite, solver_suite};
use sigma2_pde::{newton_solve, Error, SolverOptions};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn anisotropic_data_are_reached_by_continuation() {
    let b = Profile::quadratic(onshell_diagonal(3, 24.0))
        .with_bump(Bump {
            amplitude: 0.05,
            center: vec![0.2, -0.1, 0.15],
            width: Bump::DEFAULT_WIDTH,
        })
        .sample(13, 1.0)
        .unwrap();
    let direct = sigma2_pde::solver::assess(&initial_guess(&b).unwrap(), 1.0);
    assert!(direct.min_ellipticity <= 0.0, "{direct:?}");
    let s = newton_solve(&b, &SolverOptions::default()).unwrap();
    assert!(s.stages > 1);
    assert!(s.residual_norm <= 1e-10);
    assert!(s
        .history
        .iter()
        .all(|h| h.min_shear_eig > 0.0 && h.min_ellipticity > 0.0));
    for i in (0..b.len()).filter(|&i| b.layer(i) == 0) {
        assert_eq!(s.u.values()[i], b.values()[i]);
    }
}

#[test]
fn concave_data_name_the_offending_node() {
    let b = Profile::quadratic(vec![-1.0, -1.0, -1.0])
        .sample(7, 1.0)
        .unwrap();
    match newton_solve(&b, &SolverOptions::default()) {
        Err(Error::LineSearchFailed { node, .. }) => assert_eq!(node.len(), 3),
        other => panic!("expected a line-search failure, got {other:?}"),
    }
}

#[test]
fn solved_gradient_maps_are_uniformly_monotone() {
    let k = 1.0;
    let b = Profile::quadratic(onshell_diagonal(2, 4.0))
        .with_bump(Bump::centered(2, 0.05))
        .sample(25, 1.0)
        .unwrap();
    let s = newton_solve(
        &b,
        &SolverOptions {
            k,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    assert!(gradient_map_monotonicity(&s.u, k + 1.0) >= 1.0);
}

#[test]
fn suites_do_not_depend_on_thread_count() {
    let opts = SolverOptions::default();
    let fam = ScalingFamily {
        ts: vec![2.0, 6.0],
        radii: vec![1.0],
        seeds: 2,
        ..ScalingFamily::standard(2, 5)
    };
    let run = || {
        (
            solver_suite(2, 17, 1.0, &opts, 9).unwrap(),
            invariance_suite(1.0, 33, 0.9, &opts).unwrap(),
            hessian_scaling_experiment(&fam, 13, &opts, 5.0 / 3.0).unwrap(),
        )
    };
    assert_eq!(in_pool(1, run), in_pool(3, run));
}

#[test]
fn snapshots_are_written_with_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.grid");
    let u = Profile::quadratic(vec![2.0, 0.5]).sample(9, 1.5).unwrap();
    write_grid(&path, &u, 1.0).unwrap();
    let (back, k) = read_grid(&path).unwrap();
    assert_eq!(back, u);
    assert_eq!(k, 1.0);
    let header: GridHeader =
        serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(header, GridHeader::of(&u, 1.0));
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 40 + 8 * 81);
    // nothing but the two files is left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}
