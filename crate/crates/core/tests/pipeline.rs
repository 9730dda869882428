use std::process::Command;

use proptest::prelude::*;

use tapergp::covmodel::{preset_model, Preset};
use tapergp::geometry::{sample_perturbed_grid, GridDesign, LocationSet};
use tapergp::likelihood::{fit_ml, FitOptions, Objective};
use tapergp::predict::KrigingSystem;
use tapergp::simulate::{simulate_field, SimulationPlan};
use tapergp::taper::{TaperFamily, TaperSpec};

fn small_grid(seed: u64) -> LocationSet {
    sample_perturbed_grid(&GridDesign { m: 3, delta: 0.5, spacing: 1.0 }, seed).unwrap()
}

fn family(i: usize) -> TaperFamily {
    ["i", "ii", "iii", "iv"][i].parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn nll_invariant_under_site_permutation(seed in 0u64..1000, shift in 1usize..35) {
        let model = preset_model(Preset::A);
        let locs = small_grid(seed);
        let n = locs.len();
        let z = simulate_field(&SimulationPlan::new(model.params_true.clone(), locs.clone(), 1, seed))
            .unwrap()
            .remove(0);
        let perm: Vec<usize> = (0..n).map(|a| (a + shift) % n).collect();
        let pts: Vec<Vec<f64>> = perm.iter().map(|&a| locs.point(a).to_vec()).collect();
        let mut zp = vec![0.0; z.len()];
        for k in 0..2 {
            for (b, &a) in perm.iter().enumerate() {
                zp[k * n + b] = z[k * n + a];
            }
        }
        let taper = TaperSpec::new(family(0), 2, 2.5).unwrap();
        let f = |l: LocationSet, d: Vec<f64>| {
            Objective::one_taper(l, d, model.params_true.clone(), model.param_box.clone(), taper.clone())
                .unwrap()
                .try_neg_loglik(&model.theta0())
                .unwrap()
        };
        let a = f(locs, z);
        let b = f(LocationSet::new(&pts, 0.0).unwrap(), zp);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn tapered_mspe_not_below_optimal(seed in 0u64..1000, fam in 0usize..3, gamma in 1.5f64..6.0,
                                      x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let model = preset_model(Preset::B);
        let locs = small_grid(seed);
        let truth = &model.params_true;
        let full = KrigingSystem::untapered(locs.clone(), truth.clone()).unwrap();
        let tap = KrigingSystem::tapered(locs, truth.clone(), TaperSpec::new(family(fam), 2, gamma).unwrap()).unwrap();
        let site = [x, y];
        let m0 = full.exact_mspe(&site, truth).unwrap();
        let m1 = tap.exact_mspe(&site, truth).unwrap();
        prop_assert!(m0 > 0.0);
        prop_assert!(m1 >= m0 * (1.0 - 1e-9));
    }

    #[test]
    fn fit_stays_in_box(seed in 0u64..1000) {
        let model = preset_model(Preset::A);
        let locs = small_grid(seed);
        let z = simulate_field(&SimulationPlan::new(model.params_true.clone(), locs.clone(), 1, seed))
            .unwrap()
            .remove(0);
        let obj = Objective::untapered(locs, z, model.params_true.clone(), model.param_box.clone()).unwrap();
        let mut opts = FitOptions::default();
        opts.nelder_mead.max_evals = 150;
        let fit = fit_ml(&obj, &model.theta0(), &opts).unwrap();
        prop_assert!(model.param_box.contains(&fit.theta_hat));
        prop_assert!(fit.objective_value <= obj.neg_loglik(&model.theta0()));
    }
}

#[test]
fn infinite_range_matches_untapered() {
    let model = preset_model(Preset::A);
    let locs = small_grid(3);
    let truth = &model.params_true;
    let full = KrigingSystem::untapered(locs.clone(), truth.clone()).unwrap();
    let tap = KrigingSystem::tapered(locs, truth.clone(), TaperSpec::new(family(0), 2, f64::INFINITY).unwrap()).unwrap();
    let a = full.exact_mspe(&[0.3, -0.2], truth).unwrap();
    let b = tap.exact_mspe(&[0.3, -0.2], truth).unwrap();
    assert!((a - b).abs() < 1e-12);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tapergp"))
}

#[test]
fn cli_writes_outputs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("curve.conf");
    std::fs::write(&conf, "mode = mspe_curve\nm = 3\ntaper.gamma = 2,4,inf\nseed = 9\n").unwrap();
    let run = |out: &str| {
        let status = cli()
            .args(["experiment", "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
        let read = |ext: &str| std::fs::read_to_string(dir.path().join(out).join(format!("curve{ext}"))).unwrap();
        (read(".csv"), read(".summary.csv"), read(".meta.json"))
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 4);
    assert!(a.2.contains("config_sha256"));
}

#[test]
fn cli_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "mode = mspe_curve\nno.such.key = 1\n").unwrap();
    let out = cli()
        .args(["experiment", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
}
