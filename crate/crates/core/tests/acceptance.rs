//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test --test acceptance`, or a subset with
//! `cargo test --test acceptance -- 1 2 7`. Criterion 4 honours
//! `ACCEPTANCE_C4_REPS` (default 25).

use std::path::PathBuf;
use std::time::Instant;

use faer::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tapergp::covmodel::{matern_cov, preset_model, Preset};
use tapergp::experiments::{median, run_scenario, write_outputs, Config, Scenario};
use tapergp::geometry::{sample_perturbed_grid, GridDesign, LocationSet};
use tapergp::likelihood::ThetaGrid;
use tapergp::predict::KrigingSystem;
use tapergp::simulate::{simulate_field, SimulationPlan};
use tapergp::sparse::dense::{assemble_dense, min_eigenvalue, to_faer, DenseCholesky, DEFAULT_DENSE_CAP};
use tapergp::sparse::{assemble_tapered, factorize, taper_frobenius_discrepancy, DEFAULT_NNZ_CAP};
use tapergp::taper::{TaperFamily, TaperSpec};

type Outcome = Result<String, String>;

const ORIGIN: [f64; 2] = [0.0, 0.0];
const FAMILIES: [TaperFamily; 4] = [
    TaperFamily::Wendland1,
    TaperFamily::Wendland2,
    TaperFamily::Spherical,
    TaperFamily::MultivariateIv,
];

fn grid(m: usize) -> LocationSet {
    sample_perturbed_grid(&GridDesign::new(m, 1.0), 0).unwrap()
}

fn scenario(text: &str) -> Scenario {
    Scenario::from_config(&Config::parse(text).unwrap()).unwrap()
}

fn column_for(table: &tapergp::experiments::Table, col: &str, key: &str, value: &str) -> Vec<f64> {
    let k = table.column_index(key).unwrap();
    let c = table.column_index(col).unwrap();
    table
        .rows
        .iter()
        .filter(|r| r[k] == value)
        .filter_map(|r| r[c].parse().ok())
        .collect()
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn ratio(model: Preset, family: TaperFamily, gamma: f64, locs: &LocationSet) -> f64 {
    let truth = preset_model(model).params_true;
    let full = KrigingSystem::untapered(locs.clone(), truth.clone()).unwrap();
    let tap = KrigingSystem::tapered(locs.clone(), truth.clone(), TaperSpec::new(family, 2, gamma).unwrap()).unwrap();
    tap.exact_mspe(&ORIGIN, &truth).unwrap() / full.exact_mspe(&ORIGIN, &truth).unwrap()
}

fn c1() -> Outcome {
    let start = Instant::now();
    let locs = grid(10);
    let truth = preset_model(Preset::A).params_true;
    let mut msg = Vec::new();
    let mut ok = true;
    for (gamma, target) in [(3.0, 0.1155), (11.0, 0.1101), (f64::INFINITY, 0.1098)] {
        let taper = TaperSpec::new(TaperFamily::Wendland1, 2, gamma).unwrap();
        let sys = KrigingSystem::tapered(locs.clone(), truth.clone(), taper).unwrap();
        let mspe = sys.exact_mspe(&ORIGIN, &truth).unwrap();
        ok &= (mspe - target).abs() <= 0.0015;
        msg.push(format!("gamma={gamma}: {mspe:.5} (target {target})"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    let text = format!("{} in {secs:.1}s", msg.join(", "));
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c2() -> Outcome {
    let locs = grid(10);
    let gammas: Vec<f64> = (10..=40).map(|i| i as f64 * 0.5).collect();
    let ratios: Vec<f64> = gammas
        .iter()
        .map(|&g| ratio(Preset::A, TaperFamily::Wendland1, g, &locs))
        .collect();
    let (worst_i, worst) = ratios
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
    let text = format!(
        "max ratio over gamma in [5, 20] is {worst:.4} at gamma={} (bound 1.08)",
        gammas[worst_i]
    );
    if worst <= 1.08 {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c3() -> Outcome {
    let locs = grid(10);
    let r_i = ratio(Preset::B, TaperFamily::Wendland1, 6.0, &locs);
    let r_iii = ratio(Preset::B, TaperFamily::Spherical, 6.0, &locs);
    let r_iv = ratio(Preset::B, TaperFamily::MultivariateIv, 6.0, &locs);
    let text = format!("ratio(iii)={r_iii:.4}, ratio(i)={r_i:.4}, ratio(iv)={r_iv:.4}");
    // the loss with (iv) is small next to the spherical breakdown
    if r_iii > r_i && r_iv >= r_i && r_iv - r_i < r_iii - r_i {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c4() -> Outcome {
    let reps: usize = std::env::var("ACCEPTANCE_C4_REPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(25);
    let s = scenario(&format!(
        "name = c4\nmode = estimate\nmodel = A\ntaper.family = i\ntaper.gamma = 4,6,8,10,inf\nm = 10\nn_rep = {reps}\nseed = 4"
    ));
    let t = run_scenario(&s).unwrap();
    let med = |col: &str, g: &str| median(&column_for(&t, col, "gamma", g));
    let rho: Vec<f64> = ["4", "6", "8", "10"].iter().map(|g| med("rho.11", g)).collect();
    let sig: Vec<f64> = ["4", "6", "8", "10"].iter().map(|g| med("sigma.11", g)).collect();
    let rho_inf = med("rho.11", "inf");
    let sig_inf = med("sigma.11", "inf");
    let bias_rho: Vec<f64> = rho.iter().map(|r| (r - 5.0).abs()).collect();
    let bias_sig: Vec<f64> = sig.iter().map(|s| (s - 1.0).abs()).collect();
    let shrinks = |b: &[f64]| b.windows(2).all(|w| w[1] <= w[0]);
    let text = format!(
        "{reps} reps; median rho11 at gamma 4,6,8,10,inf = {:.3},{:.3},{:.3},{:.3},{rho_inf:.3}; \
         median sigma11 = {:.3},{:.3},{:.3},{:.3},{sig_inf:.3}",
        rho[0], rho[1], rho[2], rho[3], sig[0], sig[1], sig[2], sig[3]
    );
    if rho[0] > 5.0 && sig[0] < 1.0 && shrinks(&bias_rho) && shrinks(&bias_sig) {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c5() -> Outcome {
    let s = scenario(
        "name = c5\nmode = theorem1\nmodel = A\ntaper.family = i\ntaper.gamma = 4,6,10\nm = 10,16,25\n\
         n_rep = 20\ngap.grid = axial\nseed = 5",
    );
    let t = run_scenario(&s).unwrap();
    let meds: Vec<f64> = ["400", "1024", "2500"]
        .iter()
        .map(|n| median(&column_for(&t, "gap", "n", n)))
        .collect();
    let text = format!(
        "median gap at (400,4),(1024,6),(2500,10) = {:.4}, {:.4}, {:.4}",
        meds[0], meds[1], meds[2]
    );
    if meds.iter().all(|m| m.is_finite()) && strictly_decreasing(&meds) {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c6() -> Outcome {
    let s = scenario(
        "name = c6\nmode = theorem2\nmodel = A\ntaper.family = i\ntaper.gamma = 4,6,10\nm = 10,16,25\n\
         n_rep = 100\nn_mc = 400\nseed = 6",
    );
    let t = run_scenario(&s).unwrap();
    let meds = |col: &str| -> Vec<f64> {
        ["400", "1024", "2500"]
            .iter()
            .map(|n| median(&column_for(&t, col, "n", n)))
            .collect()
    };
    let integ = meds("isqerr_diff");
    let point = meds("pointwise_sqerr_diff");
    let text = format!(
        "median integrated diff = {:.3e}, {:.3e}, {:.3e}; median pointwise diff at origin = {:.3e}, {:.3e}, {:.3e}",
        integ[0], integ[1], integ[2], point[0], point[1], point[2]
    );
    if strictly_decreasing(&integ) && strictly_decreasing(&point) {
        Ok(text)
    } else {
        Err(text)
    }
}

fn c7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for case in 0..20 {
        let preset = if case % 2 == 0 { Preset::A } else { Preset::B };
        let family = FAMILIES[(case / 2) % 4];
        let gamma = [2.0, 4.0, 8.0][case % 3];
        let m = rng.random_range(3..=10);
        let delta = rng.random_range(0.3..=1.0);
        let locs = sample_perturbed_grid(&GridDesign::new(m, delta), rng.random()).unwrap();
        let params = preset_model(preset).params_true;
        let taper = TaperSpec::new(family, 2, gamma).unwrap();
        let n = locs.len();

        let sparse = assemble_tapered(&params, &locs, &taper, DEFAULT_NNZ_CAP).unwrap();
        let dense_sparse = sparse.to_dense();
        let mut oracle = vec![vec![0.0; 2 * n]; 2 * n];
        let mut entry_err = 0.0f64;
        for k in 0..2 {
            for l in 0..2 {
                for a in 0..n {
                    for b in 0..n {
                        let h: Vec<f64> = locs.point(a).iter().zip(locs.point(b)).map(|(x, y)| x - y).collect();
                        let v = matern_cov(&h, k, l, &params).unwrap() * taper.taper_value(&h, k, l).unwrap();
                        let (i, j) = (k * n + a, l * n + b);
                        oracle[i][j] = v;
                        entry_err = entry_err.max((dense_sparse[i][j] - v).abs());
                    }
                }
            }
        }
        let chol = factorize(&sparse).unwrap();
        let dense = DenseCholesky::new(to_faer(&oracle)).unwrap();
        let logdet_err = (chol.logdet() - dense.logdet()).abs();
        let z: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let qs = chol.quad_form(&z).unwrap();
        let qd = dense.quad_form(&z).unwrap();
        let quad_err = (qs - qd).abs() / qd.abs();
        let resid = chol.reconstruction_residual(&sparse).unwrap();
        worst = (
            worst.0.max(entry_err),
            worst.1.max(logdet_err),
            worst.2.max(quad_err),
            worst.3.max(resid),
        );
        if entry_err > 1e-14 || logdet_err > 1e-6 || quad_err > 1e-8 || resid > 1e-10 {
            failures.push(format!("case {case} ({preset}, {family}, gamma={gamma}, n={n})"));
        }
    }
    let text = format!(
        "20 cases; worst entry diff {:.1e}, logdet diff {:.1e}, quad rel diff {:.1e}, reconstruction {:.1e}",
        worst.0, worst.1, worst.2, worst.3
    );
    if failures.is_empty() {
        Ok(text)
    } else {
        Err(format!("{text}; failing: {}", failures.join("; ")))
    }
}

fn c8() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut bound_ok = 0;
    let mut bound_total = 0;
    for preset in [Preset::A, Preset::B] {
        let params = preset_model(preset).params_true;
        for family in FAMILIES {
            for gamma in [2.0, 4.0, 8.0] {
                for m in [3, 5] {
                    let locs = sample_perturbed_grid(&GridDesign::new(m, 0.5), m as u64).unwrap();
                    let taper = TaperSpec::new(family, 2, gamma).unwrap();
                    let sparse = assemble_tapered(&params, &locs, &taper, DEFAULT_NNZ_CAP).unwrap();
                    let ev = to_faer(&sparse.to_dense()).self_adjoint_eigenvalues(Side::Lower).unwrap();
                    let lmax = ev.into_iter().fold(f64::NEG_INFINITY, f64::max);
                    bound_total += 1;
                    if sparse.spectral_bound() >= lmax {
                        bound_ok += 1;
                    }
                }
            }
        }
    }
    ok &= bound_ok == bound_total;
    notes.push(format!("spectral bound >= lambda_max on {bound_ok}/{bound_total} fixtures"));

    let model = preset_model(Preset::A);
    let locs = grid(5);
    let np = (2 * locs.len()) as f64;
    let lattice = ThetaGrid::lattice(&model.theta0(), 0.2, &model.param_box);
    let mut monotone = 0;
    for theta in &lattice.points {
        let params = model.param_box.unpack(&model.params_true, theta, false).unwrap();
        let d: Vec<f64> = [4.0, 6.0, 8.0, 10.0, 20.0]
            .iter()
            .map(|&g| {
                let taper = TaperSpec::new(TaperFamily::Wendland1, 2, g).unwrap();
                taper_frobenius_discrepancy(&params, &locs, &taper).unwrap().powi(2) / np
            })
            .collect();
        if d.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    ok &= monotone == lattice.len();
    notes.push(format!("Frobenius discrepancy nonincreasing for {monotone}/{} lattice points", lattice.len()));

    let locs = grid(10);
    let mut min_ev = f64::INFINITY;
    for preset in [Preset::A, Preset::B] {
        let params = preset_model(preset).params_true;
        let mut tapers: Vec<Option<TaperSpec>> = vec![None];
        tapers.extend([4.0, 6.0, 8.0, 10.0].map(|g| Some(TaperSpec::new(TaperFamily::Wendland1, 2, g).unwrap())));
        for t in &tapers {
            let a = assemble_dense(&params, &locs, t.as_ref(), DEFAULT_DENSE_CAP).unwrap();
            min_ev = min_ev.min(min_eigenvalue(&a).unwrap());
        }
    }
    ok &= min_ev > 0.0;
    notes.push(format!("smallest eigenvalue over both presets at n=400: {min_ev:.3e}"));

    let text = notes.join("; ");
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn normal_quantile_upper(tail: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - tail)
}

fn c9() -> Outcome {
    let reps = 20_000;
    let params = preset_model(Preset::A).params_true;
    let locs = grid(4);
    let plan = SimulationPlan::new(params.clone(), locs.clone(), reps, 9);
    let draws = simulate_field(&plan).unwrap();
    let sigma = assemble_dense(&params, &locs, None, DEFAULT_DENSE_CAP).unwrap();
    let nn = sigma.nrows();
    let r = reps as f64;

    let mut sum = vec![0.0; nn];
    let mut cross = vec![0.0; nn * nn];
    for z in &draws {
        for i in 0..nn {
            sum[i] += z[i];
            let zi = z[i];
            for j in 0..=i {
                cross[i * nn + j] += zi * z[j];
            }
        }
    }

    let n_cov = nn * (nn + 1) / 2;
    let bonf_cov = normal_quantile_upper(0.001 / (2.0 * n_cov as f64));
    let mut out3 = 0;
    let mut worst_z = 0.0f64;
    for i in 0..nn {
        for j in 0..=i {
            let s = cross[i * nn + j] / r;
            let c = sigma[(i, j)];
            // Var(z_i z_j) = c_ij^2 + c_ii c_jj for a centered Gaussian pair
            let se = ((c * c + sigma[(i, i)] * sigma[(j, j)]) / r).sqrt();
            let zscore = (s - c).abs() / se;
            worst_z = worst_z.max(zscore);
            if zscore > 3.0 {
                out3 += 1;
            }
        }
    }
    let frac3 = out3 as f64 / n_cov as f64;

    let bonf_mean = normal_quantile_upper(0.001 / (2.0 * nn as f64));
    let mut mean_out3 = 0;
    let mut worst_mean_z = 0.0f64;
    for i in 0..nn {
        let zscore = (sum[i] / r).abs() / (sigma[(i, i)] / r).sqrt();
        worst_mean_z = worst_mean_z.max(zscore);
        if zscore > 3.0 {
            mean_out3 += 1;
        }
    }
    let mean_frac3 = mean_out3 as f64 / nn as f64;

    let text = format!(
        "{out3}/{n_cov} covariance entries beyond 3 sigma ({:.2}%, max |z| {worst_z:.2}, family-wise bound {bonf_cov:.2}); \
         {mean_out3}/{nn} means beyond 3 sigma (max |z| {worst_mean_z:.2}, bound {bonf_mean:.2})",
        100.0 * frac3
    );
    let ok = frac3 <= 0.005 && worst_z <= bonf_cov && mean_frac3 <= 0.01 && worst_mean_z <= bonf_mean;
    if ok {
        Ok(text)
    } else {
        Err(text)
    }
}

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn c10() -> Outcome {
    let names = [
        "smoke-simulate",
        "smoke-estimate",
        "smoke-mspe",
        "smoke-predict",
        "smoke-thm1",
        "smoke-thm2",
        "fig5-A",
    ];
    let mut mismatched = Vec::new();
    for name in names {
        let s = Scenario::from_file(&scenarios_dir().join(format!("{name}.conf"))).unwrap();
        let mut outputs = Vec::new();
        for threads in [1, 4, 1] {
            let dir = tempfile::tempdir().unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let paths = pool.install(|| {
                let t = run_scenario(&s).unwrap();
                write_outputs(&s, &t, dir.path()).unwrap()
            });
            let bytes: Vec<Vec<u8>> = [&paths.table, &paths.summary, &paths.meta]
                .iter()
                .map(|p| std::fs::read(p).unwrap())
                .collect();
            outputs.push(bytes);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatched.push(name);
        }
    }
    let text = format!(
        "{} scenarios rerun with 1, 4 and 1 threads; {} differing",
        names.len(),
        mismatched.len()
    );
    if mismatched.is_empty() {
        Ok(text)
    } else {
        Err(format!("{text}: {}", mismatched.join(", ")))
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, c1),
        (2, c2),
        (3, c3),
        (4, c4),
        (5, c5),
        (6, c6),
        (7, c7),
        (8, c8),
        (9, c9),
        (10, c10),
    ];
    let mut failed = Vec::new();
    for (id, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(text) => println!("criterion {id:>2}: PASS  {text} [{secs:.1}s]"),
            Err(text) => {
                println!("criterion {id:>2}: FAIL  {text} [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
