//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use speckle_cs::dataset::LabeledSample;
use speckle_cs::experiments::{run_sweep, Method, SweepGrid};
use speckle_cs::forward::{MeasurementMatrix, Provenance};
use speckle_cs::generator::{load_model, random_latent, GeneratorModel};
use speckle_cs::l1::{project_l1_ball, solve_bp, solve_bpdn, BpdnConfig};
use speckle_cs::metrics::pearson;
use speckle_cs::recon::{reconstruct_digit_case, ReconConfig};
use speckle_cs::speckle::{frequency_mask, low_pass, SpeckleConfig, SpeckleGenerator, SpeckleStack};
use speckle_cs::seed;

type Outcome = Result<String, String>;

fn fixture() -> GeneratorModel {
    load_model(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_generator.ggw1"))
        .expect("committed fixture loads")
}

fn gaussian_problem(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> (MeasurementMatrix, Vec<f64>, Vec<f64>) {
    let data: Vec<f64> = (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal) / (m as f64).sqrt()).collect();
    let a = MeasurementMatrix::from_rows(m, n, data, Provenance::Recorded { tag: "gaussian".into() }).unwrap();
    let mut x = vec![0.0; n];
    let mut placed = 0;
    while placed < k {
        let i = rng.random_range(0..n);
        if x[i] == 0.0 {
            x[i] = rng.sample(StandardNormal);
            placed += 1;
        }
    }
    let y = a.apply(&x);
    (a, x, y)
}

fn p1_exact_recovery() -> Outcome {
    let mut hits = 0;
    let mut slowest = Duration::ZERO;
    for s in 0..20 {
        let mut rng = seed::rng(seed::derive(1, &[s]));
        let (a, x, y) = gaussian_problem(&mut rng, 40, 120, 3);
        let t = Instant::now();
        let report = solve_bp(&a, &y, &BpdnConfig::default()).map_err(|e| e.to_string())?;
        slowest = slowest.max(t.elapsed());
        if pearson(&report.solution, &x).is_some_and(|r| r > 0.999) {
            hits += 1;
        }
    }
    let msg = format!("{hits}/20 recovered with r > 0.999, slowest solve {slowest:.2?}");
    if hits >= 18 && slowest < Duration::from_secs(5) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn p2_bpdn_bp_consistency() -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..10 {
        let mut rng = seed::rng(seed::derive(2, &[s]));
        let (a, _, y) = gaussian_problem(&mut rng, 40, 120, 3);
        let bp = solve_bp(&a, &y, &BpdnConfig::default()).map_err(|e| e.to_string())?;
        let bpdn = solve_bpdn(&a, &y, &BpdnConfig::with_delta(0.0)).map_err(|e| e.to_string())?;
        for (p, q) in bp.solution.iter().zip(&bpdn.solution) {
            worst = worst.max((p - q).abs());
        }
    }
    let msg = format!("max coordinate difference {worst:.2e} over 10 instances");
    if worst < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Try every support size k: θ_k = (Σ top-k |v| − τ)/k is the answer when it
/// separates the k-th and (k+1)-th largest magnitudes.
fn exhaustive_threshold_projection(v: &[f64], tau: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= tau {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut theta = None;
    for k in 1..=mags.len() {
        let t = (mags[..k].iter().sum::<f64>() - tau) / k as f64;
        let next = mags.get(k).copied().unwrap_or(0.0);
        if mags[k - 1] > t && t >= next {
            theta = Some(t);
        }
    }
    let theta = theta.expect("a separating threshold exists");
    v.iter().map(|x| x.signum() * (x.abs() - theta).max(0.0)).collect()
}

fn p3_projection_oracle() -> Outcome {
    let mut rng = seed::rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let scale: f64 = rng.random_range(0.01..100.0);
        let v: Vec<f64> = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let tau = rng.random_range(0.0..1.1) * v.iter().map(|x| x.abs()).sum::<f64>();
        let got = project_l1_ball(&v, tau).map_err(|e| e.to_string())?;
        let want = exhaustive_threshold_projection(&v, tau);
        for (p, q) in got.iter().zip(&want) {
            worst = worst.max((p - q).abs());
        }
    }
    let msg = format!("max abs error {worst:.2e} over 1000 vectors");
    if worst < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn p4_gradient_fidelity() -> Outcome {
    let model = fixture();
    let a = SpeckleStack::generate(60, SpeckleConfig::new(28, 0.5, 4).unwrap()).map_err(|e| e.to_string())?;
    let rows: Vec<f64> = a.patterns.iter().flat_map(|p| p.pixels().iter().copied()).collect();
    let a = MeasurementMatrix::from_rows(60, 784, rows, Provenance::Recorded { tag: "speckle".into() }).unwrap();
    let y = a.apply(&model.decode(&random_latent(100, 40)).unwrap().into_pixels());
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut rng = seed::rng(4);
    for draw in 0..5 {
        let z = random_latent(100, 41 + draw);
        let (_, grad) = model.loss_and_gradient(&z, &a, &y).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let i = rng.random_range(0..100);
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            let fd = (model.loss(&zp, &a, &y).unwrap() - model.loss(&zm, &a, &y).unwrap()) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            worst = worst.max(rel);
        }
    }
    let msg = format!("max relative error {worst:.2e} over 5 draws x 20 coordinates");
    if worst < 1e-5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn p5_speckle_statistics() -> Outcome {
    let stack = SpeckleStack::generate(1300, SpeckleConfig::new(28, 0.2, 5).unwrap()).map_err(|e| e.to_string())?;
    let px: Vec<f64> = stack.patterns.iter().flat_map(|p| p.pixels().iter().copied()).collect();
    let n = px.len() as f64;
    let mean = px.iter().sum::<f64>() / n;
    let std = (px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let contrast = std / mean;

    let img = stack.patterns[0].normalized();
    let identity_err = low_pass(&img, 1.0)
        .map_err(|e| e.to_string())?
        .pixels()
        .iter()
        .zip(img.pixels())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let mut leaked = 0usize;
    for nu in [0.1, 0.2, 0.5, 0.7] {
        let gen = SpeckleGenerator::new(SpeckleConfig::new(28, nu, 6).unwrap()).map_err(|e| e.to_string())?;
        let mask = frequency_mask(28, nu);
        for i in 0..10 {
            leaked += gen.spectrum(i).values.iter().zip(&mask).filter(|(v, &k)| !k && v.norm() != 0.0).count();
        }
    }
    let msg = format!(
        "contrast {contrast:.4} over {} pixels, nu=1 identity error {identity_err:.1e}, {leaked} bins outside mask",
        px.len()
    );
    if (contrast - 1.0).abs() <= 0.02 && px.len() >= 1_000_000 && identity_err < 1e-9 && leaked == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn p6_self_consistency() -> Outcome {
    let model = fixture();
    let truth = model.decode(&random_latent(100, 600)).map_err(|e| e.to_string())?;
    let cfg = ReconConfig { steps: 2000, restarts: 10, ..ReconConfig::default() };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let (result, r) = pool
        .install(|| reconstruct_digit_case(&model, &truth, 200, 0.7, 0.0, 6, &cfg))
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let r = r.ok_or("correlation undefined")?;
    let msg = format!("r = {r:.5}, best loss {:.3e}, {elapsed:.1?} on one thread", result.best_loss);
    if r > 0.95 && elapsed < Duration::from_secs(120) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn p7_invariances_and_cardinalities() -> Outcome {
    let mut rng = seed::rng(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..100);
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let (alpha, beta) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let scaled: Vec<f64> = a.iter().map(|v| alpha * v + beta).collect();
        let r = pearson(&a, &b).ok_or("undefined r on random data")?;
        worst = worst.max((r - pearson(&b, &a).unwrap()).abs());
        worst = worst.max((r - pearson(&scaled, &b).unwrap()).abs());
    }
    if worst > 1e-12 {
        return Err(format!("invariance error {worst:.2e}"));
    }
    if pearson(&[1.0; 4], &[0.5; 4]).is_some() {
        return Err("constant inputs gave a defined r".into());
    }

    let model = fixture();
    let samples: Vec<LabeledSample> = (0..10)
        .map(|i| LabeledSample::new(model.decode(&random_latent(100, 700 + i)).unwrap(), i as u8).unwrap())
        .collect();
    let one = SweepGrid { nus: vec![0.2], ms: vec![100], noises: vec![0.0], methods: vec![Method::Diffraction], ..SweepGrid::default() };
    let got_one = run_sweep(&one, None, &samples).map_err(|e| e.to_string())?.len();
    let small = SweepGrid { nus: vec![0.2, 0.5], ms: vec![10, 40, 70], noises: vec![0.0, 0.1], repetitions: 2, ..one.clone() };
    let got_small = run_sweep(&small, None, &samples).map_err(|e| e.to_string())?.len();
    let noiseless = SweepGrid {
        noises: vec![0.0],
        methods: vec![Method::Bp, Method::Gan, Method::Diffraction],
        ..SweepGrid::default()
    };
    let msg = format!(
        "invariance error {worst:.1e}; records: 1 cell {got_one}, 2x3x2x1x2 grid {got_small}, default noiseless {}",
        noiseless.expected_records()
    );
    if got_one == 10 && got_small == small.expected_records() && got_small == 240 && noiseless.expected_records() == 5 * 9 * 10 * 3 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 7] = [
        ("P1", "l1 exact recovery", p1_exact_recovery),
        ("P2", "BPDN/BP consistency", p2_bpdn_bp_consistency),
        ("P3", "projection oracle", p3_projection_oracle),
        ("P4", "gradient fidelity", p4_gradient_fidelity),
        ("P5", "speckle statistics", p5_speckle_statistics),
        ("P6", "self-consistency reconstruction", p6_self_consistency),
        ("P7", "Pearson invariances and sweep cardinalities", p7_invariances_and_cardinalities),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
