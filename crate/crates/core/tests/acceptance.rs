//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use mlrecon::calibration::{estimate_lag, solve_spatial_calibration, NWireProtocol, PixelNoise, TemporalSignalPair, TimeSeries};
use mlrecon::compounding::{compound, write_volume, CompoundingConfig, CompoundingInput, GridGeometry, Volume, VolumeGrid};
use mlrecon::io::write_pose_csv;
use mlrecon::metrics::{trajectory_metrics, volume_metrics, TrajectoryMetrics, VoxelMask};
use mlrecon::refiner::loss::composite_loss;
use mlrecon::refiner::train::pair_loss_and_grad;
use mlrecon::refiner::*;
use mlrecon::se3::{denormalize_sequence, geodesic_distance, normalize_sequence, NormalizationParams, Pose, PoseSequence, PoseVector9};
use mlrecon::sim::*;
use mlrecon::tracking::{run_tracking, DetectorConfig, FailureKind, InjectedFailure, ProbeModel};
use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn shared_model() -> &'static (RefinerModel, f64) {
    static MODEL: OnceLock<(RefinerModel, f64)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let t0 = Instant::now();
        let (model, _) = train(&TrainConfig::desk(), |_| {}).expect("desk training");
        (model, t0.elapsed().as_secs_f64())
    })
}

/// Reverse-mode gradients of the full two-output composite loss against
/// central differences on a tiny refiner.
fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let model = RefinerModel::random(RefinerArchitecture::with_hidden(2), 3, 0.3).map_err(err)?;
    let gen = PairGenerator {
        sequence_length: 16,
        source_frames: 48,
        ..PairGenerator::default()
    };
    let pair = gen.pair(7).map_err(err)?;
    let w = LossWeights::default();
    let (_, grad) = pair_loss_and_grad(&model, &pair, &w).map_err(err)?;
    let loss = |m: &RefinerModel| {
        let out = forward(&pair.noisy, m);
        composite_loss(&out.x_star, &pair.clean, &w).unwrap().total + composite_loss(&out.x1, &pair.biased, &w).unwrap().total
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..model.weights.len() {
        let mut plus = model.clone();
        plus.weights[i] += h;
        let mut minus = model.clone();
        minus.weights[i] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 10.0,
        format!("{} parameters, max relative error {worst:.2e}, {secs:.2} s", model.weights.len()),
    )
}

fn random_walk(n: usize, seed: u64) -> PoseSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Vector3::new(10.0, -20.0, 600.0);
    let mut q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.0);
    let poses = (0..n)
        .map(|i| {
            p += Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            q = UnitQuaternion::from_euler_angles(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            ) * q;
            Pose::new(i as f64 / 30.0, q, p)
        })
        .collect();
    PoseSequence::new(poses).unwrap()
}

fn residual_identity() -> Outcome {
    let t0 = Instant::now();
    let model = RefinerModel::zeros(RefinerArchitecture::default()).map_err(err)?;
    let seq = random_walk(1000, 21);
    let xs: Vec<PoseVector9> = seq.iter().map(|p| p.to_vector9()).collect();
    let params = NormalizationParams::new(100.0, xs[0].p).map_err(err)?;
    let out = denormalize_sequence(&refine_normalized(&normalize_sequence(&xs, &params), &model), &params).map_err(err)?;
    let mut worst = 0.0f64;
    for (a, b) in xs.iter().zip(&out) {
        for (u, v) in a.to_array().iter().zip(b.to_array()) {
            worst = worst.max((u - v).abs());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 1.0, format!("max channel deviation {worst:.1e}, {secs:.2} s"))
}

fn free_scan(s: u64) -> (PoseSequence, PoseSequence) {
    let traj = TrajectoryConfig::new(TrajectoryMode::Free, 500.0, 40.0, 100 + s);
    let gt = generate_trajectory(&traj).unwrap();
    let raw = inject_noise(&gt, &NoiseConfig::nominal(200 + s)).unwrap();
    (gt, raw)
}

fn refinement_quality() -> Outcome {
    let (model, train_secs) = shared_model();
    let mut rows: Vec<(TrajectoryMetrics, TrajectoryMetrics, TrajectoryMetrics)> = Vec::new();
    for s in 0..5 {
        let (gt, raw) = free_scan(s);
        let refined = refine(&raw, model, &RefineOptions::default()).map_err(err)?;
        let median = baseline_filter(&raw, &BaselineFilter::Median { window: 5 }, 100.0).map_err(err)?;
        rows.push((
            trajectory_metrics(&raw, &gt).map_err(err)?,
            trajectory_metrics(&refined, &gt).map_err(err)?,
            trajectory_metrics(&median, &gt).map_err(err)?,
        ));
    }
    let mean = |f: &dyn Fn(&(TrajectoryMetrics, TrajectoryMetrics, TrajectoryMetrics)) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let raw_ape = mean(&|r| r.0.ape_mm);
    let raw_md = mean(&|r| r.0.md_mm);
    let ref_md = mean(&|r| r.1.md_mm);
    let reduction = 1.0 - ref_md / raw_md;
    let beats_median = rows.iter().filter(|r| r.1.md_mm < r.2.md_mm).count();
    let ape_ok = rows.iter().all(|r| r.1.ape_mm <= 1.05 * r.0.ape_mm);
    let raw_tuned = rows.iter().all(|r| (r.0.ape_mm - 1.46).abs() <= 0.3);
    check(
        raw_tuned && reduction >= 0.70 && beats_median >= 4 && ape_ok && *train_secs <= 1800.0,
        format!(
            "raw APE {raw_ape:.2} mm, MD {raw_md:.2} -> {ref_md:.2} mm ({:.0}% reduction), beats median-5 on {beats_median}/5, \
             refined APE {:.2} mm, trained in {train_secs:.0} s",
            100.0 * reduction,
            mean(&|r| r.1.ape_mm)
        ),
    )
}

fn frequency_separation() -> Outcome {
    let (model, _) = shared_model();
    let t0 = Instant::now();
    let x = frequency_separation_signal().map_err(err)?;
    let (n_hf, n_lf) = residuals(&x, model);
    let cutoff = JITTER_CUTOFF_HZ / 30.0;
    let hf_above = high_frequency_energy_fraction(&n_hf, cutoff);
    let lf_above = high_frequency_energy_fraction(&n_lf, cutoff);
    let secs = t0.elapsed().as_secs_f64();
    check(
        hf_above > 0.5 && lf_above < 0.5 && secs < 30.0,
        format!(
            "stage-1 residual {:.0}% above {JITTER_CUTOFF_HZ} Hz, stage-2 residual {:.0}% below, {secs:.2} s",
            100.0 * hf_above,
            100.0 * (1.0 - lf_above)
        ),
    )
}

fn tracking_scan(seed: u64, noise_seed: u64) -> (PoseSequence, PoseSequence) {
    let traj = TrajectoryConfig::new(TrajectoryMode::Free, 300.0, 1000.0 / 30.0, seed);
    let gt = generate_trajectory(&traj).unwrap();
    let raw = inject_noise(&gt, &NoiseConfig::nominal(noise_seed)).unwrap();
    (gt, raw)
}

fn divergence_detector() -> Outcome {
    let t0 = Instant::now();
    let probe = ProbeModel::default();
    let mut false_positives = 0;
    for seed in 0..100 {
        let (gt, raw) = tracking_scan(seed, seed + 1000);
        let cfg = DetectorConfig {
            seed,
            ..DetectorConfig::default()
        };
        let out = run_tracking(&gt, &raw, &probe, &cfg, &[]).map_err(err)?;
        false_positives += out.events.len() + (out.sequence.len() - out.sequence.valid_count());
    }
    let mut failures = Vec::new();
    for k in 0..10u64 {
        let (gt, raw) = tracking_scan(300 + k, 400 + k);
        let cfg = DetectorConfig {
            seed: 500 + k,
            ..DetectorConfig::default()
        };
        let frame_index = 150 + 67 * k as usize;
        let script = [InjectedFailure {
            frame_index,
            kind: FailureKind::Jump,
            magnitude_mm: 120.0 + 15.0 * k as f64,
            magnitude_deg: 2.0 * k as f64,
            duration_frames: 0,
        }];
        let out = run_tracking(&gt, &raw, &probe, &cfg, &script).map_err(err)?;
        let p = cfg.check_period;
        let detect = frame_index.div_ceil(p) * p;
        let expected: Vec<usize> = (detect - p + 1..=detect).collect();
        let invalid: Vec<usize> = (0..out.sequence.len()).filter(|&i| !out.sequence[i].valid).collect();
        let ok = out.events.len() == 1
            && out.events[0].frame_detect == detect
            && detect - frame_index < p
            && invalid == expected;
        if !ok {
            failures.push(k);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        false_positives == 0 && failures.is_empty() && secs < 60.0,
        format!(
            "{false_positives} false positives over 100 nominal runs, {}/10 injected failures detected with the exact gap, {secs:.1} s",
            10 - failures.len()
        ),
    )
}

fn temporal_calibration() -> Outcome {
    let rate = 30.0;
    let f = |t: f64| 20.0 * (2.0 * std::f64::consts::PI * 0.13 * t).sin() + 9.0 * (2.0 * std::f64::consts::PI * 0.37 * t + 1.0).sin()
        + 4.0 * (2.0 * std::f64::consts::PI * 0.71 * t + 2.0).sin()
        + 0.8 * t;
    let t: Vec<f64> = (0..900).map(|i| i as f64 / rate).collect();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for lag in [-5.0, -3.4, 0.0, 2.0, 7.25] {
        let a = TimeSeries::new(t.clone(), t.iter().map(|&x| f(x)).collect()).map_err(err)?;
        let b = TimeSeries::new(t.clone(), t.iter().map(|&x| f(x - lag / rate)).collect()).map_err(err)?;
        let est = estimate_lag(&TemporalSignalPair { a, b, sample_rate: rate }, 0.5).map_err(err)?;
        let e = (est.lag_s * rate - lag).abs();
        worst = worst.max(e);
        details.push(format!("{lag}:{:+.3}", est.lag_s * rate));
    }
    check(worst <= 0.1, format!("recovered {} samples, worst error {worst:.4}", details.join(" ")))
}

fn calibration_error(proto: &NWireProtocol) -> Result<(f64, f64), String> {
    let cal = solve_spatial_calibration(&proto.simulate().map_err(err)?).map_err(err)?;
    let (est, truth) = (cal.isometry(), proto.calibration.to_isometry());
    Ok((
        (est.translation.vector - truth.translation.vector).norm(),
        geodesic_distance(&est.rotation, &truth.rotation),
    ))
}

fn spatial_calibration() -> Outcome {
    let (mut t_clean, mut r_clean) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let (t, r) = calibration_error(&NWireProtocol {
            seed,
            ..NWireProtocol::default()
        })?;
        t_clean = t_clean.max(t);
        r_clean = r_clean.max(r);
    }
    let mut t_noisy = 0.0f64;
    for seed in 0..20 {
        let proto = NWireProtocol {
            seed: 1000 + seed,
            observations: 30,
            pixel_noise: PixelNoise::Gaussian(1.0),
            ..NWireProtocol::default()
        };
        t_noisy = t_noisy.max(calibration_error(&proto)?.0);
    }
    check(
        t_clean < 1e-6 && r_clean < 1e-8 && t_noisy < 1.0,
        format!("noiseless {t_clean:.1e} mm / {r_clean:.1e} rad, 1 px noise worst {t_noisy:.3} mm over 20 seeds"),
    )
}

fn sphere_bundle(noise: &NoiseConfig) -> ScanBundle {
    let traj = TrajectoryConfig::new(TrajectoryMode::Linear, 100.0, 5.0, 4);
    let phantom = place_phantom_below(
        Phantom::sphere([120.0, 40.0, 40.0], [60.0, 20.0, 18.0], 10.0, mlrecon::se3::RigidTransform::identity()),
        traj.center,
    );
    simulate_scan(&traj, noise, &phantom, &FrameGeometry::default(), true).unwrap()
}

fn sphere_metrics(bundle: &ScanBundle, poses: &PoseSequence) -> Result<(f64, f64, f64), String> {
    let g = &bundle.manifest.frame_geometry;
    let input = CompoundingInput {
        frames: &bundle.frames,
        poses,
        image_to_probe: g.calibration.to_isometry(),
        lag_s: g.image_latency_s,
    };
    let (grid, _): (VolumeGrid, _) = compound(&input, &CompoundingConfig::default()).map_err(err)?;
    let ph = &bundle.manifest.phantom;
    let l = &ph.lesions[0];
    let c = (ph.isometry() * Point3::from(Vector3::from(l.center))).coords;
    let reference = VoxelMask::rasterize(&grid.geometry, |p| (p - c).norm() <= l.radius);
    let recon = VoxelMask::new(grid.geometry.dims, Volume::from_grid(&grid).mask_above(130.0)).map_err(err)?;
    let m = volume_metrics(&recon, &reference, grid.geometry.spacing).map_err(err)?;
    Ok((m.dice, m.asd_mm, grid.geometry.spacing))
}

fn compounding_oracle() -> Outcome {
    let clean = sphere_bundle(&NoiseConfig::zero(1));
    let (dice_gt, asd_gt, spacing) = sphere_metrics(&clean, &clean.gt)?;

    let noisy = sphere_bundle(&NoiseConfig::nominal(11));
    let tracked = run_tracking(&noisy.gt, &noisy.raw, &ProbeModel::default(), &DetectorConfig::default(), &[]).map_err(err)?;
    let (model, _) = shared_model();
    let refined = refine(&tracked.sequence, model, &RefineOptions::default()).map_err(err)?;
    let (dice_e2e, asd_e2e, _) = sphere_metrics(&noisy, &refined)?;
    check(
        dice_gt >= 0.95 && asd_gt <= spacing && (dice_gt - dice_e2e).abs() <= 0.05,
        format!("ground-truth poses Dice {dice_gt:.3} ASD {asd_gt:.3} mm; tracked+refined Dice {dice_e2e:.3} ASD {asd_e2e:.3} mm"),
    )
}

/// Simulate, track, train, refine and compound into `dir`.
fn pipeline(dir: &Path) -> mlrecon::Result<()> {
    let traj = TrajectoryConfig::new(TrajectoryMode::BackAndForth, 60.0, 4.0, 31);
    let phantom = place_phantom_below(Phantom::preset_b(mlrecon::se3::RigidTransform::identity()), traj.center);
    let bundle = simulate_scan(&traj, &NoiseConfig::nominal(32), &phantom, &FrameGeometry::default(), true)?;
    bundle.write(&dir.join("bundle"))?;
    let tracked = run_tracking(&bundle.gt, &bundle.raw, &ProbeModel::default(), &DetectorConfig::default(), &[])?;
    write_pose_csv(&dir.join("tracked.csv"), &tracked.sequence)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        batches_per_epoch: 2,
        hidden_channels: 4,
        data: PairGenerator {
            sequence_length: 64,
            source_frames: 128,
            ..PairGenerator::default()
        },
        seed: 33,
        ..TrainConfig::default()
    };
    let (model, log) = train(&cfg, |_| {})?;
    model.save(&dir.join("model.bin"))?;
    let mut csv = Vec::new();
    log.write_csv(&mut csv)?;
    std::fs::write(dir.join("training_log.csv"), csv)?;
    let refined = refine(&tracked.sequence, &model, &RefineOptions::default())?;
    write_pose_csv(&dir.join("refined.csv"), &refined)?;
    let input = CompoundingInput {
        frames: &bundle.frames,
        poses: &refined,
        image_to_probe: bundle.manifest.frame_geometry.calibration.to_isometry(),
        lag_s: 0.0,
    };
    let (grid, _) = compound(&input, &CompoundingConfig::default())?;
    let vol = dir.join("volume");
    std::fs::create_dir_all(&vol)?;
    write_volume(&vol, &Volume::from_grid(&grid))
}

fn tree(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            tree(&p, base, out);
        } else {
            out.push((p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut snapshots = Vec::new();
    for (name, threads) in [("a", 1), ("b", 2)] {
        let dir = tmp.path().join(name);
        std::fs::create_dir_all(&dir).map_err(err)?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(err)?;
        pool.install(|| pipeline(&dir)).map_err(err)?;
        let mut files = Vec::new();
        tree(&dir, &dir, &mut files);
        files.sort();
        snapshots.push(files);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<&str> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    check(
        a.len() == b.len() && differing.is_empty(),
        format!("{} files, {bytes} bytes, identical across runs on 1 and 2 threads; differing: {differing:?}", a.len()),
    )
}

fn line(n: usize, length: f64) -> PoseSequence {
    PoseSequence::new(
        (0..n)
            .map(|i| {
                let s = length * i as f64 / (n - 1) as f64;
                Pose::new(i as f64 / 30.0, UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3), Vector3::new(s, 5.0, 400.0))
            })
            .collect(),
    )
    .unwrap()
}

fn map(seq: &PoseSequence, f: impl Fn(&Pose) -> Pose) -> PoseSequence {
    PoseSequence::new(seq.iter().map(f).collect()).unwrap()
}

fn sphere_mask(dims: usize, radius: f64) -> VoxelMask {
    let g = GridGeometry::new([dims; 3], 1.0, [0.0; 3]).unwrap();
    let c = (dims as f64 - 1.0) / 2.0;
    VoxelMask::rasterize(&g, |p| (p - Vector3::repeat(c)).norm() <= radius)
}

fn metric_sanity() -> Outcome {
    let mut failed = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let gt = line(251, 250.0);
    let m = trajectory_metrics(&gt, &gt).map_err(err)?;
    expect(
        "zero trajectory error",
        m.values()[..6].iter().all(|&v| v == 0.0) && (m.td_mm - 250.0).abs() < 1e-9,
    );
    let est = map(&gt, |p| Pose::new(p.t, p.rotation, p.translation + Vector3::new(0.0, 0.6, 0.8)));
    let m = trajectory_metrics(&est, &gt).map_err(err)?;
    let adr = 100.0 * (1..=250).map(|i| 1.0 / i as f64).sum::<f64>() / 250.0;
    expect(
        "constant offset",
        (m.ape_mm - 1.0).abs() < 1e-12
            && (m.md_mm - 1.0).abs() < 1e-12
            && (m.fdr_percent - 0.4).abs() < 1e-12
            && (m.adr_percent - adr).abs() < 1e-9
            && m.are_deg == 0.0,
    );
    let tilt = UnitQuaternion::from_euler_angles(0.0, 0.0, 2f64.to_radians());
    let m = trajectory_metrics(&map(&gt, |p| Pose::new(p.t, p.rotation * tilt, p.translation)), &gt).map_err(err)?;
    expect("constant rotation", (m.are_deg - 2.0).abs() < 1e-9 && (m.mre_deg - 2.0).abs() < 1e-9 && m.ape_mm == 0.0);
    let g = Isometry3::from_parts(Translation3::new(5.0, -7.0, 30.0), UnitQuaternion::from_euler_angles(0.4, -0.3, 1.2));
    let moved = |s: &PoseSequence| map(s, |p| Pose::from_isometry(p.t, &(g * p.isometry())));
    let m2 = trajectory_metrics(&moved(&est), &moved(&gt)).map_err(err)?;
    let m1 = trajectory_metrics(&est, &gt).map_err(err)?;
    expect(
        "rigid invariance",
        m1.values().iter().zip(m2.values()).all(|(a, b)| (a - b).abs() < 1e-9 * a.abs().max(1.0)),
    );

    let a = sphere_mask(31, 10.0);
    let v = volume_metrics(&a, &a, 0.5).map_err(err)?;
    expect("identical masks", v.dice == 1.0 && v.hd_mm == 0.0 && v.asd_mm == 0.0 && v.size_error_mm == [0.0; 3]);
    let gg = GridGeometry::new([20, 10, 10], 1.0, [0.0; 3]).unwrap();
    let left = VoxelMask::rasterize(&gg, |p| p.x < 5.0);
    let right = VoxelMask::rasterize(&gg, |p| p.x > 12.0);
    expect("disjoint masks", volume_metrics(&left, &right, 1.0).map_err(err)?.dice == 0.0);
    let b = sphere_mask(31, 11.0);
    let v = volume_metrics(&a, &b, 0.5).map_err(err)?;
    let analytic = 2.0 * 1000.0 / (1000.0 + 1331.0);
    expect(
        "concentric spheres",
        (v.dice - analytic).abs() < 0.01
            && (v.hd_mm - 0.5).abs() <= 0.25
            && v.size_error_mm.iter().all(|e| (e - 1.0).abs() < 1e-9),
    );
    check(failed.is_empty(), if failed.is_empty() { "all example tables match".into() } else { format!("failed: {failed:?}") })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("residual identity", residual_identity),
        ("refinement quality", refinement_quality),
        ("frequency separation", frequency_separation),
        ("divergence detector", divergence_detector),
        ("temporal calibration", temporal_calibration),
        ("spatial calibration", spatial_calibration),
        ("compounding oracle", compounding_oracle),
        ("determinism", determinism),
        ("metric sanity", metric_sanity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
