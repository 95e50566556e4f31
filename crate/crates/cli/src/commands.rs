use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use mlrecon::calibration::{
    estimate_lag, solve_spatial_calibration, LagEstimate, NWireDataset, PixelNoise, SpatialCalibration,
    TemporalSignalPair, TimeSeries,
};
use mlrecon::compounding::{self, read_volume, write_volume, CompoundingInput, Volume};
use mlrecon::io::{read_json, read_pose_csv, write_json, write_pose_csv};
use mlrecon::metrics::{
    aggregate, error_series, trajectory_metrics_with, volume_metrics, write_error_series_csv, write_markdown_table,
    write_metrics_csv, MetricsRow, MetricsTable, VoxelMask,
};
use mlrecon::refiner::{self, baseline_filter, refine, RefineOptions, RefinerModel};
use mlrecon::se3::geodesic_distance;
use mlrecon::sim::{simulate_scan, NoiseConfig, ScanBundle};
use mlrecon::tracking::{read_failure_script, run_tracking, write_event_log};
use nalgebra::{Point3, Vector3};
use serde::Serialize;

use crate::config::{ExperimentConfig, PhantomSpec};
use crate::{
    ApplyArgs, ApplyMethod, CompoundArgs, EvaluateArgs, NumericError, ReportArgs, SimulateArgs, SpatialArgs,
    TemporalArgs, TrackArgs, TrainArgs, UsageError,
};

/// Creates the output directory and records the effective config in it.
fn prepare(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| UsageError("no output directory: pass --out or set output_dir".into()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg).with_context(|| format!("writing config to {}", out.display()))?;
    Ok(out)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> mlrecon::Result<()>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_poses(path: &Path) -> anyhow::Result<mlrecon::se3::PoseSequence> {
    read_pose_csv(path).with_context(|| format!("reading poses from {}", path.display()))
}

pub fn simulate(mut cfg: ExperimentConfig, a: &SimulateArgs) -> anyhow::Result<()> {
    if let Some(mode) = &a.mode {
        cfg.trajectory.mode = mode.parse().map_err(|e: mlrecon::Error| UsageError(e.to_string()))?;
    }
    if let Some(d) = a.distance {
        cfg.trajectory.total_distance = d;
    }
    if let Some(d) = a.duration {
        cfg.trajectory.duration = Some(d);
    }
    if let Some(p) = &a.phantom {
        cfg.scene.phantom = PhantomSpec::Preset(p.clone());
    }
    if a.no_frames {
        cfg.scene.render = false;
    }
    if a.zero_noise {
        cfg.noise = NoiseConfig::zero(0);
    }
    let phantom = cfg.phantom().map_err(|e| UsageError(e.to_string()))?;
    let out = prepare(&cfg)?;
    let bundle = simulate_scan(
        &cfg.trajectory_config(),
        &cfg.noise_config(),
        &phantom,
        &cfg.frame_geometry(),
        cfg.scene.render,
    )?;
    bundle.write(&out)?;
    log::info!("wrote {} frames to {}", bundle.gt.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrackSummary {
    frames: usize,
    threshold_mm: f64,
    checks: usize,
    events: usize,
    invalid_frames: usize,
}

pub fn track(cfg: ExperimentConfig, a: &TrackArgs) -> anyhow::Result<()> {
    let bundle = ScanBundle::read(&a.bundle, false).with_context(|| format!("reading bundle {}", a.bundle.display()))?;
    let failures = match &a.failures {
        Some(p) => read_failure_script(p).with_context(|| format!("reading failure script {}", p.display()))?,
        None => Vec::new(),
    };
    let out = prepare(&cfg)?;
    let outcome = run_tracking(&bundle.gt, &bundle.raw, &cfg.probe, &cfg.detector_config(), &failures)?;
    write_pose_csv(&out.join("raw.csv"), &outcome.sequence)?;
    write_file(&out.join("events.jsonl"), |w| write_event_log(w, &outcome.events))?;
    let summary = TrackSummary {
        frames: outcome.sequence.len(),
        threshold_mm: outcome.threshold,
        checks: outcome.checks.len(),
        events: outcome.events.len(),
        invalid_frames: outcome.sequence.len() - outcome.sequence.valid_count(),
    };
    write_json(&out.join("track.json"), &summary)?;
    log::info!("{} divergence events, {} frames invalidated", summary.events, summary.invalid_frames);
    Ok(())
}

pub fn refine_train(mut cfg: ExperimentConfig, a: &TrainArgs) -> anyhow::Result<()> {
    if let Some(e) = a.epochs {
        cfg.refiner_training.epochs = e;
    }
    if let Some(h) = a.hidden {
        cfg.refiner_training.hidden_channels = h;
    }
    if let Some(lr) = a.lr {
        cfg.refiner_training.learning_rate = lr;
    }
    let train_cfg = cfg.train_config();
    train_cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let out = prepare(&cfg)?;
    let progress = |r: &refiner::train::EpochRecord| {
        if r.epoch % 10 == 0 || r.epoch + 1 == train_cfg.epochs {
            log::info!("epoch {:>4}  loss {:.6}  lr {:.2e}", r.epoch, r.loss.total, r.lr);
        }
    };
    let (model, log) = match &a.init {
        Some(p) => {
            let init = RefinerModel::load(p).with_context(|| format!("loading model {}", p.display()))?;
            refiner::train_from(init, &train_cfg, progress)?
        }
        None => refiner::train(&train_cfg, progress)?,
    };
    model.save(&out.join("model.bin"))?;
    write_file(&out.join("training_log.csv"), |w| log.write_csv(w))?;
    Ok(())
}

pub fn refine_apply(cfg: ExperimentConfig, a: &ApplyArgs) -> anyhow::Result<()> {
    let seq = read_poses(&a.poses)?;
    let opts = if a.whole {
        RefineOptions::whole_sequence(cfg.refine.options.spatial_scale)
    } else {
        cfg.refine.options
    };
    let out = prepare(&cfg)?;
    let refined = match a.method {
        ApplyMethod::Refiner => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| UsageError("--method refiner needs --model".into()))?;
            let model = RefinerModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
            if model.weights.iter().any(|w| !w.is_finite()) {
                return Err(NumericError(format!("{} contains non-finite weights", path.display())).into());
            }
            refine(&seq, &model, &opts)
        }
        ApplyMethod::Baseline => baseline_filter(&seq, &cfg.refine.baseline, opts.spatial_scale),
    };
    let refined = refined.map_err(|e| match e {
        mlrecon::Error::Degenerate(m) => anyhow::Error::new(NumericError(format!("refined poses are degenerate: {m}"))),
        other => other.into(),
    })?;
    if refined.iter().any(|p| !(p.translation.iter().all(|x| x.is_finite()) && p.rotation.coords.iter().all(|x| x.is_finite()))) {
        return Err(NumericError("refined poses contain non-finite values".into()).into());
    }
    write_pose_csv(&out.join("refined.csv"), &refined)?;
    Ok(())
}

pub fn calibrate_temporal(cfg: ExperimentConfig, a: &TemporalArgs) -> anyhow::Result<()> {
    let sa = TimeSeries::read_csv(&a.a)?;
    let sb = TimeSeries::read_csv(&a.b)?;
    let rate = match a.rate {
        Some(r) => r,
        None => {
            let mut dt: Vec<f64> = sa.t.windows(2).map(|w| w[1] - w[0]).collect();
            dt.sort_by(f64::total_cmp);
            1.0 / dt[dt.len() / 2]
        }
    };
    let max_lag = a.max_lag.unwrap_or(cfg.calibration.max_lag_s);
    let out = prepare(&cfg)?;
    let est: LagEstimate = estimate_lag(
        &TemporalSignalPair {
            a: sa,
            b: sb,
            sample_rate: rate,
        },
        max_lag,
    )?;
    write_json(&out.join("temporal.json"), &est)?;
    log::info!("lag {:.6} s, peak correlation {:.4}", est.lag_s, est.peak_correlation);
    Ok(())
}

#[derive(Serialize)]
struct SpatialCheck {
    translation_error_mm: f64,
    rotation_error_rad: f64,
}

pub fn calibrate_spatial(mut cfg: ExperimentConfig, a: &SpatialArgs) -> anyhow::Result<()> {
    if let Some(n) = a.observations {
        cfg.calibration.nwire.observations = n;
    }
    if let Some(s) = a.noise_px {
        cfg.calibration.nwire.pixel_noise = PixelNoise::Gaussian(s);
    }
    let out = prepare(&cfg)?;
    let (data, truth) = match &a.dataset {
        Some(p) => (read_json::<NWireDataset>(p).with_context(|| format!("reading {}", p.display()))?, None),
        None => {
            let protocol = cfg.nwire_protocol();
            let data = protocol.simulate()?;
            write_json(&out.join("dataset.json"), &data)?;
            (data, Some(protocol.calibration.to_isometry()))
        }
    };
    let cal: SpatialCalibration = solve_spatial_calibration(&data)?;
    cal.write(&out.join("calibration.json"))?;
    if let Some(truth) = truth {
        let est = cal.isometry();
        let check = SpatialCheck {
            translation_error_mm: (est.translation.vector - truth.translation.vector).norm(),
            rotation_error_rad: geodesic_distance(&est.rotation, &truth.rotation),
        };
        write_json(&out.join("check.json"), &check)?;
    }
    log::info!("rms residual {:.4} mm over {} observations", cal.rms_residual, cal.observation_count);
    Ok(())
}

#[derive(Serialize)]
struct CompoundSummary {
    geometry: compounding::GridGeometry,
    lag_s: f64,
    #[serde(flatten)]
    report: compounding::CompoundingReport,
}

pub fn compound(mut cfg: ExperimentConfig, a: &CompoundArgs) -> anyhow::Result<()> {
    if let Some(s) = a.spacing {
        cfg.compounding.spacing = s;
    }
    let bundle = ScanBundle::read(&a.bundle, true).with_context(|| format!("reading bundle {}", a.bundle.display()))?;
    if bundle.frames.is_empty() {
        return Err(mlrecon::Error::InvalidInput(format!("bundle {} has no frames", a.bundle.display())).into());
    }
    let poses = match &a.poses {
        Some(p) => read_poses(p)?,
        None => bundle.gt.clone(),
    };
    let g = &bundle.manifest.frame_geometry;
    let image_to_probe = match &a.calibration {
        Some(p) => SpatialCalibration::read(p)?.isometry(),
        None => g.calibration.to_isometry(),
    };
    let lag_s = match &a.temporal {
        Some(p) => read_json::<LagEstimate>(p)?.lag_s,
        None => g.image_latency_s,
    };
    let out = prepare(&cfg)?;
    let input = CompoundingInput {
        frames: &bundle.frames,
        poses: &poses,
        image_to_probe,
        lag_s,
    };
    let (grid, report) = compounding::compound(&input, &cfg.compounding)?;
    write_volume(&out, &Volume::from_grid(&grid))?;
    write_json(
        &out.join("report.json"),
        &CompoundSummary {
            geometry: grid.geometry,
            lag_s,
            report,
        },
    )?;
    log::info!("{} voxels filled, {} empty", report.filled_voxels, report.empty_voxels);
    Ok(())
}

fn split_named(spec: &str) -> anyhow::Result<(String, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| UsageError(format!("expected METHOD=PATH, got `{spec}`")))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn unique_names(specs: &[String]) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let named: Vec<_> = specs.iter().map(|s| split_named(s)).collect::<anyhow::Result<_>>()?;
    let mut seen = BTreeSet::new();
    for (n, _) in &named {
        if !seen.insert(n.as_str()) {
            return Err(UsageError(format!("method `{n}` given twice")).into());
        }
    }
    Ok(named)
}

pub fn evaluate(cfg: ExperimentConfig, a: &EvaluateArgs) -> anyhow::Result<()> {
    if a.estimates.is_empty() && a.volumes.is_empty() {
        return Err(UsageError("nothing to evaluate: pass --est and/or --volume".into()).into());
    }
    let estimates = unique_names(&a.estimates)?;
    let volumes = unique_names(&a.volumes)?;
    let bundle = a
        .bundle
        .as_ref()
        .map(|b| ScanBundle::read(b, false).with_context(|| format!("reading bundle {}", b.display())))
        .transpose()?;
    let out = prepare(&cfg)?;

    if !estimates.is_empty() {
        let gt = match (&a.gt, &bundle) {
            (Some(p), _) => read_poses(p)?,
            (None, Some(b)) => b.gt.clone(),
            (None, None) => return Err(UsageError("--est needs --gt or --bundle".into()).into()),
        };
        let mut rows = Vec::new();
        for (method, path) in &estimates {
            let est = read_poses(path)?;
            let metrics = trajectory_metrics_with(&est, &gt, cfg.metrics.fdr_normalization)
                .with_context(|| format!("scoring {}", path.display()))?;
            write_file(&out.join(format!("errors_{method}.csv")), |w| {
                write_error_series_csv(w, &error_series(&est, &gt))
            })?;
            rows.push(MetricsRow {
                trial: a.trial.clone(),
                method: method.clone(),
                metrics,
            });
        }
        write_file(&out.join("metrics.csv"), |w| write_metrics_csv(w, &rows))?;
        write_json(&out.join("summary.json"), &aggregate(&rows))?;
    }

    if !volumes.is_empty() {
        let bundle = bundle.ok_or_else(|| UsageError("--volume needs --bundle for the reference phantom".into()))?;
        let phantom = &bundle.manifest.phantom;
        let iso = phantom.isometry();
        let lesions: Vec<(Vector3<f64>, f64)> = phantom
            .lesions
            .iter()
            .map(|l| ((iso * Point3::from(Vector3::from(l.center))).coords, l.radius))
            .collect();
        let mut rows = Vec::new();
        for (method, dir) in &volumes {
            let vol = read_volume(dir).with_context(|| format!("reading volume {}", dir.display()))?;
            let reference = VoxelMask::rasterize(&vol.geometry, |p| lesions.iter().any(|(c, r)| (p - c).norm() <= *r));
            let recon = VoxelMask::new(vol.geometry.dims, vol.mask_above(cfg.metrics.volume_threshold))?;
            let metrics = volume_metrics(&recon, &reference, vol.geometry.spacing)
                .with_context(|| format!("scoring {}", dir.display()))?;
            rows.push(MetricsRow {
                trial: a.trial.clone(),
                method: method.clone(),
                metrics,
            });
        }
        write_file(&out.join("volume_metrics.csv"), |w| write_metrics_csv(w, &rows))?;
        write_json(&out.join("volume_summary.json"), &aggregate(&rows))?;
    }
    Ok(())
}

pub fn report(cfg: ExperimentConfig, a: &ReportArgs) -> anyhow::Result<()> {
    let mut table = MetricsTable::default();
    for p in &a.metrics {
        table
            .extend(MetricsTable::read_csv(p)?)
            .with_context(|| format!("merging {}", p.display()))?;
    }
    let out = prepare(&cfg)?;
    let stats = table.aggregate();
    write_json(&out.join("summary.json"), &stats)?;
    write_file(&out.join("table.md"), |w| write_markdown_table(w, &table.names, &stats))?;
    Ok(())
}
