use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use apc_core::checks::{run_suite, Precision, SuiteConfig};
use apc_core::cloud::ChamferMode;
use apc_core::estimator::{estimate as estimate_pose, EstimatorConfig};
use apc_core::evalproto::{apply_residual, calibrate_residual, evaluate_sample, joints_from_part_poses, report, write_csv, MetricReport, SampleEval};
use apc_core::icp::{hypothesis_rotation, oracle_icp, OracleIcpConfig};
use apc_core::kinematics::{load_model, ArticulatedModel, Joint};
use apc_core::rotgroup::{GroupKind, RotationGroup};
use apc_core::se3::RigidTransform;
use apc_core::synthdata::{read_dataset, write_dataset, Dataset, GenSettings, ShapeTemplate, TemplateOptions, ViewSettings};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::formats::{PredictionSet, SamplePrediction, VerifySummary};
use crate::{EstimateArgs, EvalArgs, GenArgs, IcpArgs, VerifyArgs};

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_dir() {
        return Err(CliError::Io(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Io(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn prepare_out_dir(path: &Path) -> Result<(), CliError> {
    if path.exists() && !path.is_dir() {
        return Err(CliError::Io(format!("output {} exists and is not a directory", path.display())));
    }
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load(dir: &Path) -> Result<Dataset, CliError> {
    require_dir(dir, "dataset")?;
    require_file(&dir.join("manifest.json"), "manifest")?;
    Ok(read_dataset(dir)?)
}

fn dataset_name(ds: &Dataset) -> String {
    let kind = ds.manifest.kind.name();
    if ds.manifest.settings.partial.is_some() {
        format!("{kind}_partial")
    } else {
        kind.to_string()
    }
}

pub fn gen(a: &GenArgs, seed: u64) -> Result<(), CliError> {
    if a.states == 0 || a.rots == 0 {
        return Err(CliError::BadArgs("--states and --rots must be at least 1".into()));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::BadArgs(format!("--noise must be a non-negative number, got {}", a.noise)));
    }
    prepare_out_dir(&a.out)?;
    let template = ShapeTemplate::new(
        a.kind,
        TemplateOptions {
            symmetric: a.symmetric,
            ..TemplateOptions::default()
        },
    );
    let settings = GenSettings {
        n_states: a.states,
        n_rots: a.rots,
        seed,
        partial: a.partial.then_some(ViewSettings {
            resolution: a.resolution,
            cone_deg: a.cone,
        }),
        noise_sigma: a.noise,
    };
    let manifest = write_dataset(&template, &settings, &a.out)?;
    println!("{}", serde_json::json!({ "dir": a.out, "samples": manifest.samples.len(), "kind": manifest.kind }));
    Ok(())
}

/// Ground truth for scoring: a dataset, or a predictions file taken as
/// truth.
enum Truth<'a> {
    Dataset(&'a Dataset),
    Predictions(&'a PredictionSet),
}

struct TruthSample<'a> {
    per_part: Vec<RigidTransform>,
    joints: Vec<Joint>,
    labels: &'a [usize],
}

impl Truth<'_> {
    fn lookup(&self) -> Result<HashMap<String, TruthSample<'_>>, CliError> {
        match self {
            Truth::Dataset(ds) => ds
                .manifest
                .samples
                .iter()
                .zip(&ds.samples)
                .map(|(stem, s)| {
                    Ok((
                        stem.clone(),
                        TruthSample {
                            per_part: s.part_poses.clone(),
                            joints: ds.model.world_joints(&s.gt_pose)?,
                            labels: s.cloud.require_labels()?,
                        },
                    ))
                })
                .collect(),
            Truth::Predictions(p) => Ok(p
                .samples
                .iter()
                .map(|s| {
                    (
                        s.stem.clone(),
                        TruthSample {
                            per_part: s.per_part.clone(),
                            joints: s.joints.clone(),
                            labels: &s.segmentation,
                        },
                    )
                })
                .collect()),
        }
    }
}

#[derive(Serialize)]
struct SampleMetrics<'a> {
    stem: &'a str,
    #[serde(flatten)]
    metrics: &'a MetricReport,
}

fn score(model: &ArticulatedModel, preds: &PredictionSet, truth: &Truth<'_>) -> Result<Vec<MetricReport>, CliError> {
    let gt = truth.lookup()?;
    let mut templates: HashMap<&Path, ArticulatedModel> = HashMap::new();
    for dir in preds.samples.iter().filter_map(|p| p.template.as_deref()) {
        if !templates.contains_key(dir) {
            templates.insert(dir, load_model(dir)?);
        }
    }
    preds
        .samples
        .iter()
        .map(|p| {
            let t = gt
                .get(&p.stem)
                .ok_or_else(|| CliError::Other(format!("sample {} has no ground truth", p.stem)))?;
            let pred_model = p.template.as_deref().map_or(model, |dir| &templates[dir]);
            Ok(evaluate_sample(&SampleEval {
                pred_parts: pred_model.parts(),
                gt_parts: model.parts(),
                pred_poses: &p.per_part,
                gt_poses: &t.per_part,
                pred_joints: &p.joints,
                gt_joints: &t.joints,
                segmentation: &p.segmentation,
                labels: t.labels,
            })?)
        })
        .collect()
}

fn write_metrics(out: &Path, dataset: &str, preds: &PredictionSet, metrics: &[MetricReport]) -> Result<(), CliError> {
    let per_sample: Vec<SampleMetrics<'_>> = preds
        .samples
        .iter()
        .zip(metrics)
        .map(|(p, m)| SampleMetrics { stem: &p.stem, metrics: m })
        .collect();
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&per_sample)?)?;
    let rows = report(dataset, metrics)?;
    write_csv(&rows, fs::File::create(out.join("metrics.csv"))?)?;
    Ok(())
}

pub fn estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path, "config")?;
            serde_json::from_str::<EstimatorConfig>(&fs::read_to_string(path)?).map_err(|e| CliError::BadArgs(format!("{}: {e}", path.display())))?
        }
        None => EstimatorConfig::default(),
    };
    let ds = load(&a.data)?;
    prepare_out_dir(&a.out)?;
    let partial = ds.manifest.settings.partial.is_some();
    if a.config.is_none() && partial {
        cfg.group = GroupKind::Icosahedral;
        cfg.mode = ChamferMode::Uni;
    }
    cfg.group = a.group.unwrap_or(cfg.group);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
    cfg.hypothesis_iterations = a.hypothesis_iterations.unwrap_or(cfg.hypothesis_iterations);
    cfg.screen_iterations = a.screen_iterations.unwrap_or(cfg.screen_iterations);
    cfg.refine_top = a.refine_top.unwrap_or(cfg.refine_top);
    cfg.finalists = a.finalists.unwrap_or(cfg.finalists);
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.joint_samples = a.joint_samples.unwrap_or(cfg.joint_samples);
    cfg.grid_size = a.grid_size.or(cfg.grid_size);
    cfg.refine_assembly |= a.refine_assembly;
    cfg.prealign |= a.prealign;
    cfg.validate()?;

    let samples = ds
        .samples
        .par_iter()
        .zip(&ds.manifest.samples)
        .map(|(s, stem)| {
            let est = estimate_pose(&s.cloud, &ds.model, &cfg)?;
            let joints = ds.model.with_assembly(est.assembly.clone())?.world_joints(&est.pose)?;
            let q = est.pose.base.quaternion();
            Ok(SamplePrediction {
                stem: stem.clone(),
                per_part: est.per_part,
                joints,
                segmentation: est.segmentation,
                base_quaternion: Some([q.w, q.i, q.j, q.k]),
                joint_states: Some(est.pose.joint_states),
                loss: Some(est.report),
                inlier_rmse: None,
                template: None,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let preds = PredictionSet {
        method: "estimator".into(),
        dataset: a.data.clone(),
        samples,
    };
    preds.write(&a.out.join("predictions.json"))?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let metrics = score(&ds.model, &preds, &Truth::Dataset(&ds))?;
    write_metrics(&a.out, &dataset_name(&ds), &preds, &metrics)
}

pub fn baseline_icp(a: &IcpArgs, seed: u64) -> Result<(), CliError> {
    if !(a.inlier_ratio > 0.0) {
        return Err(CliError::BadArgs("--inlier-ratio must be positive".into()));
    }
    let ds = load(&a.data)?;
    prepare_out_dir(&a.out)?;
    let partial = ds.manifest.settings.partial.is_some();
    let group = RotationGroup::new(a.group);
    let cfg = OracleIcpConfig {
        max_iter: a.max_iter,
        inlier_ratio: a.inlier_ratio,
        seed,
        ..OracleIcpConfig::default()
    };
    let templates: Vec<(Option<PathBuf>, ArticulatedModel)> = if a.templates.is_empty() {
        vec![(None, ds.model.clone())]
    } else {
        a.templates
            .iter()
            .map(|dir| {
                require_dir(dir, "template")?;
                let model = load_model(dir)?;
                if model.num_parts() != ds.model.num_parts() {
                    return Err(CliError::BadArgs(format!(
                        "template {} has {} parts, the dataset {}",
                        dir.display(),
                        model.num_parts(),
                        ds.model.num_parts()
                    )));
                }
                Ok((Some(dir.clone()), model))
            })
            .collect::<Result<_, CliError>>()?
    };
    let assembled: Vec<_> = templates.iter().map(|(_, m)| m.assembled()).collect();
    let mut table = String::from("stem,template,part,hypothesis,rotation,rmse,selected\n");
    let mut samples = Vec::with_capacity(ds.samples.len());
    for (s, stem) in ds.samples.iter().zip(&ds.manifest.samples) {
        let mut runs = assembled
            .iter()
            .map(|t| oracle_icp(t, &s.cloud, &group, partial, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_rmse = |r: &apc_core::icp::OracleIcpResult| r.per_part.iter().map(|p| p.inlier_rmse).sum::<f64>() / r.per_part.len() as f64;
        let best = (0..runs.len()).fold(0, |b, t| if mean_rmse(&runs[t]) < mean_rmse(&runs[b]) { t } else { b });
        for (t, r) in runs.iter().enumerate() {
            for (part, rmse) in r.hypothesis_rmse.iter().enumerate() {
                for (h, e) in rmse.iter().enumerate() {
                    let rotation = hypothesis_rotation(h, partial, &cfg).index();
                    let selected = t == best && h == r.selected[part];
                    table.push_str(&format!("{stem},{t},{part},{h},{rotation},{e},{selected}\n"));
                }
            }
        }
        let (path, model) = &templates[best];
        let r = runs.swap_remove(best);
        // Registrations act on assembled template parts; compose the
        // assembly offset to express them on the canonical parts.
        let per_part: Vec<RigidTransform> = r
            .per_part
            .iter()
            .zip(model.assembly())
            .map(|(res, offset)| res.transform.compose(&RigidTransform::from_translation(*offset)))
            .collect();
        samples.push(SamplePrediction {
            stem: stem.clone(),
            joints: joints_from_part_poses(model, &per_part)?,
            per_part,
            segmentation: r.segmentation,
            base_quaternion: None,
            joint_states: None,
            loss: None,
            inlier_rmse: Some(r.per_part.iter().map(|p| p.inlier_rmse).collect()),
            template: path.clone(),
        });
    }
    fs::write(a.out.join("hypotheses.csv"), table)?;
    let preds = PredictionSet {
        method: "oracle_icp".into(),
        dataset: a.data.clone(),
        samples,
    };
    preds.write(&a.out.join("predictions.json"))?;
    let metrics = score(&ds.model, &preds, &Truth::Dataset(&ds))?;
    write_metrics(&a.out, &dataset_name(&ds), &preds, &metrics)
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<(), CliError> {
    require_file(&a.pred, "predictions")?;
    if !a.gt.exists() {
        return Err(CliError::Io(format!("ground truth {} does not exist", a.gt.display())));
    }
    if let Some(c) = &a.calibrate {
        require_file(c, "calibration predictions")?;
    }
    let mut preds = PredictionSet::read(&a.pred)?;
    let data_dir = a.data.clone().unwrap_or_else(|| if a.gt.is_dir() { a.gt.clone() } else { preds.dataset.clone() });
    let ds = load(&data_dir)?;
    if let Some(c) = &a.calibrate {
        let canonical = PredictionSet::read(c)?;
        let poses: Vec<Vec<RigidTransform>> = canonical.samples.iter().map(|s| s.per_part.clone()).collect();
        let diameters: Vec<f64> = ds.model.parts().iter().map(|p| p.diameter()).collect();
        let residual = calibrate_residual(&poses, &diameters, seed)?;
        for s in &mut preds.samples {
            s.per_part = apply_residual(&residual, &s.per_part)?;
            s.joints = match &s.template {
                Some(dir) => joints_from_part_poses(&load_model(dir)?, &s.per_part)?,
                None => joints_from_part_poses(&ds.model, &s.per_part)?,
            };
        }
    }
    let gt_preds;
    let truth = if a.gt.is_dir() {
        Truth::Dataset(&ds)
    } else {
        gt_preds = PredictionSet::read(&a.gt)?;
        Truth::Predictions(&gt_preds)
    };
    let metrics = score(&ds.model, &preds, &truth)?;
    let rows = report(&dataset_name(&ds), &metrics)?;
    match &a.out {
        Some(path) => write_csv(&rows, fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?)?,
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

pub fn verify(a: &VerifyArgs, precision: Precision, seed: u64) -> Result<(), CliError> {
    if !(a.tol > 0.0 && a.tol.is_finite()) {
        return Err(CliError::BadArgs(format!("--tol must be positive, got {}", a.tol)));
    }
    let checks = run_suite(&SuiteConfig {
        group: a.group,
        tol: a.tol,
        precision,
        seed,
    });
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let summary = VerifySummary {
        group: a.group,
        tol: a.tol,
        precision,
        passed: failed.is_empty(),
        checks,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
