//! Subcommand bodies.
//!
//! Every command prints one JSON report to stdout and returns a process
//! exit code: 0 when the checked property holds, 1 when a check fails with
//! the failure pinpointed in the report, 2 for unusable input. Reports
//! carry their slack terms next to every measured number, and none of them
//! embed wall-clock state outside the manifest's own timestamp field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stratcone::cone::{validate_complex_cone, ConeSet, SimpleCone};
use stratcone::flow::{
    export_spine_obj, holder_exponent, run_flow, verify_theorem, write_manifest, FlowError,
    MonitorEntry,
};
use stratcone::geom::{self, Vec4};
use stratcone::metric::{
    d_xr, measure_constants, read_cloud, write_cloud, BallSpec, GeomSet, GeometricConstants,
    PointCloud,
};
use stratcone::strata::{
    read_labels, report as stratify_report, stratify, validate_structure, write_labels,
    default_tau, StratumLabels, ValidateConfig,
};

use crate::config::RunConfig;
use crate::data::{
    audit_hypothesis, load_cone, perturb, sample_cone, write_cone_file, ConeFile, GroundTruth,
    HarnessError, PerturbationField,
};

/// Machine-readable failure for the stderr channel.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub error: String,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { error: "input".into(), message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError { error: "internal".into(), message: message.into() }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::internal(e.to_string())
    }
}

fn emit<T: Serialize>(report: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ConeValidation {
    pub source: String,
    pub pieces: usize,
    pub complex_ok: bool,
    pub complex_error: Option<String>,
    pub non_flat_ok: bool,
    pub non_flat_error: Option<String>,
    pub type_label: Option<usize>,
    pub pass: bool,
}

pub fn validate_cone_cmd(arg: &str, ambient_dim: usize) -> Result<i32, CliError> {
    // Stage the checks so a failing file still yields a pinpointing report.
    let path = Path::new(arg);
    let (pieces, product_dim) = if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(e.to_string()))?;
        let file: ConeFile =
            serde_json::from_str(&text).map_err(|e| CliError::input(e.to_string()))?;
        (file.pieces()?, file.product_dim)
    } else {
        let cs = load_cone(arg, ambient_dim)?;
        let pieces: Vec<SimpleCone> = cs
            .base
            .pieces
            .iter()
            .map(|pc| {
                SimpleCone::new(
                    cs.ambient_dim,
                    pc.iter().map(|&i| cs.base.dirs[i]).collect(),
                )
            })
            .collect::<Result<_, _>>()
            .map_err(|e: stratcone::cone::ConeError| CliError::input(e.to_string()))?;
        (pieces, cs.product_dim)
    };
    let mut report = ConeValidation {
        source: arg.to_string(),
        pieces: pieces.len(),
        complex_ok: false,
        complex_error: None,
        non_flat_ok: false,
        non_flat_error: None,
        type_label: None,
        pass: false,
    };
    match validate_complex_cone(&pieces, 1e-9) {
        Ok(base) => {
            report.complex_ok = true;
            match base.check_non_flat(1e-3, 128) {
                Ok(()) => report.non_flat_ok = true,
                Err(v) => {
                    report.non_flat_error = Some(format!(
                        "faces {:?} and {:?} over shared face {:?} open to {:.6} rad of straight",
                        v.pair.0, v.pair.1, v.shared_face, v.sup_angle
                    ));
                }
            }
            report.type_label = Some(product_dim);
        }
        Err(e) => report.complex_error = Some(e.to_string()),
    }
    report.pass = report.complex_ok && report.non_flat_ok;
    emit(&report)?;
    Ok(if report.pass { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
pub struct DistanceReport {
    pub a: String,
    pub b: String,
    pub center: Vec4,
    pub radius: f64,
    pub value: f64,
    /// Sampling slack of any cloud side, already the caller's to add.
    pub slack: f64,
}

enum Loaded {
    Cloud(PointCloud),
    Cone(ConeSet),
}

fn load_geom(arg: &str, h: f64, ambient_dim: usize) -> Result<Loaded, CliError> {
    let path = Path::new(arg);
    let looks_like_cloud = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("ply"))
        .unwrap_or(false);
    if path.exists() && looks_like_cloud {
        let cloud =
            read_cloud(path, h).map_err(|e| CliError::input(e.to_string()))?;
        return Ok(Loaded::Cloud(cloud));
    }
    Ok(Loaded::Cone(load_cone(arg, ambient_dim)?))
}

pub fn distance_cmd(
    a: &str,
    b: &str,
    center: &Vec4,
    radius: f64,
    h: f64,
    ambient_dim: usize,
) -> Result<i32, CliError> {
    let la = load_geom(a, h, ambient_dim)?;
    let lb = load_geom(b, h, ambient_dim)?;
    let ga = match &la {
        Loaded::Cloud(c) => GeomSet::Cloud(c),
        Loaded::Cone(z) => GeomSet::Cone(z),
    };
    let gb = match &lb {
        Loaded::Cloud(c) => GeomSet::Cloud(c),
        Loaded::Cone(z) => GeomSet::Cone(z),
    };
    let value = d_xr(&ga, &gb, &BallSpec::new(*center, radius))
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut slack = 0.0;
    if matches!(la, Loaded::Cloud(_)) {
        slack += 2.0 * h / radius;
    }
    if matches!(lb, Loaded::Cloud(_)) {
        slack += 2.0 * h / radius;
    }
    emit(&DistanceReport {
        a: a.to_string(),
        b: b.to_string(),
        center: *center,
        radius,
        value,
        slack,
    })?;
    Ok(0)
}

fn constants_for(
    cfg: &RunConfig,
    catalog: &[ConeSet],
    fallback_dir: &Path,
) -> Result<GeometricConstants, CliError> {
    let path = cfg
        .constants_path
        .clone()
        .unwrap_or_else(|| fallback_dir.join("constants.json"));
    if path.exists() {
        return GeometricConstants::load(&path).map_err(|e| CliError::input(e.to_string()));
    }
    let constants = measure_constants(catalog, &cfg.catalog, 40, cfg.seed ^ 0xC0)
        .map_err(|e| CliError::internal(e.to_string()))?;
    constants.save(&path).map_err(|e| CliError::input(e.to_string()))?;
    Ok(constants)
}

#[derive(Debug, Serialize)]
pub struct StratifyOutcome {
    pub labels_path: PathBuf,
    pub stratify: stratcone::strata::StratifyReport,
    pub structure: stratcone::strata::StructureReport,
    pub tau: Vec<f64>,
    pub slack: f64,
    pub pass: bool,
}

pub fn stratify_cmd(
    cloud_path: &Path,
    config_path: &Path,
    out: &Path,
    report_path: Option<&Path>,
    check_labels: Option<&Path>,
) -> Result<i32, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let catalog = cfg.catalog_cones()?;
    let ladder = cfg.scale_ladder()?;
    let cloud = read_cloud(cloud_path, cfg.sampling_radius)
        .map_err(|e| CliError::input(e.to_string()))?;
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let constants = constants_for(&cfg, &catalog, &out_dir)?;
    let max_type = catalog.iter().map(|c| c.type_label).max().unwrap_or(0);
    let tau = cfg.tau.clone().unwrap_or_else(|| {
        default_tau(max_type, cloud.sampling_radius, &ladder, constants.delta0)
    });
    let labels: StratumLabels = match check_labels {
        // Validation-only mode: take the labels as given and let the
        // structural checks speak. This is the lane for negative controls.
        Some(path) => {
            let types: Vec<usize> = {
                let mut t: Vec<usize> = catalog.iter().map(|c| c.type_label).collect();
                t.sort_unstable();
                t.dedup();
                t
            };
            read_labels(path, ladder.rungs.clone(), types)
                .map_err(|e| CliError::input(e.to_string()))?
        }
        None => {
            let sc = cfg.stratify_config(tau.clone());
            stratify(&cloud, &catalog, &ladder, &sc, cfg.seed)
                .map_err(|e| CliError::internal(e.to_string()))?
        }
    };
    write_labels(out, &labels).map_err(|e| CliError::input(e.to_string()))?;
    let vc = ValidateConfig {
        tau_flat: (0.5 * constants.delta0).max(3.0 * ladder.slack(cloud.sampling_radius)),
        ..ValidateConfig::default()
    };
    let structure = validate_structure(&cloud, &labels, &catalog, &vc, cfg.seed ^ 0x51)
        .map_err(|e| CliError::internal(e.to_string()))?;
    let outcome = StratifyOutcome {
        labels_path: out.to_path_buf(),
        stratify: stratify_report(&labels, &tau, cfg.seed),
        structure,
        tau,
        slack: ladder.slack(cloud.sampling_radius),
        pass: false,
    };
    let outcome = StratifyOutcome { pass: outcome.structure.pass, ..outcome };
    emit(&outcome)?;
    if let Some(rp) = report_path {
        write_json(rp, &outcome)?;
    }
    Ok(if outcome.pass { 0 } else { 1 })
}

/// What `parameterize` leaves in its run directory, and `verify` rechecks.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunDirIndex {
    pub data_path: PathBuf,
    pub ambient_dim: usize,
    pub sampling_radius: f64,
    pub tol_disp: f64,
    pub tol_cov: f64,
    pub dims: Vec<usize>,
    pub k_max: usize,
    pub seed: u64,
}

fn dim_source_name(m: usize) -> String {
    format!("dim{m}_source.csv")
}

fn dim_image_name(m: usize) -> String {
    format!("dim{m}_image.csv")
}

fn write_points_obj(path: &Path, pts: &[Vec4]) -> Result<(), CliError> {
    let mut out = format!("# {} vertices\n", pts.len());
    for p in pts {
        out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    std::fs::write(path, out).map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ParameterizeOutcome {
    pub run_dir: PathBuf,
    pub dims: Vec<usize>,
    pub monitors_ok: bool,
    pub monitor_breaches: usize,
    pub verify: stratcone::flow::VerifyReport,
    pub holder: Option<(f64, f64)>,
    pub pass: bool,
}

pub fn parameterize_cmd(
    cone_arg: &str,
    cloud_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    labels_path: Option<&Path>,
) -> Result<i32, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let catalog = cfg.catalog_cones()?;
    let ladder = cfg.scale_ladder()?;
    let z = load_cone(cone_arg, cfg.ambient_dim)?;
    let cloud = read_cloud(cloud_path, cfg.sampling_radius)
        .map_err(|e| CliError::input(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::input(e.to_string()))?;
    let labels = match labels_path {
        Some(path) => {
            let types: Vec<usize> = {
                let mut t: Vec<usize> = catalog.iter().map(|c| c.type_label).collect();
                t.sort_unstable();
                t.dedup();
                t
            };
            read_labels(path, ladder.rungs.clone(), types)
                .map_err(|e| CliError::input(e.to_string()))?
        }
        None => {
            let constants = constants_for(&cfg, &catalog, out_dir)?;
            let max_type = catalog.iter().map(|c| c.type_label).max().unwrap_or(0);
            let tau = cfg.tau.clone().unwrap_or_else(|| {
                default_tau(max_type, cloud.sampling_radius, &ladder, constants.delta0)
            });
            let sc = cfg.stratify_config(tau);
            stratify(&cloud, &catalog, &ladder, &sc, cfg.seed)
                .map_err(|e| CliError::internal(e.to_string()))?
        }
    };
    let flow_cfg = cfg.flow_config();
    let outcome = run_flow(&z, &cloud, &labels, &catalog, &flow_cfg, cfg.seed)?;
    outcome.monitors.write_jsonl(&out_dir.join("monitors.jsonl"))?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default();
    write_manifest(
        &out_dir.join("flow_manifest.json"),
        &outcome.manifest(cfg.seed, &flow_cfg, timestamp),
    )?;
    for df in &outcome.stack.dims {
        write_cloud(&out_dir.join(dim_source_name(df.dim)), &df.source, cfg.ambient_dim)
            .map_err(|e| CliError::input(e.to_string()))?;
        write_cloud(&out_dir.join(dim_image_name(df.dim)), &df.image, cfg.ambient_dim)
            .map_err(|e| CliError::input(e.to_string()))?;
        write_points_obj(
            &out_dir.join(format!("mapped_dim{}.obj", df.dim)),
            &df.image.points,
        )?;
    }
    for level in z.type_label..=z.dim() {
        export_spine_obj(
            &out_dir.join(format!("spine_level{level}.obj")),
            &z,
            level,
            2.0,
            cloud.sampling_radius,
        )?;
    }
    let verify = verify_theorem(&outcome.stack, &cloud, cfg.tol_disp, cfg.tol_cov)?;
    let holder = holder_exponent(&outcome.stack, 20_000, cfg.seed ^ 0x401).ok();
    let index = RunDirIndex {
        data_path: cloud_path.to_path_buf(),
        ambient_dim: cfg.ambient_dim,
        sampling_radius: cloud.sampling_radius,
        tol_disp: cfg.tol_disp,
        tol_cov: cfg.tol_cov,
        dims: outcome.stack.dims.iter().map(|d| d.dim).collect(),
        k_max: cfg.k_max,
        seed: cfg.seed,
    };
    write_json(&out_dir.join("run.json"), &index)?;
    let report = ParameterizeOutcome {
        run_dir: out_dir.to_path_buf(),
        dims: index.dims.clone(),
        monitors_ok: outcome.monitors.all_ok(),
        monitor_breaches: outcome.monitors.breaches().len(),
        verify,
        holder,
        pass: false,
    };
    let report = ParameterizeOutcome {
        pass: report.monitors_ok && report.verify.pass,
        ..report
    };
    write_json(&out_dir.join("verify.json"), &report.verify)?;
    emit(&report)?;
    Ok(if report.pass { 0 } else { 1 })
}

#[derive(Debug, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Serialize)]
pub struct ConclusionReport {
    pub run_dir: PathBuf,
    pub checks: Vec<VerifyCheck>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// Recomputes the theorem conclusion from the artifacts alone: the stored
/// skeleton meshes and their images, the data cloud, and the monitor log.
/// A truncated or tampered run directory fails the corresponding check
/// rather than erroring out.
pub fn verify_cmd(run_dir: &Path) -> Result<i32, CliError> {
    let index_path = run_dir.join("run.json");
    let text =
        std::fs::read_to_string(&index_path).map_err(|e| CliError::input(e.to_string()))?;
    let index: RunDirIndex =
        serde_json::from_str(&text).map_err(|e| CliError::input(e.to_string()))?;
    let data = read_cloud(&index.data_path, index.sampling_radius)
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut checks: Vec<VerifyCheck> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut img_pts: Vec<Vec4> = Vec::new();
    let mut disp_sup = 0.0f64;
    let mut image_to_data = 0.0f64;
    let mut top_pairs: Vec<(Vec4, Vec4)> = Vec::new();
    let top_dim = index.dims.iter().copied().max().unwrap_or(0);
    for &m in &index.dims {
        let source = read_cloud(&run_dir.join(dim_source_name(m)), index.sampling_radius);
        let image = read_cloud(&run_dir.join(dim_image_name(m)), index.sampling_radius);
        let (source, image) = match (source, image) {
            (Ok(s), Ok(i)) if s.len() == i.len() => (s, i),
            _ => {
                failures.push(format!(
                    "coverage: dimension {m} source or image artifact missing or mismatched"
                ));
                continue;
            }
        };
        for (s, i) in source.points.iter().zip(&image.points) {
            if s.norm() <= 1.95 {
                disp_sup = disp_sup.max((i - s).norm());
                image_to_data = image_to_data.max(data.distance(i));
                img_pts.push(*i);
            }
            if m == top_dim {
                top_pairs.push((*s, *i));
            }
        }
    }
    let mut data_to_image = f64::INFINITY;
    if !img_pts.is_empty() {
        let image_cloud = PointCloud::new(img_pts, index.sampling_radius)
            .map_err(|e| CliError::internal(e.to_string()))?;
        data_to_image = 0.0;
        for p in &data.points {
            if p.norm() <= 1.9 {
                data_to_image = data_to_image.max(image_cloud.distance(p));
            }
        }
    }
    checks.push(VerifyCheck {
        name: "displacement".into(),
        value: disp_sup,
        bound: index.tol_disp,
        ok: disp_sup <= index.tol_disp,
    });
    checks.push(VerifyCheck {
        name: "coverage_data_to_image".into(),
        value: data_to_image,
        bound: index.tol_cov,
        ok: data_to_image <= index.tol_cov,
    });
    checks.push(VerifyCheck {
        name: "coverage_image_to_data".into(),
        value: image_to_data,
        bound: index.tol_cov,
        ok: image_to_data <= index.tol_cov,
    });
    let mut sphere_low = f64::INFINITY;
    let mut sphere_high = 0.0f64;
    let mut sphere_n = 0usize;
    for (s, i) in &top_pairs {
        if (s.norm() - 1.95).abs() <= 0.005 {
            sphere_n += 1;
            sphere_low = sphere_low.min(i.norm());
            sphere_high = sphere_high.max(i.norm());
        }
    }
    let sphere_ok = sphere_n > 0 && sphere_low >= 1.9 && sphere_high <= 2.0;
    checks.push(VerifyCheck {
        name: "sphere_band_low".into(),
        value: sphere_low,
        bound: 1.9,
        ok: sphere_ok,
    });
    let monitors_ok = match std::fs::read_to_string(run_dir.join("monitors.jsonl")) {
        Ok(log) => {
            let mut ok = true;
            let mut any = false;
            for line in log.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<MonitorEntry>(line) {
                    Ok(e) => {
                        any = true;
                        ok &= e.ok;
                    }
                    Err(_) => ok = false,
                }
            }
            ok && any
        }
        Err(_) => false,
    };
    checks.push(VerifyCheck {
        name: "monitors".into(),
        value: if monitors_ok { 1.0 } else { 0.0 },
        bound: 1.0,
        ok: monitors_ok,
    });
    for c in &checks {
        if !c.ok {
            failures.push(format!("{}: {:.4e} against {:.4e}", c.name, c.value, c.bound));
        }
    }
    let pass = failures.is_empty();
    let report = ConclusionReport {
        run_dir: run_dir.to_path_buf(),
        checks,
        failures,
        pass,
    };
    write_json(&run_dir.join("conclusion.json"), &report)?;
    emit(&report)?;
    Ok(if pass { 0 } else { 1 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub cone: String,
    pub ambient_dim: usize,
    pub radius: f64,
    /// Points per unit of the cone's top-dimensional measure.
    pub density: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub bumps: usize,
    pub out_cloud: PathBuf,
    pub out_truth: PathBuf,
    /// Closeness draws to audit after perturbing; 0 skips the audit.
    pub audit_draws: usize,
}

#[derive(Debug, Serialize)]
pub struct GenerateReport {
    pub points: usize,
    pub h: f64,
    pub level_counts: Vec<(usize, usize)>,
    pub cert: Option<crate::data::FieldCert>,
    pub audit: Option<crate::data::AuditReport>,
    pub pass: bool,
}

fn write_truth(path: &Path, truth: &GroundTruth) -> Result<(), CliError> {
    let mut out = String::from("point_index,label\n");
    for (i, l) in truth.labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| CliError::input(e.to_string()))?;
    Ok(())
}

pub fn generate_cmd(spec_path: &Path) -> Result<i32, CliError> {
    let text =
        std::fs::read_to_string(spec_path).map_err(|e| CliError::input(e.to_string()))?;
    let spec: GenerateSpec =
        serde_json::from_str(&text).map_err(|e| CliError::input(e.to_string()))?;
    let cs = load_cone(&spec.cone, spec.ambient_dim)?;
    let (cloud, truth) =
        sample_cone(&cs, &geom::ZERO, spec.radius, spec.density, spec.seed)?;
    let (cloud, cert) = if spec.epsilon > 0.0 {
        let mut field = PerturbationField::new(
            spec.epsilon,
            spec.radius + 0.3,
            spec.bumps.max(1),
            spec.ambient_dim,
            spec.seed ^ 0xF1E1D,
        );
        let cert = field.certify(10_000).clone();
        (perturb(&cloud, &field)?, Some(cert))
    } else {
        (cloud, None)
    };
    write_cloud(&spec.out_cloud, &cloud, spec.ambient_dim)
        .map_err(|e| CliError::input(e.to_string()))?;
    write_truth(&spec.out_truth, &truth)?;
    let audit = if spec.audit_draws > 0 {
        Some(audit_hypothesis(
            &cloud,
            &cs,
            spec.epsilon,
            spec.radius,
            spec.audit_draws,
            spec.seed ^ 0xA0D1,
        )?)
    } else {
        None
    };
    let mut level_counts: Vec<(usize, usize)> = Vec::new();
    for level in cs.type_label..=cs.dim() {
        level_counts
            .push((level, truth.labels.iter().filter(|&&l| l == level).count()));
    }
    let pass = audit.as_ref().map(|a| a.pass).unwrap_or(true);
    let report = GenerateReport {
        points: cloud.len(),
        h: truth.h,
        level_counts,
        cert,
        audit,
        pass,
    };
    emit(&report)?;
    Ok(if pass { 0 } else { 1 })
}

/// Parses "x,y,z" or "x,y,z,w" into a padded point.
pub fn parse_point(s: &str) -> Result<Vec4, CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() < 3 || parts.len() > 4 {
        return Err(CliError::input(format!(
            "point {s:?} needs 3 or 4 comma-separated coordinates"
        )));
    }
    let mut v = geom::ZERO;
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .trim()
            .parse::<f64>()
            .map_err(|e| CliError::input(format!("coordinate {i} of {s:?}: {e}")))?;
    }
    Ok(v)
}

#[allow(dead_code)]
pub fn write_three_sector_counterexample(path: &Path) -> Result<(), CliError> {
    // A plane split into three closed sectors: a valid complex whose
    // sectors open to a straight angle, the stock non-flatness failure.
    let c = 0.5f64;
    let s = 3f64.sqrt() / 2.0;
    let file = ConeFile {
        ambient_dim: 3,
        product_dim: 0,
        generators: vec![
            vec![vec![1.0, 0.0, 0.0], vec![-c, s, 0.0]],
            vec![vec![-c, s, 0.0], vec![-c, -s, 0.0]],
            vec![vec![-c, -s, 0.0], vec![1.0, 0.0, 0.0]],
        ],
        isometry: None,
    };
    write_cone_file(path, &file).map_err(CliError::from)
}
