//! The report stage: elbow curve, cluster characterisation, map layers and
//! purity against planted labels.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};

use drivenorm_core::cluster::{adjusted_rand_index, characterize_clusters, ClusterModel, KMeansOptions};
use drivenorm_core::network::RoadNetwork;
use drivenorm_core::norms::{cluster_segments, NormsTable};
use drivenorm_core::synth::read_labels;

use crate::error::CliError;
use crate::stages::{self, create, feature_matrix, labels_path, read_json, Ctx, ModelFile};

pub const ELBOW_CSV: &str = "elbow.csv";
pub const CLUSTERS_REPORT_CSV: &str = "clusters_report.csv";
pub const SEGMENTS_GEOJSON: &str = "segments_clustered.geojson";
pub const RIDE_ACCEL_GEOJSON: &str = "ride_accel.geojson";
pub const PURITY_JSON: &str = "purity.json";

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(c: usize) -> &'static str {
    PALETTE[c % PALETTE.len()]
}

/// Rounds a coordinate to 6 decimals (about 0.1 m).
fn coord(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn report(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let model: ModelFile = read_json(&ctx.artifact(stages::MODEL_JSON))?;
    let fm = feature_matrix(ctx)?;
    if fm.driver_ids.iter().map(|d| d.as_str()).ne(model.driver_ids.iter().map(String::as_str)) {
        return Err(CliError::Data(format!(
            "{} and {} list different drivers; rerun cluster",
            stages::MODEL_JSON,
            stages::FEATURES_CSV
        )));
    }
    let norms: NormsTable = read_json(&ctx.artifact(stages::NORMS_JSON))?;
    let net = RoadNetwork::load(&cfg.network).map_err(CliError::data)?;
    let mut outputs = Vec::new();

    let path = ctx.artifact(ELBOW_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(["k", "wss", "selected"]).map_err(csv_err)?;
    for (k, wss) in &model.wss_curve {
        w.write_record([k.to_string(), wss.to_string(), (*k == model.k).to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(&path))?;
    outputs.push(path);

    let cm = ClusterModel {
        k: model.k,
        centroids: model.centroids.clone(),
        assignments: model.assignments.clone(),
        wss: model.wss,
        seed: model.seed,
        restarts: model.restarts,
    };
    let rep = characterize_clusters(&cm, &fm);
    let path = ctx.artifact(CLUSTERS_REPORT_CSV);
    let mut w = create(&path)?;
    rep.write_csv(&mut w).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.flush().map_err(CliError::io(&path))?;
    outputs.push(path);

    let seg_k = cfg.segment_k as usize;
    let opts = KMeansOptions {
        restarts: cfg.restarts as usize,
        seed: cfg.seed as u64,
        ..KMeansOptions::default()
    };
    let seg_model = if norms.profiles.len() >= seg_k {
        Some(cluster_segments(&norms, seg_k, &opts).map_err(CliError::data)?)
    } else {
        ctx.say(format_args!(
            "report: {} segments with a profile, fewer than segment_k = {seg_k}; segment map left empty",
            norms.profiles.len()
        ));
        None
    };
    let profiles: BTreeMap<_, _> = norms.profiles.iter().map(|p| (p.segment_id, p)).collect();
    let mut features = Vec::new();
    let mut class_labels = Vec::new();
    let mut seg_assign = Vec::new();
    if let Some(sm) = &seg_model {
        for (id, &c) in sm.segment_ids.iter().zip(&sm.labels) {
            let Some(idx) = net.index_of(*id) else { continue };
            let seg = net.segment(idx);
            let p = profiles[id];
            let coords: Vec<[f64; 2]> = seg.polyline.iter().map(|q| [coord(q.lon), coord(q.lat)]).collect();
            features.push(json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {
                    "segment_id": id.0,
                    "road_class": seg.road_class.as_str(),
                    "cluster": c,
                    "color": color(c),
                    "median_speed": p.median_speed,
                    "p95_speed": p.p95_speed,
                    "sample_count": p.sample_count,
                },
            }));
            class_labels.push(seg.road_class.as_str().to_string());
            seg_assign.push(c);
        }
    }
    let path = ctx.artifact(SEGMENTS_GEOJSON);
    write_geojson(&path, features)?;
    outputs.push(path);

    let path = ctx.artifact(RIDE_ACCEL_GEOJSON);
    write_geojson(&path, ride_accel_features(ctx)?)?;
    outputs.push(path);

    let mut purity = json!({
        "segments": group_purity(&seg_assign, &class_labels),
    });
    if let Some(lp) = labels_path(cfg) {
        let labels: BTreeMap<String, String> = read_labels(&lp)
            .map_err(CliError::data)?
            .into_iter()
            .map(|(d, a)| (d.as_str().to_string(), a))
            .collect();
        let mut assign = Vec::new();
        let mut truth = Vec::new();
        for (d, &a) in model.driver_ids.iter().zip(&model.assignments) {
            if let Some(l) = labels.get(d) {
                assign.push(a);
                truth.push(l.clone());
            }
        }
        purity["drivers"] = group_purity(&assign, &truth);
    }
    let path = ctx.artifact(PURITY_JSON);
    stages::write_json(&path, &purity)?;
    outputs.push(path);

    ctx.say(format_args!(
        "report: k = {}, {} segments mapped",
        model.k,
        seg_assign.len()
    ));
    Ok(outputs)
}

fn write_geojson(path: &std::path::Path, features: Vec<Value>) -> Result<(), CliError> {
    let mut w = create(path)?;
    let fc = json!({"type": "FeatureCollection", "features": features});
    serde_json::to_writer(&mut w, &fc).map_err(|e| CliError::io(path)(e.into()))?;
    w.write_all(b"\n").map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

/// One point per matched second of the selected rides.
fn ride_accel_features(ctx: &Ctx) -> Result<Vec<Value>, CliError> {
    let mut kin = stages::load_kinematics(ctx)?;
    kin.sort_by(|a, b| a.ride_id.cmp(&b.ride_id));
    let wanted = ctx.cfg.ride_list();
    let chosen: Vec<_> = if wanted.is_empty() {
        kin.into_iter().take(1).collect()
    } else {
        for w in &wanted {
            if !kin.iter().any(|k| k.ride_id.as_str() == w) {
                return Err(CliError::ConfigInvalid {
                    field: "report_rides".into(),
                    reason: format!("no preprocessed ride {w:?}"),
                });
            }
        }
        kin.into_iter().filter(|k| wanted.iter().any(|w| w == k.ride_id.as_str())).collect()
    };
    let mut out = Vec::new();
    for k in &chosen {
        for i in 0..k.len() {
            let (Some(p), Some(seg)) = (k.pos[i], k.segment[i]) else { continue };
            out.push(json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [coord(p.lon), coord(p.lat)]},
                "properties": {
                    "ride_id": k.ride_id.as_str(),
                    "t": k.t[i],
                    "segment_id": seg.0,
                    "speed": k.speed[i],
                    "lon_accel": k.lon_accel[i],
                    "lat_accel": k.lat_accel[i],
                },
            }));
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ClusterPurity {
    cluster: usize,
    size: usize,
    majority: String,
    majority_count: usize,
}

/// Purity of `assign` against `truth`: each cluster counts its most common
/// label; overall purity is the summed majority counts over all members.
pub fn group_purity(assign: &[usize], truth: &[String]) -> Value {
    let mut counts: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&a, t) in assign.iter().zip(truth) {
        *counts.entry(a).or_default().entry(t.as_str()).or_default() += 1;
    }
    let clusters: Vec<ClusterPurity> = counts
        .iter()
        .map(|(&c, m)| {
            // ties go to the alphabetically first label
            let (label, n) = m.iter().fold(("", 0), |best, (l, &n)| if n > best.1 { (l, n) } else { best });
            ClusterPurity {
                cluster: c,
                size: m.values().sum(),
                majority: label.to_string(),
                majority_count: n,
            }
        })
        .collect();
    let total = assign.len();
    let purity = if total == 0 {
        0.0
    } else {
        clusters.iter().map(|c| c.majority_count).sum::<usize>() as f64 / total as f64
    };
    let names: BTreeMap<&str, usize> = truth.iter().map(String::as_str).zip(0..).collect();
    let truth_ids: Vec<usize> = truth.iter().map(|t| names[t.as_str()]).collect();
    json!({
        "n": total,
        "purity": purity,
        "ari": if total == 0 { 0.0 } else { adjusted_rand_index(assign, &truth_ids) },
        "clusters": clusters,
    })
}
