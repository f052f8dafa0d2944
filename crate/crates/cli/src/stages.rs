//! The pipeline stages. Each reads its predecessors' files from the output
//! directory and writes its own next to them.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use drivenorm_core::cluster::{kmeans, select_k, wss_curve, KMeansOptions};
use drivenorm_core::features::{extract_driver_features, read_features_csv, standardize, FeatureMatrix};
use drivenorm_core::ingest::{parse_ride, validate_ride, DriverId, Ride, RideId};
use drivenorm_core::mapmatch::{
    gps_points, match_rides, FallbackMatcher, FixtureMatcher, MatchCache, MatchError, MatchedTrajectory, Matcher,
    OfflineMatcher,
};
use drivenorm_core::network::RoadNetwork;
use drivenorm_core::norms::{build_norms, flag_deviations, write_flags_csv, MatchedKinematics, NormsTable};
use drivenorm_core::signal::{infer_axis_mapping, to_vehicle_frame};
use drivenorm_core::synth::{
    generate_fleet, generate_network, write_fleet, FleetOptions, GridSpec, MixEntry, GROUND_TRUTH_FILE, LABELS_FILE,
    RIDES_DIR,
};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{self, Manifest, TOOL_VERSION};
use crate::report;

pub const RIDES_CSV: &str = "rides.csv";
pub const MATCHED: &str = "matched.jsonl";
pub const MATCH_REPORT: &str = "match_report.csv";
pub const KINEMATICS: &str = "kinematics.jsonl";
pub const AXES_CSV: &str = "axes.csv";
pub const NORMS_CSV: &str = "norms.csv";
pub const NORMS_JSON: &str = "norms.json";
pub const FEATURES_CSV: &str = "features.csv";
pub const SKIPPED_CSV: &str = "skipped_drivers.csv";
pub const MODEL_JSON: &str = "model.json";
pub const DRIVER_CLUSTERS_CSV: &str = "driver_clusters.csv";
pub const FLAGS_CSV: &str = "flags.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Match,
    Preprocess,
    Norms,
    Features,
    Cluster,
    Flag,
    Report,
}

impl Stage {
    /// The analysis stages in execution order; `synth` only runs on request.
    pub const PIPELINE: [Stage; 8] = [
        Stage::Ingest,
        Stage::Match,
        Stage::Preprocess,
        Stage::Norms,
        Stage::Features,
        Stage::Cluster,
        Stage::Flag,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Match => "match",
            Stage::Preprocess => "preprocess",
            Stage::Norms => "norms",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Flag => "flag",
            Stage::Report => "report",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        [Stage::Synth].into_iter().chain(Stage::PIPELINE).find(|st| st.name() == s)
    }

    /// Config keys whose values change this stage's output.
    fn param_keys(self) -> &'static [&'static str] {
        match self {
            Stage::Synth => &[
                "corpus",
                "network",
                "seed",
                "synth_grid",
                "synth_highway",
                "synth_archetypes",
                "synth_drivers",
                "synth_rides",
                "synth_min_duration",
                "synth_max_duration",
            ],
            Stage::Ingest => &["corpus"],
            Stage::Match => &[
                "matcher",
                "matcher_fixture",
                "fallback_offline",
                "match_radius_m",
                "match_sigma_m",
                "match_kappa",
                "match_rho",
            ],
            Stage::Preprocess => &["filter", "filter_window", "filter_lambda"],
            Stage::Norms => &["min_trips", "day_binning"],
            Stage::Features => &["hard_accel", "hard_brake", "sharp_turn", "min_km"],
            Stage::Cluster => &["k_min", "k_max", "restarts", "seed", "k"],
            Stage::Flag => &["z_threshold", "min_run"],
            Stage::Report => &["segment_k", "restarts", "seed", "labels", "report_rides"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    UpToDate,
    Ran,
}

pub struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: PathBuf,
    pub log: &'a mut (dyn Write + Send),
}

impl Ctx<'_> {
    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// The artifact path, or MissingDependency naming it.
    fn need(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.artifact(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingDependency(name.to_string()))
        }
    }

    pub(crate) fn say(&mut self, msg: std::fmt::Arguments) {
        // progress output is best effort
        let _ = writeln!(self.log, "{msg}");
    }
}

fn network_path(cfg: &PipelineConfig) -> Result<PathBuf, CliError> {
    let p = PathBuf::from(&cfg.network);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::ConfigInvalid {
            field: "network".into(),
            reason: format!("{} does not exist", p.display()),
        })
    }
}

pub fn labels_path(cfg: &PipelineConfig) -> Option<PathBuf> {
    if cfg.labels.is_empty() {
        let p = Path::new(&cfg.corpus).join(LABELS_FILE);
        p.is_file().then_some(p)
    } else {
        Some(PathBuf::from(&cfg.labels))
    }
}

/// Ride directories under the corpus, sorted by name.
fn ride_dirs(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    let root = Path::new(&cfg.corpus);
    if !root.is_dir() {
        return Err(CliError::ConfigInvalid {
            field: "corpus".into(),
            reason: format!("{} does not exist", root.display()),
        });
    }
    let rides = root.join(RIDES_DIR);
    let mut dirs: Vec<PathBuf> = match fs::read_dir(&rides) {
        Ok(rd) => rd
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::io(&rides))?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(CliError::io(&rides)(e)),
    };
    dirs.sort();
    Ok(dirs)
}

/// Sensor and metadata files of one ride, sorted; ground truth is left out.
fn ride_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::io(dir))?
        .into_iter()
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != GROUND_TRUTH_FILE))
        .collect();
    files.sort();
    Ok(files)
}

/// Files a stage reads, checked for existence in order.
fn inputs(ctx: &Ctx, stage: Stage) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    Ok(match stage {
        Stage::Synth => Vec::new(),
        Stage::Ingest => {
            let mut all = Vec::new();
            for d in ride_dirs(cfg)? {
                all.extend(ride_files(&d)?);
            }
            all
        }
        Stage::Match => {
            let mut v = vec![ctx.need(RIDES_CSV)?, network_path(cfg)?];
            let fx = PathBuf::from(&cfg.matcher_fixture);
            if cfg.matcher == "fixture" && fx.is_file() {
                v.push(fx);
            }
            v
        }
        Stage::Preprocess => vec![ctx.need(RIDES_CSV)?, ctx.need(MATCHED)?],
        Stage::Norms => vec![ctx.need(KINEMATICS)?],
        Stage::Features => vec![ctx.need(KINEMATICS)?, ctx.need(NORMS_JSON)?],
        Stage::Cluster => vec![ctx.need(FEATURES_CSV)?],
        Stage::Flag => vec![ctx.need(KINEMATICS)?, ctx.need(NORMS_JSON)?],
        Stage::Report => {
            let mut v = vec![
                ctx.need(MODEL_JSON)?,
                ctx.need(FEATURES_CSV)?,
                ctx.need(NORMS_JSON)?,
                ctx.need(KINEMATICS)?,
                ctx.need(FLAGS_CSV)?,
                network_path(cfg)?,
            ];
            if let Some(l) = labels_path(cfg) {
                if !l.is_file() {
                    return Err(CliError::ConfigInvalid {
                        field: "labels".into(),
                        reason: format!("{} does not exist", l.display()),
                    });
                }
                v.push(l);
            }
            v
        }
    })
}

/// Runs `stage` unless its manifest shows it is already current.
pub fn run_stage(ctx: &mut Ctx, stage: Stage, force: bool) -> Result<Outcome, CliError> {
    let params = ctx.cfg.subset(stage.param_keys());
    let input_paths = inputs(ctx, stage)?;
    let input_hashes = manifest::hash_all(&input_paths)?;
    let previous = manifest::load(&ctx.out, stage.name());
    if !force {
        if let Some(prev) = &previous {
            if manifest::is_current(prev, &params, &input_hashes) {
                ctx.say(format_args!("{}: up-to-date", stage.name()));
                return Ok(Outcome::UpToDate);
            }
        }
    }
    fs::create_dir_all(&ctx.out).map_err(CliError::io(&ctx.out))?;
    let outputs = match stage {
        Stage::Synth => synth(ctx, previous.as_ref())?,
        Stage::Ingest => ingest(ctx)?,
        Stage::Match => match_stage(ctx)?,
        Stage::Preprocess => preprocess(ctx)?,
        Stage::Norms => norms(ctx)?,
        Stage::Features => features(ctx)?,
        Stage::Cluster => cluster(ctx)?,
        Stage::Flag => flag(ctx)?,
        Stage::Report => report::report(ctx)?,
    };
    let m = Manifest {
        stage: stage.name().to_string(),
        tool_version: TOOL_VERSION.to_string(),
        params,
        inputs: input_hashes,
        outputs: manifest::hash_all(&outputs)?,
    };
    manifest::save(&ctx.out, &m)?;
    Ok(Outcome::Ran)
}

pub fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(CliError::io(path))?))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| CliError::io(path)(e.into()))?;
        w.write_all(b"\n").map_err(CliError::io(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = fs::File::open(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| CliError::io(path)(e.into()))?;
    w.write_all(b"\n").map_err(CliError::io(path))?;
    w.flush().map_err(CliError::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn synth(ctx: &mut Ctx, previous: Option<&Manifest>) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let corpus = PathBuf::from(&cfg.corpus);
    let rides_dir = corpus.join(RIDES_DIR);
    // only ever delete what an earlier synth run wrote
    match previous {
        Some(prev) => {
            for p in prev.outputs.keys() {
                let _ = fs::remove_file(p);
            }
        }
        None => {
            let occupied = fs::read_dir(&rides_dir).map(|mut d| d.next().is_some()).unwrap_or(false);
            if occupied {
                return Err(CliError::ConfigInvalid {
                    field: "corpus".into(),
                    reason: format!("{} already holds rides not written by synth", rides_dir.display()),
                });
            }
        }
    }
    let seed = cfg.seed as u64;
    let net = generate_network(&GridSpec::new(cfg.synth_grid as usize, cfg.synth_highway, seed));
    let mix: Vec<MixEntry> = cfg
        .archetypes()?
        .into_iter()
        .map(|archetype| MixEntry {
            archetype,
            n_drivers: cfg.synth_drivers as usize,
            rides_each: cfg.synth_rides as usize,
        })
        .collect();
    let opts = FleetOptions {
        seed,
        duration_s: (cfg.synth_min_duration, cfg.synth_max_duration),
        ..FleetOptions::default()
    };
    let fleet = generate_fleet(&net, &mix, &opts).map_err(|e| CliError::ConfigInvalid {
        field: "synth".into(),
        reason: e,
    })?;
    let net_path = PathBuf::from(&cfg.network);
    if let Some(dir) = net_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    net.save(&net_path).map_err(CliError::data)?;
    write_fleet(&fleet, &corpus).map_err(CliError::data)?;
    let mut outputs = vec![net_path, corpus.join(LABELS_FILE)];
    for d in ride_dirs(cfg)? {
        outputs.extend(ride_files(&d)?);
        outputs.push(d.join(GROUND_TRUTH_FILE));
    }
    ctx.say(format_args!(
        "synth: {} rides from {} drivers on {} segments",
        fleet.rides.len(),
        fleet.labels.len(),
        net.len()
    ));
    Ok(outputs)
}

/// One row of `rides.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideRow {
    pub ride_id: String,
    pub driver_id: String,
    pub dir: String,
    pub usable: bool,
    pub gps_fixes: usize,
    pub duration_s: f64,
    /// Hash over the ride's sensor and metadata files.
    pub content_sha256: String,
    pub reason: String,
}

fn ride_hash(dir: &Path) -> Result<String, CliError> {
    let mut all = Vec::new();
    for f in ride_files(dir)? {
        all.extend_from_slice(f.file_name().expect("file").as_encoded_bytes());
        all.push(0);
        all.extend_from_slice(manifest::sha256_file(&f)?.as_bytes());
    }
    Ok(manifest::sha256_bytes(&all))
}

fn ingest(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let dirs = ride_dirs(ctx.cfg)?;
    let rows: Vec<RideRow> = dirs
        .par_iter()
        .map(|d| {
            let hash = ride_hash(d)?;
            let dir = d.display().to_string();
            let name = d.file_name().expect("dir").to_string_lossy().to_string();
            Ok(match parse_ride(d) {
                Ok(ride) => {
                    let rep = validate_ride(&ride);
                    let gps = ride.gps();
                    RideRow {
                        ride_id: ride.ride_id.as_str().to_string(),
                        driver_id: ride.driver_id.as_str().to_string(),
                        dir,
                        usable: rep.usable,
                        gps_fixes: gps.len(),
                        duration_s: gps.last().zip(gps.first()).map_or(0.0, |(l, f)| l.t - f.t),
                        content_sha256: hash,
                        reason: if rep.usable { String::new() } else { "too little GPS coverage".into() },
                    }
                }
                Err(e) => RideRow {
                    ride_id: name,
                    driver_id: String::new(),
                    dir,
                    usable: false,
                    gps_fixes: 0,
                    duration_s: 0.0,
                    content_sha256: hash,
                    reason: e.to_string(),
                },
            })
        })
        .collect::<Result<_, CliError>>()?;
    let path = ctx.artifact(RIDES_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    for r in &rows {
        w.serialize(r).map_err(csv_err(&path))?;
    }
    w.flush().map_err(CliError::io(&path))?;
    let usable = rows.iter().filter(|r| r.usable).count();
    if usable == 0 {
        return Err(CliError::Data(format!("no usable rides under {}", ctx.cfg.corpus)));
    }
    ctx.say(format_args!("ingest: {usable} usable rides of {}", rows.len()));
    Ok(vec![path])
}

fn usable_rides(ctx: &Ctx) -> Result<Vec<RideRow>, CliError> {
    let path = ctx.artifact(RIDES_CSV);
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let rows: Vec<RideRow> = r.deserialize().collect::<Result<_, _>>().map_err(csv_err(&path))?;
    Ok(rows.into_iter().filter(|r| r.usable).collect())
}

fn load_rides(rows: &[RideRow]) -> Result<Vec<Ride>, CliError> {
    rows.par_iter()
        .map(|r| parse_ride(&r.dir).map_err(|e| CliError::Data(format!("{}: {e}", r.dir))))
        .collect()
}

#[derive(Debug, Serialize)]
struct MatchRow<'a> {
    ride_id: &'a str,
    matched: bool,
    matched_fraction: f64,
    turn_windows: usize,
    reason: String,
}

fn match_stage(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let net = RoadNetwork::load(network_path(cfg)?).map_err(CliError::data)?;
    let rows = usable_rides(ctx)?;
    let rides = load_rides(&rows)?;
    let pts: Vec<(RideId, _)> = rides.iter().map(|r| (r.ride_id.clone(), gps_points(r))).collect();
    let params = cfg.match_params();
    let offline = OfflineMatcher::new(&net, params);
    let matcher: Box<dyn Matcher + '_> = match cfg.matcher.as_str() {
        "offline" => Box::new(offline),
        _ => {
            let fixture = FixtureMatcher::open(&cfg.matcher_fixture);
            if cfg.fallback_offline {
                Box::new(FallbackMatcher {
                    primary: Box::new(fixture),
                    fallback: Box::new(offline),
                })
            } else {
                Box::new(fixture)
            }
        }
    };
    let mut cache = if cfg.cache.is_empty() {
        MatchCache::in_memory()
    } else {
        MatchCache::open(&cfg.cache).map_err(CliError::data)?
    };
    let results = match_rides(&pts, &net, matcher.as_ref(), &mut cache, &params);
    cache.flush().map_err(CliError::data)?;

    let mut matched: Vec<MatchedTrajectory> = Vec::new();
    let mut report = Vec::new();
    for ((id, _), res) in pts.iter().zip(results) {
        match res {
            Ok(m) => {
                report.push(MatchRow {
                    ride_id: id.as_str(),
                    matched: true,
                    matched_fraction: m.matched_fraction(),
                    turn_windows: m.turn_windows.len(),
                    reason: String::new(),
                });
                matched.push(m);
            }
            Err(e @ (MatchError::RemoteUnavailable(_) | MatchError::MalformedResponse(_))) => {
                return Err(CliError::Data(format!("ride {}: {e}", id.as_str())));
            }
            Err(e) => report.push(MatchRow {
                ride_id: id.as_str(),
                matched: false,
                matched_fraction: 0.0,
                turn_windows: 0,
                reason: e.to_string(),
            }),
        }
    }
    let mpath = ctx.artifact(MATCHED);
    write_jsonl(&mpath, &matched)?;
    let rpath = ctx.artifact(MATCH_REPORT);
    let mut w = csv::Writer::from_writer(create(&rpath)?);
    for r in &report {
        w.serialize(r).map_err(csv_err(&rpath))?;
    }
    w.flush().map_err(CliError::io(&rpath))?;
    ctx.say(format_args!("match: {} of {} rides matched", matched.len(), report.len()));
    Ok(vec![mpath, rpath])
}

#[derive(Debug, Serialize)]
struct AxesRow {
    ride_id: String,
    longitudinal: String,
    lateral: String,
    source: String,
    confidence: f64,
    reason: String,
}

fn preprocess(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let rows = usable_rides(ctx)?;
    let matched: Vec<MatchedTrajectory> = read_jsonl(&ctx.artifact(MATCHED))?;
    let by_id: BTreeMap<&str, &RideRow> = rows.iter().map(|r| (r.ride_id.as_str(), r)).collect();
    let opts = ctx.cfg.frame_options();
    let results: Vec<(AxesRow, Option<MatchedKinematics>)> = matched
        .par_iter()
        .map(|m| {
            let row = by_id
                .get(m.ride_id.as_str())
                .ok_or_else(|| CliError::Data(format!("matched ride {} is not in {RIDES_CSV}", m.ride_id)))?;
            let ride = parse_ride(&row.dir).map_err(|e| CliError::Data(format!("{}: {e}", row.dir)))?;
            let failed = |reason: String| AxesRow {
                ride_id: m.ride_id.as_str().to_string(),
                longitudinal: String::new(),
                lateral: String::new(),
                source: String::new(),
                confidence: 0.0,
                reason,
            };
            let map = match infer_axis_mapping(&ride, &m.turn_windows) {
                Ok(map) => map,
                Err(e) => return Ok((failed(e.to_string()), None)),
            };
            let kin = match to_vehicle_frame(&ride, &map, &opts) {
                Ok(k) => k,
                Err(e) => return Ok((failed(e.to_string()), None)),
            };
            let axes = AxesRow {
                ride_id: m.ride_id.as_str().to_string(),
                longitudinal: map.longitudinal.to_string(),
                lateral: map.lateral.to_string(),
                source: format!("{:?}", map.source),
                confidence: map.confidence,
                reason: String::new(),
            };
            Ok((axes, Some(MatchedKinematics::align(&kin, m, ride.driver_id.clone(), ride.start_time))))
        })
        .collect::<Result<_, CliError>>()?;
    let apath = ctx.artifact(AXES_CSV);
    let mut w = csv::Writer::from_writer(create(&apath)?);
    let mut kin = Vec::new();
    for (a, k) in results {
        w.serialize(&a).map_err(csv_err(&apath))?;
        kin.extend(k);
    }
    w.flush().map_err(CliError::io(&apath))?;
    let kpath = ctx.artifact(KINEMATICS);
    write_jsonl(&kpath, &kin)?;
    ctx.say(format_args!("preprocess: {} rides in the vehicle frame", kin.len()));
    Ok(vec![kpath, apath])
}

pub fn load_kinematics(ctx: &Ctx) -> Result<Vec<MatchedKinematics>, CliError> {
    read_jsonl(&ctx.artifact(KINEMATICS))
}

fn norms(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let kin = load_kinematics(ctx)?;
    let table = build_norms(&kin, &ctx.cfg.norm_params());
    let cpath = ctx.artifact(NORMS_CSV);
    let mut w = create(&cpath)?;
    table.write_csv(&mut w).map_err(csv_err(&cpath))?;
    w.flush().map_err(CliError::io(&cpath))?;
    let jpath = ctx.artifact(NORMS_JSON);
    write_json(&jpath, &table)?;
    ctx.say(format_args!(
        "norms: {} cells, {} valid, {} segments with a profile",
        table.cells.len(),
        table.valid_count(),
        table.profiles.len()
    ));
    Ok(vec![cpath, jpath])
}

fn by_driver(kin: Vec<MatchedKinematics>) -> Vec<(DriverId, Vec<MatchedKinematics>)> {
    let mut m: BTreeMap<DriverId, Vec<MatchedKinematics>> = BTreeMap::new();
    for k in kin {
        m.entry(k.driver_id.clone()).or_default().push(k);
    }
    m.into_iter().collect()
}

fn features(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let kin = load_kinematics(ctx)?;
    let table: NormsTable = read_json(&ctx.artifact(NORMS_JSON))?;
    let set = extract_driver_features(&by_driver(kin), &table, &ctx.cfg.feature_params());
    let fpath = ctx.artifact(FEATURES_CSV);
    let mut w = create(&fpath)?;
    set.write_csv(&mut w).map_err(csv_err(&fpath))?;
    w.flush().map_err(CliError::io(&fpath))?;
    let spath = ctx.artifact(SKIPPED_CSV);
    let mut w = create(&spath)?;
    set.write_skipped_csv(&mut w).map_err(csv_err(&spath))?;
    w.flush().map_err(CliError::io(&spath))?;
    ctx.say(format_args!(
        "features: {} drivers, {} skipped",
        set.features.len(),
        set.skipped.len()
    ));
    Ok(vec![fpath, spath])
}

/// The exported driver clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub k: usize,
    /// `elbow` when k came from the curve, `manual` when set by config.
    pub k_source: String,
    pub seed: u64,
    pub restarts: usize,
    pub centroids: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
    pub dropped_columns: Vec<String>,
    pub driver_ids: Vec<String>,
    pub assignments: Vec<usize>,
    pub wss: f64,
    pub wss_curve: Vec<(usize, f64)>,
}

pub fn feature_matrix(ctx: &Ctx) -> Result<FeatureMatrix, CliError> {
    let path = ctx.artifact(FEATURES_CSV);
    let f = fs::File::open(&path).map_err(CliError::io(&path))?;
    let feats = read_features_csv(f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    standardize(&feats).map_err(CliError::data)
}

fn cluster(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ctx.cfg;
    let fm = feature_matrix(ctx)?;
    let opts = KMeansOptions {
        restarts: cfg.restarts as usize,
        seed: cfg.seed as u64,
        ..KMeansOptions::default()
    };
    let n = fm.rows.len();
    if cfg.k_max as usize > n {
        return Err(CliError::Data(format!("k_max = {} exceeds the {n} drivers with features", cfg.k_max)));
    }
    let curve = wss_curve(&fm.rows, cfg.k_min as usize..=cfg.k_max as usize, &opts).map_err(CliError::data)?;
    let (k, source) = if cfg.k > 0 {
        if cfg.k as usize > n {
            return Err(CliError::Data(format!("k = {} exceeds the {n} drivers with features", cfg.k)));
        }
        (cfg.k as usize, "manual")
    } else {
        let k = select_k(&curve).map_err(|e| CliError::ConfigInvalid {
            field: "k_max".into(),
            reason: format!("{e}; widen k_min..k_max or set k"),
        })?;
        (k, "elbow")
    };
    let model = kmeans(&fm.rows, k, &opts).map_err(CliError::data)?;
    let file = ModelFile {
        k,
        k_source: source.into(),
        seed: model.seed,
        restarts: model.restarts,
        centroids: model.centroids.clone(),
        column_names: fm.column_names.clone(),
        dropped_columns: fm.dropped_columns.clone(),
        driver_ids: fm.driver_ids.iter().map(|d| d.as_str().to_string()).collect(),
        assignments: model.assignments.clone(),
        wss: model.wss,
        wss_curve: curve.points.clone(),
    };
    let mpath = ctx.artifact(MODEL_JSON);
    write_json(&mpath, &file)?;
    let apath = ctx.artifact(DRIVER_CLUSTERS_CSV);
    let mut w = csv::Writer::from_writer(create(&apath)?);
    w.write_record(["driver_id", "cluster"]).map_err(csv_err(&apath))?;
    for (d, a) in file.driver_ids.iter().zip(&file.assignments) {
        w.write_record([d.as_str(), &a.to_string()]).map_err(csv_err(&apath))?;
    }
    w.flush().map_err(CliError::io(&apath))?;
    ctx.say(format_args!("cluster: k = {k} ({source}), wss {:.3}", file.wss));
    Ok(vec![mpath, apath])
}

fn flag(ctx: &mut Ctx) -> Result<Vec<PathBuf>, CliError> {
    let kin = load_kinematics(ctx)?;
    let table: NormsTable = read_json(&ctx.artifact(NORMS_JSON))?;
    let params = ctx.cfg.flag_params();
    let mut order: Vec<&MatchedKinematics> = kin.iter().collect();
    order.sort_by(|a, b| a.ride_id.cmp(&b.ride_id));
    let flags: Vec<_> = order
        .par_iter()
        .map(|k| flag_deviations(k, &table, &params))
        .collect::<Vec<_>>()
        .concat();
    let path = ctx.artifact(FLAGS_CSV);
    let mut w = create(&path)?;
    write_flags_csv(&flags, &mut w).map_err(csv_err(&path))?;
    w.flush().map_err(CliError::io(&path))?;
    ctx.say(format_args!("flag: {} deviations", flags.len()));
    Ok(vec![path])
}
