//! `drivenorm`: the stage-based command line pipeline over `drivenorm-core`.

pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod stages;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{parse_flag, Kind, PipelineConfig, KEYS};
use error::CliError;
use stages::{run_stage, Ctx, Stage};

const STAGE_HELP: &str = "synth, ingest, match, preprocess, norms, features, cluster, flag, report or all";

fn command() -> Command {
    let mut cmd = Command::new("drivenorm")
        .version(env!("CARGO_PKG_VERSION"))
        .args_override_self(true)
        .about("Driving-behavior pipeline: ingest, map matching, road norms, driver clustering")
        .arg(Arg::new("stage").required(true).help(STAGE_HELP))
        .arg(Arg::new("config").long("config").value_name("FILE").help("flat TOML config file"))
        .arg(Arg::new("force").long("force").action(ArgAction::SetTrue).help("rerun even when up to date"));
    for (key, kind, help) in KEYS {
        let mut arg = Arg::new(*key).long(*key).help(*help).value_name("VALUE");
        if key.contains('_') {
            arg = arg.alias(key.replace('_', "-"));
        }
        if *kind == Kind::Bool {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn overrides(m: &ArgMatches) -> Result<Vec<(String, toml::Value)>, CliError> {
    let mut out = Vec::new();
    for (key, _, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            out.push((key.to_string(), parse_flag(key, v)?));
        }
    }
    Ok(out)
}

fn execute(m: &ArgMatches, log: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let stage_arg = m.get_one::<String>("stage").expect("required");
    let stages: Vec<Stage> = if stage_arg == "all" {
        Stage::PIPELINE.to_vec()
    } else {
        vec![Stage::from_name(stage_arg).ok_or_else(|| CliError::ConfigInvalid {
            field: "stage".into(),
            reason: format!("unknown stage {stage_arg:?}; expected {STAGE_HELP}"),
        })?]
    };
    let cfg = PipelineConfig::load(m.get_one::<String>("config").map(PathBuf::from).as_deref(), &overrides(m)?)?;
    let force = m.get_flag("force");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs as usize)
        .build()
        .map_err(|e| CliError::ConfigInvalid {
            field: "jobs".into(),
            reason: e.to_string(),
        })?;
    let mut ctx = Ctx {
        cfg: &cfg,
        out: cfg.out_dir(),
        log,
    };
    pool.install(|| {
        for s in stages {
            run_stage(&mut ctx, s, force)?;
        }
        Ok(())
    })
}

/// Parses `args` (program name first), runs the requested stages and returns
/// the process exit code. Progress goes to `log`, errors to stderr.
pub fn run<I, T>(args: I, log: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&m, log) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Like [`run`], but returns the error instead of printing it.
pub fn try_run<I, T>(args: I, log: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = command().try_get_matches_from(args).map_err(|e| CliError::ConfigInvalid {
        field: "arguments".into(),
        reason: e.to_string(),
    })?;
    execute(&m, log)
}
