use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use switchdiff_core::embedded::extract_switch_times;
use switchdiff_core::estimate::{
    estimate_hitting_moment, estimate_invariant_histogram, lyapunov_drift_check, verify_theorem_bound,
    write_row, write_row_header, HistogramSpec, HitConfig, MaxTime, Start,
};
use switchdiff_core::simulate::{simulate_path_indexed, write_events_csv};
use switchdiff_core::{build_model, check_recurrence_criterion, CriterionReport, SimParams};

use crate::config::{Command, ConfigError, ParsedConfig, ScenarioConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] switchdiff_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        use switchdiff_core::Error as E;
        match self {
            RunError::Config(_) => 2,
            RunError::Core(E::ParameterRange { .. }) | RunError::Core(E::Precondition(_)) => 2,
            RunError::Core(E::CriterionRefused(_)) => 3,
            RunError::Core(
                E::EstimationFailure(_) | E::InsufficientSample(_) | E::Reliability(_),
            ) => 4,
            RunError::Core(E::NumericalBlowup { .. }) => 5,
            _ => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Overrides taken from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ScenarioConfig,
    defaults_applied: &'a [String],
    criterion: &'a CriterionReport,
    report: Value,
    files: &'a [String],
}

/// Runs a parsed scenario and writes its artifacts.
///
/// Results depend only on the resolved config: the worker count changes
/// scheduling but never which random stream a path reads.
pub fn run_scenario(parsed: ParsedConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let mut parsed = parsed;
    if let Some(s) = opts.seed {
        parsed.config.seed = Some(s);
        parsed.defaults_applied.retain(|d| d != "seed");
    }
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| parsed.config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("switchdiff-out"));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    info!("using {} worker threads", pool.current_num_threads());
    pool.install(|| execute(&parsed, &out_dir))
}

/// Accumulates output files and writes each one atomically.
struct Artifacts<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Artifacts<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), RunError> {
        let mut buf = Vec::new();
        body(&mut buf).map_err(io_err(name))?;
        atomic_write(&self.dir.join(name), &buf)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let ctx = path.display().to_string();
    let mut f = fs::File::create(&tmp).map_err(io_err(ctx.clone()))?;
    f.write_all(bytes).map_err(io_err(ctx.clone()))?;
    f.sync_all().map_err(io_err(ctx.clone()))?;
    fs::rename(&tmp, path).map_err(io_err(ctx))
}

fn execute(parsed: &ParsedConfig, out_dir: &Path) -> Result<RunOutcome, RunError> {
    let cfg = &parsed.config;
    let model = build_model(&cfg.model)?;
    let criterion = check_recurrence_criterion(&model, cfg.eps);
    if !criterion.recurrent {
        warn!("recurrence criterion not satisfied: {}", criterion.reason);
    }
    // filled in by parse_config
    let dt = cfg.dt.expect("dt resolved");
    let seed = cfg.seed.expect("seed resolved");
    let stride = cfg.record_stride.expect("record_stride resolved");
    let mut params = SimParams {
        dt,
        horizon: cfg.horizon.unwrap_or(1.0),
        seed,
        record_stride: stride,
    };
    let max_time = match (cfg.max_time, cfg.max_time_factor) {
        (Some(t), _) => MaxTime::Fixed(t),
        (None, Some(k)) => MaxTime::TheoryMultiple(k),
        (None, None) => MaxTime::default(),
    };

    fs::create_dir_all(out_dir).map_err(io_err(out_dir.display().to_string()))?;
    let mut art = Artifacts {
        dir: out_dir,
        files: Vec::new(),
    };
    info!("running `{}` into {}", cfg.command_name(), out_dir.display());

    let report: Value = match cfg.command {
        Command::Criterion => {
            art.write("results.csv", |w| {
                writeln!(w, "recurrent,a,b,eps,q,c,c_z0,c_z1")?;
                let k = criterion.constants;
                let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    criterion.recurrent,
                    criterion.a,
                    criterion.b,
                    f(k.map(|k| k.eps)),
                    f(k.map(|k| k.q)),
                    f(k.map(|k| k.c)),
                    f(k.map(|k| k.c_z0)),
                    f(k.map(|k| k.c_z1)),
                )
            })?;
            json!({ "bounds": model.bounds() })
        }
        Command::Simulate => {
            let x0 = cfg.x0.as_deref().expect("validated");
            let z0 = cfg.z0.expect("z0 resolved");
            let n = cfg.n_paths.expect("n_paths resolved");
            let mut rows = Vec::with_capacity(n);
            for i in 0..n as u64 {
                let path = simulate_path_indexed(&model, x0, z0, &params, i)?;
                art.write(&format!("path_{i}.csv"), |w| path.write_csv(w))?;
                let events = extract_switch_times(&path);
                art.write(&format!("events_{i}.csv"), |w| write_events_csv(&events, path.dim, w))?;
                rows.push((
                    i,
                    events.iter().filter(|e| !e.is_origin_marker()).count(),
                    *path.times.last().expect("path has a point"),
                    *path.zs.last().expect("path has a point"),
                    *path.min_abs_x_running.last().expect("path has a point"),
                ));
            }
            art.write("results.csv", |w| {
                writeln!(w, "path,n_switches,end_time,z_end,min_abs_x")?;
                for (i, k, t, z, m) in &rows {
                    writeln!(w, "{i},{k},{t},{z},{m}")?;
                }
                Ok(())
            })?;
            json!({ "n_paths": n })
        }
        Command::Hit | Command::Sweep => {
            let m1 = cfg.m1.expect("validated");
            let starts: Vec<Start> = match cfg.command {
                Command::Hit => vec![Start {
                    x0: cfg.x0.clone().expect("validated"),
                    z0: cfg.z0.expect("z0 resolved"),
                }],
                _ => cfg.starts.clone().expect("validated"),
            };
            let hit = HitConfig {
                m1,
                n_paths: cfg.n_paths.expect("n_paths resolved"),
                params,
                max_time,
                eps: cfg.eps,
            };
            let outside = starts
                .iter()
                .all(|s| s.x0.iter().map(|v| v * v).sum::<f64>().sqrt() > m1);
            // a sweep exists to check the bound, so it refuses when there is none
            if cfg.command == Command::Sweep || (criterion.recurrent && outside) {
                let report = verify_theorem_bound(&model, &starts, &hit)?;
                art.write("results.csv", |w| report.write_csv(w))?;
                json!({
                    "all_satisfied": report.all_satisfied(),
                    "rows": report.rows,
                })
            } else {
                // no bound to compare against: report the estimates alone
                let mut rows = Vec::new();
                for s in &starts {
                    let e = estimate_hitting_moment(&model, &s.x0, s.z0, &hit)?;
                    rows.push((s.clone(), e));
                }
                art.write("results.csv", |w| {
                    write_row_header(w, model.dim())?;
                    for (s, e) in &rows {
                        write_row(w, &s.x0, s.z0, e, None, None)?;
                    }
                    Ok(())
                })?;
                let rows: Vec<Value> = rows
                    .iter()
                    .map(|(s, e)| json!({"x0": s.x0, "z0": s.z0, "estimate": e}))
                    .collect();
                json!({ "rows": rows })
            }
        }
        Command::Drift => {
            let x0 = cfg.x0.as_deref().expect("validated");
            let z0 = cfg.z0.expect("z0 resolved");
            let r = lyapunov_drift_check(
                &model,
                x0,
                z0,
                cfg.m1.expect("validated"),
                cfg.n_paths.expect("n_paths resolved"),
                &params,
                cfg.eps,
            )?;
            art.write("results.csv", |w| {
                for i in 1..=r.x0.len() {
                    write!(w, "x0_{i},")?;
                }
                writeln!(w, "z0,n,n_censored,empirical_lhs,stderr,mean_switch_time,theory_rhs,satisfied")?;
                for v in &r.x0 {
                    write!(w, "{v},")?;
                }
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    r.z0,
                    r.n_paths,
                    r.n_censored,
                    r.empirical_lhs,
                    r.stderr,
                    r.mean_switch_time,
                    r.theory_rhs.map(|v| v.to_string()).unwrap_or_default(),
                    r.satisfied.map(|v| v.to_string()).unwrap_or_default(),
                )
            })?;
            serde_json::to_value(&r).expect("report serializes")
        }
        Command::Invariant => {
            let x0 = cfg.x0.as_deref().expect("validated");
            let z0 = cfg.z0.expect("z0 resolved");
            let horizon = cfg.horizon.expect("horizon resolved");
            params.horizon = horizon;
            let spec = HistogramSpec::default_for(
                cfg.m1.expect("validated"),
                model.dim(),
                cfg.bins.expect("bins resolved"),
            );
            let h = estimate_invariant_histogram(
                &model,
                x0,
                z0,
                cfg.burn_in.expect("burn_in resolved"),
                horizon,
                &spec,
                &params,
            )?;
            art.write("histogram.csv", |w| h.write_csv(w))?;
            art.write("results.csv", |w| {
                writeln!(w, "n_samples,out_of_range,total_mass")?;
                writeln!(w, "{},{},{}", h.n_samples, h.out_of_range, h.total_mass())
            })?;
            json!({ "spec": spec, "n_samples": h.n_samples, "out_of_range": h.out_of_range })
        }
    };

    let mut files = art.files.clone();
    files.push("manifest.json".to_string());
    let manifest = Manifest {
        tool: "switchdiff",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        defaults_applied: &parsed.defaults_applied,
        criterion: &criterion,
        report,
        files: &files,
    };
    let manifest = serde_json::to_value(&manifest).expect("manifest serializes");
    art.write("manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)
    })?;
    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        files,
        manifest,
    })
}
