//! Solver dispatch and artifact emission.

use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pairgen_core::analysis::{compare_solvers, CompareOptions};
use pairgen_core::bogoliubov_k::{dispersion, instability_report, scan, summary_rows, InstabilityTolerance};
use pairgen_core::bogoliubov_real::{bdg_series, disorder_average_with, DisorderOptions};
use pairgen_core::dtwa::{run_experiment, DtwaConfig, IntegratorConfig};
use pairgen_core::ed_oracle::ed_system;
use pairgen_core::io_schema::{write_csv, write_json, Cell, JsonSchemaId, SchemaId};
use pairgen_core::lattice::{build_bilayer, sample_filling_with, LatticeSpec};
use pairgen_core::observables::ObservableSeries;
use pairgen_core::Error;

use crate::config::{ConfigError, RunConfig, Solver};

pub const GIT_DESCRIBE: &str = env!("PAIRGEN_GIT_DESCRIBE");

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(Error),
    #[error("output failed: {0}")]
    Io(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        let io = match &e {
            Error::Io(_) => true,
            Error::Csv(c) => c.is_io_error(),
            _ => false,
        };
        if io {
            RunError::Io(e)
        } else {
            RunError::Solver(e)
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    seed: u64,
    git_describe: &'static str,
    wall_time_s: f64,
    solver: &'static str,
    command: &'static str,
    threads: usize,
    results: Value,
}

fn write_manifest(cfg: &RunConfig, command: &'static str, started: Instant, results: Value) -> Result<(), RunError> {
    let m = Manifest {
        config: cfg,
        seed: cfg.run.seed,
        git_describe: GIT_DESCRIBE,
        wall_time_s: started.elapsed().as_secs_f64(),
        solver: cfg.run.solver.as_str(),
        command,
        threads: rayon::current_num_threads(),
        results,
    };
    write_json(&cfg.output.dir.join("manifest.json"), &m, JsonSchemaId::Manifest)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io(Error::Io(e)))
}

fn times(cfg: &RunConfig) -> Vec<f64> {
    cfg.times().expect("validated")
}

fn series_summary(s: &ObservableSeries) -> Value {
    json!({ "t10": s.t10, "n_occ": s.n_occ, "final_n_pair": s.n_pair.last() })
}

fn dtwa_config(cfg: &RunConfig, spec: LatticeSpec) -> Result<DtwaConfig, RunError> {
    let mut d = DtwaConfig::new(spec, cfg.model()?, times(cfg));
    d.filling = cfg.run.f;
    d.filling_mode = cfg.run.filling_mode;
    d.n_realizations = cfg.run.n_realizations;
    d.n_traj = cfg.run.n_traj;
    d.seed = cfg.run.seed;
    d.integrator = IntegratorConfig { rtol: cfg.run.rtol, atol: cfg.run.rtol * 1e-3, ..Default::default() };
    d.batch_size = cfg.run.batch_size;
    d.correlations = cfg.run.correlations;
    Ok(d)
}

fn run_bogoliubov(cfg: &RunConfig, dir: &Path) -> Result<(Value, Option<ObservableSeries>), RunError> {
    let geom = build_bilayer(cfg.spec()?)?;
    let field = dispersion(&geom, &cfg.model()?)?;
    field.write_csv(&dir.join(SchemaId::Dispersion.file_name()))?;
    let report = instability_report(&field, &InstabilityTolerance::default());
    report.write_json(&dir.join("report.json"))?;
    let mut out = json!({
        "gamma": report.gamma,
        "topology": report.topology.as_str(),
        "component_count": report.component_count,
        "bias": field.bias,
    });
    let series = cfg.times().map(|t| field.series(&t));
    if let Some(s) = &series {
        s.write_csvs(dir)?;
        out["series"] = series_summary(s);
    }
    Ok((out, series))
}

fn run_bdg(cfg: &RunConfig, dir: &Path) -> Result<(Value, ObservableSeries), RunError> {
    let spec = cfg.spec()?;
    let params = cfg.model()?;
    let t = times(cfg);
    let opts = DisorderOptions { mode: cfg.run.filling_mode };
    let r = &cfg.run;
    let series = if r.n_realizations == 1 {
        let geom = build_bilayer(spec)?;
        let fill = sample_filling_with(&geom, r.f, r.seed, 0, r.filling_mode)?;
        bdg_series(&geom, &fill, &params, &t)?
    } else {
        disorder_average_with(&spec, &params, r.f, &t, r.n_realizations, r.seed, opts)?.series
    };
    series.write_csvs(dir)?;
    // distribution at t10, or at the last sample if the threshold is never reached
    let t_eval = series.t10.unwrap_or(*t.last().unwrap());
    let at = disorder_average_with(&spec, &params, r.f, &[t_eval], r.n_realizations, r.seed, opts)?;
    let rows: Vec<Vec<Cell>> = series
        .grid
        .momenta
        .iter()
        .enumerate()
        .map(|(k, m)| vec![m[0].into(), m[1].into(), at.nk_mean[0][k].into(), at.nk_stderr[0][k].into()])
        .collect();
    write_csv(&dir.join(SchemaId::NkAvg.file_name()), SchemaId::NkAvg, &rows)?;
    let mut out = series_summary(&series);
    out["nk_avg_time"] = json!(t_eval);
    out["n_realizations"] = json!(r.n_realizations);
    Ok((out, series))
}

fn run_dtwa(cfg: &RunConfig, dir: &Path) -> Result<(Value, ObservableSeries), RunError> {
    let run = run_experiment(&dtwa_config(cfg, cfg.spec()?)?)?;
    run.series.write_csvs(dir)?;
    let mut out = series_summary(&run.series);
    out["trajectories"] = json!(run.n_samples);
    out["integrator"] = serde_json::to_value(run.stats).map_err(Error::from)?;
    out["energy_drift"] = json!(run.energy_drift);
    Ok((out, run.series))
}

fn run_ed(cfg: &RunConfig, dir: &Path) -> Result<(Value, ObservableSeries), RunError> {
    let geom = build_bilayer(cfg.spec()?)?;
    let r = &cfg.run;
    let fill = sample_filling_with(&geom, r.f, r.seed, 0, r.filling_mode)?;
    let sys = ed_system(&geom, &fill, &cfg.model()?)?;
    let series = sys.series(&geom, &times(cfg))?;
    series.write_csvs(dir)?;
    let mut out = series_summary(&series);
    out["sector_dimension"] = json!(sys.dim());
    Ok((out, series))
}

fn run_compare(cfg: &RunConfig, dir: &Path) -> Result<Value, RunError> {
    let sub = |name: &str| -> Result<PathBuf, RunError> {
        let d = dir.join(name);
        create_dir(&d)?;
        Ok(d)
    };
    let (bogo_out, bogo) = run_bogoliubov(cfg, &sub("bogoliubov-k")?)?;
    let (bdg_out, bdg) = run_bdg(cfg, &sub("bdg-real")?)?;
    let (dtwa_out, dtwa) = run_dtwa(cfg, &sub("dtwa")?)?;
    let bogo = bogo.expect("compare validated with times");
    let report = compare_solvers(&[("bogoliubov-k", &bogo), ("bdg-real", &bdg), ("dtwa", &dtwa)], &CompareOptions::default())?;
    report.write_json(&dir.join("comparison.json"))?;
    Ok(json!({
        "bogoliubov-k": bogo_out,
        "bdg-real": bdg_out,
        "dtwa": dtwa_out,
        "regime_one_end": report.regime_one_end,
        "max_mode_deviation": report.pairs.iter().map(|p| (p.solver.clone(), json!(p.max_mode_deviation))).collect::<serde_json::Map<_, _>>(),
    }))
}

/// `pairgen run`: validates, then writes all artifacts into the output directory.
pub fn run(mut cfg: RunConfig, overrides: &Overrides) -> Result<PathBuf, RunError> {
    overrides.apply(&mut cfg);
    cfg.validate(false)?;
    let started = Instant::now();
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    let results = match cfg.run.solver {
        Solver::BogoliubovK => run_bogoliubov(&cfg, &dir)?.0,
        Solver::BdgReal => run_bdg(&cfg, &dir)?.0,
        Solver::Dtwa => run_dtwa(&cfg, &dir)?.0,
        Solver::Ed => run_ed(&cfg, &dir)?.0,
        Solver::Compare => run_compare(&cfg, &dir)?,
    };
    write_manifest(&cfg, "run", started, results)?;
    Ok(dir)
}

/// `pairgen scan`: one dispersion and report per grid value plus `summary.csv`.
pub fn scan_grid(mut cfg: RunConfig, overrides: &Overrides) -> Result<PathBuf, RunError> {
    overrides.apply(&mut cfg);
    cfg.validate(true)?;
    let started = Instant::now();
    let grid = cfg.scan.clone().expect("validated");
    let geom = build_bilayer(cfg.spec()?)?;
    let points = scan(&geom, &cfg.model()?, grid.param, &grid.values, &InstabilityTolerance::default())?;
    let dir = cfg.output.dir.clone();
    create_dir(&dir)?;
    for (i, p) in points.iter().enumerate() {
        let d = dir.join(format!("point_{i:03}"));
        create_dir(&d)?;
        p.field.write_csv(&d.join(SchemaId::Dispersion.file_name()))?;
        p.report.write_json(&d.join("report.json"))?;
    }
    write_csv(&dir.join(SchemaId::Summary.file_name()), SchemaId::Summary, &summary_rows(&points))?;
    let results = json!({ "points": points.len(), "param": grid.param });
    write_manifest(&cfg, "scan", started, results)?;
    Ok(dir)
}
