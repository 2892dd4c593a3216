//! `mmc` command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::analysis::{
    self, compare_traces, eigenvalues, find_equilibrium, linearize_closed_loop, linearize_plant, mean,
    project_aam_trace, steady_state_windows, window_range, CompareReport, LinearModel, COMPARED_CHANNELS,
};
use crate::control::Refs;
use crate::params::{load_params_file, MmcParams};
use crate::sim::{aam_state_from_ssti, run_scenario_with, Model, RunOptions, RunResult, Scenario, TraceLog};

/// Environment variable naming the directory that holds `params.toml`.
pub const CONFIG_DIR_ENV: &str = "MMC_CONFIG_DIR";

/// Exit status for a missing input file.
pub const EXIT_MISSING_INPUT: i32 = 2;
/// Exit status for a failed run, exceeded bound, or solver failure.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "mmc", version, about = "MMC arm-averaged and SSTI dqz model toolkit")]
pub struct Cli {
    /// Parameter file; defaults to $MMC_CONFIG_DIR/params.toml, then the built-in rated set.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one or both models and write trace CSVs.
    Run(RunArgs),
    /// Run both models (or read two traces) and write the error report.
    Compare(CompareArgs),
    /// Equilibrium, state-space matrices and spectrum at an operating point.
    Linearize(OpArgs),
    /// Spectrum of a matrix CSV or of the closed loop at an operating point.
    Eig(EigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSel {
    Aam,
    Ssti,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Start {
    /// Zero currents, arm capacitors at the dc voltage.
    Flat,
    /// Equilibrium of the initial references.
    Warm,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Integration step in seconds (both models when `both`).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = Start::Warm)]
    pub start: Start,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long, value_enum, default_value_t = ModelSel::Both)]
    pub model: ModelSel,
    /// Write traces in per unit instead of SI.
    #[arg(long)]
    pub pu: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Compare two existing trace CSVs instead of simulating.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub traces: Option<Vec<PathBuf>>,
    /// Adds a 6ω disturbance of this amplitude to the SSTI modulation.
    #[arg(long = "inject-6w", hide = true, default_value_t = 0.0)]
    pub inject_6w: f64,
}

#[derive(Debug, Args)]
pub struct OpArgs {
    #[arg(long = "p", allow_hyphen_values = true)]
    pub p_ref: f64,
    #[arg(long = "q", allow_hyphen_values = true, default_value_t = 0.0)]
    pub q_ref: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EigArgs {
    /// Square matrix CSV without header.
    #[arg(long, conflicts_with_all = ["p_ref", "q_ref"])]
    pub matrix: Option<PathBuf>,
    #[arg(long = "p", allow_hyphen_values = true)]
    pub p_ref: Option<f64>,
    #[arg(long = "q", allow_hyphen_values = true)]
    pub q_ref: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Error carrying its exit status.
#[derive(Debug)]
pub struct Exit(pub i32, pub anyhow::Error);

fn missing(path: &Path) -> Exit {
    Exit(EXIT_MISSING_INPUT, anyhow!("no such file: {}", path.display()))
}

fn fail(e: impl Into<anyhow::Error>) -> Exit {
    Exit(EXIT_FAILURE, e.into())
}

fn require(path: &Path) -> Result<(), Exit> {
    if path.is_file() {
        Ok(())
    } else {
        Err(missing(path))
    }
}

/// Parses arguments, runs the command, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            code
        }
    }
}

fn load_params(cli: &Cli) -> Result<MmcParams, Exit> {
    let path = match &cli.params {
        Some(p) => Some(p.clone()),
        None => std::env::var_os(CONFIG_DIR_ENV).map(|d| PathBuf::from(d).join("params.toml")).filter(|p| p.is_file()),
    };
    match path {
        Some(p) => {
            require(&p)?;
            load_params_file(&p).map_err(|e| fail(anyhow!("{}: {e}", p.display())))
        }
        None => Ok(MmcParams::rated()),
    }
}

fn dispatch(cli: &Cli) -> Result<(), Exit> {
    let p = load_params(cli)?;
    match &cli.cmd {
        Command::Run(a) => cmd_run(&p, a),
        Command::Compare(a) => cmd_compare(&p, a),
        Command::Linearize(a) => cmd_linearize(&p, a),
        Command::Eig(a) => cmd_eig(&p, a),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Exit> {
    require(path)?;
    Scenario::load(path).map_err(fail)
}

fn initial_state(model: Model, sc: &Scenario, p: &MmcParams, start: Start) -> Result<Option<[f64; 16]>, Exit> {
    if start == Start::Flat {
        return Ok(None);
    }
    let eq = find_equilibrium(p, Refs::new(sc.initial.p_ref, sc.initial.q_ref)).map_err(fail)?;
    let x = eq.loop_state();
    Ok(Some(match model {
        Model::Ssti => x,
        Model::Aam => aam_state_from_ssti(&x, p, 0.0),
    }))
}

fn simulate(
    models: &[Model],
    sc: &Scenario,
    p: &MmcParams,
    a: &SimArgs,
    inject_6w: f64,
) -> Result<Vec<RunResult>, Exit> {
    let opts: Vec<RunOptions> = models
        .iter()
        .map(|&m| {
            Ok(RunOptions {
                dt: a.dt,
                initial: initial_state(m, sc, p, a.start)?,
                detune_6w: if m == Model::Ssti { inject_6w } else { 0.0 },
            })
        })
        .collect::<Result<_, Exit>>()?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> =
            models.iter().zip(&opts).map(|(&m, o)| s.spawn(move || run_scenario_with(m, sc, p, o))).collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut out = Vec::new();
    for r in results {
        let r = r.map_err(fail)?;
        if r.range_flagged() {
            let first = r.range_events[0];
            eprintln!(
                "warning: {} insertion index left [0, 1] {} times (first at t = {} s, phase {}, {} arm, m = {})",
                r.model,
                r.range_event_count,
                first.t,
                ["a", "b", "c"][first.violation.phase],
                if first.violation.upper { "upper" } else { "lower" },
                first.violation.value
            );
        }
        out.push(r);
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>, Exit> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot write {}", path.display())).map_err(fail)
}

fn ensure_dir(dir: &Path) -> Result<(), Exit> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(fail)
}

fn write_trace(tr: &TraceLog, path: &Path) -> Result<(), Exit> {
    tr.write_csv(create(path)?).map_err(fail)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_run(p: &MmcParams, a: &RunArgs) -> Result<(), Exit> {
    let sc = load_scenario(&a.sim.scenario)?;
    let models = match a.model {
        ModelSel::Aam => vec![Model::Aam],
        ModelSel::Ssti => vec![Model::Ssti],
        ModelSel::Both => vec![Model::Aam, Model::Ssti],
    };
    let runs = simulate(&models, &sc, p, &a.sim, 0.0)?;
    ensure_dir(&a.sim.out)?;
    for r in &runs {
        let tr = if a.pu { r.trace.to_pu(p) } else { r.trace.clone() };
        write_trace(&tr, &a.sim.out.join(format!("{}.csv", r.model)))?;
    }
    Ok(())
}

fn is_aam_trace(tr: &TraceLog) -> bool {
    tr.get("i_delta_a").is_some()
}

fn read_trace(path: &Path) -> Result<TraceLog, Exit> {
    require(path)?;
    let f = File::open(path).map_err(fail)?;
    TraceLog::read_csv(f).map_err(|e| fail(anyhow!("{}: {e}", path.display())))
}

/// A bound the comparison is held to.
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Bound {
    pub fn ok(&self) -> bool {
        self.value < self.limit
    }
}

fn power_bias(tr: &TraceLog, windows: &[(f64, f64)]) -> Option<f64> {
    let mut worst = 0.0_f64;
    for &w in windows {
        let (i0, i1) = window_range(tr, w);
        for (m, r) in [("p", "p_ref"), ("q", "q_ref")] {
            let x = tr.get(m)?;
            worst = worst.max((mean(&x[i0..i1]) - tr.get(r)?[i0]).abs());
        }
    }
    Some(worst)
}

/// Cross-model bounds: RMS over the run for iΔdq, vCΔdq, vCΣdqz, iΣz;
/// window bias for iΣdq; vCΔz RMS over the steady windows; P/Q bias.
pub fn comparison_bounds(rep: &CompareReport, a: &TraceLog, b: &TraceLog, p: &MmcParams) -> Vec<Bound> {
    let rms = |n: &str| rep.get(n).map(|c| c.rms).unwrap_or(f64::NAN);
    let bias = |n: &str| rep.get(n).map(|c| c.bias).unwrap_or(f64::NAN);
    let mut out = Vec::new();
    let mut push = |name: &str, value: f64, limit: f64| out.push(Bound { name: name.into(), value, limit });
    for n in ["i_delta_d", "i_delta_q", "i_sigma_z"] {
        push(&format!("{n} rms"), rms(n), 1e-3);
    }
    for n in ["v_c_delta_d", "v_c_delta_q"] {
        push(&format!("{n} rms"), rms(n), 2e-3);
    }
    for n in ["v_c_sigma_d", "v_c_sigma_q", "v_c_sigma_z"] {
        push(&format!("{n} rms"), rms(n), 5e-3);
    }
    for n in ["i_sigma_d", "i_sigma_q"] {
        push(&format!("{n} bias"), bias(n), 1e-3);
    }
    if let (Ok((a, b)), Some(_)) = (analysis::align(a, b), rep.get("v_c_delta_z")) {
        if let (Some(x), Some(y)) = (a.get_pu("v_c_delta_z", p), b.get_pu("v_c_delta_z", p)) {
            let (mut sq, mut n) = (0.0, 0usize);
            for &w in &rep.windows {
                let (i0, i1) = window_range(&a, w);
                sq += (i0..i1).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>();
                n += i1 - i0;
            }
            push("v_c_delta_z steady rms", (sq / n.max(1) as f64).sqrt(), 2e-3);
        }
        for (label, tr) in [("a", &a), ("b", &b)] {
            if let Some(v) = power_bias(tr, &rep.windows) {
                push(&format!("p/q bias ({label})"), v, 1e-3);
            }
        }
    }
    out
}

pub fn cmd_compare(p: &MmcParams, a: &CompareArgs) -> Result<(), Exit> {
    let sc = load_scenario(&a.sim.scenario)?;
    let (ta, tb) = match &a.traces {
        Some(paths) => (read_trace(&paths[0])?, read_trace(&paths[1])?),
        None => {
            let runs = simulate(&[Model::Aam, Model::Ssti], &sc, p, &a.sim, a.inject_6w)?;
            (runs[0].trace.clone(), runs[1].trace.clone())
        }
    };
    let project = |t: TraceLog| if is_aam_trace(&t) { project_aam_trace(&t, p).map_err(fail) } else { Ok(t) };
    let (ta, tb) = (project(ta)?, project(tb)?);
    let windows = steady_state_windows(&sc, p.f_nominal(), 0.3);
    let rep = compare_traces(&ta, &tb, &COMPARED_CHANNELS, &windows, p).map_err(fail)?;
    ensure_dir(&a.sim.out)?;
    let path = a.sim.out.join("compare.csv");
    rep.write_csv(create(&path)?).map_err(fail)?;
    print!("{}", rep.summary());
    println!("wrote {}", path.display());
    let bounds = comparison_bounds(&rep, &ta, &tb, p);
    let mut exceeded = 0;
    for b in &bounds {
        println!("{} {:<24} {:.3e} (limit {:.0e})", if b.ok() { "ok  " } else { "OVER" }, b.name, b.value, b.limit);
        exceeded += usize::from(!b.ok());
    }
    if exceeded > 0 {
        return Err(fail(anyhow!("{exceeded} comparison bound(s) exceeded")));
    }
    Ok(())
}

fn write_matrix(m: &DMatrix<f64>, rows: &[String], cols: &[String], path: &Path) -> Result<(), Exit> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    let mut header = vec![String::new()];
    header.extend(cols.iter().cloned());
    wr.write_record(&header).map_err(fail)?;
    for r in 0..m.nrows() {
        let mut row = vec![rows[r].clone()];
        row.extend((0..m.ncols()).map(|c| format!("{:.8e}", m[(r, c)])));
        wr.write_record(&row).map_err(fail)?;
    }
    wr.flush().map_err(fail)?;
    Ok(())
}

fn write_spectrum(ev: &[nalgebra::Complex<f64>], path: &Path) -> Result<(), Exit> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record(["re", "im", "freq_hz", "damping"]).map_err(fail)?;
    for e in ev {
        let f = e.im.abs() / (2.0 * std::f64::consts::PI);
        let zeta = -e.re / e.norm();
        wr.write_record([format!("{:.8e}", e.re), format!("{:.8e}", e.im), format!("{f:.8e}"), format!("{zeta:.8e}")])
            .map_err(fail)?;
    }
    wr.flush().map_err(fail)?;
    Ok(())
}

fn write_model(lm: &LinearModel, prefix: &str, out: &Path) -> Result<Vec<nalgebra::Complex<f64>>, Exit> {
    write_matrix(&lm.a_matrix, &lm.state_labels, &lm.state_labels, &out.join(format!("{prefix}A.csv")))?;
    write_matrix(&lm.b_matrix, &lm.state_labels, &lm.input_labels, &out.join(format!("{prefix}B.csv")))?;
    let ev = eigenvalues(&lm.a_matrix).map_err(fail)?;
    write_spectrum(&ev, &out.join(format!("{prefix}eigenvalues.csv")))?;
    Ok(ev)
}

fn print_modes(title: &str, ev: &[nalgebra::Complex<f64>], n: usize) {
    println!("{title}:");
    for e in ev.iter().filter(|e| e.im >= 0.0).take(n) {
        println!(
            "  {:>10.3} {:+12.3}j  ({:.2} Hz, damping {:.3})",
            e.re,
            e.im,
            e.im / (2.0 * std::f64::consts::PI),
            -e.re / e.norm()
        );
    }
}

pub fn cmd_linearize(p: &MmcParams, a: &OpArgs) -> Result<(), Exit> {
    let eq = find_equilibrium(p, Refs::new(a.p_ref, a.q_ref)).map_err(fail)?;
    ensure_dir(&a.out)?;
    let mut wr = csv::Writer::from_writer(create(&a.out.join("equilibrium.csv"))?);
    wr.write_record(["name", "value", "unit"]).map_err(fail)?;
    let labels = analysis::loop_labels();
    for (i, (n, v)) in labels.iter().zip(eq.loop_state()).enumerate() {
        let unit = match i {
            0..=6 => "V",
            7..=11 => "A",
            _ => "pu*s",
        };
        wr.write_record([n.as_str(), &format!("{v:.8e}"), unit]).map_err(fail)?;
    }
    for (n, v) in crate::ssti::SSTI_INPUT_LABELS.iter().zip(eq.u_star.to_array()) {
        wr.write_record([*n, &format!("{v:.8e}"), "pu"]).map_err(fail)?;
    }
    wr.write_record(["residual", &format!("{:.8e}", eq.residual_norm), "pu/s"]).map_err(fail)?;
    wr.flush().map_err(fail)?;

    let closed = linearize_closed_loop(p, &eq).map_err(fail)?;
    let ev = write_model(&closed, "", &a.out)?;
    let plant = linearize_plant(p, &eq).map_err(fail)?;
    let pev = write_model(&plant, "plant_", &a.out)?;
    println!(
        "equilibrium at p = {}, q = {}: residual {:.2e} pu/s after {} Newton steps",
        a.p_ref, a.q_ref, eq.residual_norm, eq.iterations
    );
    println!(
        "vCΣz* = {:.4} pu, iΣz* = {:.4} pu",
        eq.x_star.v_c_sigma[2] / p.v_base_dc(),
        eq.x_star.i_sigma[2] / p.i_base()
    );
    print_modes("dominant closed-loop modes", &ev, 4);
    print_modes("dominant open-loop plant modes", &pev, 4);
    println!("wrote equilibrium.csv, A.csv, B.csv, eigenvalues.csv, plant_*.csv to {}", a.out.display());
    if ev[0].re >= 0.0 {
        eprintln!("warning: closed loop is not asymptotically stable (max Re = {})", ev[0].re);
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, Exit> {
    require(path)?;
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(fail)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(fail)?;
        let row: Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| fail(anyhow!("{}: {e}", path.display())))?);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(fail(anyhow!("{} is not a square matrix", path.display())));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}

pub fn cmd_eig(p: &MmcParams, a: &EigArgs) -> Result<(), Exit> {
    let m = match (&a.matrix, a.p_ref) {
        (Some(path), _) => read_matrix(path)?,
        (None, Some(pr)) => {
            let eq = find_equilibrium(p, Refs::new(pr, a.q_ref.unwrap_or(0.0))).map_err(fail)?;
            linearize_closed_loop(p, &eq).map_err(fail)?.a_matrix
        }
        (None, None) => return Err(fail(anyhow!("give --matrix FILE or --p P [--q Q]"))),
    };
    let ev = eigenvalues(&m).map_err(fail)?;
    for e in &ev {
        println!("{:.8e} {:+.8e}j", e.re, e.im);
    }
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        write_spectrum(&ev, out)?;
    }
    Ok(())
}
