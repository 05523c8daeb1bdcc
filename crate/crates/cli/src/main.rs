//! `delayctl synth | sim | table1`.

use clap::{Args, Parser, Subcommand};
use delayctl::gains::json::GainsFile;
use delayctl::model::{DelayModel, ModelSpecFile, SimOverrides, SynthesisOverrides, BUNDLED_EXAMPLES};
use delayctl::pipeline::{run_synthesis, simulate_to_files, PipelineConfig, RunReport, SynthRun};
use delayctl::reference::{gamma_min, judge, Verdict};
use delayctl::sdp::{ClarabelSolver, Solver, SolverSettings};
use delayctl::sim::{Disturbance, SimConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "delayctl", version, about = "Estimator-based H∞ output feedback for multi-delay systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize controller and observer gains and write a run report.
    Synth {
        /// Model spec file (TOML) or a bundled example name.
        model: String,
        #[command(flatten)]
        synth: SynthFlags,
        /// Also simulate the closed loop under the sinc and step disturbances.
        #[arg(long)]
        simulate: bool,
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop with a gains file.
    Sim {
        /// Model spec file (TOML) or a bundled example name.
        model: String,
        /// Gains JSON written by `synth`.
        #[arg(long)]
        gains: PathBuf,
        /// Report to append the simulation summary to (created if missing).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Run the bundled examples and compare against the reference levels.
    Table1 {
        /// Certificate degrees to run.
        #[arg(long = "degrees", value_delimiter = ',', default_values_t = [1usize, 2])]
        degrees: Vec<usize>,
        /// Add the degree-4 column.
        #[arg(long)]
        d4: bool,
        #[command(flatten)]
        synth: SynthFlags,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct SynthFlags {
    /// Certificate polynomial degree.
    #[arg(long)]
    degree: Option<usize>,
    /// Bisection bracket; found automatically when omitted.
    #[arg(long)]
    gamma_lo: Option<f64>,
    #[arg(long)]
    gamma_hi: Option<f64>,
    /// Coercivity margin of the storage operators.
    #[arg(long)]
    eps: Option<f64>,
    /// Strictness margins of the controller, estimator and coupling inequalities.
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    eps3: Option<f64>,
    /// Number of log-spaced points in the coupling sweep over r.
    #[arg(long)]
    r_sweep: Option<usize>,
}

#[derive(Args, Clone)]
struct SimFlags {
    /// Time step; chosen from the delays and gains when omitted.
    #[arg(long)]
    dt: Option<f64>,
    /// Grid points per delay channel.
    #[arg(long)]
    points_per_channel: Option<usize>,
    /// Simulated time; 40 times the largest delay when omitted.
    #[arg(long)]
    horizon: Option<f64>,
    /// `zero`, `step` or `sinc`, optionally `kind:key=value,...`.
    #[arg(long)]
    disturbance: Option<String>,
}

#[derive(Args, Clone)]
struct Common {
    /// Directory for reports, gains and traces.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Solver settings file (TOML or JSON).
    #[arg(long)]
    solver_settings: Option<PathBuf>,
}

type Res<T> = Result<T, String>;

impl SynthFlags {
    fn overrides(&self) -> SynthesisOverrides {
        SynthesisOverrides {
            degree: self.degree,
            gamma_lo: self.gamma_lo,
            gamma_hi: self.gamma_hi,
            gamma_tol: None,
            eps: self.eps,
            eps1: self.eps1,
            eps2: self.eps2,
            eps3: self.eps3,
            r_sweep: self.r_sweep,
        }
    }
}

impl SimFlags {
    fn overrides(&self) -> SimOverrides {
        SimOverrides {
            dt: self.dt,
            points_per_channel: self.points_per_channel,
            horizon: self.horizon,
            disturbance: self.disturbance.clone(),
            x0: None,
        }
    }
}

fn load_model(arg: &str) -> Res<(DelayModel, Option<ModelSpecFile>)> {
    if BUNDLED_EXAMPLES.contains(&arg) && !Path::new(arg).exists() {
        let text = delayctl::model::bundled_spec(arg).map_err(|e| e.to_string())?;
        let (m, spec) = DelayModel::from_toml_str(text).map_err(|e| format!("{arg}: {e}"))?;
        return Ok((m, Some(spec)));
    }
    let (m, spec) = DelayModel::from_file(Path::new(arg)).map_err(|e| format!("{arg}: {e}"))?;
    Ok((m, Some(spec)))
}

fn load_solver(path: &Option<PathBuf>) -> Res<SolverSettings> {
    let Some(p) = path else { return Ok(SolverSettings::default()) };
    let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let parsed = if p.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| format!("{}: {e}", p.display()))
}

fn pipeline_config(spec: Option<&ModelSpecFile>, flags: &SynthFlags, solver: SolverSettings) -> PipelineConfig {
    let mut cfg = PipelineConfig { solver, ..Default::default() };
    if let Some(o) = spec.and_then(|s| s.synthesis.as_ref()) {
        cfg.apply_overrides(o);
    }
    cfg.apply_overrides(&flags.overrides());
    cfg
}

fn sim_config(spec: Option<&ModelSpecFile>, flags: &SimFlags) -> Res<SimConfig> {
    let mut cfg = SimConfig { record_channels: false, ..Default::default() };
    if let Some(o) = spec.and_then(|s| s.sim.as_ref()) {
        cfg.apply_overrides(o).map_err(|e| e.to_string())?;
    }
    cfg.apply_overrides(&flags.overrides()).map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_stages(report: &RunReport) {
    for s in &report.stages {
        let mark = if s.ok { "ok  " } else { "FAIL" };
        match &s.error {
            Some(e) => eprintln!("  [{mark}] {:<26} {:8.2}s  {e}", s.stage, s.seconds),
            None => eprintln!("  [{mark}] {:<26} {:8.2}s", s.stage, s.seconds),
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn cmd_synth(model: &str, synth: &SynthFlags, simulate: bool, sim: &SimFlags, common: &Common) -> Res<bool> {
    let (m, spec) = load_model(model)?;
    let cfg = pipeline_config(spec.as_ref(), synth, load_solver(&common.solver_settings)?);
    let sim_base = sim_config(spec.as_ref(), sim)?;
    std::fs::create_dir_all(&common.out_dir).map_err(|e| format!("{}: {e}", common.out_dir.display()))?;
    let solver = ClarabelSolver::new(cfg.solver.clone());
    let SynthRun { mut report, gains, gains_file, .. } = run_synthesis(&m, &cfg, &solver);

    if let Some(f) = &gains_file {
        let p = common.out_dir.join(format!("{}.gains.json", m.name));
        write(&p, &f.to_json())?;
        eprintln!("wrote {}", p.display());
    }
    if simulate {
        match &gains {
            Some((k, l)) => {
                let kinds = match &sim.disturbance {
                    Some(_) => vec![sim_base.disturbance.clone()],
                    None => vec![Disturbance::sinc(), Disturbance::step_like()],
                };
                let prov = gains_file.as_ref().map(|f| &f.provenance);
                let results: Vec<_> = std::thread::scope(|s| {
                    let handles: Vec<_> = kinds
                        .iter()
                        .map(|d| {
                            let c = SimConfig { disturbance: d.clone(), ..sim_base.clone() };
                            let stem = format!("{}-{}", m.name, d.label());
                            let out = &common.out_dir;
                            let m = &m;
                            s.spawn(move || (d.label(), simulate_to_files(m, k, l, &c, out, &stem, prov)))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("simulation panicked")).collect()
                });
                for (label, (summary, res)) in results {
                    report.record(&format!("sim-{label}"), 0.0, res);
                    if let Some(s) = summary {
                        report.simulations.push(s);
                    }
                }
            }
            None => {
                report.record::<(), _>("simulation", 0.0, Err("no gains to simulate"));
            }
        }
    }
    let p = common.out_dir.join(format!("{}.report.json", m.name));
    write(&p, &report.to_json())?;
    eprintln!("wrote {}", p.display());
    println!(
        "{}: γ1 = {}  γ2 = {}  r = {}  composite = {}",
        m.name,
        fmt(report.gamma1),
        fmt(report.gamma2),
        report.r.map_or("-".into(), |r| format!("{r:.3e}")),
        fmt(report.composite)
    );
    for s in &report.simulations {
        println!("  sim {}: estimated gain {}", s.disturbance, fmt(s.estimated_gain));
    }
    print_stages(&report);
    Ok(report.ok())
}

fn cmd_sim(model: &str, gains: &Path, report: &Option<PathBuf>, sim: &SimFlags, common: &Common) -> Res<bool> {
    let (m, spec) = load_model(model)?;
    let cfg = sim_config(spec.as_ref(), sim)?;
    let text = std::fs::read_to_string(gains).map_err(|e| format!("{}: {e}", gains.display()))?;
    let file = GainsFile::from_json(&text).map_err(|e| format!("{}: {e}", gains.display()))?;
    let (k, l) = file.decode(&m).map_err(|e| format!("{}: {e}", gains.display()))?;
    std::fs::create_dir_all(&common.out_dir).map_err(|e| format!("{}: {e}", common.out_dir.display()))?;
    let stem = format!("{}-{}", m.name, cfg.disturbance.label());
    let (summary, res) = simulate_to_files(&m, &k, &l, &cfg, &common.out_dir, &stem, Some(&file.provenance));

    let rpath = report.clone().unwrap_or_else(|| common.out_dir.join(format!("{}.report.json", m.name)));
    let mut rep = match std::fs::read_to_string(&rpath) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| format!("{}: {e}", rpath.display()))?,
        Err(_) => {
            let solver = ClarabelSolver::new(load_solver(&common.solver_settings)?);
            RunReport::new(&m, &PipelineConfig::default(), solver.name())
        }
    };
    let ok = res.is_ok();
    if let Err(e) = &res {
        eprintln!("{e}");
    }
    rep.record(&format!("sim-{}", cfg.disturbance.label()), 0.0, res);
    if let Some(s) = &summary {
        println!(
            "{}: estimated gain {}  max ‖x‖ {:.3e}  final ‖e‖ {:.3e}",
            s.disturbance,
            fmt(s.estimated_gain),
            s.max_state_norm,
            s.final_e_norm
        );
        for f in &s.files {
            eprintln!("wrote {f}");
        }
        rep.simulations.push(s.clone());
    }
    write(&rpath, &rep.to_json())?;
    Ok(ok)
}

#[derive(Serialize)]
struct Cell {
    example: String,
    degree: usize,
    which: &'static str,
    value: Option<f64>,
    reference: f64,
    relative: Option<f64>,
    verdict: Option<Verdict>,
}

fn cmd_table1(degrees: &[usize], d4: bool, synth: &SynthFlags, common: &Common) -> Res<bool> {
    let mut degrees = degrees.to_vec();
    if d4 && !degrees.contains(&4) {
        degrees.push(4);
    }
    let solver_settings = load_solver(&common.solver_settings)?;
    std::fs::create_dir_all(&common.out_dir).map_err(|e| format!("{}: {e}", common.out_dir.display()))?;
    let mut jobs = Vec::new();
    for ex in BUNDLED_EXAMPLES {
        let (m, spec) = load_model(ex)?;
        for &d in &degrees {
            let mut flags = synth.clone();
            flags.degree = Some(d);
            jobs.push((m.clone(), d, pipeline_config(spec.as_ref(), &flags, solver_settings.clone())));
        }
    }
    // Cells are memory hungry; run at most one per core.
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((m, d, cfg)) = jobs.get(i) else { break };
                let solver = ClarabelSolver::new(cfg.solver.clone());
                let rep = run_synthesis(m, cfg, &solver).report;
                eprintln!("{} d={d}: {:.1}s", m.name, rep.total_seconds);
                done.lock().expect("no poisoned cells").push((i, m.name.clone(), *d, rep));
            });
        }
    });
    let mut runs = done.into_inner().expect("no poisoned cells");
    runs.sort_by_key(|r| r.0);
    let runs: Vec<(String, usize, RunReport)> = runs.into_iter().map(|(_, n, d, r)| (n, d, r)).collect();

    let mut cells = Vec::new();
    let mut all_ok = true;
    println!("{:<9} {:>2} {:>3} {:>9} {:>9} {:>8}  verdict", "example", "d", "γ", "value", "reference", "rel");
    for (name, d, rep) in &runs {
        all_ok &= rep.ok();
        write(&common.out_dir.join(format!("{name}-d{d}.report.json")), &rep.to_json())?;
        let Some((r1, r2)) = gamma_min(name, *d) else { continue };
        for (which, value, reference) in [("γ1", rep.gamma1, r1), ("γ2", rep.gamma2, r2)] {
            let (relative, verdict) = match value.map(|v| judge(v, reference)) {
                Some((r, v)) => (Some(r), Some(v)),
                None => (None, None),
            };
            let label = match verdict {
                Some(Verdict::Match) => "match",
                Some(Verdict::Conservative) => "conservative",
                Some(Verdict::Miss) => "MISS",
                None => "ERROR",
            };
            println!(
                "{name:<9} {d:>2} {which:>3} {:>9} {reference:>9.4} {:>8}  {label}",
                fmt(value),
                relative.map_or("-".into(), |r| format!("{:+.1}%", 100.0 * r))
            );
            cells.push(Cell { example: name.clone(), degree: *d, which, value, reference, relative, verdict });
        }
    }
    for (name, d, rep) in &runs {
        for st in rep.stages.iter().filter(|s| !s.ok) {
            eprintln!("{name} d={d}: {} failed: {}", st.stage, st.error.as_deref().unwrap_or(""));
        }
    }
    let p = common.out_dir.join("table1.json");
    write(&p, &serde_json::to_string_pretty(&cells).expect("cells serialize"))?;
    eprintln!("wrote {}", p.display());
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Cmd::Synth { model, synth, simulate, sim, common } => cmd_synth(model, synth, *simulate, sim, common),
        Cmd::Sim { model, gains, report, sim, common } => cmd_sim(model, gains, report, sim, common),
        Cmd::Table1 { degrees, d4, synth, common } => cmd_table1(degrees, *d4, synth, common),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
