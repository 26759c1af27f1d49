use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use hexcool::analysis::{
    compare_layouts, default_threads, knee, min_flow_for_cap, peak_at_flow, summarize, sweep, SweepResult,
    SUMMARY_PROBE,
};
use hexcool::geometry::LatticeVariant;
use hexcool::scenarios::{
    calibrate_ambient, calibrate_reference, get, registry, Scenario, BENCH_SURFACE_T, BENCH_VOLTS, BENCH_AMPS,
    MODULE, REFERENCE_PEAK_T, T_AMB,
};
use hexcool::validation::run_all;
use hexcool::Error;

const OUT_ENV: &str = "HEXCOOL_OUT";

#[derive(Parser)]
#[command(name = "hexcool", version, about = "Hybrid liquid / CPCM cooling module simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Target {
    /// Registry id (S1..S7)
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario JSON file
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Output {
    /// Output directory
    #[arg(long, env = OUT_ENV, default_value = "hexcool-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario
    Run {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        output: Output,
    },
    /// One run per parameter value
    Sweep {
        #[command(flatten)]
        target: Target,
        /// flow_rate, n_cells, contact_resistance or power
        #[arg(long)]
        param: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Also sweep the other lattice layout and report the crossover
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Fit the ambient film to an anchor point
    Calibrate {
        #[arg(long, value_enum)]
        anchor: Anchor,
        /// Override the anchor temperature, °C
        #[arg(long)]
        target: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Design search
    Optimize {
        #[command(subcommand)]
        what: Optimize,
    },
    /// Run the acceptance suite
    Validate {
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Print a registry scenario as JSON
    Export {
        #[arg(long)]
        scenario: String,
    },
    /// List registry scenarios
    List,
}

#[derive(Subcommand)]
enum Optimize {
    /// Smallest flow keeping the heating peak under a cap
    MinFlow {
        #[command(flatten)]
        target: Target,
        /// °C
        #[arg(long)]
        cap: f64,
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, default_value_t = 24.0)]
        hi: f64,
        #[arg(long, default_value_t = 0.25)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Anchor {
    /// Lumped steady state: 21 W holds the surface at 76 °C
    Bench,
    /// Network film coefficient that puts the bare plate at 89 °C
    Reference,
}

enum Failure {
    Usage(String),
    Numeric(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. }
            | Error::Divergent
            | Error::UnsupportedRegime { .. }
            | Error::Calibration(_)
            | Error::Infeasible(_)
            | Error::Domain { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(format!("csv: {e}"))
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    scenario: Option<String>,
    out_dir: String,
    deterministic: bool,
    tool_version: &'static str,
    args: Vec<String>,
}

fn resolve(t: &Target) -> Outcome<(Scenario, String)> {
    match (&t.scenario, &t.config) {
        (Some(id), None) => Ok((get(id)?, id.clone())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            Ok((Scenario::from_json(&text)?, path.display().to_string()))
        }
        _ => Err(Failure::Usage("give exactly one of --scenario or --config".into())),
    }
}

fn prepare(out: &Path) -> Outcome<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_json(path: &Path, v: &impl Serialize) -> Outcome<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Usage(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn write_manifest(out: &Path, command: &str, scenario: Option<String>) -> Outcome<()> {
    let m = Manifest {
        command,
        scenario,
        out_dir: out.display().to_string(),
        deterministic: true,
        tool_version: env!("CARGO_PKG_VERSION"),
        args: std::env::args().skip(1).collect(),
    };
    write_json(&out.join("manifest.json"), &m)
}

fn num(x: f64) -> String {
    // Shortest representation that round-trips; always '.' as separator.
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn cmd_run(target: &Target, out: &Path) -> Outcome<()> {
    let (s, label) = resolve(target)?;
    let r = s.simulate()?;
    prepare(out)?;
    let mut w = csv::Writer::from_path(out.join("timeseries.csv"))?;
    let labels: Vec<&String> = r.probes.keys().collect();
    let mut header = vec!["time_s".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for (i, t) in r.time.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(labels.iter().map(|l| num(r.probes[*l][i])));
        w.write_record(&row)?;
    }
    w.flush()?;
    let probe = if r.probes.contains_key(SUMMARY_PROBE) {
        SUMMARY_PROBE.to_string()
    } else {
        labels.first().map(|l| l.to_string()).unwrap_or_default()
    };
    let sm = summarize(&r, &probe)?;
    let probes: serde_json::Map<String, Value> = r
        .probes
        .iter()
        .map(|(k, v)| {
            let n = r.heating_len();
            let peak = v[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (k.clone(), json!({ "heating_peak": peak, "final": v.last() }))
        })
        .collect();
    let summary = json!({
        "scenario": s.id,
        "probe": probe,
        "peak": sm.peak,
        "steady": sm.steady,
        "plateau": sm.plateau,
        "time_to_steady": sm.time_to_steady,
        "liquid_fraction": sm.liquid_fraction,
        "ledger": r.ledger,
        "residual": r.ledger.residual() / r.ledger.e_in.abs().max(f64::EPSILON),
        "diagnostics": r.diagnostics,
        "probes": probes,
    });
    write_json(&out.join("summary.json"), &summary)?;
    write_manifest(out, "run", Some(label))?;
    println!("{}: peak {:.2} °C, wrote {}", s.id, sm.peak, out.display());
    Ok(())
}

fn write_sweep_csv(path: &Path, sw: &SweepResult) -> Outcome<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        sw.parameter.as_str(),
        "peak",
        "steady",
        "plateau",
        "time_to_steady",
        "liquid_fraction",
        "energy_residual",
    ])?;
    for (v, p) in sw.grid.iter().zip(&sw.points) {
        w.write_record([
            num(*v),
            num(p.peak),
            num(p.steady),
            opt(p.plateau),
            opt(p.time_to_steady),
            num(p.liquid_fraction),
            num(p.energy_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_values(raw: &[String]) -> Outcome<Vec<f64>> {
    let vals = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Failure::Usage(format!("bad value {s:?}"))))
        .collect::<Outcome<Vec<f64>>>()?;
    if vals.is_empty() {
        return Err(Failure::Usage("--values is empty".into()));
    }
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::Usage("--values has duplicates".into()));
    }
    Ok(vals)
}

fn other_layout(s: &Scenario) -> Outcome<Scenario> {
    let l = s
        .geometry
        .lattice
        .as_ref()
        .ok_or_else(|| Failure::Usage("--compare needs a scenario with a lattice".into()))?;
    Ok(match l.variant {
        LatticeVariant::Regular => s.with_lattice_variant(LatticeVariant::Intensive, MODULE.intensive_cells),
        LatticeVariant::Intensive => s.with_lattice_variant(LatticeVariant::Regular, MODULE.regular_cells),
    })
}

fn cmd_sweep(target: &Target, param: &str, raw: &[String], compare: bool, threads: usize, out: &Path) -> Outcome<()> {
    let (s, label) = resolve(target)?;
    let values = parse_values(raw)?;
    // reject bad parameters before any simulation
    for v in &values {
        s.with_param(param, *v)?;
    }
    let sw = sweep(&s, param, &values, threads)?;
    prepare(out)?;
    write_sweep_csv(&out.join("sweep.csv"), &sw)?;
    let mut summary = json!({ "scenario": s.id, "parameter": param, "sweep": sw });
    if param == "flow_rate" || param == "flow" {
        summary["knee"] = match knee(&sw) {
            Ok(k) => json!(k),
            Err(e) => json!({ "error": e.to_string() }),
        };
    }
    if compare {
        let alt = other_layout(&s)?;
        let sw2 = sweep(&alt, param, &values, threads)?;
        write_sweep_csv(&out.join("sweep_alternate.csv"), &sw2)?;
        let regular_first = matches!(
            s.geometry.lattice.as_ref().map(|l| l.variant),
            Some(LatticeVariant::Regular)
        );
        let (reg, int) = if regular_first { (&sw, &sw2) } else { (&sw2, &sw) };
        summary["layouts"] = json!(compare_layouts(reg, int)?);
    }
    write_json(&out.join("summary.json"), &summary)?;
    write_manifest(out, "sweep", Some(label))?;
    for (v, p) in sw.grid.iter().zip(&sw.points) {
        println!("{param} = {v}: peak {:.2} °C", p.peak);
    }
    Ok(())
}

fn cmd_calibrate(anchor: Anchor, target: Option<f64>, out: &Path) -> Outcome<()> {
    let summary = match anchor {
        Anchor::Bench => {
            let p = BENCH_VOLTS * BENCH_AMPS;
            let ts = target.unwrap_or(BENCH_SURFACE_T);
            let ha = calibrate_ambient(p, ts, T_AMB)?;
            println!("bench: hA = {ha} W/K");
            json!({ "anchor": "bench", "power": p, "surface_t": ts, "t_amb": T_AMB, "ha_ambient": ha })
        }
        Anchor::Reference => {
            let t = target.unwrap_or(REFERENCE_PEAK_T);
            let c = calibrate_reference(&get("S1")?, t)?;
            println!("reference: h = {:.4} W/m²K, hA = {:.4} W/K", c.h_conv, c.ha_ambient);
            json!({ "anchor": "reference", "calibration": c })
        }
    };
    prepare(out)?;
    write_json(&out.join("summary.json"), &summary)?;
    write_manifest(out, "calibrate", None)
}

fn cmd_min_flow(target: &Target, cap: f64, lo: f64, hi: f64, tol: f64, out: &Path) -> Outcome<()> {
    let (s, label) = resolve(target)?;
    if !s.geometry.channel.is_some() {
        return Err(Failure::Usage(format!("{} has no coolant channel", s.id)));
    }
    let r = min_flow_for_cap(&s, cap, lo, hi, tol)?;
    let recheck = peak_at_flow(&s, r.flow)?;
    let feasible = recheck <= cap;
    prepare(out)?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "scenario": s.id, "cap": cap, "lo": lo, "hi": hi, "tol": tol,
            "flow": r.flow, "peak": r.peak, "evaluations": r.evaluations,
            "recheck_peak": recheck, "feasible": feasible,
        }),
    )?;
    write_manifest(out, "optimize min-flow", Some(label))?;
    println!("min flow {:.3} ml/min (peak {:.2} °C, re-run {:.2} °C)", r.flow, r.peak, recheck);
    if !feasible {
        return Err(Failure::Numeric("re-simulation exceeds the cap".into()));
    }
    Ok(())
}

fn cmd_validate(threads: usize, out: &Path) -> Outcome<()> {
    let outcomes = run_all(threads);
    for o in &outcomes {
        println!("{o}");
    }
    prepare(out)?;
    write_json(&out.join("validation.json"), &outcomes)?;
    write_manifest(out, "validate", None)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::Validation(format!("{failed} criteria failed")));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome<()> {
    let threads = |t: Option<usize>| t.unwrap_or_else(default_threads).max(1);
    match cli.cmd {
        Cmd::Run { target, output } => cmd_run(&target, &output.out),
        Cmd::Sweep {
            target,
            param,
            values,
            compare,
            threads: t,
            output,
        } => cmd_sweep(&target, &param, &values, compare, threads(t), &output.out),
        Cmd::Calibrate { anchor, target, output } => cmd_calibrate(anchor, target, &output.out),
        Cmd::Optimize {
            what:
                Optimize::MinFlow {
                    target,
                    cap,
                    lo,
                    hi,
                    tol,
                    output,
                },
        } => cmd_min_flow(&target, cap, lo, hi, tol, &output.out),
        Cmd::Validate { threads: t, output } => cmd_validate(threads(t), &output.out),
        Cmd::Export { scenario } => {
            println!("{}", get(&scenario)?.to_json());
            Ok(())
        }
        Cmd::List => {
            for s in registry() {
                println!("{}\t{}", s.id, s.description);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("numeric failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(4)
        }
    }
}
