use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use switchmfg::canonical::{data_dir, list_canonical, load_canonical, CanonicalConfig};
use switchmfg::config::{parse_config_with_overrides, RunConfig};
use switchmfg::model::CheckStatus;
use switchmfg::pipeline::{run, RunReport, RunStatus, REPORT_FILE};
use switchmfg::{validate, Error, NewtonOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "switchmfg", version, about = "Penalized switching mean-field game solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run continuation, limit extraction and diagnostics
    Solve(RunArgs),
    /// Check a configuration and the model assumptions without solving
    Validate(ConfigArgs),
    /// Solve and tabulate the solutions along the penalty schedule
    SweepEps(RunArgs),
    /// Pretty-print a report file or run directory
    Report { path: PathBuf },
    /// List the shipped canonical configurations
    Canonical,
    /// Recompute canonical baselines with the dense oracle
    RegenBaselines {
        /// Only this configuration
        #[arg(long)]
        name: Option<String>,
        /// Overwrite the baseline files instead of printing the differences
        #[arg(long)]
        write: bool,
        #[arg(long, default_value_os_t = data_dir())]
        data_dir: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file
    #[arg(long, required_unless_present = "canonical", conflicts_with = "canonical")]
    config: Option<PathBuf>,
    /// Name of a shipped configuration instead of a file
    #[arg(long)]
    canonical: Option<String>,
    /// Override one value, as section.key=value
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Final penalty parameter
    #[arg(long)]
    eps_min: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory; defaults to the config's output.dir, then to
    /// $SWITCHMFG_OUTPUT_ROOT/<name>
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, env = "SWITCHMFG_OUTPUT_ROOT", default_value = "switchmfg-out", hide_env_values = true)]
    output_root: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn code_of(error: &Error) -> u8 {
    match error {
        Error::Io { .. } => EXIT_IO,
        e if e.is_solver_failure() => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(code_of(&e), e.to_string())
    }
}

fn load(args: &ConfigArgs) -> Result<(String, RunConfig), Failure> {
    let (name, text) = match (&args.config, &args.canonical) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
            let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            (stem, text)
        }
        (None, Some(name)) => {
            let c = load_canonical(name)?;
            (name.clone(), c.config.to_toml())
        }
        (None, None) => return Err(Failure::new(EXIT_CONFIG, "either --config or --canonical is required")),
    };
    let mut overrides = args.overrides.clone();
    if let Some(eps) = args.eps_min {
        overrides.push(format!("schedule.eps_end={eps:?}"));
    }
    let config = parse_config_with_overrides(&text, &overrides)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("invalid configuration:\n{e}")))?;
    Ok((name, config))
}

fn output_dir(args: &RunArgs, name: &str, config: &RunConfig) -> PathBuf {
    if let Some(dir) = &args.output_dir {
        return dir.clone();
    }
    match &config.output.dir {
        Some(dir) => PathBuf::from(dir),
        None => args.output_root.join(name),
    }
}

fn summarize(report: &RunReport, dir: &Path) {
    if let Some(p) = report.final_params {
        println!("final parameters  {p}");
    }
    if let Some(s) = &report.solve {
        println!(
            "newton            {} solves, {} iterations, at most {} per step",
            s.steps.len(),
            s.total_iterations(),
            s.max_iterations()
        );
        for flag in &s.flags {
            println!("flag              {flag}");
        }
    }
    if let Some(r) = report.residual {
        println!("residual          HJ {:.3e}  transport {:.3e}", r.hj_sup, r.fp_sup);
    }
    if let Some(l) = &report.limit {
        println!("obstacle          violation {:.3e}", l.max_obstacle_violation);
        for g in &l.complementarity {
            println!("complementarity   {}->{}  {:.3e}", g.from, g.to, g.value);
        }
    }
    if let Some(e) = &report.estimates {
        println!(
            "energy            {:.6} <= {:.6} <= {:.6}  {}",
            e.energy.lhs,
            e.energy.rhs_mean,
            e.energy.rhs_coupling,
            if e.energy.holds { "holds" } else { "VIOLATED" }
        );
    }
    if let Some(b) = report.lower_bound {
        println!(
            "density bound     min theta {:.6} vs {:.6}  {}",
            b.min_theta,
            b.bound - b.slack,
            if b.pass { "pass" } else { "FAIL" }
        );
    }
    if let Some(u) = &report.probes.uniqueness {
        println!("uniqueness        distance {:.3e}  gap {:.3e}", u.distance, u.gap.coupling);
    }
    if let Some(o) = &report.probes.oracle {
        println!("oracle            distance {:.3e}", o.distance);
    }
    for s in &report.probes.skipped {
        println!("skipped probe     {s}");
    }
    if let Some(study) = &report.probes.eps_study {
        println!("{:>12} {:>12} {:>12} {:>12} {:>12}", "eps", "violation", "compl.", "|du|_inf", "|dtheta|_2");
        for (k, level) in study.levels.iter().enumerate() {
            let row = k.checked_sub(1).and_then(|r| study.cauchy.get(r));
            println!(
                "{:>12.4e} {:>12.4e} {:>12.4e} {:>12} {:>12}",
                level.eps,
                level.obstacle_violation,
                level.max_gap(),
                row.map_or("-".into(), |r| format!("{:.4e}", r.u_sup_diff)),
                row.map_or("-".into(), |r| format!("{:.4e}", r.theta_l2_diff)),
            );
        }
    }
    println!("report            {}", dir.join(REPORT_FILE).display());
}

fn solve(args: &RunArgs, eps_study: bool) -> Result<(), Failure> {
    let (name, mut config) = load(&args.config)?;
    if eps_study {
        config.probes.eps_study = true;
    }
    let dir = output_dir(args, &name, &config);
    match run(&config, &dir) {
        Ok(out) => {
            summarize(&out.report, &dir);
            Ok(())
        }
        Err(failure) => {
            if let Some(report) = &failure.report {
                summarize(report, &dir);
            }
            Err(failure.error.into())
        }
    }
}

fn validate_cmd(args: &ConfigArgs) -> Result<(), Failure> {
    let (_, config) = load(args)?;
    let model = config.build_model().map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    for entry in validate(&model).entries {
        let status = match entry.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::NotEnforced => "not enforced",
            CheckStatus::NotApplicable => "n/a",
        };
        println!("{:<30} {:<13} {}", entry.check, status, entry.detail);
    }
    println!("configuration is valid ({} unknowns)", model.unknowns());
    Ok(())
}

fn report_cmd(path: &Path) -> Result<(), Failure> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot read {}: {e}", file.display())))?;
    let report = RunReport::from_json(&text)?;
    println!("{} v{} (switchmfg {})", report.schema, report.version, report.package_version);
    match (&report.status, &report.failure) {
        (RunStatus::Failed, Some(f)) => println!("status            FAILED ({:?}): {}", f.kind, f.message),
        _ => println!("status            ok"),
    }
    summarize(&report, file.parent().unwrap_or(Path::new(".")));
    for f in &report.files {
        println!("file              {:<12} {}", f.kind, f.path);
    }
    Ok(())
}

fn regen(name: Option<&str>, write: bool, dir: &Path) -> Result<(), Failure> {
    let names: Vec<String> = match name {
        Some(n) => vec![n.to_string()],
        None => list_canonical().into_iter().map(String::from).collect(),
    };
    let opts = NewtonOptions::default();
    let mut drifted = false;
    for name in names {
        let c: CanonicalConfig = load_canonical(&name)?;
        let fresh = c.regenerate(&opts)?;
        for (old, new) in c.baseline.entries.iter().zip(&fresh.entries) {
            let delta = (new.value - old.value).abs();
            let within = delta <= old.tolerance;
            drifted |= !within;
            println!(
                "{name:<16} {:<16} {:>4} {:>22.15e} {:>22.15e}  {}",
                old.quantity,
                old.mode.map_or("-".into(), |m| m.to_string()),
                old.value,
                new.value,
                if within { "ok" } else { "CHANGED" }
            );
        }
        if write {
            let path = dir.join(format!("{name}.baseline.toml"));
            fs::write(&path, fresh.to_toml())
                .map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))?;
        }
    }
    if drifted && !write {
        println!("baselines changed beyond tolerance; rerun with --write to update");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(args) => solve(args, false),
        Command::SweepEps(args) => solve(args, true),
        Command::Validate(args) => validate_cmd(args),
        Command::Report { path } => report_cmd(path),
        Command::Canonical => {
            for name in list_canonical() {
                println!("{name}");
            }
            Ok(())
        }
        Command::RegenBaselines { name, write, data_dir } => regen(name.as_deref(), *write, data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
