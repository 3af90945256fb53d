use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relu_gf::flow::Mode;
use relu_gf::harness::{
    cmd_run, cmd_theory, cmd_verify, exit_code, export_polar, format_checks, run_sweep, write_sweep, ExperimentConfig,
    SweepSpec,
};
use relu_gf::record::RecordWriter;
use relu_gf::{Error, Result};

/// Gradient-flow simulator for two-layer ReLU networks on two-cluster data.
#[derive(Parser)]
#[command(name = "relu-gf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file; defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Integrator: `plain_gd` or `filippov`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and write the run bundle.
    Run(Common),
    /// Run every point of a sweep and fit the hitting times.
    Sweep(Common),
    /// Run to 4 T_III and evaluate the consistency checks.
    Verify(Common),
    /// Print time scalings and the margin certificate.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Size of K+ (requires --m-minus); measured by simulation otherwise.
        #[arg(long, requires = "m_minus")]
        m_plus: Option<usize>,
        #[arg(long, requires = "m_plus")]
        m_minus: Option<usize>,
    },
    /// Convert a run's trajectory.csv into long-format polar rows.
    ExportPolar {
        /// Run directory containing trajectory.csv.
        run_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

fn read_config(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(String::new()),
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::parse(&read_config(common.config.as_deref())?)?;
    if let Some(m) = common.mode {
        c.flow.mode = m;
    }
    if let Some(dir) = &common.out {
        c.out_dir = Some(dir.clone());
    }
    Ok(c)
}

fn write_or_print(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let out = cmd_run(&load(common)?)?;
    let mut w = RecordWriter::new();
    w.float("t_end", out.trajectory.end_time());
    w.raw("steps", out.trajectory.final_state.step);
    match &out.analysis {
        Some(a) => {
            let t = &a.timeline;
            for (name, hit) in [("t_plat", t.t_plat), ("t_II", t.t_ii), ("t_II_pt", t.t_ii_pt), ("t_III", t.t_iii)] {
                match hit {
                    Some(h) => w.raw(&format!("{name}.iteration"), h.step),
                    None => w.raw(&format!("{name}.iteration"), "absent"),
                };
            }
            w.raw("m_plus", a.classification.m_plus).raw("m_minus", a.classification.m_minus);
        }
        None => {
            w.raw("analysis", "absent");
        }
    }
    print!("{}", w.finish());
    Ok(())
}

fn sweep(common: &Common) -> Result<()> {
    let mut spec = SweepSpec::parse(&read_config(common.config.as_deref())?)?;
    if let Some(m) = common.mode {
        spec.base.flow.mode = m;
    }
    let outcome = run_sweep(&spec, common.jobs)?;
    let dir = common
        .out
        .clone()
        .or_else(|| spec.base.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    write_sweep(&outcome, &dir)?;
    let failed = outcome.rows.iter().filter(|r| r.error.is_some()).count();
    println!("points = {}", outcome.rows.len());
    println!("failed = {failed}");
    println!("dir = {}", dir.display());
    Ok(())
}

fn verify(common: &Common) -> Result<bool> {
    let mut config = load(common)?;
    config.out_dir = None;
    let checks = cmd_verify(&config)?;
    write_or_print(common.out.as_deref(), "verify.txt", &format_checks(&checks))?;
    Ok(checks.iter().all(|c| c.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c).map(|_| 0),
        Command::Sweep(c) => sweep(c).map(|_| 0),
        Command::Verify(c) => verify(c).map(|ok| if ok { 0 } else { 1 }),
        Command::Theory { common, m_plus, m_minus } => load(common)
            .and_then(|cfg| cmd_theory(&cfg, m_plus.zip(*m_minus)))
            .and_then(|text| write_or_print(common.out.as_deref(), "theory.txt", &text))
            .map(|_| 0),
        Command::ExportPolar { run_dir, common } => fs::File::open(run_dir.join("trajectory.csv"))
            .map_err(Error::from)
            .and_then(|f| {
                let dir = common.out.clone().unwrap_or_else(|| run_dir.clone());
                fs::create_dir_all(&dir)?;
                let out = fs::File::create(dir.join("polar.csv"))?;
                export_polar(std::io::BufReader::new(f), std::io::BufWriter::new(out))
            })
            .map(|rows| {
                println!("rows = {rows}");
                0
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match (&cli.command, &e) {
                (Command::Verify(_), _) => 1,
                _ => exit_code(&e),
            };
            ExitCode::from(code as u8)
        }
    }
}
