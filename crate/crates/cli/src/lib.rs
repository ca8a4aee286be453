//! `terra`: command-line front end for the finite element test bench.
//!
//! Settings resolve as flags > config file > per-subcommand defaults. Every
//! run echoes the resolved settings, writes CSV (or text) artifacts ending in
//! a `# provenance:` line and prints `key=value` summaries. The exit status
//! is 0 iff every verdict passes, 1 if one fails and 2 on errors.

pub mod commands;
pub mod config;
pub mod error;
pub mod meshspec;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{read_config, ConfigFile, Settings, SolverKind, Suite};
use crate::error::Result;
use crate::output::{verdict, Report};

#[derive(Debug, Parser)]
#[command(name = "terra", version, about = "Compatible finite element studies")]
pub struct Cli {
    /// Mesh spec (torus:tri:8, shell:2, column:10:1, ...) or mesh file.
    #[arg(long, global = true)]
    pub mesh: Option<String>,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, or the main artifact's path if it has an extension.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (1 = reproducible mode, 0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    #[arg(long, global = true)]
    pub maxit: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverKind>,
    /// Velocity space of the 2D complex (RT0, RT1, BDM1, BDFM1).
    #[arg(long, global = true)]
    pub velocity: Option<String>,
    /// Refinement levels, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Also write the (unrefined) mesh to this file.
    #[arg(long, global = true)]
    pub write_mesh: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mixed Poisson convergence on the torus.
    Poisson {
        #[arg(long)]
        rhs: Option<String>,
        #[arg(long)]
        exact: Option<String>,
    },
    /// Discrete Helmholtz decomposition of a vector field.
    HelmholtzDecomp {
        #[arg(long)]
        u: Option<String>,
        #[arg(long)]
        v: Option<String>,
    },
    /// Smallest eigenvalues of the mixed Laplacian.
    Eigs {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Nonlinear shallow water with the semi-implicit scheme.
    Swe {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        apvm: bool,
    },
    /// Linear shallow water: geostrophic steadiness and the Picard solve.
    SweLinear {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Harmonic fields and spurious inertial modes.
    InertialCheck {
        #[arg(long, value_delimiter = ',')]
        velocities: Option<Vec<String>>,
    },
    /// Convergence-rate suites.
    Rates {
        #[arg(long, value_enum)]
        suite: Option<Suite>,
    },
    /// Spherical-shell convergence studies, per level.
    Shell,
    /// Exner pressure of a column in hydrostatic balance.
    Hydrostatic {
        #[arg(long)]
        theta: Option<String>,
        #[arg(long)]
        column: Option<usize>,
    },
    /// Mesh statistics.
    MeshInfo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Poisson { .. } => "poisson",
            Command::HelmholtzDecomp { .. } => "helmholtz-decomp",
            Command::Eigs { .. } => "eigs",
            Command::Swe { .. } => "swe",
            Command::SweLinear { .. } => "swe-linear",
            Command::InertialCheck { .. } => "inertial-check",
            Command::Rates { .. } => "rates",
            Command::Shell => "shell",
            Command::Hydrostatic { .. } => "hydrostatic",
            Command::MeshInfo => "mesh-info",
        }
    }
}

impl Cli {
    /// Settings given on the command line.
    pub fn overlay(&self) -> ConfigFile {
        let mut o = ConfigFile {
            mesh: self.mesh.clone(),
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            rtol: self.rtol,
            maxit: self.maxit,
            solver: self.solver,
            velocity: self.velocity.clone(),
            levels: self.levels.clone(),
            ..Default::default()
        };
        match &self.command {
            Command::Poisson { rhs, exact } => {
                o.rhs = rhs.clone();
                o.exact = exact.clone();
            }
            Command::HelmholtzDecomp { u, v } => {
                o.u = u.clone();
                o.v = v.clone();
            }
            Command::Eigs { count } => o.count = *count,
            Command::Swe { steps, dt, apvm } => {
                o.steps = *steps;
                o.dt = *dt;
                o.apvm = apvm.then_some(true);
            }
            Command::SweLinear { trials } => o.trials = *trials,
            Command::InertialCheck { velocities } => o.velocities = velocities.clone(),
            Command::Rates { suite } => o.suite = *suite,
            Command::Hydrostatic { theta, column } => {
                o.theta = theta.clone();
                o.column = *column;
            }
            Command::Shell | Command::MeshInfo => {}
        }
        o
    }

    pub fn settings(&self) -> Result<Settings> {
        let file = self.config.as_deref().map(read_config).transpose()?;
        Settings::resolve(self.command.name(), file.as_ref(), &self.overlay())
    }
}

fn configure_threads(n: usize) {
    if n > 0 {
        // a pool may already exist when several runs share a process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Run one subcommand with resolved settings.
pub fn run(settings: Settings, write_mesh: Option<&std::path::Path>) -> Result<Report> {
    configure_threads(settings.threads);
    let ctx = commands::Ctx::new(settings)?;
    if let Some(p) = write_mesh {
        let m = ctx.spec.build()?;
        std::fs::write(p, terra_core::mesh::write_mesh(&m))?;
    }
    commands::dispatch(&ctx)
}

fn key(name: &str) -> String {
    name.chars().map(|c| if c.is_alphanumeric() || c == '(' || c == ')' || c == ',' || c == '-' { c } else { '_' }).collect()
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Parse arguments, run and print; returns the exit status.
pub fn execute<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error kind=usage message={}", quote(first));
            return 2;
        }
    };
    let settings = match cli.settings() {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error kind={} message={}", e.kind(), quote(&e.to_string()));
            return 2;
        }
    };
    let _ = writeln!(stdout, "# terra {} {}", env!("CARGO_PKG_VERSION"), settings.subcommand);
    for (k, v) in settings.echo() {
        let _ = writeln!(stdout, "config.{k}={v}");
    }
    let _ = writeln!(stdout, "config_sha256={}", settings.hash());
    match run(settings, cli.write_mesh.as_deref()) {
        Ok(rep) => {
            for (k, v) in &rep.lines {
                let _ = writeln!(stdout, "{k}={v}");
            }
            for c in &rep.checks {
                let _ = writeln!(stdout, "check.{}={}", key(&c.name), verdict(c.pass));
            }
            let _ = writeln!(stdout, "verdict={}", verdict(rep.passed()));
            if rep.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error kind={} message={}", e.kind(), quote(&e.to_string()));
            2
        }
    }
}
