//! Run configuration: strict JSON files, per-subcommand defaults and the
//! flags > file > defaults merge.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Mixed,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Table1,
    Shell,
}

macro_rules! settings {
    ($($name:ident: $ty:ty),* $(,)?) => {
        /// Contents of a config file; every key is optional.
        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ConfigFile {
            pub subcommand: Option<String>,
            $(pub $name: Option<$ty>,)*
        }

        /// Fully resolved settings of one run.
        #[derive(Debug, Clone, PartialEq, Serialize)]
        pub struct Settings {
            pub subcommand: String,
            $(pub $name: $ty,)*
        }

        impl Settings {
            /// Overwrite every field present in `o`.
            pub fn apply(&mut self, o: &ConfigFile) {
                $(if let Some(v) = &o.$name {
                    self.$name = v.clone();
                })*
            }
        }
    };
}

settings! {
    mesh: String,
    velocity: String,
    velocities: Vec<String>,
    levels: Vec<usize>,
    seed: u64,
    threads: usize,
    rtol: f64,
    maxit: usize,
    solver: SolverKind,
    out: String,
    rhs: String,
    exact: String,
    u: String,
    v: String,
    depth: String,
    trials: usize,
    count: usize,
    gravity: f64,
    mean_depth: f64,
    coriolis: String,
    dt: f64,
    eta: f64,
    apvm: bool,
    picard_iters: usize,
    steps: usize,
    suite: Suite,
    max_degree: usize,
    forms: Vec<usize>,
    loss_family: String,
    loss_levels: Vec<usize>,
    shell_levels: Vec<usize>,
    helmholtz_levels: Vec<usize>,
    theta: String,
    column: usize,
    horizontal_degree: usize,
    vertical_degree: usize,
    cp_in_balance: bool,
    surface_pi: Option<f64>,
}

pub const SUBCOMMANDS: [&str; 10] =
    ["poisson", "helmholtz-decomp", "eigs", "swe", "swe-linear", "inertial-check", "rates", "shell", "hydrostatic", "mesh-info"];

const VORTEX_U: &str = "-0.05*2*pi*sin(2*pi*x)*cos(2*pi*y)";
const VORTEX_V: &str = "0.05*2*pi*cos(2*pi*x)*sin(2*pi*y)";

impl Settings {
    /// Defaults for a subcommand.
    pub fn defaults(subcommand: &str) -> Result<Self> {
        if !SUBCOMMANDS.contains(&subcommand) {
            return Err(CliError::setting("subcommand", format!("unknown subcommand `{subcommand}`")));
        }
        let mut s = Settings {
            subcommand: subcommand.to_string(),
            mesh: "torus:tri:8".into(),
            velocity: "RT0".into(),
            velocities: vec!["RT0".into(), "BDFM1".into()],
            levels: vec![4, 8, 16, 32],
            seed: 7,
            threads: 0,
            rtol: 1e-10,
            maxit: 10_000,
            solver: SolverKind::Mixed,
            out: "terra-out".into(),
            rhs: "cos(2*pi*x)*cos(2*pi*y)".into(),
            exact: "cos(2*pi*x)*cos(2*pi*y)/(8*pi^2)".into(),
            u: "sin(2*pi*y)+0.3".into(),
            v: "cos(2*pi*x)*sin(2*pi*y)-0.2".into(),
            depth: "1+0.05*sin(2*pi*x)*sin(2*pi*y)".into(),
            trials: 5,
            count: 6,
            gravity: 1.0,
            mean_depth: 1.0,
            coriolis: "1".into(),
            dt: 0.01,
            eta: 0.5,
            apvm: false,
            picard_iters: 4,
            steps: 10,
            suite: Suite::Table1,
            max_degree: 2,
            forms: vec![0, 1, 2, 3],
            loss_family: "Eminus(2,1,3)".into(),
            loss_levels: vec![4, 8, 16, 32],
            shell_levels: vec![0, 1, 2, 3],
            helmholtz_levels: vec![0, 1, 2, 3],
            theta: "300".into(),
            column: 0,
            horizontal_degree: 1,
            vertical_degree: 2,
            cp_in_balance: false,
            surface_pi: None,
        };
        match subcommand {
            "helmholtz-decomp" => s.velocity = "RT1".into(),
            "eigs" => s.levels = vec![8, 16, 32],
            "swe" => {
                s.solver = SolverKind::Hybrid;
                s.mesh = "torus:tri:12".into();
                s.u = VORTEX_U.into();
                s.v = VORTEX_V.into();
            }
            "swe-linear" => {
                s.solver = SolverKind::Hybrid;
                s.mesh = "torus:tri:16".into();
                s.gravity = 9.8;
                s.coriolis = "2".into();
                s.dt = 0.05;
            }
            "inertial-check" => s.mesh = "torus:tri:4".into(),
            "rates" => s.levels = vec![2, 4, 8, 16],
            "hydrostatic" => {
                s.mesh = "column:10:1".into();
                s.gravity = 9.81;
            }
            _ => {}
        }
        Ok(s)
    }

    /// Defaults, then the file, then the flags.
    pub fn resolve(subcommand: &str, file: Option<&ConfigFile>, flags: &ConfigFile) -> Result<Self> {
        let mut s = Self::defaults(subcommand)?;
        if let Some(f) = file {
            if let Some(sc) = &f.subcommand {
                if sc != subcommand {
                    return Err(CliError::setting("subcommand", format!("config is for `{sc}`, not `{subcommand}`")));
                }
            }
            s.apply(f);
        }
        s.apply(flags);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0) {
            return Err(CliError::setting("rtol", "must be positive"));
        }
        if self.maxit == 0 {
            return Err(CliError::setting("maxit", "must be at least 1"));
        }
        if self.forms.iter().any(|k| *k > 3) {
            return Err(CliError::setting("forms", "form degrees lie in 0..=3"));
        }
        if self.out.is_empty() {
            return Err(CliError::setting("out", "must not be empty"));
        }
        Ok(())
    }

    /// `key=value` lines for every setting, sorted by key.
    pub fn echo(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("settings serialise");
        let map = value.as_object().expect("settings are an object");
        map.iter().map(|(k, v)| (k.clone(), render(v))).collect()
    }

    /// SHA-256 of the settings that determine the results (everything but
    /// the output location).
    pub fn hash(&self) -> String {
        let mut s = self.clone();
        s.out.clear();
        let text = serde_json::to_string(&s).expect("settings serialise");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn render(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => "none".into(),
        serde_json::Value::Array(a) => a.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Parse config text, reporting the offending key or position.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if let Some(rest) = msg.strip_prefix("unknown field `") {
            if let Some(end) = rest.find('`') {
                return CliError::UnknownKey { key: rest[..end].to_string(), line: e.line() };
            }
        }
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        CliError::Config { line: e.line(), column: e.column(), msg }
    })
}

pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
