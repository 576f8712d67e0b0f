//! Run configuration: a TOML file of dotted keys grouped in blocks.
//!
//! ```toml
//! problem.frequency = 500.0
//! problem.mach = 0.1
//! network.seed = 7
//! training.max_iterations = 3000
//! output.directory = "runs/m01"
//! ```

use std::path::{Path, PathBuf};

use duct_pinn::{Complex64, DuctProblem, LbfgsOptions, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemBlock {
    pub length: f64,
    pub sound_speed: f64,
    pub density: f64,
    pub frequency: f64,
    pub mach: f64,
    pub psi0_re: f64,
    pub psi0_im: f64,
    pub psi_l_re: f64,
    pub psi_l_im: f64,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        Self {
            length: 1.0,
            sound_speed: 340.0,
            density: 1.225,
            frequency: 500.0,
            mach: 0.0,
            psi0_re: 1.0,
            psi0_im: 0.0,
            psi_l_re: -1.0,
            psi_l_im: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkBlock {
    pub n_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
}

impl Default for NetworkBlock {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            n_layers: t.n_layers,
            hidden_width: t.hidden_width,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingBlock {
    pub collocation_points: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub memory: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_search_steps: usize,
    /// Train a velocity network even without mean flow.
    pub train_velocity: bool,
    pub velocity_anchor: bool,
}

impl Default for TrainingBlock {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            collocation_points: t.collocation_points,
            max_iterations: t.lbfgs.max_iterations,
            tolerance: t.lbfgs.tolerance,
            memory: t.lbfgs.memory,
            wolfe_c1: t.lbfgs.wolfe_c1,
            wolfe_c2: t.lbfgs.wolfe_c2,
            max_line_search_steps: t.lbfgs.max_line_search_steps,
            train_velocity: false,
            velocity_anchor: t.velocity_anchor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub test_points: usize,
    /// Iterations between progress lines on stderr; 0 disables them.
    pub progress_every: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            test_points: duct_pinn::analysis::DEFAULT_TEST_POINTS,
            progress_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub frequencies: Vec<f64>,
    pub machs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub network: NetworkBlock,
    pub training: TrainingBlock,
    pub output: OutputBlock,
    pub sweep: SweepBlock,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub freq: Option<f64>,
    pub mach: Option<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.network.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.directory = out.clone();
        }
        if let Some(f) = o.freq {
            self.problem.frequency = f;
        }
        if let Some(m) = o.mach {
            self.problem.mach = m;
        }
    }

    pub fn problem(&self) -> Result<DuctProblem, CliError> {
        let p = &self.problem;
        DuctProblem::new(
            p.length,
            p.sound_speed,
            p.density,
            p.frequency,
            p.mach,
            Complex64::new(p.psi0_re, p.psi0_im),
            Complex64::new(p.psi_l_re, p.psi_l_im),
        )
        .map_err(|e| CliError::Usage(format!("invalid problem block: {e}")))
    }

    pub fn training(&self) -> Result<TrainingConfig, CliError> {
        let t = &self.training;
        let lbfgs = LbfgsOptions {
            max_iterations: t.max_iterations,
            tolerance: t.tolerance,
            memory: t.memory,
            wolfe_c1: t.wolfe_c1,
            wolfe_c2: t.wolfe_c2,
            max_line_search_steps: t.max_line_search_steps,
        };
        lbfgs
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid training block: {e}")))?;
        duct_pinn::Architecture::new(self.network.n_layers, self.network.hidden_width, 1)
            .map_err(|e| CliError::Usage(format!("invalid network block: {e}")))?;
        if t.collocation_points < 2 {
            return Err(CliError::Usage("training.collocation_points must be at least 2".into()));
        }
        if self.output.test_points < 2 {
            return Err(CliError::Usage("output.test_points must be at least 2".into()));
        }
        Ok(TrainingConfig {
            n_layers: self.network.n_layers,
            hidden_width: self.network.hidden_width,
            seed: self.network.seed,
            collocation_points: t.collocation_points,
            lbfgs,
            velocity_anchor: t.velocity_anchor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_reference_setup() {
        let c = RunConfig::default();
        let p = c.problem().unwrap();
        assert_eq!((p.length, p.sound_speed, p.density), (1.0, 340.0, 1.225));
        assert_eq!((p.psi0, p.psi_l), (Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)));
        let t = c.training().unwrap();
        assert_eq!((t.n_layers, t.hidden_width, t.collocation_points), (7, 90, 10_000));
        assert_eq!((t.lbfgs.max_iterations, t.lbfgs.tolerance), (14_000, 1e-5));
        assert_eq!(c.output.test_points, 500);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let mut c = RunConfig::parse(
            "problem.frequency = 1000.0\nproblem.mach = 0.2\nnetwork.seed = 9\ntraining.max_iterations = 10\n[output]\ndirectory = \"x\"\n",
        )
        .unwrap();
        assert_eq!(c.problem.frequency, 1000.0);
        assert_eq!(c.network.seed, 9);
        assert_eq!(c.training.max_iterations, 10);
        assert_eq!(c.network.hidden_width, 90);
        c.apply(&Overrides {
            seed: Some(3),
            out: None,
            freq: Some(250.0),
            mach: None,
        });
        assert_eq!((c.network.seed, c.problem.frequency, c.problem.mach), (3, 250.0, 0.2));
        assert_eq!(c.output.directory, PathBuf::from("x"));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.sweep.machs = vec![0.1, 0.2];
        assert_eq!(RunConfig::parse(&toml::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("problem.frequncy = 3.0").is_err());
        assert!(RunConfig::parse("network.seed = \"a\"").is_err());
        let c = RunConfig::parse("problem.mach = 1.5").unwrap();
        assert!(c.problem().is_err());
        let c = RunConfig::parse("training.memory = 0").unwrap();
        assert!(c.training().is_err());
        let c = RunConfig::parse("network.n_layers = 2").unwrap();
        assert!(c.training().is_err());
    }
}
