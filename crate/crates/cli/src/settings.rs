use anyhow::anyhow;
use clap::{Args, ValueEnum};
use fhbench::montecarlo::{Case, LossWeight, Pattern, SimConfig};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    A,
    B,
    C,
    D,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QArg {
    Identity,
    DInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "2star")]
    TwoStar,
}

impl From<QArg> for LossWeight {
    fn from(q: QArg) -> Self {
        match q {
            QArg::Identity => LossWeight::Identity,
            QArg::DInverse => LossWeight::DInverse,
        }
    }
}

impl From<CaseArg> for Case {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::One => Case::Case1,
            CaseArg::Two => Case::Case2,
            CaseArg::TwoStar => Case::Case2Star,
        }
    }
}

/// Selection of simulation settings and the knobs shared by every setting.
#[derive(Debug, Clone, Args)]
pub struct SettingArgs {
    /// Variance pattern
    #[arg(long, value_enum)]
    pub pattern: Option<PatternArg>,
    /// Loss matrix
    #[arg(long, value_enum)]
    pub q: Option<QArg>,
    /// Every pattern under both loss matrices
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Areas per variance group (k = 5 x this)
    #[arg(long, default_value_t = 3)]
    pub areas_per_group: usize,
    /// Number of regressors
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    /// Prior variance of the small-area means
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Fixed benchmark is this multiple of W'X 1_p
    #[arg(long, default_value_t = 3.0)]
    pub t0_scale: f64,
}

impl SettingArgs {
    pub fn base(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            areas_per_group: self.areas_per_group,
            p: self.p,
            lambda: self.lambda,
            t0_scale: self.t0_scale,
            ..SimConfig::default()
        }
    }

    /// `(pattern, Q)` pairs in table order: Q = I first, patterns a to d.
    pub fn selection(&self) -> CliResult<Vec<(Pattern, LossWeight)>> {
        if self.all {
            if self.pattern.is_some() || self.q.is_some() {
                return Err(Failure::input(anyhow!(
                    "--all cannot be combined with --pattern or --q"
                )));
            }
            return Ok(LossWeight::ALL
                .into_iter()
                .flat_map(|q| Pattern::ALL.map(|p| (p, q)))
                .collect());
        }
        let (Some(pattern), Some(q)) = (self.pattern, self.q) else {
            return Err(Failure::input(anyhow!(
                "select settings with --pattern and --q, or use --all"
            )));
        };
        let patterns: Vec<Pattern> = match pattern {
            PatternArg::A => vec![Pattern::A],
            PatternArg::B => vec![Pattern::B],
            PatternArg::C => vec![Pattern::C],
            PatternArg::D => vec![Pattern::D],
            PatternArg::All => Pattern::ALL.to_vec(),
        };
        Ok(patterns.into_iter().map(|p| (p, q.into())).collect())
    }

    pub fn single(&self) -> CliResult<(Pattern, LossWeight)> {
        match self.selection()?.as_slice() {
            [one] => Ok(*one),
            _ => Err(Failure::input(anyhow!(
                "this command needs exactly one setting: pick --pattern a|b|c|d and --q"
            ))),
        }
    }
}
