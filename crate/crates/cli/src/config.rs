use std::path::PathBuf;

use clap::{Parser, ValueEnum};

/// Environment variable consulted for the output directory when `--out` is absent.
pub const OUT_ENV: &str = "PROBGRAPH_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Example {
    Coin,
    GettingStarted,
    Linreg,
    Logreg,
    BnnClassify,
    MixtureSubsample,
}

impl Example {
    pub fn name(self) -> &'static str {
        match self {
            Example::Coin => "coin",
            Example::GettingStarted => "getting-started",
            Example::Linreg => "linreg",
            Example::Logreg => "logreg",
            Example::BnnClassify => "bnn-classify",
            Example::MixtureSubsample => "mixture-subsample",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Klqp,
    Klpq,
    Map,
    Hmc,
    Sgld,
    Mh,
}

impl Algo {
    pub fn is_monte_carlo(self) -> bool {
        matches!(self, Algo::Hmc | Algo::Sgld | Algo::Mh)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Klqp => "klqp",
            Algo::Klpq => "klpq",
            Algo::Map => "map",
            Algo::Hmc => "hmc",
            Algo::Sgld => "sgld",
            Algo::Mh => "mh",
        }
    }
}

/// Run one of the bundled examples and write its artifacts.
#[derive(Clone, Debug, Parser)]
#[command(name = "probgraph", version)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub example: Example,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Number of updates; each example has its own default.
    #[arg(long)]
    pub n_iter: Option<usize>,

    /// Monte Carlo draws per loss evaluation.
    #[arg(long)]
    pub n_samples: Option<usize>,

    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,

    /// Inference algorithm, where the example supports more than one.
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,

    /// Optimizer step, HMC leapfrog step, or MH proposal scale.
    #[arg(long)]
    pub step_size: Option<f64>,

    /// Leapfrog steps per HMC proposal.
    #[arg(long, default_value_t = 15)]
    pub leapfrog_steps: usize,

    /// SGLD schedule `a * (b + t)^-gamma`.
    #[arg(long)]
    pub sgld_a: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub sgld_b: f64,
    #[arg(long, default_value_t = 0.55)]
    pub sgld_gamma: f64,

    /// Training data: every column but the last is a feature, the last is the target.
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Progress lines on stderr every this many updates; 0 silences them.
    #[arg(long, default_value_t = 100)]
    pub n_print: usize,
}

impl RunConfig {
    pub fn new(example: Example) -> Self {
        RunConfig {
            example,
            seed: 0,
            n_iter: None,
            n_samples: None,
            out: PathBuf::from("out"),
            algo: None,
            step_size: None,
            leapfrog_steps: 15,
            sgld_a: None,
            sgld_b: 10.0,
            sgld_gamma: 0.55,
            data: None,
            n_print: 0,
        }
    }
}
