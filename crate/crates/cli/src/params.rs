//! Flat experiment configuration shared by every command.

use std::path::{Path, PathBuf};

use arw_core::SleepRate;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Every key is optional; each command fills in its own defaults. The same
/// keys are accepted as flags and in the `--config` JSON document, and
/// flags win.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Flat JSON config, or a manifest.json from an earlier run.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Base seed; trial k uses derive_trial_seed(seed, k).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = all cores. ARW_WORKERS overrides.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Particle count.
    #[arg(long)]
    pub n: Option<u32>,
    /// Sleep rate; `inf` for the IDLA limit.
    #[arg(long)]
    pub lambda: Option<SleepRate>,
    /// Sleep rates drawn by abelian-check.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Interval size #I.
    #[arg(long)]
    pub interval: Option<u64>,
    /// Half-width of [-radius, radius].
    #[arg(long)]
    pub radius: Option<u64>,
    /// Upper quantile level of the inner estimator.
    #[arg(long)]
    pub q: Option<f64>,
    /// Open-site density of the environment.
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Density grid of the outer estimator.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// First window half-width L0.
    #[arg(long)]
    pub l0: Option<u64>,
    /// Largest window half-width.
    #[arg(long)]
    pub l_max: Option<u64>,
    #[arg(long)]
    pub tail_fraction: Option<f64>,
    #[arg(long)]
    pub exponent_threshold: Option<f64>,
    #[arg(long)]
    pub max_nonconvergence: Option<f64>,
    /// Stage-2 window half-width.
    #[arg(long)]
    pub window: Option<u64>,
    #[arg(long)]
    pub max_window: Option<u64>,
    /// Chain insertion site.
    #[arg(long, allow_hyphen_values = true)]
    pub v: Option<i64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Probe sites of smp-check.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub probes: Option<Vec<i64>>,
    /// Instructions read per probe site.
    #[arg(long)]
    pub m: Option<u64>,
    /// smp-check exploration: nothing, stabilize, adversarial.
    #[arg(long)]
    pub rule: Option<String>,
    /// IDLA sampler: exit-law or replay.
    #[arg(long)]
    pub method: Option<String>,
    /// Trap constant C_lambda.
    #[arg(long)]
    pub c_lambda: Option<f64>,
    /// abelian-check instance count.
    #[arg(long)]
    pub instances: Option<u64>,
    #[arg(long)]
    pub max_particles: Option<u32>,
    /// Exponent in the IDLA shape bound n^e.
    #[arg(long)]
    pub shape_exponent: Option<f64>,
    /// Step cap per stabilization.
    #[arg(long)]
    pub cap: Option<u64>,
    /// Write per-walker IDLA traces.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trace: Option<bool>,
    /// Write per-trial configuration and odometer dumps.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dump: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Params {
    /// Read a flat config, or the `config` object of a manifest.
    pub fn from_json(text: &str) -> Result<Params, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        let value = match value {
            Value::Object(mut m) if m.contains_key("config") && m.contains_key("command") => m.remove("config").unwrap(),
            v => v,
        };
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Params, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Params::from_json(&text)
    }

    /// `self` with every key set in `top` replaced.
    pub fn overlaid(mut self, top: &Params) -> Params {
        let dst = &mut self;
        overlay!(dst, top; config, out, seed, workers, trials, n, lambda, lambdas, interval, radius, q, zeta,
            epsilon, grid, l0, l_max, tail_fraction, exponent_threshold, max_nonconvergence, window, max_window,
            v, burn_in, steps, probes, m, rule, method, c_lambda, instances, max_particles,
            shape_exponent, cap, trace, dump);
        self
    }

    /// Flags over the `--config` file, if any.
    pub fn resolve_file(flags: &Params) -> Result<Params, CliError> {
        match &flags.config {
            Some(path) => Ok(Params::from_file(path)?.overlaid(flags)),
            None => Ok(flags.clone()),
        }
    }

    /// The keys that are set, as a flat JSON object.
    pub fn to_json_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("params serialize") {
            Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
            _ => unreachable!(),
        }
    }

    /// Names of the keys that are set, for unused-key warnings.
    pub fn set_keys(&self) -> Vec<String> {
        self.to_json_map().into_iter().map(|(k, _)| k).collect()
    }
}
