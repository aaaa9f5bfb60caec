//! Simulation configuration and its key=value / JSON file form.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnoverMode {
    /// Turnover is the consumption degree: `c = k_out / k_in - 1`.
    InOnly,
    /// Turnover is the total degree: `c = (k_out - k_in) / (k_out + k_in)`.
    #[default]
    Total,
}

impl FromStr for TurnoverMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_only" => Ok(TurnoverMode::InOnly),
            "total" => Ok(TurnoverMode::Total),
            other => Err(Error::Parse(format!("unknown turnover_mode {other:?}"))),
        }
    }
}

/// Every model and run parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of agents.
    pub n: usize,
    /// Initial production links per agent.
    pub k0: usize,
    /// New connections per event-time step.
    pub q: f64,
    /// Capital floor; agents below it collapse.
    pub c_th: f64,
    pub alpha_max: f64,
    /// Absorbing length of the exchange-rate step.
    pub delta: f64,
    /// Labor per connection.
    pub w: f64,
    /// Total steps, warmup included.
    pub steps: usize,
    /// Steps discarded before recording; `None` means `10 * n`.
    pub warmup: Option<usize>,
    pub seed: u64,
    pub turnover_mode: TurnoverMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            k0: 1,
            q: 1.0,
            c_th: DEFAULT_C_TH,
            alpha_max: 2.0,
            delta: 1.0,
            w: 1.0,
            steps: 210_000,
            warmup: None,
            seed: 42,
            turnover_mode: TurnoverMode::Total,
        }
    }
}

/// Every link is one agent's production and another's consumption, so
/// degrees balance over the network and some consuming agent always has
/// capital at most zero. A floor at or above zero therefore leaves no state
/// without violators.
pub fn check_floor(c_th: f64) -> Result<()> {
    if c_th > -1.0 && c_th < 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "c_th = {c_th} must lie in (-1, 0)"
        )))
    }
}

/// Default capital floor for the trade model.
pub const DEFAULT_C_TH: f64 = -0.71;

impl SimConfig {
    pub fn warmup_steps(&self) -> usize {
        self.warmup.unwrap_or(10 * self.n)
    }

    pub fn recorded_steps(&self) -> usize {
        self.steps.saturating_sub(self.warmup_steps())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n < 10 {
            return bad(format!("n = {} must be at least 10", self.n));
        }
        if self.k0 == 0 || self.k0 >= self.n {
            return bad(format!("k0 = {} must lie in [1, n)", self.k0));
        }
        if !(self.q > 0.0) || !self.q.is_finite() {
            return bad(format!("q = {} must be positive", self.q));
        }
        check_floor(self.c_th)?;
        if !(self.alpha_max > 0.0) || !(self.delta > 0.0) || !(self.w > 0.0) {
            return bad("alpha_max, delta and w must be positive".into());
        }
        if self.warmup_steps() > self.steps {
            return bad(format!(
                "warmup = {} exceeds steps = {}",
                self.warmup_steps(),
                self.steps
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| Error::Parse(format!("{key} = {v:?}: {e}")))
        }
        match key {
            "n" | "L" => self.n = num(key, value)?,
            "k0" => self.k0 = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "c_th" | "cth" => self.c_th = num(key, value)?,
            "alpha_max" => self.alpha_max = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "w" => self.w = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "warmup" => self.warmup = Some(num(key, value)?),
            "seed" => self.seed = num(key, value)?,
            "turnover_mode" => self.turnover_mode = value.parse()?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses either a JSON object or `key = value` lines (`#` comments).
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()));
        }
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim().trim_matches('"'))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::parse(&text)
    }

    /// `key = value` form accepted by [`SimConfig::parse`].
    pub fn to_key_value(&self) -> String {
        let mut s = format!(
            "n = {}\nk0 = {}\nq = {:?}\nc_th = {:?}\nalpha_max = {:?}\ndelta = {:?}\nw = {:?}\nsteps = {}\n",
            self.n, self.k0, self.q, self.c_th, self.alpha_max, self.delta, self.w, self.steps
        );
        if let Some(wu) = self.warmup {
            s += &format!("warmup = {wu}\n");
        }
        let mode = match self.turnover_mode {
            TurnoverMode::InOnly => "in_only",
            TurnoverMode::Total => "total",
        };
        s += &format!("seed = {}\nturnover_mode = {mode}\n", self.seed);
        s
    }
}
