//! Regime control: tracks stagnation, progress and diversity of the
//! population and turns them into an explore / exploit / balance regime plus
//! a design directive for the next prompts.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::population::PopulationStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Explore,
    Exploit,
    Balance,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Explore, Regime::Exploit, Regime::Balance];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Explore => "explore",
            Regime::Exploit => "exploit",
            Regime::Balance => "balance",
        }
    }

    /// The mode name used inside prompts.
    pub fn prompt_mode(self) -> &'static str {
        match self {
            Regime::Explore => "focus_exploration",
            Regime::Exploit => "focus_exploitation",
            Regime::Balance => "balanced_search",
        }
    }

    pub fn directives(self) -> &'static [&'static str] {
        match self {
            Regime::Balance => &BALANCE_DIRECTIVES,
            Regime::Exploit => &EXPLOIT_DIRECTIVES,
            Regime::Explore => &EXPLORE_DIRECTIVES,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explore" => Ok(Regime::Explore),
            "exploit" => Ok(Regime::Exploit),
            "balance" => Ok(Regime::Balance),
            other => Err(format!("unknown regime '{other}'")),
        }
    }
}

pub const BALANCE_DIRECTIVES: [&str; 5] = [
    "Optimizing objective function evaluation criteria.",
    "Considering the long-term impact of current decisions.",
    "Balancing local optimality with global search strategies.",
    "Improving algorithm robustness across different problem instances.",
    "Managing computational complexity and time efficiency.",
];

pub const EXPLOIT_DIRECTIVES: [&str; 4] = [
    "Refining core evaluation and scoring functions.",
    "Fine-tuning critical algorithm parameters and thresholds.",
    "Improving the precision of existing heuristics and rules.",
    "Reducing unnecessary computational overhead.",
];

pub const EXPLORE_DIRECTIVES: [&str; 4] = [
    "Exploring novel solution construction methodologies.",
    "Investigating alternative problem decomposition approaches.",
    "Introducing new randomization or adaptive mechanisms.",
    "Experimenting with hybrid strategy combinations.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigatorConfig {
    pub stagnation_threshold: u32,
    pub progress_threshold: u32,
    pub critical_diversity: f64,
    /// Relative improvement of the best-so-far that counts as progress.
    pub progress_epsilon: f64,
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        NavigatorConfig {
            stagnation_threshold: 3,
            progress_threshold: 2,
            critical_diversity: 0.3,
            progress_epsilon: 1e-3,
        }
    }
}

/// The regime policy as a pure function. Explore preempts exploit.
pub fn decide(stagnation: u32, progress: u32, diversity: f64, cfg: &NavigatorConfig) -> Regime {
    if stagnation >= cfg.stagnation_threshold || diversity < cfg.critical_diversity {
        Regime::Explore
    } else if progress >= cfg.progress_threshold {
        Regime::Exploit
    } else {
        Regime::Balance
    }
}

#[derive(Debug, Clone)]
pub struct Navigator {
    config: NavigatorConfig,
    stagnation: u32,
    progress: u32,
    best_so_far: Option<f64>,
    diversity: Option<f64>,
    last_observed: Option<u32>,
    rng: ChaCha8Rng,
}

/// Snapshot of the counters, as logged per generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavigatorSnapshot {
    pub stagnation: u32,
    pub progress: u32,
    pub best_so_far: Option<f64>,
    pub diversity: Option<f64>,
}

impl Navigator {
    pub fn new(config: NavigatorConfig, seed: u64) -> Self {
        Navigator {
            config,
            stagnation: 0,
            progress: 0,
            best_so_far: None,
            diversity: None,
            last_observed: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &NavigatorConfig {
        &self.config
    }

    pub fn snapshot(&self) -> NavigatorSnapshot {
        NavigatorSnapshot {
            stagnation: self.stagnation,
            progress: self.progress,
            best_so_far: self.best_so_far,
            diversity: self.diversity,
        }
    }

    /// Folds one generation's statistics into the counters. The first
    /// observation always counts as progress.
    pub fn observe(&mut self, stats: &PopulationStats, t: u32) {
        let improved = match self.best_so_far {
            None => true,
            Some(best) => best - stats.best > self.config.progress_epsilon * best.abs().max(1.0),
        };
        if improved {
            self.progress += 1;
            self.stagnation = 0;
            self.best_so_far = Some(stats.best);
        } else {
            self.stagnation += 1;
            self.progress = 0;
        }
        self.diversity = Some(stats.diversity);
        self.last_observed = Some(t);
    }

    /// Balance until something has been observed.
    pub fn decide_regime(&self) -> Regime {
        match self.diversity {
            None => Regime::Balance,
            Some(d) => decide(self.stagnation, self.progress, d, &self.config),
        }
    }

    pub fn sample_directive(&mut self, regime: Regime) -> &'static str {
        regime.directives().choose(&mut self.rng).expect("directive pools are non-empty")
    }
}
