//! From a trajectory batch to performance labels, confusion counts,
//! observation functions and state rewards.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::frg::{Performance, VisibleConfig, GAMEOVER, NUM_STATES};

/// One 10-second window of a mission.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub config: VisibleConfig,
    /// Action applied at the end of this window; it selects the next
    /// window's configuration.
    pub action: usize,
    pub fires: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mission {
    pub mission_id: String,
    pub participant_id: String,
    pub score: f64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryBatch {
    pub missions: Vec<Mission>,
}

impl TrajectoryBatch {
    pub fn feature_dim(&self) -> Option<usize> {
        self.missions
            .first()
            .and_then(|m| m.steps.first())
            .map(|s| s.features.len())
    }

    pub fn num_steps(&self) -> usize {
        self.missions.iter().map(|m| m.steps.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim().unwrap_or(0);
        for m in &self.missions {
            if m.steps.is_empty() {
                return Err(Error::InvalidArgument(format!("mission {} has no steps", m.mission_id)));
            }
            if !(m.score >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "mission {} has negative score",
                    m.mission_id
                )));
            }
            if let Some(s) = m.steps.iter().find(|s| s.features.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                });
            }
        }
        Ok(())
    }
}

/// Missions partitioned by score quartile (indices into the batch).
#[derive(Debug, Clone, PartialEq)]
pub struct QuartileSplit {
    pub low: Vec<usize>,
    pub mid: Vec<usize>,
    pub high: Vec<usize>,
    pub q1: f64,
    pub q3: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn linear_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// First-quartile missions are labelled non-performant, fourth-quartile
/// missions performant, and the rest are kept for learning dynamics.
/// A mission whose score equals a threshold goes to the middle group.
pub fn split_by_quartiles(batch: &TrajectoryBatch) -> Result<QuartileSplit> {
    let n = batch.missions.len();
    if n < 4 {
        return Err(Error::TooFewMissions { found: n, needed: 4 });
    }
    let mut scores: Vec<f64> = batch.missions.iter().map(|m| m.score).collect();
    scores.sort_by(f64::total_cmp);
    let q1 = linear_quantile(&scores, 0.25);
    let q3 = linear_quantile(&scores, 0.75);
    let mut split = QuartileSplit {
        low: Vec::new(),
        mid: Vec::new(),
        high: Vec::new(),
        q1,
        q3,
    };
    for (i, m) in batch.missions.iter().enumerate() {
        if m.score < q1 {
            split.low.push(i);
        } else if m.score > q3 {
            split.high.push(i);
        } else {
            split.mid.push(i);
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledStep {
    pub mission: usize,
    pub step: usize,
    pub label: Performance,
}

/// Every step of a low mission is non-performant and every step of a high
/// mission performant; middle missions emit nothing.
pub fn label_steps(batch: &TrajectoryBatch, split: &QuartileSplit) -> Vec<LabeledStep> {
    let mut out = Vec::new();
    let groups = [
        (&split.low, Performance::NonPerformant),
        (&split.high, Performance::Performant),
    ];
    for (missions, label) in groups {
        for &mission in missions {
            out.extend((0..batch.missions[mission].steps.len()).map(|step| LabeledStep { mission, step, label }));
        }
    }
    out.sort_by_key(|l| (l.mission, l.step));
    out
}

/// Per-configuration 2x2 counts: `[true][predicted]`, index 0 is
/// non-performant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    counts: [[[u64; 2]; 2]; 4],
}

impl ConfusionCounts {
    pub fn new(counts: [[[u64; 2]; 2]; 4]) -> Self {
        ConfusionCounts { counts }
    }

    pub fn get(&self, config: VisibleConfig) -> [[u64; 2]; 2] {
        self.counts[config.index()]
    }

    pub fn add(&mut self, config: VisibleConfig, truth: Performance, predicted: Performance) {
        self.counts[config.index()][truth.index()][predicted.index()] += 1;
    }

    pub fn raw(&self) -> &[[[u64; 2]; 2]; 4] {
        &self.counts
    }

    /// Row-normalized matrix for one configuration.
    pub fn normalized(&self, config: VisibleConfig) -> Result<[[f64; 2]; 2]> {
        let mut out = [[0.0; 2]; 2];
        for (t, row) in self.get(config).iter().enumerate() {
            let total = row[0] + row[1];
            if total == 0 {
                return Err(Error::EmptyRow {
                    config: config.to_string(),
                    class: if t == 0 { "non-performant" } else { "performant" },
                });
            }
            out[t] = [row[0] as f64 / total as f64, row[1] as f64 / total as f64];
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: u64) -> Self {
        let mut out = *self;
        out.counts.iter_mut().flatten().flatten().for_each(|c| *c *= factor);
        out
    }
}

/// Embeds per-configuration 2x2 performance rows into the full observation
/// table: visible components and the terminal state are observed exactly.
pub fn observation_table(rows: &[[[f64; 2]; 2]; 4]) -> Vec<f64> {
    let mut table = vec![0.0; NUM_STATES * NUM_STATES];
    for config in VisibleConfig::ALL {
        let states = config.states();
        for (t, &state) in states.iter().enumerate() {
            for (p, &obs) in states.iter().enumerate() {
                table[state * NUM_STATES + obs] = rows[config.index()][t][p];
            }
        }
    }
    table[GAMEOVER * NUM_STATES + GAMEOVER] = 1.0;
    table
}

/// The row-normalized confusion matrices as a full observation function.
pub fn trivial_observation_function(counts: &ConfusionCounts) -> Result<Vec<f64>> {
    let mut rows = [[[0.0; 2]; 2]; 4];
    for config in VisibleConfig::ALL {
        rows[config.index()] = counts.normalized(config)?;
    }
    Ok(observation_table(&rows))
}

/// Dirichlet parameters `prior + count` for each confusion row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationPosterior {
    alpha: [[[f64; 2]; 2]; 4],
}

pub fn dirichlet_posterior(counts: &ConfusionCounts, alpha0: f64) -> ObservationPosterior {
    assert!(alpha0 > 0.0, "Dirichlet prior must be positive");
    let mut alpha = [[[0.0; 2]; 2]; 4];
    for (c, matrix) in counts.raw().iter().enumerate() {
        for (t, row) in matrix.iter().enumerate() {
            alpha[c][t] = [alpha0 + row[0] as f64, alpha0 + row[1] as f64];
        }
    }
    ObservationPosterior { alpha }
}

impl ObservationPosterior {
    pub fn from_alpha(alpha: [[[f64; 2]; 2]; 4]) -> Result<Self> {
        if alpha.iter().flatten().flatten().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("Dirichlet parameters must be positive".into()));
        }
        Ok(ObservationPosterior { alpha })
    }

    pub fn alpha(&self, config: VisibleConfig, truth: usize) -> [f64; 2] {
        self.alpha[config.index()][truth]
    }

    pub fn raw(&self) -> &[[[f64; 2]; 2]; 4] {
        &self.alpha
    }

    pub fn mean(&self, config: VisibleConfig, truth: usize) -> [f64; 2] {
        let a = self.alpha(config, truth);
        let total = a[0] + a[1];
        [a[0] / total, a[1] / total]
    }

    pub fn mean_observation_function(&self) -> Vec<f64> {
        let mut rows = [[[0.0; 2]; 2]; 4];
        for config in VisibleConfig::ALL {
            for t in 0..2 {
                rows[config.index()][t] = self.mean(config, t);
            }
        }
        observation_table(&rows)
    }

    /// Multiplies every parameter (used to concentrate the posterior).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        out.alpha.iter_mut().flatten().flatten().for_each(|a| *a *= factor);
        out
    }

    /// Draws every performance row independently from its Dirichlet and
    /// embeds the draws into a full observation table.
    pub fn sample_observation_function<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut rows = [[[0.0; 2]; 2]; 4];
        for (c, matrix) in self.alpha.iter().enumerate() {
            for (t, alpha) in matrix.iter().enumerate() {
                rows[c][t] = sample_dirichlet(alpha, rng);
            }
        }
        observation_table(&rows)
    }
}

/// Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized, const K: usize>(alpha: &[f64; K], rng: &mut R) -> [f64; K] {
    let mut out = [0.0; K];
    loop {
        for (o, &a) in out.iter_mut().zip(alpha) {
            *o = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
            return out;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEstimate {
    pub reward: Vec<f64>,
    pub visits: Vec<usize>,
    pub unvisited: Vec<usize>,
}

/// Mean fires extinguished per step among the steps assigned to each state.
/// `states[m][t]` is the hidden state assigned to step `t` of mission `m`.
/// Unvisited states get reward 0 and are reported; the terminal state is
/// always 0.
pub fn estimate_rewards(batch: &TrajectoryBatch, states: &[Vec<usize>]) -> RewardEstimate {
    let mut totals = vec![0.0; NUM_STATES];
    let mut visits = vec![0usize; NUM_STATES];
    for (mission, assigned) in batch.missions.iter().zip(states) {
        for (step, &s) in mission.steps.iter().zip(assigned) {
            totals[s] += step.fires as f64;
            visits[s] += 1;
        }
    }
    let mut unvisited = Vec::new();
    let reward = (0..NUM_STATES)
        .map(|s| {
            if s == GAMEOVER {
                0.0
            } else if visits[s] == 0 {
                log::warn!("state {s} never visited; reward set to 0");
                unvisited.push(s);
                0.0
            } else {
                totals[s] / visits[s] as f64
            }
        })
        .collect();
    RewardEstimate {
        reward,
        visits,
        unvisited,
    }
}
