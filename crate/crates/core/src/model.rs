//! Discrete POMDP/MDP models, belief arithmetic and the simulation kernel.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::frg;
use crate::rng::sample_index;

const STOCHASTIC_TOL: f64 = 1e-6;
pub const TERMINAL_LABEL: &str = "g";

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Wraps a mass vector without checking it. Use [`Belief::validate`]
    /// when the source is untrusted.
    pub fn new(mass: Vec<f64>) -> Self {
        Belief(mass)
    }

    pub fn point(n: usize, state: usize) -> Self {
        let mut mass = vec![0.0; n];
        mass[state] = 1.0;
        Belief(mass)
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    /// Normalizes non-negative weights; `None` when they sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            Some(Belief(weights.into_iter().map(|w| w / total).collect()))
        } else {
            None
        }
    }

    pub fn mass(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, values: &[f64]) -> f64 {
        self.0.iter().zip(values).map(|(b, v)| b * v).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Validation("belief has a negative or non-finite entry".into()));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("belief sums to {total}")));
        }
        Ok(())
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&s| self.0[s] > 0.0).collect()
    }
}

/// Finite POMDP with dense tables.
///
/// `transition[(a * n + s) * n + s']` is `T(s' | s, a)`,
/// `observation[s' * m + o]` is `O(o | s')`, and the reward is collected on
/// the state entered.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePomdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub transition: Vec<f64>,
    pub observation: Vec<f64>,
    pub reward: Vec<f64>,
    pub discount: f64,
    pub horizon: usize,
    pub initial_belief: Belief,
}

/// One outcome of [`DiscretePomdp::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: usize,
    pub observation: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { table: &'static str, row: String, sum: f64 },
    NegativeEntry { table: &'static str, row: String },
    NonAbsorbingTerminal { state: String },
    TerminalReward { state: String, reward: f64 },
    DiscountOutOfRange(f64),
    ZeroHorizon,
    Shape(String),
    InitialBelief(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { table, row, sum } => {
                write!(f, "{table} row {row} sums to {sum}")
            }
            Violation::NegativeEntry { table, row } => {
                write!(f, "{table} row {row} has a negative or non-finite entry")
            }
            Violation::NonAbsorbingTerminal { state } => {
                write!(f, "terminal state {state} is not absorbing under every action")
            }
            Violation::TerminalReward { state, reward } => {
                write!(f, "terminal state {state} has reward {reward}")
            }
            Violation::DiscountOutOfRange(g) => write!(f, "discount {g} not in (0, 1)"),
            Violation::ZeroHorizon => write!(f, "horizon must be at least 1"),
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::InitialBelief(msg) => write!(f, "initial belief: {msg}"),
        }
    }
}

fn check_rows(
    table: &'static str,
    data: &[f64],
    width: usize,
    row_name: impl Fn(usize) -> String,
    out: &mut Vec<Violation>,
) {
    for (r, row) in data.chunks(width).enumerate() {
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            out.push(Violation::NegativeEntry {
                table,
                row: row_name(r),
            });
            continue;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::RowSum {
                table,
                row: row_name(r),
                sum,
            });
        }
    }
}

impl DiscretePomdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn t(&self, state: usize, action: usize, next: usize) -> f64 {
        let n = self.num_states();
        self.transition[(action * n + state) * n + next]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let n = self.num_states();
        let start = (action * n + state) * n;
        &self.transition[start..start + n]
    }

    pub fn o(&self, next: usize, obs: usize) -> f64 {
        self.observation[next * self.num_observations() + obs]
    }

    pub fn observation_row(&self, next: usize) -> &[f64] {
        let m = self.num_observations();
        &self.observation[next * m..(next + 1) * m]
    }

    /// Whether the state is absorbing under every action.
    pub fn is_terminal(&self, state: usize) -> bool {
        (0..self.num_actions()).all(|a| self.t(state, a, state) == 1.0)
    }

    /// Reports every structural problem with the model; an empty list means
    /// the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (n, k, m) = (self.num_states(), self.num_actions(), self.num_observations());
        if n == 0 || k == 0 || m == 0 {
            out.push(Violation::Shape("empty state, action or observation set".into()));
            return out;
        }
        if self.transition.len() != k * n * n {
            out.push(Violation::Shape(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                k * n * n
            )));
        }
        if self.observation.len() != n * m {
            out.push(Violation::Shape(format!(
                "observation has {} entries, expected {}",
                self.observation.len(),
                n * m
            )));
        }
        if self.reward.len() != n {
            out.push(Violation::Shape(format!(
                "reward has {} entries, expected {n}",
                self.reward.len()
            )));
        }
        if self.initial_belief.len() != n {
            out.push(Violation::Shape(
                "initial belief length differs from state count".into(),
            ));
        }
        if !out.is_empty() {
            return out;
        }

        check_rows(
            "transition",
            &self.transition,
            n,
            |r| format!("({}, {})", self.actions[r / n], self.states[r % n]),
            &mut out,
        );
        check_rows(
            "observation",
            &self.observation,
            m,
            |r| self.states[r].clone(),
            &mut out,
        );

        // The terminal state is the one labelled `g`.
        for s in (0..n).filter(|&s| self.states[s] == TERMINAL_LABEL) {
            if !(0..k).all(|a| (self.t(s, a, s) - 1.0).abs() <= STOCHASTIC_TOL) {
                out.push(Violation::NonAbsorbingTerminal {
                    state: self.states[s].clone(),
                });
            }
            if self.reward[s] != 0.0 {
                out.push(Violation::TerminalReward {
                    state: self.states[s].clone(),
                    reward: self.reward[s],
                });
            }
        }

        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(Violation::DiscountOutOfRange(self.discount));
        }
        if self.horizon == 0 {
            out.push(Violation::ZeroHorizon);
        }
        if let Err(e) = self.initial_belief.validate() {
            out.push(Violation::InitialBelief(e.to_string()));
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::Validation(text.join("; ")))
        }
    }

    /// Predicted next-state distribution `Σ_s T(s'|s,a) b(s)`, unnormalized
    /// only up to rounding.
    pub fn predict(&self, belief: &Belief, action: usize) -> Vec<f64> {
        let n = self.num_states();
        let mut out = vec![0.0; n];
        for (s, &p) in belief.mass().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &t) in out.iter_mut().zip(self.transition_row(s, action)) {
                *o += p * t;
            }
        }
        out
    }

    /// Bayes filter: `b'(s') ∝ O(o|s') Σ_s T(s'|s,a) b(s)`.
    pub fn belief_update(&self, belief: &Belief, action: usize, obs: usize) -> Result<Belief> {
        let mut mass = self.predict(belief, action);
        for (s, p) in mass.iter_mut().enumerate() {
            *p *= self.o(s, obs);
        }
        Belief::from_weights(mass).ok_or(Error::ZeroLikelihood {
            action,
            observation: obs,
        })
    }

    /// Prediction step only, used when an observation is impossible under the
    /// model and must be discarded.
    pub fn belief_predict(&self, belief: &Belief, action: usize) -> Belief {
        Belief::from_weights(self.predict(belief, action))
            .expect("prediction of a valid belief under a stochastic model has positive mass")
    }

    /// Samples `s' ~ T(·|s,a)`, `o ~ O(·|s')` and collects `R(s')`.
    pub fn step<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> Transition {
        let next = sample_index(self.transition_row(state, action), rng);
        let observation = sample_index(self.observation_row(next), rng);
        Transition {
            next,
            observation,
            reward: self.reward[next],
        }
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.initial_belief.mass(), rng)
    }

    pub fn max_reward(&self) -> f64 {
        self.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Same model with every reward multiplied by `factor`.
    pub fn scale_rewards(&self, factor: f64) -> DiscretePomdp {
        let mut out = self.clone();
        out.reward.iter_mut().for_each(|r| *r *= factor);
        out
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|s| s == label)
    }

    pub fn observation_index(&self, label: &str) -> Option<usize> {
        self.observations.iter().position(|s| s == label)
    }
}

/// Total belief on the performant states.
pub fn marginal_performance(belief: &Belief) -> f64 {
    frg::PERFORMANT_STATES
        .iter()
        .filter_map(|&s| belief.mass().get(s))
        .sum()
}

/// Fully observable counterpart of [`DiscretePomdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// Same layout as [`DiscretePomdp::transition`].
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub discount: f64,
    pub horizon: usize,
    /// Visit counts in the transition layout; all zero when the MDP was not
    /// learned from data.
    pub transition_counts: Vec<u64>,
}

impl DiscreteMdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn t(&self, state: usize, action: usize, next: usize) -> f64 {
        let n = self.num_states();
        self.transition[(action * n + state) * n + next]
    }

    pub fn transition_row(&self, state: usize, action: usize) -> &[f64] {
        let n = self.num_states();
        let start = (action * n + state) * n;
        &self.transition[start..start + n]
    }

    /// The hidden-state dynamics of a POMDP, read as an MDP.
    pub fn from_pomdp(model: &DiscretePomdp) -> Self {
        DiscreteMdp {
            states: model.states.clone(),
            actions: model.actions.clone(),
            transition: model.transition.clone(),
            reward: model.reward.clone(),
            discount: model.discount,
            horizon: model.horizon,
            transition_counts: vec![0; model.transition.len()],
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let n = self.num_states();
        let mut out = Vec::new();
        if self.transition.len() != self.num_actions() * n * n || self.reward.len() != n {
            out.push(Violation::Shape("MDP table sizes disagree".into()));
            return out;
        }
        check_rows(
            "transition",
            &self.transition,
            n,
            |r| format!("({}, {})", self.actions[r / n], self.states[r % n]),
            &mut out,
        );
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(Violation::DiscountOutOfRange(self.discount));
        }
        out
    }
}
