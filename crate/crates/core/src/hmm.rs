//! Action-conditioned hidden dynamics learned by Baum-Welch with a frozen
//! emission table.
//!
//! The data-collection policy switched configuration uniformly at random and
//! every action is recorded, so a single EM whose transition parameters are
//! indexed by `(state, action)` recovers one transition table per action.
//! Entries forbidden by the layout (next configuration different from the
//! action's target) are structural zeros and stay zero through EM.

use crate::classifier::PerformancePredictor;
use crate::error::{Error, Result};
use crate::fixture;
use crate::frg::{self, GAMEOVER, NUM_ACTIONS, NUM_STATES};
use crate::model::{DiscreteMdp, DiscretePomdp};
use crate::observation::{sample_dirichlet, TrajectoryBatch};
use crate::par;
use crate::rng::{sample_index, seeded};
use rand::Rng;

/// Observations `o_0 … o_T` (ending with the terminal symbol) and the
/// actions `a_0 … a_{T-1}` taken between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationSequence {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
}

impl ObservationSequence {
    pub fn new(observations: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if observations.is_empty() || observations.len() != actions.len() + 1 {
            return Err(Error::InvalidArgument(
                "a sequence needs one more observation than actions".into(),
            ));
        }
        Ok(ObservationSequence { observations, actions })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Maps each step to `(visible configuration, predicted performance)` and
/// appends the terminal symbol.
pub fn classify_sequences<P: PerformancePredictor + ?Sized>(
    classifier: &P,
    batch: &TrajectoryBatch,
    missions: &[usize],
) -> Result<Vec<ObservationSequence>> {
    missions
        .iter()
        .map(|&m| {
            let steps = &batch.missions[m].steps;
            let mut observations = Vec::with_capacity(steps.len() + 1);
            for step in steps {
                let perf = classifier.predict_step(step.config, &step.features)?;
                observations.push(step.config.state(perf));
            }
            observations.push(GAMEOVER);
            let actions = steps.iter().map(|s| s.action).collect();
            ObservationSequence::new(observations, actions)
        })
        .collect()
}

/// Whether `T(next | state, action)` is a free parameter.
pub fn allowed(state: usize, action: usize, next: usize) -> bool {
    if state == GAMEOVER {
        next == GAMEOVER
    } else {
        frg::transition_allowed(action, next)
    }
}

fn allowed_next(action: usize) -> [usize; 3] {
    let [np, p] = frg::VisibleConfig::target_of(action).states();
    [np, p, GAMEOVER]
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    /// Uniform over allowed entries mixed with a Dirichlet(1) draw; the best
    /// of `restarts` runs is kept.
    Random { restarts: usize },
    /// A single run starting from the given transition table.
    Warm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub init: EmInit,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-6,
            max_iter: 500,
            init: EmInit::Random { restarts: 5 },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFitResult {
    /// Dense `(action, state, next)` layout as in [`DiscretePomdp`].
    pub transition: Vec<f64>,
    /// Log-likelihood of the parameters entering each iteration; the last
    /// entry belongs to the returned parameters.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
}

impl EmFitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("at least one E-step")
    }
}

fn idx(action: usize, state: usize, next: usize) -> usize {
    (action * NUM_STATES + state) * NUM_STATES + next
}

/// Puts the terminal row in place and zeroes forbidden entries, then
/// renormalizes allowed entries.
fn project(transition: &mut [f64]) {
    for a in 0..NUM_ACTIONS {
        for s in 0..NUM_STATES {
            let row = &mut transition[idx(a, s, 0)..idx(a, s, 0) + NUM_STATES];
            for (n, p) in row.iter_mut().enumerate() {
                if !allowed(s, a, n) {
                    *p = 0.0;
                }
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|p| *p /= total);
            } else {
                let k = row.iter().enumerate().filter(|(n, _)| allowed(s, a, *n)).count() as f64;
                for (n, p) in row.iter_mut().enumerate() {
                    *p = if allowed(s, a, n) { 1.0 / k } else { 0.0 };
                }
            }
        }
    }
}

fn random_init(seed: u64, restart: usize) -> Vec<f64> {
    let mut rng = seeded(seed, &[restart as u64]);
    let mut t = vec![0.0; NUM_ACTIONS * NUM_STATES * NUM_STATES];
    for a in 0..NUM_ACTIONS {
        for s in 0..NUM_STATES {
            if s == GAMEOVER {
                t[idx(a, s, GAMEOVER)] = 1.0;
                continue;
            }
            let jitter = sample_dirichlet(&[1.0; 3], &mut rng);
            for (k, &n) in allowed_next(a).iter().enumerate() {
                t[idx(a, s, n)] = 0.5 / 3.0 + 0.5 * jitter[k];
            }
        }
    }
    t
}

struct Workspace {
    alpha: Vec<[f64; NUM_STATES]>,
    beta: Vec<[f64; NUM_STATES]>,
    scale: Vec<f64>,
}

/// One E-step: expected transition counts and total log-likelihood.
fn expectation(
    sequences: &[ObservationSequence],
    emission: &[f64],
    m: usize,
    transition: &[f64],
    counts: &mut [f64],
    ws: &mut Workspace,
) -> Result<f64> {
    counts.iter_mut().for_each(|c| *c = 0.0);
    let prior = 1.0 / (NUM_STATES - 1) as f64;
    let e = |s: usize, o: usize| emission[s * m + o];
    let mut loglik = 0.0;
    for (q, seq) in sequences.iter().enumerate() {
        let len = seq.observations.len();
        ws.alpha.resize(len, [0.0; NUM_STATES]);
        ws.beta.resize(len, [0.0; NUM_STATES]);
        ws.scale.resize(len, 0.0);

        let o0 = seq.observations[0];
        let mut first = [0.0; NUM_STATES];
        for s in 0..GAMEOVER {
            first[s] = prior * e(s, o0);
        }
        let c0: f64 = first.iter().sum();
        if !(c0 > 0.0) {
            return Err(Error::NonFiniteLikelihood { sequence: q });
        }
        first.iter_mut().for_each(|v| *v /= c0);
        ws.alpha[0] = first;
        ws.scale[0] = c0;

        for t in 1..len {
            let a = seq.actions[t - 1];
            let o = seq.observations[t];
            let prev = ws.alpha[t - 1];
            let mut cur = [0.0; NUM_STATES];
            for n in allowed_next(a) {
                let emit = e(n, o);
                if emit == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for (s, &p) in prev.iter().enumerate() {
                    acc += p * transition[idx(a, s, n)];
                }
                cur[n] = acc * emit;
            }
            let c: f64 = cur.iter().sum();
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::NonFiniteLikelihood { sequence: q });
            }
            cur.iter_mut().for_each(|v| *v /= c);
            ws.alpha[t] = cur;
            ws.scale[t] = c;
        }

        ws.beta[len - 1] = [1.0; NUM_STATES];
        for t in (0..len - 1).rev() {
            let a = seq.actions[t];
            let o = seq.observations[t + 1];
            let c = ws.scale[t + 1];
            let next = ws.beta[t + 1];
            let mut weighted = [0.0; NUM_STATES];
            for n in allowed_next(a) {
                weighted[n] = e(n, o) * next[n] / c;
            }
            let mut cur = [0.0; NUM_STATES];
            for (s, v) in cur.iter_mut().enumerate() {
                *v = allowed_next(a)
                    .iter()
                    .map(|&n| transition[idx(a, s, n)] * weighted[n])
                    .sum();
            }
            // Expected transition counts for this step.
            let alpha = ws.alpha[t];
            for (s, &al) in alpha.iter().enumerate() {
                if al == 0.0 {
                    continue;
                }
                for n in allowed_next(a) {
                    counts[idx(a, s, n)] += al * transition[idx(a, s, n)] * weighted[n];
                }
            }
            ws.beta[t] = cur;
        }
        loglik += ws.scale[..len].iter().map(|c| c.ln()).sum::<f64>();
    }
    if !loglik.is_finite() {
        return Err(Error::NonFiniteLikelihood { sequence: 0 });
    }
    Ok(loglik)
}

/// Normalizes expected counts row by row; rows without evidence keep their
/// previous values.
fn maximization(counts: &[f64], transition: &mut [f64]) {
    for a in 0..NUM_ACTIONS {
        for s in 0..GAMEOVER {
            let base = idx(a, s, 0);
            let total: f64 = counts[base..base + NUM_STATES].iter().sum();
            if total > 0.0 {
                for n in 0..NUM_STATES {
                    transition[base + n] = counts[base + n] / total;
                }
            }
        }
    }
}

fn run(
    sequences: &[ObservationSequence],
    emission: &[f64],
    m: usize,
    mut transition: Vec<f64>,
    config: &EmConfig,
    restart: usize,
) -> Result<EmFitResult> {
    project(&mut transition);
    let mut counts = vec![0.0; transition.len()];
    let mut ws = Workspace {
        alpha: Vec::new(),
        beta: Vec::new(),
        scale: Vec::new(),
    };
    let mut trace = Vec::new();
    let mut converged = false;
    loop {
        let ll = expectation(sequences, emission, m, &transition, &mut counts, &mut ws)?;
        let done = trace.last().is_some_and(|&prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        if done {
            converged = true;
            break;
        }
        if trace.len() > config.max_iter {
            break;
        }
        maximization(&counts, &mut transition);
    }
    Ok(EmFitResult {
        transition,
        iterations: trace.len() - 1,
        loglik_trace: trace,
        converged,
        restart,
    })
}

/// Fits the action-indexed transition table with the emission table held
/// fixed. `emission[s * m + o]` is `O(o | s)` for `m` observation symbols.
pub fn em_fit(sequences: &[ObservationSequence], emission: &[f64], config: &EmConfig) -> Result<EmFitResult> {
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyData);
    }
    if !(config.tol > 0.0) {
        return Err(Error::InvalidArgument("EM tolerance must be positive".into()));
    }
    let m = emission.len() / NUM_STATES;
    if m * NUM_STATES != emission.len() || sequences.iter().any(|s| s.observations.iter().any(|&o| o >= m)) {
        return Err(Error::InvalidArgument(
            "emission table does not match the observation alphabet".into(),
        ));
    }
    match &config.init {
        EmInit::Warm(start) => run(sequences, emission, m, start.clone(), config, 0),
        EmInit::Random { restarts } => {
            let fits = par::try_map_indexed((*restarts).max(1), |r| {
                run(sequences, emission, m, random_init(config.seed, r), config, r)
            })?;
            Ok(fits
                .into_iter()
                .reduce(|best, f| {
                    if f.final_loglik() > best.final_loglik() {
                        f
                    } else {
                        best
                    }
                })
                .expect("at least one restart"))
        }
    }
}

/// The trivial POMDP: fitted dynamics, an observation table, state rewards,
/// and the default start (manual with alarms, performance 0.5/0.5).
pub fn assemble_pomdp(
    transition: &[f64],
    observation: &[f64],
    reward: &[f64],
    discount: f64,
    horizon: usize,
) -> Result<DiscretePomdp> {
    let model = DiscretePomdp {
        states: frg::state_labels(),
        actions: frg::action_labels(),
        observations: frg::state_labels(),
        transition: transition.to_vec(),
        observation: observation.to_vec(),
        reward: reward.to_vec(),
        discount,
        horizon,
        initial_belief: fixture::initial_belief(),
    };
    model.ensure_valid()?;
    Ok(model)
}

/// MDP over classifier-hardened states: counts per `(state, action, next)`
/// and transition probabilities `(count + alpha0) / Σ(count + alpha0)` over
/// structurally allowed entries. Each sequence's observations are read as
/// states.
pub fn mdp_from_sequences(
    sequences: &[ObservationSequence],
    reward: &[f64],
    discount: f64,
    horizon: usize,
    alpha0: f64,
) -> Result<DiscreteMdp> {
    if sequences.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut counts = vec![0u64; NUM_ACTIONS * NUM_STATES * NUM_STATES];
    for seq in sequences {
        for (t, &a) in seq.actions.iter().enumerate() {
            let (s, n) = (seq.observations[t], seq.observations[t + 1]);
            if !allowed(s, a, n) {
                return Err(Error::InvalidArgument(format!(
                    "transition {} -{}-> {} violates the configuration structure",
                    frg::STATE_LABELS[s],
                    frg::ACTION_LABELS[a],
                    frg::STATE_LABELS[n]
                )));
            }
            counts[idx(a, s, n)] += 1;
        }
    }
    let mut transition = vec![0.0; counts.len()];
    for a in 0..NUM_ACTIONS {
        for s in 0..NUM_STATES {
            if s == GAMEOVER {
                transition[idx(a, s, GAMEOVER)] = 1.0;
                continue;
            }
            let next = allowed_next(a);
            let total: f64 = next.iter().map(|&n| counts[idx(a, s, n)] as f64 + alpha0).sum();
            for n in next {
                transition[idx(a, s, n)] = (counts[idx(a, s, n)] as f64 + alpha0) / total;
            }
        }
    }
    Ok(DiscreteMdp {
        states: frg::state_labels(),
        actions: frg::action_labels(),
        transition,
        reward: reward.to_vec(),
        discount,
        horizon,
        transition_counts: counts,
    })
}

/// Missions of `model` under uniformly random actions from its initial
/// belief, each ending with the terminal symbol. A mission still running
/// after `max_len` actions gets one more random action leading to g, as in
/// recorded batches. With `exact` the hidden states are recorded instead of
/// observations.
pub fn simulate_sequences(
    model: &DiscretePomdp,
    missions: usize,
    max_len: usize,
    seed: u64,
    exact: bool,
) -> Vec<ObservationSequence> {
    let mut rng = seeded(seed, &[]);
    (0..missions)
        .map(|_| {
            let mut s = model.sample_initial_state(&mut rng);
            let first = sample_index(model.observation_row(s), &mut rng);
            let mut obs = vec![if exact { s } else { first }];
            let mut acts = Vec::new();
            for _ in 0..max_len {
                let a = rng.random_range(0..model.num_actions());
                let t = model.step(s, a, &mut rng);
                acts.push(a);
                s = t.next;
                obs.push(if exact { t.next } else { t.observation });
                if model.is_terminal(s) {
                    break;
                }
            }
            if !model.is_terminal(s) {
                acts.push(rng.random_range(0..model.num_actions()));
                obs.push(GAMEOVER);
            }
            ObservationSequence::new(obs, acts).expect("one more observation than actions")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::frg_fixture;
    use crate::frg::{Performance, VisibleConfig};

    fn identity(n: usize) -> Vec<f64> {
        (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn identity_emission_reduces_to_counting() {
        let model = frg_fixture();
        let seqs = simulate_sequences(&model, 60, 60, 4, true);
        let fit = em_fit(
            &seqs,
            &identity(9),
            &EmConfig {
                init: EmInit::Random { restarts: 2 },
                ..Default::default()
            },
        )
        .unwrap();
        let mdp = mdp_from_sequences(&seqs, &model.reward, 0.98, 60, 0.0).unwrap();
        for a in 0..NUM_ACTIONS {
            for s in 0..GAMEOVER {
                let row_total: u64 = (0..NUM_STATES).map(|n| mdp.transition_counts[idx(a, s, n)]).sum();
                if row_total == 0 {
                    continue;
                }
                for n in 0..NUM_STATES {
                    let freq = mdp.transition_counts[idx(a, s, n)] as f64 / row_total as f64;
                    assert!((fit.transition[idx(a, s, n)] - freq).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn loglik_never_decreases() {
        let model = frg_fixture();
        let seqs = simulate_sequences(&model, 40, 60, 8, false);
        let fit = em_fit(
            &seqs,
            &model.observation,
            &EmConfig {
                init: EmInit::Random { restarts: 3 },
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-7, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn structural_zeros_survive_em() {
        let model = frg_fixture();
        let seqs = simulate_sequences(&model, 30, 60, 9, false);
        let fit = em_fit(
            &seqs,
            &model.observation,
            &EmConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for a in 0..NUM_ACTIONS {
            for s in 0..NUM_STATES {
                let row: f64 = (0..NUM_STATES).map(|n| fit.transition[idx(a, s, n)]).sum();
                assert!((row - 1.0).abs() < 1e-9);
                for n in 0..NUM_STATES {
                    if !allowed(s, a, n) {
                        assert_eq!(fit.transition[idx(a, s, n)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let model = frg_fixture();
        let seqs = simulate_sequences(&model, 20, 60, 10, false);
        let config = EmConfig {
            seed: 12,
            ..Default::default()
        };
        assert_eq!(
            em_fit(&seqs, &model.observation, &config).unwrap(),
            em_fit(&seqs, &model.observation, &config).unwrap()
        );
    }

    #[test]
    fn inconsistent_observation_is_non_finite() {
        let model = frg_fixture();
        // manual_on followed by an auto observation.
        let seq = ObservationSequence::new(vec![3, 7, GAMEOVER], vec![0, 0]).unwrap();
        let err = em_fit(&[seq], &model.observation, &EmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLikelihood { sequence: 0 }));
    }

    #[test]
    fn empty_data_is_rejected() {
        assert!(matches!(
            em_fit(&[], &identity(9), &EmConfig::default()),
            Err(Error::EmptyData)
        ));
    }

    #[test]
    fn counting_a_short_sequence() {
        let s1 = VisibleConfig::ALL[0].state(Performance::Performant);
        let s2 = VisibleConfig::ALL[0].state(Performance::NonPerformant);
        let seq = ObservationSequence::new(vec![s1, s2, GAMEOVER], vec![0, 0]).unwrap();
        let mdp = mdp_from_sequences(&[seq], &[0.0; 9], 0.9, 60, 1.0).unwrap();
        let nonzero: Vec<(usize, u64)> = mdp
            .transition_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
            .collect();
        let mut expected = vec![(idx(0, s1, s2), 1), (idx(0, s2, GAMEOVER), 1)];
        expected.sort();
        assert_eq!(nonzero, expected);
        // Untouched allowed rows are uniform after smoothing.
        let row = mdp.transition_row(5, 3);
        assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 3);
        assert!(row.iter().all(|&p| p == 0.0 || (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn counting_recovers_a_known_mdp() {
        let model = frg_fixture();
        // Missions run until they reach g, so no terminal entries are invented.
        let seqs = simulate_sequences(&model, 1500, 100_000, 21, true);
        let steps: usize = seqs.iter().map(|s| s.actions.len()).sum();
        assert!(steps >= 10_000, "{steps}");
        let mdp = mdp_from_sequences(&seqs, &model.reward, 0.98, 60, 0.0).unwrap();
        let min_row = (0..NUM_ACTIONS * GAMEOVER)
            .map(|r| {
                (0..NUM_STATES)
                    .map(|n| mdp.transition_counts[r / GAMEOVER * 81 + r % GAMEOVER * 9 + n])
                    .sum::<u64>()
            })
            .min()
            .unwrap();
        // With at least ~1000 visits per row the standard error is below 0.008.
        assert!(min_row >= 1000, "{min_row}");
        let gap = mdp
            .transition
            .iter()
            .zip(&model.transition)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap < 0.03, "{gap}");
    }
}
