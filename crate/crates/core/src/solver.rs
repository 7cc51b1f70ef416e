//! Candidate policies: randomized point-based value iteration for POMDPs and
//! value iteration for MDPs.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Belief, DiscreteMdp, DiscretePomdp};
use crate::par;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVector {
    pub values: Vec<f64>,
    pub action: usize,
}

impl AlphaVector {
    pub fn dot(&self, belief: &Belief) -> f64 {
        belief.dot(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverMeta {
    pub iterations: usize,
    pub belief_count: usize,
    pub residual: f64,
    pub converged: bool,
}

impl Default for SolverMeta {
    fn default() -> Self {
        SolverMeta {
            iterations: 0,
            belief_count: 0,
            residual: 0.0,
            converged: true,
        }
    }
}

/// Piecewise-linear convex value function; each vector carries the action
/// that is greedy where it is maximal.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaVectorPolicy {
    pub vectors: Vec<AlphaVector>,
    pub discount: f64,
    pub meta: SolverMeta,
}

impl AlphaVectorPolicy {
    pub fn new(vectors: Vec<AlphaVector>, discount: f64) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidArgument(
                "a policy needs at least one alpha vector".into(),
            ));
        }
        if vectors.iter().any(|v| v.values.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidArgument("alpha vectors must be finite".into()));
        }
        Ok(AlphaVectorPolicy {
            vectors,
            discount,
            meta: SolverMeta::default(),
        })
    }

    /// Index of the maximizing vector; among ties the lowest action wins,
    /// then the earliest vector.
    fn best(&self, belief: &Belief) -> usize {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for (i, v) in self.vectors.iter().enumerate() {
            let value = v.dot(belief);
            if value > best_value || (value == best_value && v.action < self.vectors[best].action) {
                best = i;
                best_value = value;
            }
        }
        best
    }

    pub fn action(&self, belief: &Belief) -> usize {
        self.vectors[self.best(belief)].action
    }

    pub fn value(&self, belief: &Belief) -> f64 {
        self.vectors[self.best(belief)].dot(belief)
    }

    /// Drops vectors that are pointwise dominated by another vector. Of two
    /// identical vectors the one with the lower action survives.
    pub fn prune_dominated(&mut self) {
        let n = self.vectors.len();
        let mut keep = vec![true; n];
        for i in 0..n {
            for j in 0..n {
                if i == j || !keep[j] {
                    continue;
                }
                let (a, b) = (&self.vectors[i], &self.vectors[j]);
                let dominated = a.values.iter().zip(&b.values).all(|(x, y)| x <= y);
                if !dominated {
                    continue;
                }
                let identical = a.values == b.values;
                if !identical || b.action < a.action || (b.action == a.action && j < i) {
                    keep[i] = false;
                    break;
                }
            }
        }
        let mut k = 0;
        self.vectors.retain(|_| {
            k += 1;
            keep[k - 1]
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerseusConfig {
    pub belief_count: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PerseusConfig {
    fn default() -> Self {
        PerseusConfig {
            belief_count: 500,
            max_iter: 200,
            epsilon: 1e-4,
            seed: 0,
        }
    }
}

/// Beliefs reached by uniformly random actions from the initial belief.
/// Episodes restart at the terminal state or after the model horizon.
pub fn explore_beliefs(model: &DiscretePomdp, count: usize, seed: u64) -> Vec<Belief> {
    let mut rng = seeded(seed, &[0xBE11EF]);
    let mut out = vec![model.initial_belief.clone()];
    let mut guard = 0;
    while out.len() < count && guard < 100 * count {
        let mut state = model.sample_initial_state(&mut rng);
        let mut belief = model.initial_belief.clone();
        for _ in 0..model.horizon.max(1) {
            guard += 1;
            let action = rng.random_range(0..model.num_actions());
            let t = model.step(state, action, &mut rng);
            let Ok(next) = model.belief_update(&belief, action, t.observation) else {
                break;
            };
            state = t.next;
            belief = next;
            if !out.iter().any(|b| b == &belief) {
                out.push(belief.clone());
                if out.len() >= count {
                    break;
                }
            }
            if model.is_terminal(state) {
                break;
            }
        }
    }
    out
}

/// Precomputed `R(s, a) = Σ_s' T(s'|s,a) R(s')`.
fn expected_rewards(model: &DiscretePomdp) -> Vec<Vec<f64>> {
    (0..model.num_actions())
        .map(|a| {
            (0..model.num_states())
                .map(|s| {
                    model
                        .transition_row(s, a)
                        .iter()
                        .zip(&model.reward)
                        .map(|(t, r)| t * r)
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Value of always taking one action; a lower bound on the optimal value.
fn blind_vector(model: &DiscretePomdp, rsa: &[f64], action: usize, discount: f64) -> Vec<f64> {
    let n = model.num_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                rsa[s]
                    + discount
                        * model
                            .transition_row(s, action)
                            .iter()
                            .zip(&v)
                            .map(|(t, x)| t * x)
                            .sum::<f64>()
            })
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-12 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs()))) {
            return v;
        }
    }
}

struct Backup<'a> {
    model: &'a DiscretePomdp,
    rsa: Vec<Vec<f64>>,
    discount: f64,
    /// For each observation, the (next-state, O(o|s')) pairs with positive
    /// probability.
    emitters: Vec<Vec<(usize, f64)>>,
}

impl<'a> Backup<'a> {
    fn new(model: &'a DiscretePomdp, discount: f64) -> Self {
        let emitters = (0..model.num_observations())
            .map(|o| {
                (0..model.num_states())
                    .filter(|&s| model.o(s, o) > 0.0)
                    .map(|s| (s, model.o(s, o)))
                    .collect()
            })
            .collect();
        Backup {
            rsa: expected_rewards(model),
            model,
            discount,
            emitters,
        }
    }

    /// `g[i][a][o](s) = Σ_s' T(s'|s,a) O(o|s') α_i(s')`, flattened as
    /// `((i * A + a) * O + o) * S + s`.
    fn projections(&self, vectors: &[AlphaVector]) -> Vec<f64> {
        let (n, k, m) = (
            self.model.num_states(),
            self.model.num_actions(),
            self.model.num_observations(),
        );
        let mut g = vec![0.0; vectors.len() * k * m * n];
        for (i, v) in vectors.iter().enumerate() {
            for a in 0..k {
                for o in 0..m {
                    let base = ((i * k + a) * m + o) * n;
                    for &(next, p_obs) in &self.emitters[o] {
                        let w = p_obs * v.values[next];
                        if w == 0.0 {
                            continue;
                        }
                        for s in 0..n {
                            g[base + s] += self.model.t(s, a, next) * w;
                        }
                    }
                }
            }
        }
        g
    }

    /// Only the belief's support and the observations it can produce are
    /// visited; skipped terms are exact zeros, so the result equals the
    /// dense computation.
    fn backup(&self, belief: &Belief, vectors: &[AlphaVector], g: &[f64]) -> AlphaVector {
        let (n, k, m) = (
            self.model.num_states(),
            self.model.num_actions(),
            self.model.num_observations(),
        );
        let support = belief.support();
        let mass = belief.mass();
        let sparse_dot = |row: &[f64]| support.iter().fold(0.0, |acc, &s| acc + mass[s] * row[s]);
        let mut best: Option<(f64, AlphaVector)> = None;
        for a in 0..k {
            let mut values = self.rsa[a].clone();
            for o in 0..m {
                if self.emitters[o].is_empty() {
                    continue;
                }
                let possible = support
                    .iter()
                    .any(|&s| self.emitters[o].iter().any(|&(next, _)| self.model.t(s, a, next) > 0.0));
                let mut arg = 0;
                if possible {
                    let mut arg_value = f64::NEG_INFINITY;
                    for i in 0..vectors.len() {
                        let base = ((i * k + a) * m + o) * n;
                        let value = sparse_dot(&g[base..base + n]);
                        if value > arg_value {
                            arg = i;
                            arg_value = value;
                        }
                    }
                }
                let base = ((arg * k + a) * m + o) * n;
                for s in 0..n {
                    values[s] += self.discount * g[base + s];
                }
            }
            let candidate = AlphaVector { values, action: a };
            let value = candidate.dot(belief);
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, candidate));
            }
        }
        best.expect("at least one action").1
    }
}

fn value_at(vectors: &[AlphaVector], belief: &Belief) -> f64 {
    vectors.iter().map(|v| v.dot(belief)).fold(f64::NEG_INFINITY, f64::max)
}

/// Per-iteration record of the solver, used to check monotone improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub beliefs: Vec<Belief>,
    /// `values[k][j]`: value at belief `j` after iteration `k` (row 0 is the
    /// initial lower bound).
    pub values: Vec<Vec<f64>>,
}

/// Randomized point-based value iteration over explored beliefs, started
/// from the blind-policy lower bound. Every sweep backs up all beliefs,
/// then keeps a random covering subset of the new vectors: a belief is
/// covered once some kept vector reaches its backed-up value. Stops when
/// the largest Bellman improvement over the beliefs is below `epsilon`, or
/// after `max_iter` sweeps (flagged as not converged).
pub fn solve_pomdp(model: &DiscretePomdp, discount: f64, config: &PerseusConfig) -> Result<AlphaVectorPolicy> {
    solve_pomdp_traced(model, discount, config, false).map(|(p, _)| p)
}

pub fn solve_pomdp_traced(
    model: &DiscretePomdp,
    discount: f64,
    config: &PerseusConfig,
    keep_trace: bool,
) -> Result<(AlphaVectorPolicy, Option<SolveTrace>)> {
    model.ensure_valid()?;
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
    }
    let beliefs = explore_beliefs(model, config.belief_count, config.seed);
    let backup = Backup::new(model, discount);
    let mut vectors: Vec<AlphaVector> = (0..model.num_actions())
        .map(|a| AlphaVector {
            values: blind_vector(model, &backup.rsa[a], a, discount),
            action: a,
        })
        .collect();
    let mut current: Vec<f64> = beliefs.iter().map(|b| value_at(&vectors, b)).collect();
    let mut trace = keep_trace.then(|| SolveTrace {
        beliefs: beliefs.clone(),
        values: vec![current.clone()],
    });

    let mut rng = seeded(config.seed, &[0x5EED]);
    let mut meta = SolverMeta {
        iterations: 0,
        belief_count: beliefs.len(),
        residual: f64::INFINITY,
        converged: false,
    };
    loop {
        let g = backup.projections(&vectors);
        let backed: Vec<AlphaVector> = beliefs.iter().map(|b| backup.backup(b, &vectors, &g)).collect();
        let backed_values: Vec<f64> = backed.iter().zip(&beliefs).map(|(a, b)| a.dot(b)).collect();
        meta.residual = backed_values
            .iter()
            .zip(&current)
            .map(|(n, c)| n - c)
            .fold(0.0, f64::max);
        if meta.residual < config.epsilon {
            meta.converged = true;
            break;
        }
        if meta.iterations >= config.max_iter {
            break;
        }
        // A belief leaves the pending set once the new vectors reach its
        // backed-up value (or keep its old value when the backup is worse).
        let target: Vec<f64> = backed_values.iter().zip(&current).map(|(b, c)| b.max(*c)).collect();
        let mut next: Vec<AlphaVector> = Vec::new();
        let mut next_values = vec![f64::NEG_INFINITY; beliefs.len()];
        let mut pending: Vec<usize> = (0..beliefs.len()).collect();
        while let Some(&j) = pending.choose(&mut rng) {
            let b = &beliefs[j];
            let alpha = if backed_values[j] >= current[j] {
                backed[j].clone()
            } else {
                vectors
                    .iter()
                    .max_by(|x, y| x.dot(b).total_cmp(&y.dot(b)))
                    .expect("non-empty value function")
                    .clone()
            };
            if !next.contains(&alpha) {
                for (v, bb) in next_values.iter_mut().zip(&beliefs) {
                    *v = v.max(alpha.dot(bb));
                }
                next.push(alpha);
            }
            pending.retain(|&i| i != j && next_values[i] < target[i]);
        }
        vectors = next;
        current = next_values;
        meta.iterations += 1;
        if let Some(t) = trace.as_mut() {
            t.values.push(current.clone());
        }
    }
    if !meta.converged {
        log::warn!(
            "point-based solver stopped after {} sweeps with improvement {}",
            meta.iterations,
            meta.residual
        );
    }
    let mut policy = AlphaVectorPolicy {
        vectors,
        discount,
        meta,
    };
    policy.prune_dominated();
    Ok((policy, trace))
}

/// Solves one candidate per discount factor, in parallel; each solve is
/// seeded from `config.seed` and the discount's position.
pub fn solve_sweep(model: &DiscretePomdp, discounts: &[f64], config: &PerseusConfig) -> Result<Vec<AlphaVectorPolicy>> {
    par::try_map_indexed(discounts.len(), |i| {
        let config = PerseusConfig {
            seed: derive_seed(config.seed, &[i as u64]),
            ..config.clone()
        };
        solve_pomdp(model, discounts[i], &config)
    })
}

/// Greedy state-feedback policy with its value function.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePolicy {
    pub action: Vec<usize>,
    pub value: Vec<f64>,
    pub residual: f64,
    pub discount: f64,
}

fn q_value(mdp: &DiscreteMdp, v: &[f64], s: usize, a: usize, discount: f64) -> f64 {
    mdp.transition_row(s, a)
        .iter()
        .enumerate()
        .map(|(n, t)| t * (mdp.reward[n] + discount * v[n]))
        .sum()
}

/// Greedy action for a value function; ties go to the lowest action.
pub fn greedy_actions(mdp: &DiscreteMdp, v: &[f64], discount: f64) -> Vec<usize> {
    (0..mdp.num_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = f64::NEG_INFINITY;
            for a in 0..mdp.num_actions() {
                let q = q_value(mdp, v, s, a, discount);
                if q > best_q {
                    best = a;
                    best_q = q;
                }
            }
            best
        })
        .collect()
}

/// Value iteration until the sup-norm Bellman residual is at most `tol`.
pub fn solve_mdp_vi(mdp: &DiscreteMdp, discount: f64, tol: f64) -> Result<StatePolicy> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::InvalidArgument(format!("discount {discount} not in (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let n = mdp.num_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| q_value(mdp, &v, s, a, discount))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= tol {
            return Ok(StatePolicy {
                action: greedy_actions(mdp, &v, discount),
                value: v,
                residual,
                discount,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::frg_fixture;
    use crate::frg::{Performance, VisibleConfig, GAMEOVER};

    fn pair_belief(config: VisibleConfig, beta: f64) -> Belief {
        let mut mass = vec![0.0; 9];
        let [np, p] = config.states();
        mass[p] = beta;
        mass[np] = 1.0 - beta;
        Belief::new(mass)
    }

    /// Exact policy iteration on the hidden-state MDP.
    fn policy_iteration(mdp: &DiscreteMdp, discount: f64) -> Vec<usize> {
        let n = mdp.num_states();
        let mut policy = vec![0usize; n];
        loop {
            // Evaluate by iterating the fixed-policy operator to machine precision.
            let mut v = vec![0.0; n];
            for _ in 0..20_000 {
                v = (0..n).map(|s| q_value(mdp, &v, s, policy[s], discount)).collect();
            }
            let improved = greedy_actions(mdp, &v, discount);
            let stable = (0..n).all(|s| {
                improved[s] == policy[s]
                    || (q_value(mdp, &v, s, improved[s], discount) - q_value(mdp, &v, s, policy[s], discount)).abs()
                        < 1e-12
            });
            if stable {
                return policy;
            }
            policy = improved;
        }
    }

    #[test]
    fn vi_matches_policy_iteration_on_fixture_dynamics() {
        let mdp = DiscreteMdp::from_pomdp(&frg_fixture());
        let vi = solve_mdp_vi(&mdp, 0.98, 1e-10).unwrap();
        assert_eq!(vi.action, policy_iteration(&mdp, 0.98));
        let m_p_on = VisibleConfig::ALL[0].state(Performance::Performant);
        assert_eq!(vi.action[m_p_on], 0);
        assert_eq!(vi.value[GAMEOVER], 0.0);
    }

    #[test]
    fn myopic_vi_maximizes_next_reward() {
        let mdp = DiscreteMdp::from_pomdp(&frg_fixture());
        let vi = solve_mdp_vi(&mdp, 1e-9, 1e-12).unwrap();
        for s in 0..9 {
            let next_reward = |a: usize| -> f64 {
                mdp.transition_row(s, a)
                    .iter()
                    .zip(&mdp.reward)
                    .map(|(t, r)| t * r)
                    .sum()
            };
            let best = (0..4).map(next_reward).fold(f64::NEG_INFINITY, f64::max);
            assert!((next_reward(vi.action[s]) - best).abs() < 1e-12);
        }
    }

    #[test]
    fn vi_residual_contracts() {
        let mdp = DiscreteMdp::from_pomdp(&frg_fixture());
        let g = 0.9;
        let mut v = vec![0.0; 9];
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let next: Vec<f64> = (0..9)
                .map(|s| {
                    (0..4)
                        .map(|a| q_value(&mdp, &v, s, a, g))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let r = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(r <= g * last + 1e-12);
            last = r;
            v = next;
        }
    }

    #[test]
    fn single_vector_policy_acts_constantly() {
        let p = AlphaVectorPolicy::new(
            vec![AlphaVector {
                values: vec![1.0, 2.0],
                action: 3,
            }],
            0.9,
        )
        .unwrap();
        for beta in [0.0, 0.3, 1.0] {
            assert_eq!(p.action(&Belief::new(vec![beta, 1.0 - beta])), 3);
        }
    }

    #[test]
    fn crossing_vectors_switch_at_intersection() {
        // v0 = (0, 1), v1 = (0.6, 0.2): equal where 1 - b = 0.6 b + 0.2 (1 - b), b* = 0.8 / 1.4.
        let p = AlphaVectorPolicy::new(
            vec![
                AlphaVector {
                    values: vec![0.0, 1.0],
                    action: 0,
                },
                AlphaVector {
                    values: vec![0.6, 0.2],
                    action: 1,
                },
            ],
            0.9,
        )
        .unwrap();
        let cross = 0.8 / 1.4;
        let at = |b: f64| p.action(&Belief::new(vec![b, 1.0 - b]));
        assert_eq!(at(cross - 1e-9), 0);
        assert_eq!(at(cross + 1e-9), 1);
    }

    #[test]
    fn dominated_vector_does_not_change_value() {
        let mut p = AlphaVectorPolicy::new(
            vec![AlphaVector {
                values: vec![1.0, 2.0],
                action: 0,
            }],
            0.9,
        )
        .unwrap();
        let b = Belief::new(vec![0.25, 0.75]);
        let before = p.value(&b);
        p.vectors.push(AlphaVector {
            values: vec![0.5, 1.0],
            action: 1,
        });
        assert_eq!(p.value(&b), before);
        p.prune_dominated();
        assert_eq!(p.vectors.len(), 1);
    }

    #[test]
    fn zero_reward_model_has_zero_value() {
        let model = frg_fixture().scale_rewards(0.0);
        let p = solve_pomdp(
            &model,
            0.95,
            &PerseusConfig {
                belief_count: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p.value(&model.initial_belief), 0.0);
    }

    #[test]
    fn single_state_geometric_series() {
        let model = DiscretePomdp {
            states: vec!["s".into()],
            actions: vec!["a".into()],
            observations: vec!["o".into()],
            transition: vec![1.0],
            observation: vec![1.0],
            reward: vec![1.0],
            discount: 0.9,
            horizon: 10,
            initial_belief: Belief::point(1, 0),
        };
        let p = solve_pomdp(&model, 0.9, &PerseusConfig::default()).unwrap();
        assert!((p.value(&model.initial_belief) - 10.0).abs() < 1e-4);
    }

    #[test]
    fn fixture_keeps_manual_alarms_when_performant_and_auto_alarms_when_not() {
        let model = frg_fixture();
        let p = solve_pomdp(&model, 0.98, &PerseusConfig::default()).unwrap();
        assert_eq!(p.action(&Belief::point(9, 3)), 0, "m_p_on");
        assert_eq!(p.action(&Belief::point(9, 5)), 2, "a_np_on");
    }

    #[test]
    fn fully_observable_solution_matches_vi_at_corners() {
        let mut model = frg_fixture();
        model.observation = (0..81).map(|i| if i / 9 == i % 9 { 1.0 } else { 0.0 }).collect();
        let p = solve_pomdp(&model, 0.95, &PerseusConfig::default()).unwrap();
        let vi = solve_mdp_vi(&DiscreteMdp::from_pomdp(&model), 0.95, 1e-10).unwrap();
        let beliefs = explore_beliefs(&model, 500, 0);
        for s in 0..GAMEOVER {
            let corner = Belief::point(9, s);
            // Only corners the solver's belief set covers are guaranteed.
            if beliefs.contains(&corner) {
                assert_eq!(p.action(&corner), vi.action[s], "state {s}");
            }
        }
    }

    #[test]
    fn values_never_decrease_across_sweeps() {
        let model = frg_fixture();
        let (_, trace) = solve_pomdp_traced(
            &model,
            0.9,
            &PerseusConfig {
                belief_count: 200,
                ..Default::default()
            },
            true,
        )
        .unwrap();
        let trace = trace.unwrap();
        for w in trace.values.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(b >= a);
            }
        }
    }

    #[test]
    fn pruning_preserves_actions() {
        let model = frg_fixture();
        let (mut raw, _) = {
            let mut cfg = PerseusConfig {
                belief_count: 200,
                ..Default::default()
            };
            cfg.seed = 4;
            solve_pomdp_traced(&model, 0.9, &cfg, false).unwrap()
        };
        // Add dominated copies, then prune them away again.
        let extra: Vec<AlphaVector> = raw
            .vectors
            .iter()
            .map(|v| AlphaVector {
                values: v.values.iter().map(|x| x - 0.5).collect(),
                action: (v.action + 1) % 4,
            })
            .collect();
        let reference = raw.clone();
        raw.vectors.extend(extra);
        raw.prune_dominated();
        let mut rng = seeded(99, &[]);
        for _ in 0..1000 {
            let w: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let b = Belief::from_weights(w).unwrap();
            assert_eq!(raw.action(&b), reference.action(&b));
        }
    }

    #[test]
    fn reward_scaling_scales_vectors() {
        let model = frg_fixture();
        let cfg = PerseusConfig {
            belief_count: 150,
            seed: 2,
            ..Default::default()
        };
        let p1 = solve_pomdp(&model, 0.9, &cfg).unwrap();
        // The stopping tolerance is absolute, so it scales with the rewards.
        let cfg3 = PerseusConfig {
            epsilon: 3.0 * cfg.epsilon,
            ..cfg.clone()
        };
        let p3 = solve_pomdp(&model.scale_rewards(3.0), 0.9, &cfg3).unwrap();
        assert_eq!(p1.meta.iterations, p3.meta.iterations);
        for beta in 0..=20 {
            for config in VisibleConfig::ALL {
                let b = pair_belief(config, beta as f64 / 20.0);
                assert_eq!(p1.action(&b), p3.action(&b));
                assert!((p3.value(&b) - 3.0 * p1.value(&b)).abs() < 1e-6 * p3.value(&b).max(1.0));
            }
        }
    }

    #[test]
    fn seeds_reach_the_same_policy() {
        let model = frg_fixture();
        let solve = |seed| {
            solve_pomdp(
                &model,
                0.95,
                &PerseusConfig {
                    belief_count: 200,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap()
        };
        let reference = solve(0);
        assert!(reference.meta.converged && reference.meta.iterations > 10);
        for seed in 1..6 {
            let p = solve(seed);
            assert!(p.meta.converged);
            let mut disagreements = 0;
            for beta in 0..=100 {
                for config in VisibleConfig::ALL {
                    let b = pair_belief(config, beta as f64 / 100.0);
                    assert!((p.value(&b) - reference.value(&b)).abs() < 0.05);
                    disagreements += (p.action(&b) != reference.action(&b)) as usize;
                }
            }
            // Boundaries may move by a grid step or two.
            assert!(disagreements <= 20, "seed {seed}: {disagreements}");
        }
    }
}
