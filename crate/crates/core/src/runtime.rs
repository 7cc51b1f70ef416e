//! Step-driven belief-tracking controller, trace export and the threshold
//! form of a policy.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frg::{self, VisibleConfig, GAMEOVER, NUM_STATES};
use crate::model::{marginal_performance, Belief, DiscretePomdp};
use crate::solver::AlphaVectorPolicy;

/// Seconds between two controller steps.
pub const STEP_SECONDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub observation: usize,
    /// Action chosen after the belief update.
    pub action: usize,
    pub beta: f64,
    pub belief: Belief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    model: DiscretePomdp,
    policy: AlphaVectorPolicy,
    belief: Belief,
    last_action: usize,
    step: usize,
    terminated: bool,
    trace: Vec<TraceRecord>,
}

fn terminal_mass(model: &DiscretePomdp, belief: &Belief) -> f64 {
    (0..model.num_states())
        .filter(|&s| model.is_terminal(s))
        .map(|s| belief.mass()[s])
        .sum()
}

impl ControllerState {
    /// Starts at the model's initial belief and picks the first action.
    pub fn new(model: DiscretePomdp, policy: AlphaVectorPolicy) -> Result<Self> {
        model.ensure_valid()?;
        if policy.vectors.iter().any(|v| v.values.len() != model.num_states()) {
            return Err(Error::Validation(
                "policy vectors do not match the model's states".into(),
            ));
        }
        if policy.vectors.iter().any(|v| v.action >= model.num_actions()) {
            return Err(Error::Validation("policy refers to an unknown action".into()));
        }
        if terminal_mass(&model, &model.initial_belief) >= 1.0 - 1e-12 {
            return Err(Error::TerminalStart);
        }
        let belief = model.initial_belief.clone();
        let last_action = policy.action(&belief);
        Ok(ControllerState {
            model,
            policy,
            belief,
            last_action,
            step: 0,
            terminated: false,
            trace: Vec::new(),
        })
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn beta(&self) -> f64 {
        marginal_performance(&self.belief)
    }

    /// The action currently in force.
    pub fn action(&self) -> usize {
        self.last_action
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn model(&self) -> &DiscretePomdp {
        &self.model
    }

    /// Folds one observation into the belief and returns the next action
    /// with the marginal performance belief. An observation the model
    /// deems impossible is discarded and only the prediction is applied.
    pub fn step(&mut self, observation: usize) -> Result<(usize, f64)> {
        if self.terminated {
            return Err(Error::Terminated);
        }
        if observation >= self.model.num_observations() {
            return Err(Error::InvalidArgument(format!(
                "unknown observation index {observation}"
            )));
        }
        self.belief = match self.model.belief_update(&self.belief, self.last_action, observation) {
            Ok(b) => b,
            Err(Error::ZeroLikelihood { .. }) => {
                log::warn!(
                    "step {}: observation `{}` impossible after `{}`, keeping prediction only",
                    self.step + 1,
                    self.model.observations[observation],
                    self.model.actions[self.last_action]
                );
                self.model.belief_predict(&self.belief, self.last_action)
            }
            Err(e) => return Err(e),
        };
        self.step += 1;
        self.terminated = terminal_mass(&self.model, &self.belief) >= 1.0 - 1e-12;
        self.last_action = self.policy.action(&self.belief);
        let beta = self.beta();
        self.trace.push(TraceRecord {
            step: self.step,
            observation,
            action: self.last_action,
            beta,
            belief: self.belief.clone(),
        });
        Ok((self.last_action, beta))
    }
}

pub fn controller_init(model: &DiscretePomdp, policy: &AlphaVectorPolicy) -> Result<ControllerState> {
    ControllerState::new(model.clone(), policy.clone())
}

pub fn controller_step(state: &mut ControllerState, observation: usize) -> Result<(usize, f64)> {
    state.step(observation)
}

/// Belief after replaying `(action, observation)` pairs with the same
/// update rule as the controller.
pub fn replay_belief(model: &DiscretePomdp, history: &[(usize, usize)]) -> Belief {
    let mut belief = model.initial_belief.clone();
    for &(a, o) in history {
        belief = model
            .belief_update(&belief, a, o)
            .unwrap_or_else(|_| model.belief_predict(&belief, a));
    }
    belief
}

/// Delimiter-separated trace: step, elapsed seconds, observation, action,
/// marginal performance belief, then the full belief.
pub fn format_trace(model: &DiscretePomdp, trace: &[TraceRecord]) -> String {
    let mut out = String::from("step,time_seconds,observation,action,beta");
    for s in &model.states {
        write!(out, ",b_{s}").unwrap();
    }
    out.push('\n');
    for r in trace {
        write!(
            out,
            "{},{},{},{},{}",
            r.step,
            STEP_SECONDS * r.step,
            model.observations[r.observation],
            model.actions[r.action],
            r.beta
        )
        .unwrap();
        for p in r.belief.mass() {
            write!(out, ",{p}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn export_trace(state: &ControllerState, path: &Path) -> Result<()> {
    if state.trace.is_empty() {
        return Err(Error::InvalidArgument("trace is empty".into()));
    }
    std::fs::write(path, format_trace(&state.model, &state.trace))?;
    Ok(())
}

pub fn parse_trace(model: &DiscretePomdp, text: &str, path: &Path) -> Result<Vec<TraceRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    let header_cols = 5 + model.num_states();
    match lines.next() {
        Some((_, h)) if h.split(',').count() == header_cols && h.starts_with("step,") => {}
        _ => return Err(Error::parse(path, 1, "missing or malformed trace header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header_cols {
            return Err(Error::parse(
                path,
                n,
                format!("expected {header_cols} columns, found {}", cols.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, n, format!("`{s}` is not a number")))
        };
        let step: usize = cols[0].parse().map_err(|_| Error::parse(path, n, "bad step index"))?;
        let observation = model
            .observation_index(cols[2])
            .ok_or_else(|| Error::parse(path, n, format!("unknown observation `{}`", cols[2])))?;
        let action = model
            .action_index(cols[3])
            .ok_or_else(|| Error::parse(path, n, format!("unknown action `{}`", cols[3])))?;
        let beta = num(cols[4])?;
        let mass = cols[5..].iter().map(|c| num(c)).collect::<Result<Vec<_>>>()?;
        out.push(TraceRecord {
            step,
            observation,
            action,
            beta,
            belief: Belief::new(mass),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigThresholds {
    pub config: VisibleConfig,
    /// Consecutive intervals covering `[0, 1]`.
    pub intervals: Vec<Interval>,
}

impl ConfigThresholds {
    pub fn boundaries(&self) -> Vec<f64> {
        self.intervals[1..].iter().map(|i| i.lo).collect()
    }

    pub fn action_at(&self, beta: f64) -> usize {
        self.intervals
            .iter()
            .find(|i| beta < i.hi)
            .unwrap_or_else(|| self.intervals.last().expect("non-empty"))
            .action
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub configs: Vec<ConfigThresholds>,
}

impl ThresholdTable {
    pub fn get(&self, config: VisibleConfig) -> &ConfigThresholds {
        &self.configs[config.index()]
    }
}

/// Belief with `beta` on the performant and `1 - beta` on the
/// non-performant state of `config`.
pub fn config_belief(config: VisibleConfig, beta: f64) -> Belief {
    let mut mass = vec![0.0; NUM_STATES];
    let [np, p] = config.states();
    mass[p] = beta;
    mass[np] = 1.0 - beta;
    Belief::new(mass)
}

/// Checks that every reachable belief lives on one configuration's two
/// states (or g): actions only reach their target configuration and the
/// configuration is observed exactly.
pub fn check_two_point_support(model: &DiscretePomdp) -> Result<()> {
    frg::check_layout(model)?;
    for a in 0..model.num_actions() {
        for s in 0..model.num_states() {
            for n in 0..model.num_states() {
                if model.t(s, a, n) > 0.0 && s != GAMEOVER && !frg::transition_allowed(a, n) {
                    return Err(Error::Validation(format!(
                        "action `{}` reaches `{}` from `{}`, outside its target configuration",
                        model.actions[a], model.states[n], model.states[s]
                    )));
                }
            }
        }
    }
    for s in 0..GAMEOVER {
        let (config, _) = frg::decompose(s).expect("non-terminal");
        for o in 0..model.num_observations() {
            let visible = frg::decompose(o).map(|(c, _)| c);
            if model.o(s, o) > 0.0 && visible != Some(config) {
                return Err(Error::Validation(format!(
                    "state `{}` emits `{}`, which shows another configuration",
                    model.states[s], model.observations[o]
                )));
            }
        }
    }
    Ok(())
}

/// Sweeps the marginal performance belief of each configuration over a
/// uniform grid and locates every action change by bisection to 1e-4.
pub fn extract_thresholds(
    model: &DiscretePomdp,
    policy: &AlphaVectorPolicy,
    resolution: usize,
) -> Result<ThresholdTable> {
    if resolution < 1000 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution {resolution} below 1000"
        )));
    }
    check_two_point_support(model)?;
    let configs = VisibleConfig::ALL
        .iter()
        .map(|&config| {
            let act = |beta: f64| policy.action(&config_belief(config, beta));
            let mut intervals = vec![Interval {
                lo: 0.0,
                hi: 1.0,
                action: act(0.0),
            }];
            for i in 0..resolution {
                let (mut lo, mut hi) = (i as f64 / resolution as f64, (i + 1) as f64 / resolution as f64);
                let (a_lo, a_hi) = (act(lo), act(hi));
                if a_lo == a_hi {
                    continue;
                }
                while hi - lo > 1e-4 {
                    let mid = 0.5 * (lo + hi);
                    if act(mid) == a_lo {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let boundary = 0.5 * (lo + hi);
                intervals.last_mut().expect("non-empty").hi = boundary;
                intervals.push(Interval {
                    lo: boundary,
                    hi: 1.0,
                    action: a_hi,
                });
            }
            ConfigThresholds { config, intervals }
        })
        .collect();
    Ok(ThresholdTable { configs })
}

/// Human-readable rendering, one line per interval.
pub fn format_thresholds(model: &DiscretePomdp, table: &ThresholdTable) -> String {
    let mut out = String::new();
    for c in &table.configs {
        writeln!(out, "{}:", c.config).unwrap();
        for i in &c.intervals {
            writeln!(
                out,
                "  {:.4} <= beta < {:.4} -> {}",
                i.lo, i.hi, model.actions[i.action]
            )
            .unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::frg_fixture;
    use crate::frg::Performance;
    use crate::solver::{solve_pomdp, AlphaVector, PerseusConfig};
    use std::sync::OnceLock;

    fn selected() -> &'static AlphaVectorPolicy {
        static POLICY: OnceLock<AlphaVectorPolicy> = OnceLock::new();
        POLICY.get_or_init(|| solve_pomdp(&frg_fixture(), 0.98, &PerseusConfig::default()).unwrap())
    }

    fn obs(config: VisibleConfig, perf: Performance) -> usize {
        config.state(perf)
    }

    #[test]
    fn starts_from_the_prior() {
        let c = controller_init(&frg_fixture(), selected()).unwrap();
        assert_eq!(c.beta(), 0.5);
        assert_eq!(c, controller_init(&frg_fixture(), selected()).unwrap());
    }

    #[test]
    fn terminal_start_is_refused() {
        let mut m = frg_fixture();
        m.initial_belief = Belief::point(9, GAMEOVER);
        assert!(matches!(controller_init(&m, selected()), Err(Error::TerminalStart)));
    }

    #[test]
    fn performant_observation_raises_beta() {
        let model = frg_fixture();
        let mut c = controller_init(&model, selected()).unwrap();
        let manual_on = VisibleConfig::ALL[0];
        let (_, beta) = c.step(obs(manual_on, Performance::Performant)).unwrap();
        // Oracle: predict from 0.5/0.5 under manual_on, then weigh by O.
        let t = |s: usize, n: usize| model.t(s, 0, n);
        let pred_p = 0.5 * t(1, 3) + 0.5 * t(3, 3);
        let pred_np = 0.5 * t(1, 1) + 0.5 * t(3, 1);
        let (lp, lnp) = (model.o(3, 3), model.o(1, 3));
        let expected = pred_p * lp / (pred_p * lp + pred_np * lnp);
        assert!((beta - expected).abs() < 1e-12);
        assert!(beta > 0.5);
    }

    #[test]
    fn non_performant_streak_switches_to_auto_alarms() {
        let mut c = controller_init(&frg_fixture(), selected()).unwrap();
        let mut steps = 0;
        loop {
            let config = VisibleConfig::target_of(c.action());
            let (action, beta) = c.step(obs(config, Performance::NonPerformant)).unwrap();
            steps += 1;
            if action == VisibleConfig::ALL[2].action() {
                assert!(beta < 0.36 + 0.08);
                break;
            }
            assert!(steps < 30, "never switched");
        }
    }

    #[test]
    fn gameover_terminates() {
        let mut c = controller_init(&frg_fixture(), selected()).unwrap();
        c.step(GAMEOVER).unwrap();
        assert!(c.is_terminated());
        assert!(matches!(c.step(3), Err(Error::Terminated)));
    }

    #[test]
    fn impossible_observation_keeps_prediction() {
        let model = frg_fixture();
        let mut c = controller_init(&model, selected()).unwrap();
        let before = c.belief().clone();
        let first = c.action();
        // An auto observation right after a manual action cannot happen.
        c.step(obs(VisibleConfig::ALL[2], Performance::Performant)).unwrap();
        assert_eq!(c.belief(), &model.belief_predict(&before, first));
    }

    #[test]
    fn controller_matches_offline_replay() {
        let model = frg_fixture();
        let mut c = controller_init(&model, selected()).unwrap();
        let mut history = Vec::new();
        for t in 0..40 {
            let config = VisibleConfig::target_of(c.action());
            let perf = if t % 3 == 0 {
                Performance::NonPerformant
            } else {
                Performance::Performant
            };
            history.push((c.action(), obs(config, perf)));
            c.step(obs(config, perf)).unwrap();
        }
        assert_eq!(c.belief(), &replay_belief(&model, &history));
    }

    #[test]
    fn trace_round_trips() {
        let model = frg_fixture();
        let mut c = controller_init(&model, selected()).unwrap();
        for t in 0..60 {
            let config = VisibleConfig::target_of(c.action());
            let perf = if t % 4 == 0 {
                Performance::NonPerformant
            } else {
                Performance::Performant
            };
            c.step(obs(config, perf)).unwrap();
        }
        let text = format_trace(&model, c.trace());
        assert_eq!(text.lines().count(), 61);
        let parsed = parse_trace(&model, &text, Path::new("trace.csv")).unwrap();
        assert_eq!(parsed, c.trace());
        assert!(parsed.iter().all(|r| (0.0..=1.0).contains(&r.beta)));
    }

    #[test]
    fn single_vector_policy_has_one_interval() {
        let p = AlphaVectorPolicy::new(
            vec![AlphaVector {
                values: vec![1.0; 9],
                action: 1,
            }],
            0.9,
        )
        .unwrap();
        let t = extract_thresholds(&frg_fixture(), &p, 1000).unwrap();
        for c in &t.configs {
            assert_eq!(
                c.intervals,
                vec![Interval {
                    lo: 0.0,
                    hi: 1.0,
                    action: 1
                }]
            );
        }
    }

    #[test]
    fn table_agrees_with_policy_on_grid() {
        let model = frg_fixture();
        let t = extract_thresholds(&model, selected(), 1000).unwrap();
        for c in &t.configs {
            assert!(c.boundaries().windows(2).all(|w| w[0] < w[1]));
            for i in 0..=1000 {
                let beta = i as f64 / 1000.0;
                assert_eq!(c.action_at(beta), selected().action(&config_belief(c.config, beta)));
            }
        }
    }

    #[test]
    fn refuses_models_without_two_point_support() {
        let mut model = frg_fixture();
        model.observation = vec![1.0 / 9.0; 81];
        assert!(matches!(
            extract_thresholds(&model, selected(), 1000),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            extract_thresholds(&frg_fixture(), selected(), 999),
            Err(Error::InvalidArgument(_))
        ));
    }
}
