//! Risk-sensitive policy selection: sample models from the observation
//! posterior, roll every candidate out on every model, pool the returns and
//! pick the candidate with the best value-at-risk.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hmm::{assemble_pomdp, em_fit, EmConfig, EmInit, ObservationSequence};
use crate::model::{marginal_performance, DiscretePomdp};
use crate::observation::ObservationPosterior;
use crate::par;
use crate::rng::{derive_seed, sample_index, seeded, SimRng};
use crate::solver::{AlphaVectorPolicy, StatePolicy};

pub const DEFAULT_GAMMAS: [f64; 6] = [0.7, 0.8, 0.9, 0.97, 0.98, 0.99];

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub gammas: Vec<f64>,
    pub n_models: usize,
    pub n_episodes: usize,
    pub quantile: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            gammas: DEFAULT_GAMMAS.to_vec(),
            n_models: 200,
            n_episodes: 200,
            quantile: 0.5,
            horizon: 60,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile {} not in (0, 1)",
                self.quantile
            )));
        }
        if self.n_models == 0 || self.n_episodes == 0 {
            return Err(Error::InvalidArgument(
                "model and episode counts must be positive".into(),
            ));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::InvalidArgument("discount factors must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// How a candidate chooses actions.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    /// Greedy in the belief tracked under the belief model.
    Belief(AlphaVectorPolicy),
    /// Acts on the latest observation read as a state.
    State(StatePolicy),
    /// Uniform over actions at every step.
    Random,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub name: String,
    /// Discount the policy was solved with, if any.
    pub gamma: Option<f64>,
    pub kind: PolicyKind,
}

impl Candidate {
    pub fn pomdp(policy: AlphaVectorPolicy) -> Self {
        Candidate {
            name: format!("pomdp gamma={}", policy.discount),
            gamma: Some(policy.discount),
            kind: PolicyKind::Belief(policy),
        }
    }

    pub fn mdp(policy: StatePolicy) -> Self {
        Candidate {
            name: format!("mdp gamma={}", policy.discount),
            gamma: Some(policy.discount),
            kind: PolicyKind::State(policy),
        }
    }

    pub fn random() -> Self {
        Candidate {
            name: "random".into(),
            gamma: None,
            kind: PolicyKind::Random,
        }
    }

    pub fn fixed(action: usize, label: &str) -> Self {
        Candidate {
            name: format!("fixed-{}", label.replace('_', "-")),
            gamma: None,
            kind: PolicyKind::Fixed(action),
        }
    }
}

/// Models with observation functions drawn from the posterior and dynamics
/// refitted by EM on the same sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledModels {
    pub models: Vec<DiscretePomdp>,
    pub requested: usize,
    pub dropped: Vec<usize>,
}

/// Draws `n_models` models. Each gets an observation function sampled from
/// the posterior; with `sequences`, its dynamics are refitted by EM started
/// from the trivial model's dynamics, otherwise the trivial dynamics are
/// kept. A model whose EM fails is dropped, and sampling fails when fewer
/// than 90% survive. Model `i` depends only on `(seed, i)`.
pub fn sample_models(
    trivial: &DiscretePomdp,
    posterior: &ObservationPosterior,
    sequences: Option<&[ObservationSequence]>,
    n_models: usize,
    seed: u64,
    em: &EmConfig,
) -> Result<SampledModels> {
    if n_models == 0 {
        return Err(Error::InvalidArgument("need at least one model".into()));
    }
    let fits = par::map_indexed(n_models, |i| -> Result<DiscretePomdp> {
        let mut rng = seeded(seed, &[0x0B5, i as u64]);
        let observation = posterior.sample_observation_function(&mut rng);
        let transition = match sequences {
            Some(seqs) => {
                let config = EmConfig {
                    init: EmInit::Warm(trivial.transition.clone()),
                    seed: derive_seed(seed, &[0xE11, i as u64]),
                    ..em.clone()
                };
                em_fit(seqs, &observation, &config)?.transition
            }
            None => trivial.transition.clone(),
        };
        let mut model = assemble_pomdp(
            &transition,
            &observation,
            &trivial.reward,
            trivial.discount,
            trivial.horizon,
        )?;
        model.initial_belief = trivial.initial_belief.clone();
        Ok(model)
    });
    let mut models = Vec::with_capacity(n_models);
    let mut dropped = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(m) => models.push(m),
            Err(e) => {
                log::warn!("sampled model {i} dropped: {e}");
                dropped.push(i);
            }
        }
    }
    if models.len() * 10 < n_models * 9 {
        return Err(Error::TooManyDroppedModels {
            survived: models.len(),
            requested: n_models,
        });
    }
    Ok(SampledModels {
        models,
        requested: n_models,
        dropped,
    })
}

/// One simulated mission.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ret: f64,
    /// Marginal performance belief at each decision (before terminating).
    pub betas: Vec<f64>,
    pub actions: Vec<usize>,
    pub states: Vec<usize>,
}

impl Episode {
    pub fn mean_beta(&self) -> f64 {
        self.betas.iter().sum::<f64>() / self.betas.len() as f64
    }
}

fn simulate(
    eval_model: &DiscretePomdp,
    belief_model: &DiscretePomdp,
    kind: &PolicyKind,
    horizon: usize,
    rng: &mut SimRng,
    mut episode: Option<&mut Episode>,
) -> Result<f64> {
    let mut state = eval_model.sample_initial_state(rng);
    let mut belief = belief_model.initial_belief.clone();
    // A state policy reads the observation emitted by the start state.
    let mut observed = match kind {
        PolicyKind::State(_) => sample_index(eval_model.observation_row(state), rng),
        _ => state,
    };
    let track = matches!(kind, PolicyKind::Belief(_)) || episode.is_some();
    let mut total = 0.0;
    if let Some(ep) = episode.as_deref_mut() {
        ep.states.push(state);
    }
    for _ in 0..horizon {
        if eval_model.is_terminal(state) {
            break;
        }
        let action = match kind {
            PolicyKind::Belief(p) => p.action(&belief),
            PolicyKind::State(p) => p.action[observed],
            PolicyKind::Random => rng.random_range(0..eval_model.num_actions()),
            PolicyKind::Fixed(a) => *a,
        };
        if let Some(ep) = episode.as_deref_mut() {
            ep.betas.push(marginal_performance(&belief));
            ep.actions.push(action);
        }
        let t = eval_model.step(state, action, rng);
        total += t.reward;
        state = t.next;
        observed = t.observation;
        if let Some(ep) = episode.as_deref_mut() {
            ep.states.push(state);
        }
        if track && !eval_model.is_terminal(state) {
            belief = belief_model.belief_update(&belief, action, t.observation)?;
        }
    }
    if let Some(ep) = episode {
        ep.ret = total;
        if ep.betas.is_empty() {
            ep.betas.push(marginal_performance(&belief));
        }
    }
    Ok(total)
}

/// Undiscounted return of one mission: the state evolves under `eval_model`
/// while the belief is tracked under `belief_model`.
pub fn rollout(
    eval_model: &DiscretePomdp,
    belief_model: &DiscretePomdp,
    candidate: &Candidate,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    simulate(eval_model, belief_model, &candidate.kind, horizon, rng, None)
}

/// Like [`rollout`], also recording beliefs, actions and states. The belief
/// is tracked for every kind of policy.
pub fn rollout_traced(
    eval_model: &DiscretePomdp,
    belief_model: &DiscretePomdp,
    candidate: &Candidate,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<Episode> {
    let mut ep = Episode {
        ret: 0.0,
        betas: Vec::new(),
        actions: Vec::new(),
        states: Vec::new(),
    };
    simulate(eval_model, belief_model, &candidate.kind, horizon, rng, Some(&mut ep))?;
    Ok(ep)
}

/// Pooled returns of one candidate, in (model, episode) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSample {
    pub returns: Vec<f64>,
    pub model_index: Vec<usize>,
    pub episode_index: Vec<usize>,
}

/// Seed of the episode `(policy, model, episode)`; shared by serial and
/// parallel runs.
pub fn episode_seed(base: u64, policy: usize, model: usize, episode: usize) -> u64 {
    derive_seed(base, &[policy as u64, model as u64, episode as u64])
}

/// `n_episodes` rollouts per (candidate, model) cell. Cells run in parallel.
pub fn return_distribution(
    candidates: &[Candidate],
    models: &[DiscretePomdp],
    belief_model: &DiscretePomdp,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<ReturnSample>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to evaluate on".into()));
    }
    let cells = par::try_map_indexed(candidates.len() * models.len(), |cell| -> Result<Vec<f64>> {
        let (p, m) = (cell / models.len(), cell % models.len());
        (0..n_episodes)
            .map(|e| {
                let mut rng = seeded(episode_seed(seed, p, m, e), &[]);
                rollout(&models[m], belief_model, &candidates[p], horizon, &mut rng)
            })
            .collect()
    })?;
    let mut out = Vec::with_capacity(candidates.len());
    let mut cells = cells.into_iter();
    for _ in candidates {
        let mut sample = ReturnSample {
            returns: Vec::with_capacity(models.len() * n_episodes),
            model_index: Vec::with_capacity(models.len() * n_episodes),
            episode_index: Vec::with_capacity(models.len() * n_episodes),
        };
        for m in 0..models.len() {
            let cell = cells.next().expect("one cell per (policy, model)");
            for (e, r) in cell.into_iter().enumerate() {
                sample.returns.push(r);
                sample.model_index.push(m);
                sample.episode_index.push(e);
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Lower-interpolation quantile of a sorted sample: element
/// `floor(q * (n - 1))`.
pub fn lower_quantile(sorted: &[f64], q: f64) -> f64 {
    let i = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[i.min(sorted.len() - 1)]
}

/// Value-at-risk at order `q`: the lower-interpolation `q`-quantile of the
/// returns, so `q = 0.5` gives the median.
pub fn value_at_risk(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} not in [0, 1]")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(lower_quantile(&sorted, q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub name: String,
    pub gamma: Option<f64>,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub quantile: f64,
    pub var: f64,
    pub selected: bool,
}

/// Summary statistics with the same quantile convention as
/// [`value_at_risk`].
pub fn policy_report(candidate: &Candidate, sample: &[f64], q: f64) -> Result<PolicyReport> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sample.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        sample.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Ok(PolicyReport {
        name: candidate.name.clone(),
        gamma: candidate.gamma,
        n,
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: lower_quantile(&sorted, 0.25),
        median: lower_quantile(&sorted, 0.5),
        q75: lower_quantile(&sorted, 0.75),
        max: sorted[n - 1],
        quantile: q,
        var: lower_quantile(&sorted, q),
        selected: false,
    })
}

/// Index of the best value-at-risk among `reports`; ties go to the larger
/// discount, then to the earlier candidate.
pub fn select_best(reports: &[PolicyReport]) -> Option<usize> {
    let gamma = |r: &PolicyReport| r.gamma.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<usize> = None;
    for (i, r) in reports.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let rb = &reports[b];
                if r.var > rb.var || (r.var == rb.var && gamma(r) > gamma(rb)) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub selected: usize,
    pub reports: Vec<PolicyReport>,
    pub samples: Vec<ReturnSample>,
}

/// Evaluates all candidates on all models and marks the VaR-maximizing one.
pub fn select_policy(
    candidates: &[Candidate],
    models: &[DiscretePomdp],
    belief_model: &DiscretePomdp,
    config: &SelectionConfig,
) -> Result<Selection> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate policies".into()));
    }
    let samples = return_distribution(
        candidates,
        models,
        belief_model,
        config.n_episodes,
        config.horizon,
        config.seed,
    )?;
    let mut reports = candidates
        .iter()
        .zip(&samples)
        .map(|(c, s)| policy_report(c, &s.returns, config.quantile))
        .collect::<Result<Vec<_>>>()?;
    let selected = select_best(&reports).expect("non-empty candidate set");
    reports[selected].selected = true;
    Ok(Selection {
        selected,
        reports,
        samples,
    })
}

/// Ranks with ties sharing their average rank (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidArgument(
            "series must be non-empty and of equal length".into(),
        ));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateRanks);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman correlation between each episode's mean performance belief and
/// its return, with the number of episodes.
pub fn belief_score_correlation(episodes: &[Episode]) -> Result<(f64, usize)> {
    if episodes.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 episodes, got {}",
            episodes.len()
        )));
    }
    let betas: Vec<f64> = episodes.iter().map(Episode::mean_beta).collect();
    let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
    Ok((spearman(&betas, &returns)?, episodes.len()))
}

/// Mean belief of the initial prior, for callers building traces by hand.
pub fn initial_beta(model: &DiscretePomdp) -> f64 {
    marginal_performance(&model.initial_belief)
}

/// Belief-tracked episodes of one candidate on one model, seeded per
/// episode.
pub fn traced_episodes(
    eval_model: &DiscretePomdp,
    belief_model: &DiscretePomdp,
    candidate: &Candidate,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    par::try_map_indexed(n_episodes, |e| {
        let mut rng = seeded(episode_seed(seed, 0, 0, e), &[0x7EACE]);
        rollout_traced(eval_model, belief_model, candidate, horizon, &mut rng)
    })
}
