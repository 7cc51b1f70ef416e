//! From a trajectory batch to a selected policy, plus a batch generator
//! that samples missions from a known model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::classifier::{confusion_counts, train_classifiers, TrainConfig, TrainedClassifier};
use crate::error::{Error, Result};
use crate::evaluation::{
    policy_report, return_distribution, sample_models, select_policy, Candidate, PolicyReport, ReturnSample,
    SampledModels, Selection, SelectionConfig,
};
use crate::frg::{self, Performance, VisibleConfig};
use crate::hmm::{assemble_pomdp, classify_sequences, em_fit, EmConfig, EmFitResult, ObservationSequence};
use crate::model::DiscretePomdp;
use crate::observation::{
    dirichlet_posterior, estimate_rewards, label_steps, split_by_quartiles, trivial_observation_function,
    ConfusionCounts, Mission, ObservationPosterior, QuartileSplit, RewardEstimate, StepRecord, TrajectoryBatch,
};
use crate::rng::{derive_seed, sample_index, seeded};
use crate::solver::{solve_sweep, AlphaVectorPolicy, PerseusConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub missions: usize,
    pub participants: usize,
    pub features: usize,
    /// Standard deviation of the noise on the informative feature.
    pub noise: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            missions: 400,
            participants: 20,
            features: 4,
            noise: 0.3,
            max_len: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Low,
    Mid,
    High,
}

/// Samples a batch from an FRG-layout model under uniformly random actions.
///
/// A quarter of the missions keep a non-performant hidden state throughout
/// and a quarter a performant one; they run `max_len` steps and score
/// below 1 and above 99 respectively. The other half follow the model's
/// dynamics until g or `max_len` steps and score `1 + 98 x` where `x` is
/// their performant fraction, so the score quartiles recover the three
/// groups. Each step's performance is relabeled through the observation
/// function; feature 1 carries the relabeled class as `±1` plus Gaussian
/// noise, the other features are pure noise, and the fires count is
/// Poisson with the reward of the relabeled state as mean.
pub fn gen_batch(model: &DiscretePomdp, config: &GenConfig) -> Result<TrajectoryBatch> {
    frg::check_layout(model)?;
    if config.missions < 4 || config.participants < 3 || config.features == 0 || config.max_len == 0 {
        return Err(Error::InvalidArgument(
            "need at least 4 missions, 3 participants, 1 feature and 1 step".into(),
        ));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::InvalidArgument(
            "feature noise must be finite and non-negative".into(),
        ));
    }
    let quarter = config.missions / 4;
    let mut kinds: Vec<Kind> = (0..config.missions)
        .map(|i| match i {
            i if i < quarter => Kind::Low,
            i if i < 2 * quarter => Kind::High,
            _ => Kind::Mid,
        })
        .collect();
    kinds.shuffle(&mut seeded(config.seed, &[u64::MAX]));
    let noise = Normal::new(0.0, config.noise).expect("finite non-negative deviation");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let missions = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let mut rng = seeded(config.seed, &[i as u64]);
            let fixed_perf = match kind {
                Kind::Low => Some(Performance::NonPerformant),
                Kind::High => Some(Performance::Performant),
                Kind::Mid => None,
            };
            let mut state = model.sample_initial_state(&mut rng);
            if let Some(perf) = fixed_perf {
                let (config, _) = frg::decompose(state).expect("start is not terminal");
                state = config.state(perf);
            }
            let mut steps = Vec::new();
            let mut performant = 0usize;
            while steps.len() < config.max_len && !model.is_terminal(state) {
                let (visible, _) = frg::decompose(state).expect("non-terminal");
                performant += frg::is_performant(state) as usize;
                let observed = sample_index(model.observation_row(state), &mut rng);
                let sign = if frg::is_performant(observed) { 1.0 } else { -1.0 };
                let mut features = vec![sign + noise.sample(&mut rng)];
                features.extend((1..config.features).map(|_| unit.sample(&mut rng)));
                let rate = model.reward[observed];
                let fires = if rate > 0.0 {
                    Poisson::new(rate).expect("positive rate").sample(&mut rng) as u32
                } else {
                    0
                };
                let action = rng.random_range(0..model.num_actions());
                steps.push(StepRecord {
                    step: steps.len(),
                    config: visible,
                    action,
                    fires,
                    features,
                });
                state = match fixed_perf {
                    Some(perf) => VisibleConfig::target_of(action).state(perf),
                    None => model.step(state, action, &mut rng).next,
                };
            }
            let jitter: f64 = rng.random();
            let score = match kind {
                Kind::Low => jitter,
                Kind::High => 99.0 + jitter,
                Kind::Mid => 1.0 + 98.0 * performant as f64 / steps.len().max(1) as f64,
            };
            Mission {
                mission_id: format!("m{i:05}"),
                participant_id: format!("p{:03}", i % config.participants),
                score,
                steps,
            }
        })
        .filter(|m| !m.steps.is_empty())
        .collect();
    Ok(TrajectoryBatch { missions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub em: EmConfig,
    /// Dirichlet prior added to every confusion count.
    pub alpha0: f64,
    /// Discount stored on the learned model.
    pub discount: f64,
    pub horizon: usize,
    pub perseus: PerseusConfig,
    pub selection: SelectionConfig,
    pub seed: u64,
}

impl PipelineConfig {
    /// Defaults with every stage seed derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            train: TrainConfig {
                seed: derive_seed(seed, &[1]),
                ..TrainConfig::default()
            },
            em: EmConfig {
                seed: derive_seed(seed, &[2]),
                ..EmConfig::default()
            },
            alpha0: 1.0,
            discount: crate::fixture::DEFAULT_DISCOUNT,
            horizon: crate::fixture::DEFAULT_HORIZON,
            perseus: PerseusConfig {
                seed: derive_seed(seed, &[3]),
                ..PerseusConfig::default()
            },
            selection: SelectionConfig {
                seed: derive_seed(seed, &[4]),
                ..SelectionConfig::default()
            },
            seed,
        }
    }

    /// Stable text rendering used for the artifact config hash.
    pub fn canonical(&self) -> String {
        format!("{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedModel {
    pub split: QuartileSplit,
    pub classifier: TrainedClassifier,
    pub counts: ConfusionCounts,
    pub posterior: ObservationPosterior,
    /// Classified sequences of the middle missions.
    pub sequences: Vec<ObservationSequence>,
    pub em: EmFitResult,
    pub rewards: RewardEstimate,
    pub model: DiscretePomdp,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Split, label, train, confusion, posterior, EM, rewards and assembly.
pub fn learn_model(batch: &TrajectoryBatch, config: &PipelineConfig) -> Result<LearnedModel> {
    stage("validate", batch.validate())?;
    let split = stage("split", split_by_quartiles(batch))?;
    let labeled = label_steps(batch, &split);
    let classifier = stage("train", train_classifiers(batch, &labeled, &config.train))?;
    let counts = stage(
        "confusion",
        confusion_counts(&classifier.classifier, batch, &classifier.heldout),
    )?;
    let posterior = dirichlet_posterior(&counts, config.alpha0);
    let observation = stage("posterior", trivial_observation_function(&counts))?;
    let sequences = stage(
        "classify",
        classify_sequences(&classifier.classifier, batch, &split.mid),
    )?;
    let em = stage("em", em_fit(&sequences, &observation, &config.em))?;
    if !em.converged {
        log::warn!("EM stopped after {} iterations without converging", em.iterations);
    }
    let all: Vec<usize> = (0..batch.missions.len()).collect();
    let classified = stage("rewards", classify_sequences(&classifier.classifier, batch, &all))?;
    let states: Vec<Vec<usize>> = classified
        .iter()
        .map(|s| s.observations[..s.observations.len() - 1].to_vec())
        .collect();
    let rewards = estimate_rewards(batch, &states);
    let model = stage(
        "assemble",
        assemble_pomdp(
            &em.transition,
            &observation,
            &rewards.reward,
            config.discount,
            config.horizon,
        ),
    )?;
    Ok(LearnedModel {
        split,
        classifier,
        counts,
        posterior,
        sequences,
        em,
        rewards,
        model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub learned: LearnedModel,
    pub policies: Vec<AlphaVectorPolicy>,
    pub sampled: SampledModels,
    pub selection: Selection,
}

/// Learns the model, solves it for every discount of the selection sweep,
/// samples models from the posterior (refitting dynamics on the middle
/// missions) and selects by value-at-risk.
pub fn run_pipeline(batch: &TrajectoryBatch, config: &PipelineConfig) -> Result<PipelineOutput> {
    stage("config", config.selection.validate())?;
    let learned = learn_model(batch, config)?;
    let policies = stage(
        "solve",
        solve_sweep(&learned.model, &config.selection.gammas, &config.perseus),
    )?;
    let sampled = stage(
        "sample",
        sample_models(
            &learned.model,
            &learned.posterior,
            Some(&learned.sequences),
            config.selection.n_models,
            config.selection.seed,
            &config.em,
        ),
    )?;
    if !sampled.dropped.is_empty() {
        log::warn!(
            "{} of {} sampled models dropped",
            sampled.dropped.len(),
            sampled.requested
        );
    }
    let candidates: Vec<Candidate> = policies.iter().cloned().map(Candidate::pomdp).collect();
    let selection = stage(
        "select",
        select_policy(&candidates, &sampled.models, &learned.model, &config.selection),
    )?;
    Ok(PipelineOutput {
        learned,
        policies,
        sampled,
        selection,
    })
}

/// The built-in baselines: uniform random actions, always automatic with
/// alarms, always manual with alarms.
pub fn baseline_candidates() -> Vec<Candidate> {
    let [manual_on, _, auto_on, _] = VisibleConfig::ALL.map(|c| c.action());
    vec![
        Candidate::random(),
        Candidate::fixed(auto_on, "auto_alarms"),
        Candidate::fixed(manual_on, "manual_alarms"),
    ]
}

/// Statistics for `policies` followed by the baselines, evaluated on
/// `models` with beliefs tracked under `belief_model`, with the raw
/// returns in the same order. Nothing is marked selected.
pub fn simulate_report(
    policies: &[Candidate],
    models: &[DiscretePomdp],
    belief_model: &DiscretePomdp,
    config: &SelectionConfig,
) -> Result<(Vec<PolicyReport>, Vec<ReturnSample>)> {
    config.validate()?;
    let candidates: Vec<Candidate> = policies.iter().cloned().chain(baseline_candidates()).collect();
    let samples = return_distribution(
        &candidates,
        models,
        belief_model,
        config.n_episodes,
        config.horizon,
        config.seed,
    )?;
    let reports = candidates
        .iter()
        .zip(&samples)
        .map(|(c, s)| policy_report(c, &s.returns, config.quantile))
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, samples))
}

/// Largest absolute difference between two transition tables.
pub fn transition_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
