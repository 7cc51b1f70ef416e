//! Per-configuration performance classifiers with participant-wise model
//! selection.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::extra_trees::{balanced_accuracy, ExtraTreesClassifier, ExtraTreesParams};
use crate::frg::{Performance, VisibleConfig};
use crate::observation::{ConfusionCounts, LabeledStep, TrajectoryBatch};
use crate::par;
use crate::rng::{derive_seed, seeded};

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPoint {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub grid: Vec<GridPoint>,
    pub folds: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// trees ∈ {100, 300}, max depth ∈ {none, 8}, min leaf ∈ {1, 5}.
    pub fn default_grid() -> Vec<GridPoint> {
        let mut grid = Vec::new();
        for n_trees in [100, 300] {
            for max_depth in [None, Some(8)] {
                for min_samples_leaf in [1, 5] {
                    grid.push(GridPoint {
                        n_trees,
                        max_depth,
                        min_samples_leaf,
                    });
                }
            }
        }
        grid
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grid: Self::default_grid(),
            folds: 10,
            validation_fraction: 0.2,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Participant ids on each side of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSplit {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
}

/// Repeated random participant-wise splits: each fold puts
/// `ceil(fraction * groups)` participants on the validation side.
pub fn group_shuffle_splits(groups: &BTreeSet<String>, folds: usize, fraction: f64, seed: u64) -> Vec<GroupSplit> {
    let all: Vec<&String> = groups.iter().collect();
    let n_val = ((fraction * all.len() as f64).ceil() as usize).clamp(1, all.len().saturating_sub(1).max(1));
    (0..folds)
        .map(|k| {
            let mut shuffled = all.clone();
            shuffled.shuffle(&mut seeded(seed, &[k as u64]));
            GroupSplit {
                validation: shuffled[..n_val].iter().map(|s| (*s).clone()).collect(),
                train: shuffled[n_val..].iter().map(|s| (*s).clone()).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceClassifier {
    ensembles: Vec<ExtraTreesClassifier>,
    n_features: usize,
}

/// Anything that maps a step's features to a performance observation.
pub trait PerformancePredictor {
    fn predict_step(&self, config: VisibleConfig, features: &[f64]) -> Result<Performance>;
}

impl PerformancePredictor for PerformanceClassifier {
    fn predict_step(&self, config: VisibleConfig, features: &[f64]) -> Result<Performance> {
        self.predict(config, features)
    }
}

impl PerformanceClassifier {
    pub fn ensemble(&self, config: VisibleConfig) -> &ExtraTreesClassifier {
        &self.ensembles[config.index()]
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict(&self, config: VisibleConfig, features: &[f64]) -> Result<Performance> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.len(),
            });
        }
        Ok(Performance::from_bit(self.ensembles[config.index()].predict(features)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub point: GridPoint,
    pub mean_balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSelection {
    pub config: VisibleConfig,
    pub scores: Vec<GridScore>,
    pub chosen: GridPoint,
    pub training_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub classifier: PerformanceClassifier,
    pub selection: Vec<ConfigSelection>,
    pub folds: Vec<GroupSplit>,
    pub test_groups: BTreeSet<String>,
    pub train_groups: BTreeSet<String>,
    /// Labeled steps from held-out participants; never used for training.
    pub heldout: Vec<LabeledStep>,
}

/// Puts whole participants aside until at least `fraction` of the labeled
/// missions are held out, keeping at least two participants for training.
fn holdout_groups(
    batch: &TrajectoryBatch,
    labeled: &[LabeledStep],
    fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let missions: BTreeSet<usize> = labeled.iter().map(|l| l.mission).collect();
    let groups: BTreeSet<String> = missions
        .iter()
        .map(|&m| batch.missions[m].participant_id.clone())
        .collect();
    if groups.len() < 3 {
        return Err(Error::TooFewGroups);
    }
    let mut order: Vec<String> = groups.iter().cloned().collect();
    order.shuffle(&mut seeded(seed, &[u64::MAX]));
    let target = (fraction * missions.len() as f64).ceil() as usize;
    let mut test = BTreeSet::new();
    let mut held = 0;
    for g in order {
        if held >= target || groups.len() - test.len() <= 2 {
            break;
        }
        held += missions
            .iter()
            .filter(|&&m| batch.missions[m].participant_id == g)
            .count();
        test.insert(g);
    }
    let train = groups.difference(&test).cloned().collect();
    Ok((test, train))
}

fn params_for(point: GridPoint, seed: u64) -> ExtraTreesParams {
    ExtraTreesParams {
        n_trees: point.n_trees,
        max_depth: point.max_depth,
        min_samples_leaf: point.min_samples_leaf,
        max_features: None,
        seed,
    }
}

/// Trains one ensemble per visible configuration. Hyperparameters maximize
/// mean balanced accuracy over participant-wise shuffle splits of the
/// training participants; a participant-disjoint test partition is set aside
/// first.
pub fn train_classifiers(
    batch: &TrajectoryBatch,
    labeled: &[LabeledStep],
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    batch.validate()?;
    let n_features = batch.feature_dim().unwrap_or(0);
    let (test_groups, train_groups) = holdout_groups(batch, labeled, config.test_fraction, config.seed)?;
    let folds = group_shuffle_splits(
        &train_groups,
        config.folds,
        config.validation_fraction,
        derive_seed(config.seed, &[1]),
    );

    let participant = |l: &LabeledStep| &batch.missions[l.mission].participant_id;
    let (heldout, training): (Vec<LabeledStep>, Vec<LabeledStep>) =
        labeled.iter().partition(|l| test_groups.contains(participant(l)));

    let per_config = par::try_map_indexed(4, |c| {
        let cfg = VisibleConfig::from_index(c);
        let rows: Vec<&LabeledStep> = training
            .iter()
            .filter(|l| batch.missions[l.mission].steps[l.step].config == cfg)
            .collect();
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|l| batch.missions[l.mission].steps[l.step].features.clone())
            .collect();
        let y: Vec<bool> = rows.iter().map(|l| l.label == Performance::Performant).collect();
        let positives = y.iter().filter(|&&p| p).count();
        if positives == 0 || positives == y.len() {
            return Err(Error::MissingClass {
                config: cfg.to_string(),
            });
        }
        let groups: Vec<&String> = rows.iter().map(|l| participant(l)).collect();

        let scores: Vec<GridScore> = config
            .grid
            .iter()
            .enumerate()
            .map(|(gi, &point)| {
                let accs: Vec<f64> = folds
                    .iter()
                    .enumerate()
                    .filter_map(|(k, fold)| {
                        let (tr, va): (Vec<usize>, Vec<usize>) =
                            (0..rows.len()).partition(|&i| fold.train.contains(groups[i]));
                        let tr_x: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                        let tr_y: Vec<bool> = tr.iter().map(|&i| y[i]).collect();
                        if va.is_empty() || tr.is_empty() || tr_y.iter().all(|&v| v == tr_y[0]) {
                            return None;
                        }
                        let seed = derive_seed(config.seed, &[2, c as u64, gi as u64, k as u64]);
                        let clf = ExtraTreesClassifier::fit(&tr_x, &tr_y, params_for(point, seed));
                        let truth: Vec<bool> = va.iter().map(|&i| y[i]).collect();
                        let pred: Vec<bool> = va.iter().map(|&i| clf.predict(&x[i])).collect();
                        Some(balanced_accuracy(&truth, &pred))
                    })
                    .collect();
                let mean = if accs.is_empty() {
                    f64::NAN
                } else {
                    accs.iter().sum::<f64>() / accs.len() as f64
                };
                GridScore {
                    point,
                    mean_balanced_accuracy: mean,
                }
            })
            .collect();

        // First grid point wins ties; NaN scores never win.
        let chosen = scores
            .iter()
            .fold(None::<&GridScore>, |best, s| match best {
                Some(b) if !(s.mean_balanced_accuracy > b.mean_balanced_accuracy) => Some(b),
                _ if s.mean_balanced_accuracy.is_nan() => best,
                _ => Some(s),
            })
            .map(|s| s.point)
            .unwrap_or(config.grid[0]);
        let final_seed = derive_seed(config.seed, &[3, c as u64]);
        let ensemble = ExtraTreesClassifier::fit(&x, &y, params_for(chosen, final_seed));
        Ok((
            ensemble,
            ConfigSelection {
                config: cfg,
                scores,
                chosen,
                training_steps: rows.len(),
            },
        ))
    })?;

    let (ensembles, selection) = per_config.into_iter().unzip();
    Ok(TrainedClassifier {
        classifier: PerformanceClassifier { ensembles, n_features },
        selection,
        folds,
        test_groups,
        train_groups,
        heldout,
    })
}

/// Counts `(true, predicted)` pairs per configuration on held-out steps.
pub fn confusion_counts<P: PerformancePredictor + ?Sized>(
    classifier: &P,
    batch: &TrajectoryBatch,
    heldout: &[LabeledStep],
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for l in heldout {
        let step = &batch.missions[l.mission].steps[l.step];
        let predicted = classifier.predict_step(step.config, &step.features)?;
        counts.add(step.config, l.label, predicted);
    }
    for config in VisibleConfig::ALL {
        counts.normalized(config)?;
    }
    Ok(counts)
}
