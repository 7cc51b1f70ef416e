//! The nine-state teaming model transcribed from published tables.
//!
//! The transcribed tables are kept verbatim. They are rounded to three
//! decimals, so a few transition rows sum to 0.999 or 1.001; the assembled
//! model renormalizes every row. The auto_on table is printed one column
//! to the left of where the action can reach; see [`transition_table`].

use crate::frg::{self, VisibleConfig, GAMEOVER, NUM_ACTIONS, NUM_STATES};
use crate::model::{Belief, DiscretePomdp};
use crate::observation::{dirichlet_posterior, trivial_observation_function, ConfusionCounts, ObservationPosterior};

pub const DEFAULT_DISCOUNT: f64 = 0.98;
pub const DEFAULT_HORIZON: usize = 60;

/// `TRANSITION_TABLES[a][s][s']`, actions in [`frg::ACTION_LABELS`] order.
pub const TRANSITION_TABLES: [[[f64; NUM_STATES]; NUM_STATES]; NUM_ACTIONS] = [
    // manual_on
    [
        [0.0, 0.917, 0.0, 0.067, 0.0, 0.0, 0.0, 0.0, 0.017],
        [0.0, 0.917, 0.0, 0.065, 0.0, 0.0, 0.0, 0.0, 0.019],
        [0.0, 0.027, 0.0, 0.956, 0.0, 0.0, 0.0, 0.0, 0.017],
        [0.0, 0.032, 0.0, 0.956, 0.0, 0.0, 0.0, 0.0, 0.012],
        [0.0, 0.945, 0.0, 0.051, 0.0, 0.0, 0.0, 0.0, 0.005],
        [0.0, 0.931, 0.0, 0.063, 0.0, 0.0, 0.0, 0.0, 0.006],
        [0.0, 0.018, 0.0, 0.973, 0.0, 0.0, 0.0, 0.0, 0.009],
        [0.0, 0.016, 0.0, 0.965, 0.0, 0.0, 0.0, 0.0, 0.020],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ],
    // manual_off
    [
        [0.914, 0.0, 0.069, 0.0, 0.0, 0.0, 0.0, 0.0, 0.017],
        [0.914, 0.0, 0.067, 0.0, 0.0, 0.0, 0.0, 0.0, 0.018],
        [0.020, 0.0, 0.963, 0.0, 0.0, 0.0, 0.0, 0.0, 0.017],
        [0.024, 0.0, 0.964, 0.0, 0.0, 0.0, 0.0, 0.0, 0.012],
        [0.940, 0.0, 0.055, 0.0, 0.0, 0.0, 0.0, 0.0, 0.005],
        [0.923, 0.0, 0.071, 0.0, 0.0, 0.0, 0.0, 0.0, 0.006],
        [0.015, 0.0, 0.976, 0.0, 0.0, 0.0, 0.0, 0.0, 0.009],
        [0.013, 0.0, 0.967, 0.0, 0.0, 0.0, 0.0, 0.0, 0.020],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ],
    // auto_on
    [
        [0.0, 0.0, 0.0, 0.0, 0.941, 0.0, 0.042, 0.0, 0.017],
        [0.0, 0.0, 0.0, 0.0, 0.940, 0.0, 0.042, 0.0, 0.018],
        [0.0, 0.0, 0.0, 0.0, 0.020, 0.0, 0.963, 0.0, 0.017],
        [0.0, 0.0, 0.0, 0.0, 0.025, 0.0, 0.963, 0.0, 0.012],
        [0.0, 0.0, 0.0, 0.0, 0.921, 0.0, 0.074, 0.0, 0.005],
        [0.0, 0.0, 0.0, 0.0, 0.916, 0.0, 0.079, 0.0, 0.006],
        [0.0, 0.0, 0.0, 0.0, 0.023, 0.0, 0.968, 0.0, 0.009],
        [0.0, 0.0, 0.0, 0.0, 0.019, 0.0, 0.961, 0.0, 0.020],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ],
    // auto_off
    [
        [0.0, 0.0, 0.0, 0.0, 0.944, 0.0, 0.039, 0.0, 0.017],
        [0.0, 0.0, 0.0, 0.0, 0.943, 0.0, 0.038, 0.0, 0.018],
        [0.0, 0.0, 0.0, 0.0, 0.021, 0.0, 0.963, 0.0, 0.017],
        [0.0, 0.0, 0.0, 0.0, 0.025, 0.0, 0.962, 0.0, 0.012],
        [0.0, 0.0, 0.0, 0.0, 0.932, 0.0, 0.064, 0.0, 0.005],
        [0.0, 0.0, 0.0, 0.0, 0.929, 0.0, 0.066, 0.0, 0.006],
        [0.0, 0.0, 0.0, 0.0, 0.031, 0.0, 0.961, 0.0, 0.009],
        [0.0, 0.0, 0.0, 0.0, 0.026, 0.0, 0.954, 0.0, 0.020],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ],
];

/// Mean fires extinguished per 10 s step, per hidden state.
pub const REWARDS: [f64; NUM_STATES] = [0.257, 0.289, 0.603, 0.741, 0.257, 0.333, 0.432, 0.493, 0.0];

/// Held-out confusion counts per configuration (rows: true non-performant,
/// true performant; columns: predicted), in [`VisibleConfig::ALL`] order.
pub const CONFUSION: [[[u64; 2]; 2]; 4] = [
    [[113, 43], [71, 105]],
    [[105, 51], [51, 125]],
    [[99, 70], [46, 140]],
    [[91, 39], [55, 97]],
];

pub fn confusion_counts() -> ConfusionCounts {
    ConfusionCounts::new(CONFUSION)
}

/// Row-normalized transcribed transition tables in the dense model layout.
///
/// The printed auto_on table lists its mass under the `a_*_off` columns,
/// which the action cannot reach; those columns are moved onto the
/// matching `a_*_on` states.
pub fn transition_table() -> Vec<f64> {
    let mut out = Vec::with_capacity(NUM_ACTIONS * NUM_STATES * NUM_STATES);
    for (a, table) in TRANSITION_TABLES.iter().enumerate() {
        for row in table {
            let mut row = *row;
            for next in 0..GAMEOVER {
                if row[next] > 0.0 && !frg::transition_allowed(a, next) {
                    let (config, perf) = frg::decompose(next).expect("non-terminal");
                    let target = VisibleConfig::target_of(a);
                    debug_assert_eq!(config.mode, target.mode);
                    row[target.state(perf)] += row[next];
                    row[next] = 0.0;
                }
            }
            let total: f64 = row.iter().sum();
            out.extend(row.iter().map(|p| p / total));
        }
    }
    out
}

/// Start in manual mode with alarms on, performance unknown (0.5/0.5).
pub fn initial_belief() -> Belief {
    let mut mass = vec![0.0; NUM_STATES];
    for s in VisibleConfig::ALL[0].states() {
        mass[s] = 0.5;
    }
    Belief::new(mass)
}

/// The trivial POMDP with the default discount and horizon.
pub fn frg_fixture() -> DiscretePomdp {
    build_frg_fixture(DEFAULT_DISCOUNT, DEFAULT_HORIZON).0
}

/// Trivial POMDP plus the observation posterior (uniform prior `alpha0 = 1`).
pub fn build_frg_fixture(discount: f64, horizon: usize) -> (DiscretePomdp, ObservationPosterior) {
    let counts = confusion_counts();
    let observation = trivial_observation_function(&counts).expect("transcribed confusion rows are non-empty");
    let model = DiscretePomdp {
        states: frg::state_labels(),
        actions: frg::action_labels(),
        observations: frg::state_labels(),
        transition: transition_table(),
        observation,
        reward: REWARDS.to_vec(),
        discount,
        horizon,
        initial_belief: initial_belief(),
    };
    debug_assert_eq!(model.t(GAMEOVER, 0, GAMEOVER), 1.0);
    (model, dirichlet_posterior(&counts, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        let (m, post) = build_frg_fixture(DEFAULT_DISCOUNT, DEFAULT_HORIZON);
        assert_eq!(m.reward[3], 0.741);
        assert_eq!(TRANSITION_TABLES[2][5][6], 0.079);
        assert!(m.validate().is_empty());
        assert_eq!(post.alpha(VisibleConfig::ALL[0], 0), [114.0, 44.0]);
    }

    #[test]
    fn rows_are_raw_values_renormalized() {
        let t = transition_table();
        for a in 0..NUM_ACTIONS {
            for s in 0..NUM_STATES {
                let raw = TRANSITION_TABLES[a][s];
                let row = &t[(a * NUM_STATES + s) * NUM_STATES..][..NUM_STATES];
                let mut nonzero_raw: Vec<f64> = raw.iter().copied().filter(|&p| p > 0.0).collect();
                let mut nonzero: Vec<f64> = row.iter().copied().filter(|&p| p > 0.0).collect();
                nonzero_raw.sort_by(f64::total_cmp);
                nonzero.sort_by(f64::total_cmp);
                assert_eq!(nonzero.len(), nonzero_raw.len());
                for (v, r) in nonzero.iter().zip(&nonzero_raw) {
                    assert!((v - r).abs() <= 0.0011 * r, "{v} vs {r}");
                }
            }
        }
    }

    #[test]
    fn every_action_reaches_only_its_target_configuration() {
        let t = transition_table();
        for a in 0..NUM_ACTIONS {
            for s in 0..GAMEOVER {
                for n in 0..NUM_STATES {
                    if !frg::transition_allowed(a, n) {
                        assert_eq!(t[(a * NUM_STATES + s) * NUM_STATES + n], 0.0);
                    }
                }
            }
        }
        // auto_on from a_np_on: the printed 0.916 / 0.079 land on a_np_on / a_p_on.
        let row = &t[(2 * NUM_STATES + 5) * NUM_STATES..][..NUM_STATES];
        assert!((row[5] - 0.916 / 1.001).abs() < 1e-12);
        assert!((row[7] - 0.079 / 1.001).abs() < 1e-12);
    }
}
