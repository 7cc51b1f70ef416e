//! State, action and observation layout of the human-robot teaming model.
//!
//! Hidden states combine the two exactly observed components (robot autonomy
//! mode and alarm status) with the hidden team performance bit, plus an
//! absorbing game-over state. Observations use the same alphabet. Each action
//! sets both visible components, so it fixes the visible configuration of the
//! next state.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::DiscretePomdp;

pub const NUM_STATES: usize = 9;
pub const NUM_ACTIONS: usize = 4;
pub const GAMEOVER: usize = 8;

pub const STATE_LABELS: [&str; NUM_STATES] = [
    "m_np_off", "m_np_on", "m_p_off", "m_p_on", "a_np_off", "a_np_on", "a_p_off", "a_p_on", "g",
];

pub const ACTION_LABELS: [&str; NUM_ACTIONS] = ["manual_on", "manual_off", "auto_on", "auto_off"];

pub const PERFORMANT_STATES: [usize; 4] = [2, 3, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Manual,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Alarm {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Performance {
    NonPerformant,
    Performant,
}

impl Performance {
    pub fn from_bit(performant: bool) -> Self {
        if performant {
            Performance::Performant
        } else {
            Performance::NonPerformant
        }
    }

    pub fn index(self) -> usize {
        match self {
            Performance::NonPerformant => 0,
            Performance::Performant => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Performance::NonPerformant => "non-performant",
            Performance::Performant => "performant",
        }
    }
}

/// The exactly observed part of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VisibleConfig {
    pub mode: Mode,
    pub alarm: Alarm,
}

impl VisibleConfig {
    /// In action order: configuration `i` is the one action `i` switches to.
    pub const ALL: [VisibleConfig; 4] = [
        VisibleConfig::new(Mode::Manual, Alarm::On),
        VisibleConfig::new(Mode::Manual, Alarm::Off),
        VisibleConfig::new(Mode::Auto, Alarm::On),
        VisibleConfig::new(Mode::Auto, Alarm::Off),
    ];

    pub const fn new(mode: Mode, alarm: Alarm) -> Self {
        VisibleConfig { mode, alarm }
    }

    pub fn index(self) -> usize {
        let m = match self.mode {
            Mode::Manual => 0,
            Mode::Auto => 2,
        };
        let a = match self.alarm {
            Alarm::On => 0,
            Alarm::Off => 1,
        };
        m + a
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// The configuration an action switches the system to.
    pub fn target_of(action: usize) -> Self {
        Self::ALL[action]
    }

    /// The action that keeps (or puts) the system in this configuration.
    pub fn action(self) -> usize {
        self.index()
    }

    pub fn state(self, perf: Performance) -> usize {
        let mode = match self.mode {
            Mode::Manual => 0,
            Mode::Auto => 4,
        };
        let alarm = match self.alarm {
            Alarm::Off => 0,
            Alarm::On => 1,
        };
        mode + 2 * perf.index() + alarm
    }

    /// `(non-performant, performant)` state indices.
    pub fn states(self) -> [usize; 2] {
        [
            self.state(Performance::NonPerformant),
            self.state(Performance::Performant),
        ]
    }

    pub fn mode_label(self) -> &'static str {
        match self.mode {
            Mode::Manual => "manual",
            Mode::Auto => "auto",
        }
    }

    pub fn alarm_label(self) -> &'static str {
        match self.alarm {
            Alarm::On => "on",
            Alarm::Off => "off",
        }
    }

    pub fn parse(mode: &str, alarm: &str) -> Option<Self> {
        let mode = match mode {
            "manual" => Mode::Manual,
            "auto" => Mode::Auto,
            _ => return None,
        };
        let alarm = match alarm {
            "on" => Alarm::On,
            "off" => Alarm::Off,
            _ => return None,
        };
        Some(VisibleConfig::new(mode, alarm))
    }
}

impl fmt::Display for VisibleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.mode_label(), self.alarm_label())
    }
}

/// Splits a non-terminal state index into its visible and hidden parts.
pub fn decompose(state: usize) -> Option<(VisibleConfig, Performance)> {
    if state >= GAMEOVER {
        return None;
    }
    let mode = if state < 4 { Mode::Manual } else { Mode::Auto };
    let perf = Performance::from_bit(state % 4 >= 2);
    let alarm = if state % 2 == 1 { Alarm::On } else { Alarm::Off };
    Some((VisibleConfig::new(mode, alarm), perf))
}

pub fn is_performant(state: usize) -> bool {
    PERFORMANT_STATES.contains(&state)
}

/// Whether `T(next | ·, action)` may be non-zero: the next state must be
/// game-over or carry the visible configuration the action selects.
pub fn transition_allowed(action: usize, next: usize) -> bool {
    next == GAMEOVER || decompose(next).map(|(c, _)| c) == Some(VisibleConfig::target_of(action))
}

pub fn action_index(label: &str) -> Option<usize> {
    ACTION_LABELS.iter().position(|&l| l == label)
}

pub fn state_index(label: &str) -> Option<usize> {
    STATE_LABELS.iter().position(|&l| l == label)
}

pub fn state_labels() -> Vec<String> {
    STATE_LABELS.iter().map(|s| s.to_string()).collect()
}

pub fn action_labels() -> Vec<String> {
    ACTION_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Checks that a model uses this layout (labels, sizes and the absorbing
/// game-over state), which the structure-dependent operations rely on.
pub fn check_layout(model: &DiscretePomdp) -> Result<()> {
    let same = |labels: &[String], expected: &[&str]| {
        labels.len() == expected.len() && labels.iter().zip(expected).all(|(a, b)| a == b)
    };
    if !same(&model.states, &STATE_LABELS)
        || !same(&model.observations, &STATE_LABELS)
        || !same(&model.actions, &ACTION_LABELS)
    {
        return Err(Error::Validation(
            "model does not use the mode/alarm/performance state layout".into(),
        ));
    }
    Ok(())
}
