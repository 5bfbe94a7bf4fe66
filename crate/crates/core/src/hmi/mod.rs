//! Gesture-to-player-command controller.
//!
//! Predicted gesture labels map to player actions. Continuous actions
//! (volume, track skip) are rate-limited by an event-time cooldown; discrete
//! actions (play, pause) fire only when the label changes.

pub mod adapter;
pub mod clock;
pub mod session;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adapter::{CommandAdapter, MockAdapter, PlayerAdapter};
pub use clock::{Clock, MonotonicClock, VirtualClock};
pub use session::{run_session, ActionRow, FiredAction, SessionReport, Trial};

pub const DEFAULT_COOLDOWN_MS: u64 = 500;
pub const DEFAULT_CONFIDENCE_GATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlayerAction {
    Play,
    Pause,
    NextTrack,
    PrevTrack,
    VolumeUp,
    VolumeDown,
    NoOp,
}

impl PlayerAction {
    /// Report row order.
    pub const TABLE_ORDER: [PlayerAction; 6] = [
        PlayerAction::Play,
        PlayerAction::VolumeUp,
        PlayerAction::VolumeDown,
        PlayerAction::PrevTrack,
        PlayerAction::NextTrack,
        PlayerAction::Pause,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlayerAction::Play => "Play",
            PlayerAction::Pause => "Pause",
            PlayerAction::NextTrack => "NextTrack",
            PlayerAction::PrevTrack => "PrevTrack",
            PlayerAction::VolumeUp => "VolumeUp",
            PlayerAction::VolumeDown => "VolumeDown",
            PlayerAction::NoOp => "NoOp",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            PlayerAction::Play => "Play",
            PlayerAction::Pause => "Pause",
            PlayerAction::NextTrack => "Go to next track",
            PlayerAction::PrevTrack => "Go to previous track",
            PlayerAction::VolumeUp => "Volume up",
            PlayerAction::VolumeDown => "Volume down",
            PlayerAction::NoOp => "No action",
        }
    }
}

impl fmt::Display for PlayerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBinding {
    pub label: String,
    pub action: PlayerAction,
    pub kind: ActionKind,
    /// Only used by continuous actions.
    #[serde(default = "default_cooldown")]
    pub cooldown_ms: u64,
}

fn default_cooldown() -> u64 {
    DEFAULT_COOLDOWN_MS
}

fn default_gate() -> f64 {
    DEFAULT_CONFIDENCE_GATE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    #[serde(default = "default_gate")]
    pub confidence_gate: f64,
    pub bindings: Vec<ActionBinding>,
}

impl Default for Bindings {
    fn default() -> Self {
        default_bindings()
    }
}

impl Bindings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence_gate) {
            return Err(Error::Config(format!(
                "confidence gate must lie in [0,1], got {}",
                self.confidence_gate
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.bindings {
            if !seen.insert(b.label.as_str()) {
                return Err(Error::Config(format!("label `{}` is bound twice", b.label)));
            }
            if b.kind == ActionKind::Continuous && b.cooldown_ms == 0 {
                return Err(Error::Config(format!(
                    "continuous binding `{}` needs a cooldown > 0",
                    b.label
                )));
            }
            if b.action == PlayerAction::NoOp {
                return Err(Error::Config(format!(
                    "label `{}` is bound to NoOp",
                    b.label
                )));
            }
        }
        Ok(())
    }

    pub fn lookup(&self, label: &str) -> Option<&ActionBinding> {
        self.bindings.iter().find(|b| b.label == label)
    }

    /// Action for a label; unbound labels map to `NoOp`.
    pub fn action_for(&self, label: &str) -> PlayerAction {
        self.lookup(label).map_or(PlayerAction::NoOp, |b| b.action)
    }

    pub fn label_for(&self, action: PlayerAction) -> Option<&str> {
        self.bindings
            .iter()
            .find(|b| b.action == action)
            .map(|b| b.label.as_str())
    }
}

pub fn default_bindings() -> Bindings {
    let bind = |label: &str, action, kind| ActionBinding {
        label: label.into(),
        action,
        kind,
        cooldown_ms: DEFAULT_COOLDOWN_MS,
    };
    use ActionKind::*;
    use PlayerAction::*;
    Bindings {
        confidence_gate: DEFAULT_CONFIDENCE_GATE,
        bindings: vec![
            bind("Ok", Play, Discrete),
            bind("Fist", Pause, Discrete),
            bind("Two", NextTrack, Continuous),
            bind("Three", PrevTrack, Continuous),
            bind("L", VolumeUp, Continuous),
            bind("Hang", VolumeDown, Continuous),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub t_ms: u64,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl GestureEvent {
    pub fn new(t_ms: u64, class_label: &str, confidence: f64) -> Self {
        GestureEvent {
            t_ms,
            class_label: class_label.into(),
            confidence,
        }
    }
}

/// One JSON object per non-blank line.
pub fn parse_events(text: &str) -> Result<Vec<GestureEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Stream(format!("event line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_events(path: &Path) -> Result<Vec<GestureEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_events(&text)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerState {
    pub last_t_ms: Option<u64>,
    /// Label of the previous event that passed the confidence gate.
    pub last_label: Option<String>,
    pub last_fire_ms: BTreeMap<PlayerAction, u64>,
}

/// Feed one event; returns the action to send to the player, if any.
pub fn step(
    state: &mut ControllerState,
    event: &GestureEvent,
    bindings: &Bindings,
) -> Result<Option<PlayerAction>> {
    if let Some(prev) = state.last_t_ms {
        if event.t_ms < prev {
            return Err(Error::Stream(format!(
                "timestamp went backwards: {} after {prev}",
                event.t_ms
            )));
        }
    }
    if !(0.0..=1.0).contains(&event.confidence) {
        return Err(Error::Stream(format!(
            "confidence {} at t={} outside [0,1]",
            event.confidence, event.t_ms
        )));
    }
    state.last_t_ms = Some(event.t_ms);
    if event.confidence < bindings.confidence_gate {
        return Ok(None);
    }
    let previous = state.last_label.replace(event.class_label.clone());
    let Some(binding) = bindings.lookup(&event.class_label) else {
        return Ok(None);
    };
    let fire = match binding.kind {
        ActionKind::Discrete => previous.as_deref() != Some(event.class_label.as_str()),
        ActionKind::Continuous => state
            .last_fire_ms
            .get(&binding.action)
            .is_none_or(|&t| event.t_ms - t >= binding.cooldown_ms),
    };
    if !fire {
        return Ok(None);
    }
    state.last_fire_ms.insert(binding.action, event.t_ms);
    Ok(Some(binding.action))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmiConfig {
    #[serde(flatten)]
    pub bindings: Bindings,
    /// Command template per action; `{action}` expands to the action name.
    #[serde(default)]
    pub commands: BTreeMap<PlayerAction, String>,
}

impl Default for HmiConfig {
    fn default() -> Self {
        HmiConfig {
            bindings: default_bindings(),
            commands: adapter::playerctl_templates(),
        }
    }
}

impl HmiConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: HmiConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.bindings.validate()?;
        Ok(cfg)
    }
}
