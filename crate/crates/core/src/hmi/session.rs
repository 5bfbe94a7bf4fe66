//! Replay an event stream through the controller and tally per-action
//! outcomes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adapter::PlayerAdapter;
use super::clock::Clock;
use super::{step, Bindings, ControllerState, GestureEvent, PlayerAction};
use crate::error::{Error, Result};

/// A trial is a hit iff `expected_action` fired successfully for an event
/// with `window_start_ms <= t_ms <= window_end_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub expected_action: PlayerAction,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
}

pub fn read_script(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trials: Vec<Trial> = serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    if let Some(t) = trials.iter().find(|t| t.window_end_ms < t.window_start_ms) {
        return Err(Error::Input(format!(
            "trial window {}..{} ends before it starts",
            t.window_start_ms, t.window_end_ms
        )));
    }
    Ok(trials)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredAction {
    pub t_ms: u64,
    pub label: String,
    pub action: PlayerAction,
    pub ok: bool,
    pub response_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    pub action: PlayerAction,
    pub gesture: Option<String>,
    pub hits: usize,
    pub misses: usize,
    /// `100 · hits / (hits + misses)`.
    pub detection_rate_percent: f64,
    pub mean_response_ms: Option<f64>,
    pub p50_response_ms: Option<f64>,
    pub p95_response_ms: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub event_count: usize,
    pub rows: Vec<ActionRow>,
    pub fired: Vec<FiredAction>,
}

pub fn detection_rate(hits: usize, misses: usize) -> f64 {
    let total = hits + misses;
    if total == 0 {
        0.0
    } else {
        (100 * hits) as f64 / total as f64
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

impl SessionReport {
    pub fn row(&self, action: PlayerAction) -> Option<&ActionRow> {
        self.rows.iter().find(|r| r.action == action)
    }

    /// Text table: action, gesture, hits, misses, detection rate, mean response.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<22} {:<8} {:>5} {:>6} {:>18} {:>22}\n",
            "Action", "Gesture", "Hits", "Misses", "Detection rate (%)", "Avg response (ms)"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<22} {:<8} {:>5} {:>6} {:>18.1} {:>22}\n",
                r.action.description(),
                r.gesture.as_deref().unwrap_or("-"),
                r.hits,
                r.misses,
                r.detection_rate_percent,
                r.mean_response_ms.map_or("-".into(), |v| format!("{v:.3}"))
            ));
        }
        s.push_str(&format!("events: {}\n", self.event_count));
        s
    }
}

/// Feed `events` through the controller, sending each fired action to
/// `adapter` and timing it with `clock`. Adapter failures are recorded and
/// the session continues.
pub fn run_session(
    events: &[GestureEvent],
    bindings: &Bindings,
    adapter: &mut dyn PlayerAdapter,
    clock: &dyn Clock,
    script: Option<&[Trial]>,
) -> Result<SessionReport> {
    bindings.validate()?;
    let mut state = ControllerState::default();
    let mut fired = Vec::new();
    for ev in events {
        let ingest = clock.now();
        let Some(action) = step(&mut state, ev, bindings)? else {
            continue;
        };
        let outcome = adapter.execute(action);
        let response_ms = (clock.now() - ingest).as_secs_f64() * 1e3;
        fired.push(FiredAction {
            t_ms: ev.t_ms,
            label: ev.class_label.clone(),
            action,
            ok: outcome.is_ok(),
            response_ms,
            error: outcome.err().map(|e| e.to_string()),
        });
    }

    let mut tallies: BTreeMap<PlayerAction, (usize, usize, Vec<String>)> = BTreeMap::new();
    match script {
        Some(trials) => {
            for t in trials {
                let in_window: Vec<&FiredAction> = fired
                    .iter()
                    .filter(|f| {
                        f.action == t.expected_action
                            && (t.window_start_ms..=t.window_end_ms).contains(&f.t_ms)
                    })
                    .collect();
                let e = tallies.entry(t.expected_action).or_default();
                if in_window.iter().any(|f| f.ok) {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                    let why = match in_window.iter().find_map(|f| f.error.as_deref()) {
                        Some(err) => {
                            format!("{}..{} ms: {err}", t.window_start_ms, t.window_end_ms)
                        }
                        None => format!(
                            "{}..{} ms: did not fire",
                            t.window_start_ms, t.window_end_ms
                        ),
                    };
                    e.2.push(why);
                }
            }
        }
        None => {
            for f in &fired {
                let e = tallies.entry(f.action).or_default();
                if f.ok {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                    e.2.push(format!(
                        "t={} ms: {}",
                        f.t_ms,
                        f.error.as_deref().unwrap_or("failed")
                    ));
                }
            }
        }
    }

    let rows = PlayerAction::TABLE_ORDER
        .iter()
        .filter_map(|&action| {
            let (hits, misses, notes) = tallies.remove(&action)?;
            let mut times: Vec<f64> = fired
                .iter()
                .filter(|f| f.action == action && f.ok)
                .map(|f| f.response_ms)
                .collect();
            times.sort_by(f64::total_cmp);
            Some(ActionRow {
                action,
                gesture: bindings.label_for(action).map(str::to_string),
                hits,
                misses,
                detection_rate_percent: detection_rate(hits, misses),
                mean_response_ms: (!times.is_empty())
                    .then(|| times.iter().sum::<f64>() / times.len() as f64),
                p50_response_ms: percentile(&times, 50.0),
                p95_response_ms: percentile(&times, 95.0),
                notes,
            })
        })
        .collect();

    Ok(SessionReport {
        event_count: events.len(),
        rows,
        fired,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmi::{default_bindings, MockAdapter, VirtualClock};

    #[test]
    fn percentile_nearest_rank() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 50.0), Some(2.0));
        assert_eq!(percentile(&v, 95.0), Some(4.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn unscripted_counts_adapter_outcomes() {
        let events = vec![
            GestureEvent::new(0, "Ok", 0.9),
            GestureEvent::new(10, "Fist", 0.9),
            GestureEvent::new(20, "Palm", 0.9),
            GestureEvent::new(30, "Ok", 0.9),
        ];
        let mut a = MockAdapter::new().failing_calls([1]);
        let r = run_session(
            &events,
            &default_bindings(),
            &mut a,
            &VirtualClock::new(),
            None,
        )
        .unwrap();
        assert_eq!(a.recorded, vec![PlayerAction::Play, PlayerAction::Play]);
        let play = r.row(PlayerAction::Play).unwrap();
        assert_eq!((play.hits, play.misses), (2, 0));
        let pause = r.row(PlayerAction::Pause).unwrap();
        assert_eq!((pause.hits, pause.misses), (0, 1));
        assert!(pause.notes[0].contains("injected"));
        assert!(r.render_table().contains("Pause"));
    }
}
