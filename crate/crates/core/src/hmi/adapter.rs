use std::collections::{BTreeMap, BTreeSet};
use std::process::{Command, Stdio};
use std::time::Duration;

use super::clock::VirtualClock;
use super::PlayerAction;
use crate::error::{Error, Result};

/// Receives player actions; blocks until the player acknowledges.
pub trait PlayerAdapter {
    fn execute(&mut self, action: PlayerAction) -> Result<()>;
}

/// Templates for the `playerctl` command-line client.
pub fn playerctl_templates() -> BTreeMap<PlayerAction, String> {
    use PlayerAction::*;
    [
        (Play, "playerctl play"),
        (Pause, "playerctl pause"),
        (NextTrack, "playerctl next"),
        (PrevTrack, "playerctl previous"),
        (VolumeUp, "playerctl volume 0.1+"),
        (VolumeDown, "playerctl volume 0.1-"),
    ]
    .into_iter()
    .map(|(a, t)| (a, t.to_string()))
    .collect()
}

/// Runs one external process per action and waits for it to exit.
///
/// Templates are split on whitespace (no shell); `{action}` in any word is
/// replaced by the action name.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    templates: BTreeMap<PlayerAction, String>,
}

impl CommandAdapter {
    pub fn new(templates: BTreeMap<PlayerAction, String>) -> Result<Self> {
        if let Some((a, _)) = templates
            .iter()
            .find(|(_, t)| t.split_whitespace().next().is_none())
        {
            return Err(Error::Config(format!("empty command template for {a}")));
        }
        Ok(CommandAdapter { templates })
    }

    pub fn command_line(&self, action: PlayerAction) -> Option<Vec<String>> {
        self.templates.get(&action).map(|t| {
            t.split_whitespace()
                .map(|w| w.replace("{action}", action.name()))
                .collect()
        })
    }
}

impl PlayerAdapter for CommandAdapter {
    fn execute(&mut self, action: PlayerAction) -> Result<()> {
        let argv = self
            .command_line(action)
            .ok_or_else(|| Error::Adapter(format!("no command configured for {action}")))?;
        let status = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| Error::Adapter(format!("cannot run `{}`: {e}", argv[0])))?;
        if !status.success() {
            return Err(Error::Adapter(format!(
                "`{}` exited with {status}",
                argv.join(" ")
            )));
        }
        Ok(())
    }
}

/// How a mock spends its latency.
#[derive(Debug, Clone)]
pub enum MockLatency {
    /// Block the thread.
    Sleep(Duration),
    /// Advance a virtual clock.
    Virtual(VirtualClock, Duration),
}

/// Records actions in memory; optionally fails chosen calls.
#[derive(Debug, Clone)]
pub struct MockAdapter {
    pub recorded: Vec<PlayerAction>,
    latency: Option<MockLatency>,
    fail_calls: BTreeSet<usize>,
    calls: usize,
}

impl MockAdapter {
    pub fn new() -> Self {
        MockAdapter {
            recorded: Vec::new(),
            latency: None,
            fail_calls: BTreeSet::new(),
            calls: 0,
        }
    }

    pub fn with_latency(mut self, latency: MockLatency) -> Self {
        self.latency = Some(latency);
        self
    }

    /// Fail the given zero-based call numbers.
    pub fn failing_calls(mut self, calls: impl IntoIterator<Item = usize>) -> Self {
        self.fail_calls.extend(calls);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Default for MockAdapter {
    fn default() -> Self {
        Self::new()
    }
}

impl PlayerAdapter for MockAdapter {
    fn execute(&mut self, action: PlayerAction) -> Result<()> {
        let call = self.calls;
        self.calls += 1;
        match &self.latency {
            Some(MockLatency::Sleep(d)) => std::thread::sleep(*d),
            Some(MockLatency::Virtual(clock, d)) => clock.advance(*d),
            None => {}
        }
        if self.fail_calls.contains(&call) {
            return Err(Error::Adapter(format!("injected failure on call {call}")));
        }
        self.recorded.push(action);
        Ok(())
    }
}
