//! Single-slot-per-kind command mailbox with overwrite semantics.

use std::sync::Arc;

use arc_swap::ArcSwapOption;
use vptc::sim::scenario::Command;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    SetTarget,
    MoveObstacle,
    AddObstacle,
    RemoveObstacle,
    Toggle,
    Push,
}

impl CommandKind {
    pub const ALL: [CommandKind; 6] = [
        CommandKind::SetTarget,
        CommandKind::MoveObstacle,
        CommandKind::AddObstacle,
        CommandKind::RemoveObstacle,
        CommandKind::Toggle,
        CommandKind::Push,
    ];

    pub fn of(cmd: &Command) -> Self {
        match cmd {
            Command::SetTarget { .. } => CommandKind::SetTarget,
            Command::MoveObstacle { .. } => CommandKind::MoveObstacle,
            Command::AddObstacle { .. } => CommandKind::AddObstacle,
            Command::RemoveObstacle { .. } => CommandKind::RemoveObstacle,
            Command::Toggle { .. } => CommandKind::Toggle,
            Command::Push { .. } => CommandKind::Push,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posted {
    pub seq: u64,
    pub command: Command,
}

/// Writers overwrite, the control loop drains. Neither side blocks.
#[derive(Debug, Default)]
pub struct Mailbox {
    slots: [ArcSwapOption<Posted>; 6],
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces any pending command of the same kind; returns the
    /// displaced one.
    pub fn post(&self, seq: u64, command: Command) -> Option<Arc<Posted>> {
        let kind = CommandKind::of(&command);
        self.slots[kind.slot()].swap(Some(Arc::new(Posted { seq, command })))
    }

    /// Empties every slot, in the fixed order of [`CommandKind::ALL`].
    pub fn drain(&self) -> Vec<Arc<Posted>> {
        CommandKind::ALL
            .iter()
            .filter_map(|k| self.slots[k.slot()].swap(None))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(|s| s.load().is_none())
    }
}
