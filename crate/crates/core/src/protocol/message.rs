use serde::{Deserialize, Serialize};

use crate::execlog::Event;
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    StartTask,
    TerminateTask,
    EndSession,
    Greet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Controller session identifier; carried by `greet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub event: Event,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_num: Option<u64>,
    pub abs_timestamp: i64,
    #[serde(default)]
    pub detail: String,
}

/// Unit of exchange between controllers and engines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    Command(Command),
    Status(Status),
}

impl Message {
    pub fn greet(session_id: u64) -> Self {
        Message::Command(Command {
            action: Action::Greet,
            task: None,
            session_id: Some(session_id),
        })
    }

    pub fn start_task(task: Task) -> Self {
        Message::Command(Command {
            action: Action::StartTask,
            task: Some(task),
            session_id: None,
        })
    }

    pub fn terminate_task(task: Task) -> Self {
        Message::Command(Command {
            action: Action::TerminateTask,
            task: Some(task),
            session_id: None,
        })
    }

    pub fn end_session() -> Self {
        Message::Command(Command {
            action: Action::EndSession,
            task: None,
            session_id: None,
        })
    }

    pub fn status(event: Event, seq_num: Option<u64>, abs_timestamp: i64, detail: impl Into<String>) -> Self {
        Message::Status(Status {
            event,
            seq_num,
            abs_timestamp,
            detail: detail.into(),
        })
    }

    pub fn as_status(&self) -> Option<&Status> {
        match self {
            Message::Status(s) => Some(s),
            Message::Command(_) => None,
        }
    }

    /// Checks the structural rules that the type system does not enforce.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Message::Command(c) => {
                let needs_task = matches!(c.action, Action::StartTask | Action::TerminateTask);
                if needs_task != c.task.is_some() {
                    return Err(format!("{:?} command {} a task", c.action, if needs_task { "requires" } else { "must not carry" }));
                }
                if c.action == Action::Greet && c.session_id.is_none() {
                    return Err("greet requires a session_id".into());
                }
                if let Some(t) = &c.task {
                    t.validate().map_err(|e| e.to_string())?;
                }
                Ok(())
            }
            Message::Status(_) => Ok(()),
        }
    }
}
