//! Resource paths of the controller dialect.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const JOINTTARGET: &str = "/rw/motionsystem/mechunits/ROB_1/jointtarget";
pub const ROBTARGET: &str = "/rw/motionsystem/mechunits/ROB_1/robtarget";
pub const IO_SIGNALS: &str = "/rw/iosystem/signals";
pub const SPYLOG: &str = "/rw/rapid/spylog";
pub const EXECUTION: &str = "/rw/rapid/execution";
pub const SYMBOL_JTARGET: &str = "/rw/rapid/symbol/data/T_ROB1/module/jtarget";

pub fn spylog_uri(since: u64) -> String {
    format!("{SPYLOG}?since={since}")
}

pub fn execution_uri(action: ExecutionAction) -> String {
    format!("{EXECUTION}?action={action}")
}

pub fn symbol_update_uri() -> String {
    format!("{SYMBOL_JTARGET}?action=set")
}

pub fn io_set_uri(name: &str) -> String {
    format!("{IO_SIGNALS}/{name}?action=set")
}

/// Program execution actions accepted on [`EXECUTION`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionAction {
    Resetpp,
    Start,
    Stop,
}

impl fmt::Display for ExecutionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Resetpp => "resetpp",
            Self::Start => "start",
            Self::Stop => "stop",
        })
    }
}

impl FromStr for ExecutionAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "resetpp" | "reset" => Ok(Self::Resetpp),
            "start" => Ok(Self::Start),
            "stop" => Ok(Self::Stop),
            other => Err(format!("unknown execution action `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uris() {
        assert_eq!(spylog_uri(7), "/rw/rapid/spylog?since=7");
        assert_eq!(
            execution_uri(ExecutionAction::Resetpp),
            "/rw/rapid/execution?action=resetpp"
        );
        assert_eq!(
            symbol_update_uri(),
            "/rw/rapid/symbol/data/T_ROB1/module/jtarget?action=set"
        );
        assert_eq!(io_set_uri("DO_7"), "/rw/iosystem/signals/DO_7?action=set");
    }

    #[test]
    fn action_parse() {
        assert_eq!("stop".parse(), Ok(ExecutionAction::Stop));
        assert!("pause".parse::<ExecutionAction>().is_err());
    }
}
