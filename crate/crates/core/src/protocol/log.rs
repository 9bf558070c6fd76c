use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netsim::Medium;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Receiver asks a sender to contribute to a task; carries only the id.
    TaskRequest,
    KvPayload,
    TextPayload,
}

/// One simulated transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub task_id: u64,
    pub from: String,
    pub to: String,
    pub medium: Medium,
    pub kind: MessageKind,
    pub payload_bytes: u64,
    /// Simulated send time in seconds from the start of the task.
    pub t_sim: f64,
    /// Text payload, present only on text messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

/// Append-only record of every transmission.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    entries: Vec<Message>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        task_id: u64,
        from: &str,
        to: &str,
        medium: Medium,
        kind: MessageKind,
        payload_bytes: u64,
        t_sim: f64,
        tokens: Option<Vec<u32>>,
    ) {
        let seq = self.entries.len() as u64;
        self.entries.push(Message { seq, task_id, from: from.into(), to: to.into(), medium, kind, payload_bytes, t_sim, tokens });
    }

    pub fn entries(&self) -> &[Message] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: MessageLog) {
        for mut m in other.entries {
            m.seq = self.entries.len() as u64;
            self.entries.push(m);
        }
    }

    /// Messages addressed to anyone but `receiver`.
    pub fn sender_bound<'a>(&'a self, receiver: &'a str) -> impl Iterator<Item = &'a Message> + 'a {
        self.entries.iter().filter(move |m| m.to != receiver)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for m in &self.entries {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut log = MessageLog::new();
        log.record(3, "r", "s", Medium::Cache, MessageKind::TaskRequest, 0, 0.0, None);
        log.record(3, "s", "r", Medium::Token, MessageKind::TextPayload, 32, 0.5, Some(vec![4, 0]));
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().next().unwrap().contains("tokens"));
        assert_eq!(MessageLog::read_jsonl(buf.as_slice()).unwrap(), log);
        assert_eq!(log.sender_bound("r").count(), 1);
    }
}
