use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Rephrase,
    SenderPrefill,
    SenderDecode,
    Transmit,
    Fuse,
    ReceiverPrefill,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub phase: Phase,
    /// Model id, or `sender->receiver` for transmissions.
    pub party: String,
    pub start: f64,
    pub duration: f64,
    /// Tokens processed, or bytes for transmissions.
    pub units: u64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    pub segments: Vec<Segment>,
    pub total: f64,
}

impl Timeline {
    pub fn push(&mut self, phase: Phase, party: &str, start: f64, duration: f64, units: u64) -> f64 {
        let end = start + duration;
        self.segments.push(Segment { phase, party: party.to_string(), start, duration, units });
        self.total = self.total.max(end);
        end
    }

    pub fn phase_time(&self, phase: Phase) -> f64 {
        self.segments.iter().filter(|s| s.phase == phase).map(|s| s.duration).sum()
    }

    pub fn phase_units(&self, phase: Phase) -> u64 {
        self.segments.iter().filter(|s| s.phase == phase).map(|s| s.units).sum()
    }

    /// Tokens the receiver ran through prefill.
    pub fn receiver_prefill_tokens(&self) -> u64 {
        self.phase_units(Phase::ReceiverPrefill)
    }

    /// Summed segment durations of one party.
    pub fn busy_time(&self, party: &str) -> f64 {
        self.segments.iter().filter(|s| s.party == party).map(|s| s.duration).sum()
    }

    pub fn parties(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.party) {
                out.push(s.party.clone());
            }
        }
        out
    }

    /// One JSON object per segment, each tagged with `task`.
    pub fn write_jsonl<W: Write>(&self, task: &str, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            task: &'a str,
            #[serde(flatten)]
            segment: &'a Segment,
        }
        for segment in &self.segments {
            serde_json::to_writer(&mut w, &Line { task, segment })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}
