use std::collections::BTreeMap;

use super::bridge::Fuser;
use crate::error::{Error, Result};

/// Fusers keyed by `(sender_id, receiver_id)`.
#[derive(Debug, Clone, Default)]
pub struct FuserRegistry {
    fusers: BTreeMap<(String, String), Fuser>,
}

impl FuserRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the fuser for its directed pair.
    pub fn insert(&mut self, f: Fuser) -> Result<()> {
        f.validate()?;
        if f.sender_id() == f.receiver_id() {
            return Err(Error::Config(format!("fuser from {} to itself", f.sender_id())));
        }
        self.fusers.insert((f.sender_id().to_string(), f.receiver_id().to_string()), f);
        Ok(())
    }

    pub fn get(&self, sender: &str, receiver: &str) -> Result<&Fuser> {
        self.fusers
            .get(&(sender.to_string(), receiver.to_string()))
            .ok_or_else(|| Error::MissingFuser { sender: sender.into(), receiver: receiver.into() })
    }

    pub fn contains(&self, sender: &str, receiver: &str) -> bool {
        self.fusers.contains_key(&(sender.to_string(), receiver.to_string()))
    }

    pub fn len(&self) -> usize {
        self.fusers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fusers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fuser> {
        self.fusers.values()
    }
}
