use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tie::TransitionInfo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    DomainOnly,
    DomainSlotValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPrompt {
    pub kind: PromptKind,
    pub info: TransitionInfo,
}

impl TransitionPrompt {
    pub fn new(kind: PromptKind, info: TransitionInfo) -> Result<Self> {
        let p = Self { kind, info };
        p.validate()?;
        Ok(p)
    }

    /// Domain-slot-value when slot and value are usable, domain-only otherwise, `None` for UNK.
    pub fn richest(info: &TransitionInfo) -> Option<Self> {
        if info.domain.is_unk() {
            return None;
        }
        let full = !info.slot.is_unk() && info.value.as_deref().is_some_and(|v| !v.trim().is_empty());
        let kind = if full {
            PromptKind::DomainSlotValue
        } else {
            PromptKind::DomainOnly
        };
        Some(Self {
            kind,
            info: info.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.info.domain.is_unk() {
            return Err(Error::Prompt("domain must not be UNK".into()));
        }
        if self.kind == PromptKind::DomainSlotValue {
            if self.info.slot.is_unk() {
                return Err(Error::Prompt("domain_slot_value prompt needs a slot".into()));
            }
            if self.info.value.as_deref().is_none_or(|v| v.trim().is_empty()) {
                return Err(Error::Prompt("domain_slot_value prompt needs a value".into()));
            }
        }
        Ok(())
    }

    /// `[TRANSITION] ( domain = train )` or
    /// `[TRANSITION] ( domain = train, slot = destination, value = Norwich )`.
    pub fn build(&self) -> Result<String> {
        self.validate()?;
        Ok(match self.kind {
            PromptKind::DomainOnly => format!("[TRANSITION] ( domain = {} )", self.info.domain),
            PromptKind::DomainSlotValue => format!(
                "[TRANSITION] ( domain = {}, slot = {}, value = {} )",
                self.info.domain,
                self.info.slot,
                self.info.value.as_deref().unwrap_or_default()
            ),
        })
    }
}

pub fn build_prompt(p: &TransitionPrompt) -> Result<String> {
    p.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainLabel, SlotLabel};

    #[test]
    fn exemplar_strings() {
        let d = TransitionPrompt::new(PromptKind::DomainOnly, TransitionInfo::domain(DomainLabel::Train)).unwrap();
        assert_eq!(build_prompt(&d).unwrap(), "[TRANSITION] ( domain = train )");
        let info = TransitionInfo::new(DomainLabel::Train, SlotLabel::Destination, Some("Norwich".into()));
        let dv = TransitionPrompt::new(PromptKind::DomainSlotValue, info).unwrap();
        assert_eq!(
            build_prompt(&dv).unwrap(),
            "[TRANSITION] ( domain = train, slot = destination, value = Norwich )"
        );
    }

    #[test]
    fn unk_is_rejected() {
        assert!(TransitionPrompt::new(PromptKind::DomainOnly, TransitionInfo::unk()).is_err());
        assert!(TransitionPrompt::richest(&TransitionInfo::unk()).is_none());
        let no_value = TransitionInfo::new(DomainLabel::Taxi, SlotLabel::Departure, None);
        assert!(TransitionPrompt::new(PromptKind::DomainSlotValue, no_value.clone()).is_err());
        assert_eq!(TransitionPrompt::richest(&no_value).unwrap().kind, PromptKind::DomainOnly);
    }
}
