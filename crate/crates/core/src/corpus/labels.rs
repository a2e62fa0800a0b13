//! Domain and slot label sets and the 22-entry IOB tag dictionary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Transition domain. `Unk` means no task-related intent was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainLabel {
    Unk,
    Train,
    Restaurant,
    Attraction,
    Taxi,
}

/// Transition slot. `Unk` means no slot (or only a domain) was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotLabel {
    Unk,
    Day,
    Destination,
    Departure,
    Food,
    Name,
    Type,
}

impl DomainLabel {
    pub const ALL: [DomainLabel; 5] = [
        DomainLabel::Unk,
        DomainLabel::Train,
        DomainLabel::Restaurant,
        DomainLabel::Attraction,
        DomainLabel::Taxi,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainLabel::Unk => "UNK",
            DomainLabel::Train => "train",
            DomainLabel::Restaurant => "restaurant",
            DomainLabel::Attraction => "attraction",
            DomainLabel::Taxi => "taxi",
        }
    }

    pub fn is_unk(self) -> bool {
        self == DomainLabel::Unk
    }
}

impl SlotLabel {
    pub const ALL: [SlotLabel; 7] = [
        SlotLabel::Unk,
        SlotLabel::Day,
        SlotLabel::Destination,
        SlotLabel::Departure,
        SlotLabel::Food,
        SlotLabel::Name,
        SlotLabel::Type,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlotLabel::Unk => "UNK",
            SlotLabel::Day => "day",
            SlotLabel::Destination => "destination",
            SlotLabel::Departure => "departure",
            SlotLabel::Food => "food",
            SlotLabel::Name => "name",
            SlotLabel::Type => "type",
        }
    }

    pub fn is_unk(self) -> bool {
        self == SlotLabel::Unk
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label `{}`", self.0)
    }
}

impl std::error::Error for UnknownLabel {}

macro_rules! label_traits {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = UnknownLabel;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let t = s.trim();
                <$ty>::ALL
                    .iter()
                    .copied()
                    .find(|l| l.as_str().eq_ignore_ascii_case(t))
                    .ok_or_else(|| UnknownLabel(s.to_string()))
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

label_traits!(DomainLabel);
label_traits!(SlotLabel);

/// The nine domain-slot pairs that carry values.
pub const PAIRS: [(DomainLabel, SlotLabel); 9] = [
    (DomainLabel::Train, SlotLabel::Day),
    (DomainLabel::Train, SlotLabel::Destination),
    (DomainLabel::Train, SlotLabel::Departure),
    (DomainLabel::Restaurant, SlotLabel::Food),
    (DomainLabel::Restaurant, SlotLabel::Name),
    (DomainLabel::Attraction, SlotLabel::Type),
    (DomainLabel::Attraction, SlotLabel::Name),
    (DomainLabel::Taxi, SlotLabel::Destination),
    (DomainLabel::Taxi, SlotLabel::Departure),
];

pub fn pair_index(domain: DomainLabel, slot: SlotLabel) -> Option<usize> {
    PAIRS.iter().position(|&p| p == (domain, slot))
}

/// One slot-filling label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Pad,
    Cls,
    Sep,
    Outside,
    Begin(usize),
    Inside(usize),
}

impl Tag {
    pub const COUNT: usize = 4 + 2 * PAIRS.len();

    /// `[PAD]`, `[CLS]`, `[SEP]`, `O`, then `B-`/`I-` for each pair in `PAIRS` order.
    pub fn index(self) -> usize {
        match self {
            Tag::Pad => 0,
            Tag::Cls => 1,
            Tag::Sep => 2,
            Tag::Outside => 3,
            Tag::Begin(p) => 4 + 2 * p,
            Tag::Inside(p) => 5 + 2 * p,
        }
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        match i {
            0 => Some(Tag::Pad),
            1 => Some(Tag::Cls),
            2 => Some(Tag::Sep),
            3 => Some(Tag::Outside),
            i if i < Self::COUNT => {
                let p = (i - 4) / 2;
                Some(if (i - 4) % 2 == 0 {
                    Tag::Begin(p)
                } else {
                    Tag::Inside(p)
                })
            }
            _ => None,
        }
    }

    pub fn pair(self) -> Option<(DomainLabel, SlotLabel)> {
        match self {
            Tag::Begin(p) | Tag::Inside(p) => Some(PAIRS[p]),
            _ => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            Tag::Pad => "[PAD]".into(),
            Tag::Cls => "[CLS]".into(),
            Tag::Sep => "[SEP]".into(),
            Tag::Outside => "O".into(),
            Tag::Begin(p) => format!("B-{}-{}", PAIRS[p].0, PAIRS[p].1),
            Tag::Inside(p) => format!("I-{}-{}", PAIRS[p].0, PAIRS[p].1),
        }
    }
}

/// Index <-> string mapping over the 22 slot-filling labels.
#[derive(Debug, Clone)]
pub struct LabelDictionary {
    labels: Vec<String>,
}

impl Default for LabelDictionary {
    fn default() -> Self {
        Self {
            labels: (0..Tag::COUNT)
                .map(|i| Tag::from_index(i).expect("in range").label())
                .collect(),
        }
    }
}

impl LabelDictionary {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn from_index(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    pub fn to_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinalities() {
        assert_eq!(DomainLabel::ALL.len(), 5);
        assert_eq!(SlotLabel::ALL.len(), 7);
        assert_eq!(Tag::COUNT, 22);
        assert_eq!(LabelDictionary::default().len(), 22);
    }

    #[test]
    fn dictionary_round_trips() {
        let dict = LabelDictionary::default();
        for i in 0..dict.len() {
            let label = dict.from_index(i).unwrap();
            assert_eq!(dict.to_index(label), Some(i));
            assert_eq!(Tag::from_index(i).unwrap().index(), i);
        }
        for special in ["[PAD]", "[CLS]", "[SEP]", "O", "B-restaurant-food", "I-taxi-departure"] {
            assert!(dict.to_index(special).is_some(), "{special}");
        }
    }

    #[test]
    fn parse_labels() {
        assert_eq!("Train".parse::<DomainLabel>().unwrap(), DomainLabel::Train);
        assert_eq!("UNK".parse::<SlotLabel>().unwrap(), SlotLabel::Unk);
        assert!("hotel".parse::<DomainLabel>().is_err());
        assert!("pricerange".parse::<SlotLabel>().is_err());
    }
}
