//! Dense index newtypes and the three-phase set.
//!
//! Files carry string ids; the parser maps them to dense indices and keeps
//! the name tables for report traceability.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! index_type {
    ($name:ident) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        pub struct $name(pub usize);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

index_type!(BusId);
index_type!(EdgeId);
index_type!(BlockId);
index_type!(LateralId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    /// Reference closing-angle offset relative to phase A, in degrees.
    pub fn angle_offset_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }

    /// Balanced operating-point angle, used by the three-phase voltage-drop
    /// coefficients.
    pub fn reference_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Subset of {A, B, C} stored as a bit mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn single(p: Phase) -> PhaseSet {
        PhaseSet(1 << p.index())
    }

    pub fn insert(&mut self, p: Phase) {
        self.0 |= 1 << p.index();
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 >> p.index() & 1 == 1
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn parse(s: &str) -> Result<PhaseSet, String> {
        let mut set = PhaseSet::EMPTY;
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'A' => set.insert(Phase::A),
                'B' => set.insert(Phase::B),
                'C' => set.insert(Phase::C),
                other => return Err(format!("unknown phase letter {other:?}")),
            }
        }
        if set.is_empty() {
            return Err("phase set must not be empty".to_string());
        }
        Ok(set)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        PhaseSet::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_set_parse_and_iterate() {
        let set = PhaseSet::parse("CA").unwrap();
        assert!(set.contains(Phase::A));
        assert!(!set.contains(Phase::B));
        assert_eq!(set.len(), 2);
        assert_eq!(set.to_string(), "AC");
        assert!(PhaseSet::parse("").is_err());
        assert!(PhaseSet::parse("AD").is_err());
    }

    #[test]
    fn subset_and_intersection() {
        let ab = PhaseSet::parse("AB").unwrap();
        assert!(PhaseSet::single(Phase::A).is_subset_of(ab));
        assert!(!PhaseSet::ABC.is_subset_of(ab));
        assert_eq!(PhaseSet::ABC.intersection(ab), ab);
    }
}
