//! Device identity and neighbor codes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Stable pseudonymous 128-bit device identifier.
///
/// Rendered as 32 lowercase hex characters; that rendering is also the name of
/// the phone's directories on the server, so parsing is strict.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhoneHash(u128);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("phone hash must be 32 lowercase hex characters, got {0:?}")]
pub struct PhoneHashError(pub String);

impl PhoneHash {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.gen())
    }

    pub fn from_u128(value: u128) -> Self {
        Self(value)
    }

    pub fn as_u128(&self) -> u128 {
        self.0
    }
}

impl fmt::Display for PhoneHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for PhoneHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhoneHash({self})")
    }
}

impl FromStr for PhoneHash {
    type Err = PhoneHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = s.len() == 32 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if !ok {
            return Err(PhoneHashError(s.to_owned()));
        }
        u128::from_str_radix(s, 16)
            .map(Self)
            .map_err(|_| PhoneHashError(s.to_owned()))
    }
}

impl Serialize for PhoneHash {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PhoneHash {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const NEIGHBOR_CODE_DIGITS: usize = 6;
const NEIGHBOR_CODE_SPACE: u32 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NeighborCodeError {
    #[error("all {NEIGHBOR_CODE_SPACE} neighbor codes are already in use")]
    Exhausted,
}

/// Draws a fresh six-digit code that is not in `existing`.
///
/// Rejection sampling first; if the set is so dense that a handful of draws
/// all collide, scan forward from the last draw instead.
pub fn generate_neighbor_code<R: Rng + ?Sized>(
    rng: &mut R,
    existing: &BTreeSet<String>,
) -> Result<String, NeighborCodeError> {
    let taken = existing.iter().filter(|c| is_neighbor_code(c)).count();
    if taken >= NEIGHBOR_CODE_SPACE as usize {
        return Err(NeighborCodeError::Exhausted);
    }
    let mut draw = 0;
    for _ in 0..32 {
        draw = rng.gen_range(0..NEIGHBOR_CODE_SPACE);
        let code = format_code(draw);
        if !existing.contains(&code) {
            return Ok(code);
        }
    }
    for step in 1..NEIGHBOR_CODE_SPACE {
        let code = format_code((draw + step) % NEIGHBOR_CODE_SPACE);
        if !existing.contains(&code) {
            return Ok(code);
        }
    }
    Err(NeighborCodeError::Exhausted)
}

pub fn is_neighbor_code(code: &str) -> bool {
    code.len() == NEIGHBOR_CODE_DIGITS && code.bytes().all(|b| b.is_ascii_digit())
}

fn format_code(n: u32) -> String {
    format!("{n:06}")
}
