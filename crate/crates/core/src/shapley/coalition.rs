use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest player count a coalition bitset can hold.
pub const MAX_PLAYERS: usize = 30;

/// A subset of the `M` players, stored as a bitset (bit `i` set = feature `i` present).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    bits: u32,
    players: u8,
}

impl Coalition {
    pub fn empty(players: usize) -> Result<Self> {
        Self::from_bits(0, players)
    }

    pub fn full(players: usize) -> Result<Self> {
        check_players(players)?;
        Self::from_bits(full_mask(players), players)
    }

    pub fn from_bits(bits: u32, players: usize) -> Result<Self> {
        check_players(players)?;
        if bits & !full_mask(players) != 0 {
            return Err(Error::Config(format!(
                "bitset {bits:#b} has members outside {players} players"
            )));
        }
        Ok(Self {
            bits,
            players: players as u8,
        })
    }

    pub fn from_members(members: &[usize], players: usize) -> Result<Self> {
        check_players(players)?;
        let mut bits = 0u32;
        for &i in members {
            if i >= players {
                return Err(Error::Config(format!(
                    "member {i} out of range for {players} players"
                )));
            }
            bits |= 1 << i;
        }
        Self::from_bits(bits, players)
    }

    pub(crate) fn from_bits_unchecked(bits: u32, players: usize) -> Self {
        debug_assert!(players <= MAX_PLAYERS && bits & !full_mask(players) == 0);
        Self {
            bits,
            players: players as u8,
        }
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn players(&self) -> usize {
        self.players as usize
    }

    /// Number of present features.
    #[inline]
    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    #[inline]
    pub fn contains(&self, feature: usize) -> bool {
        feature < self.players() && self.bits & (1 << feature) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn is_full(&self) -> bool {
        self.bits == full_mask(self.players())
    }

    /// Neither empty nor full.
    pub fn is_proper(&self) -> bool {
        !self.is_empty() && !self.is_full()
    }

    pub fn with(&self, feature: usize) -> Self {
        assert!(feature < self.players(), "feature {feature} out of range");
        Self {
            bits: self.bits | (1 << feature),
            players: self.players,
        }
    }

    pub fn without(&self, feature: usize) -> Self {
        Self {
            bits: self.bits & !(1 << feature),
            players: self.players,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.players()).filter(move |&i| self.contains(i))
    }

    /// Membership as a 0/1 indicator vector of length `M`.
    pub fn indicator(&self) -> Vec<bool> {
        (0..self.players()).map(|i| self.contains(i)).collect()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.players() {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coalition({self})")
    }
}

#[inline]
pub(crate) fn full_mask(players: usize) -> u32 {
    if players == 32 {
        u32::MAX
    } else {
        (1u32 << players) - 1
    }
}

pub(crate) fn check_players(players: usize) -> Result<()> {
    if players == 0 || players > MAX_PLAYERS {
        return Err(Error::Config(format!(
            "player count {players} outside 1..={MAX_PLAYERS}"
        )));
    }
    Ok(())
}

/// Number of proper coalitions, `2^M - 2`.
pub fn proper_pool_size(players: usize) -> usize {
    (1usize << players).saturating_sub(2)
}
