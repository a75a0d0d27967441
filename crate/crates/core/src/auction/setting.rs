//! Auction settings: bidders, the bundles each one may bid on, and the table of
//! feasible allocations.
//!
//! Bids and valuations are laid out flat per profile: bidder `i` owns the
//! contiguous slots `slot_offset(i) .. slot_offset(i) + bundle_count(i)`, one
//! per bundle it is interested in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of bidder→bundle assignment combinations that
/// [`enumerate_feasible_allocations`] will walk.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 22;

/// Bit set of item indices.
pub type Bundle = u64;

/// Which well-known layout a setting follows. Used to pick closed-form fast
/// paths (LLG core payments, analytic equilibria).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    SingleItem,
    Llg,
    Llllgg,
    Custom,
}

/// For each bidder, the index of the bundle it wins or `None`.
pub type Allocation = Vec<Option<usize>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SettingDef", into = "SettingDef")]
pub struct SettingSpec {
    kind: SettingKind,
    n_items: usize,
    bundles: Vec<Vec<Bundle>>,
    feasible: Vec<Allocation>,
    slot_offsets: Vec<usize>,
    n_slots: usize,
    /// Flat slot index of every winner, per feasible allocation.
    alloc_slots: Vec<Vec<usize>>,
    /// Bit mask of winning bidders, per feasible allocation.
    alloc_winners: Vec<u32>,
}

/// Human-readable form of a setting: item indices instead of bit sets, no
/// derived tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingDef {
    #[serde(default = "custom_kind")]
    pub kind: SettingKind,
    pub n_bidders: usize,
    pub n_items: usize,
    pub bundles: Vec<Vec<Vec<usize>>>,
}

fn custom_kind() -> SettingKind {
    SettingKind::Custom
}

impl TryFrom<SettingDef> for SettingSpec {
    type Error = Error;

    fn try_from(def: SettingDef) -> Result<Self> {
        if def.bundles.len() != def.n_bidders {
            return Err(Error::InvalidSetting(format!(
                "n_bidders = {} but {} bundle lists given",
                def.n_bidders,
                def.bundles.len()
            )));
        }
        let mut bundles = Vec::with_capacity(def.n_bidders);
        for (i, list) in def.bundles.iter().enumerate() {
            let mut masks = Vec::with_capacity(list.len());
            for items in list {
                let mut mask: Bundle = 0;
                for &item in items {
                    if item >= def.n_items {
                        return Err(Error::InvalidSetting(format!(
                            "bidder {i}: item {item} out of range (n_items = {})",
                            def.n_items
                        )));
                    }
                    mask |= 1 << item;
                }
                if mask == 0 {
                    return Err(Error::InvalidSetting(format!("bidder {i}: empty bundle")));
                }
                masks.push(mask);
            }
            bundles.push(masks);
        }
        SettingSpec::new(def.kind, def.n_items, bundles)
    }
}

impl From<SettingSpec> for SettingDef {
    fn from(spec: SettingSpec) -> Self {
        let bundles = spec
            .bundles
            .iter()
            .map(|list| {
                list.iter()
                    .map(|&mask| (0..spec.n_items).filter(|&m| mask >> m & 1 == 1).collect())
                    .collect()
            })
            .collect();
        SettingDef {
            kind: spec.kind,
            n_bidders: spec.bundles.len(),
            n_items: spec.n_items,
            bundles,
        }
    }
}

impl SettingSpec {
    /// Builds a setting and its allocation table with the default enumeration cap.
    pub fn new(kind: SettingKind, n_items: usize, bundles: Vec<Vec<Bundle>>) -> Result<Self> {
        Self::with_cap(kind, n_items, bundles, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(
        kind: SettingKind,
        n_items: usize,
        bundles: Vec<Vec<Bundle>>,
        cap: u128,
    ) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::InvalidSetting("no bidders".into()));
        }
        if bundles.len() > 32 {
            return Err(Error::InvalidSetting("at most 32 bidders are supported".into()));
        }
        if n_items == 0 || n_items > 64 {
            return Err(Error::InvalidSetting(format!("n_items = {n_items} not in 1..=64")));
        }
        if bundles.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidSetting("every bidder needs at least one bundle".into()));
        }
        let feasible = enumerate_feasible_allocations(&bundles, cap)?;

        let mut slot_offsets = Vec::with_capacity(bundles.len());
        let mut n_slots = 0;
        for b in &bundles {
            slot_offsets.push(n_slots);
            n_slots += b.len();
        }
        let alloc_slots = feasible
            .iter()
            .map(|alloc| {
                alloc
                    .iter()
                    .enumerate()
                    .filter_map(|(i, k)| k.map(|k| slot_offsets[i] + k))
                    .collect()
            })
            .collect();
        let alloc_winners = feasible
            .iter()
            .map(|alloc| {
                alloc
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.is_some())
                    .fold(0u32, |m, (i, _)| m | 1 << i)
            })
            .collect();

        Ok(Self {
            kind,
            n_items,
            bundles,
            feasible,
            slot_offsets,
            n_slots,
            alloc_slots,
            alloc_winners,
        })
    }

    /// `n` bidders competing for one item.
    pub fn single_item(n: usize) -> Result<Self> {
        Self::new(SettingKind::SingleItem, 1, vec![vec![1]; n])
    }

    /// Two local bidders on items {0} and {1}; one global bidder on {0, 1}.
    pub fn llg() -> Self {
        Self::new(SettingKind::Llg, 2, vec![vec![0b01], vec![0b10], vec![0b11]])
            .expect("LLG layout is valid")
    }

    /// Four locals and two globals on six items arranged in a circle. Local `i`
    /// bids on `{i, i+1}` and `{i+1, i+2}`; global `j` on `{4j, …, 4j+3}` and
    /// the same block shifted by one (all indices mod 6).
    pub fn llllgg() -> Self {
        let block = |start: usize, len: usize| -> Bundle {
            (0..len).fold(0, |m, k| m | 1 << ((start + k) % 6))
        };
        let mut bundles = Vec::with_capacity(6);
        for i in 0..4 {
            bundles.push(vec![block(i, 2), block(i + 1, 2)]);
        }
        for j in 0..2 {
            bundles.push(vec![block(4 * j, 4), block(4 * j + 1, 4)]);
        }
        Self::new(SettingKind::Llllgg, 6, bundles).expect("LLLLGG layout is valid")
    }

    pub fn kind(&self) -> SettingKind {
        self.kind
    }

    pub fn n_bidders(&self) -> usize {
        self.bundles.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn bundles(&self, bidder: usize) -> &[Bundle] {
        &self.bundles[bidder]
    }

    /// Number of bundles (and therefore valuation and bid dimensions) of `bidder`.
    pub fn bundle_count(&self, bidder: usize) -> usize {
        self.bundles[bidder].len()
    }

    pub fn slot_offset(&self, bidder: usize) -> usize {
        self.slot_offsets[bidder]
    }

    pub fn slot_range(&self, bidder: usize) -> std::ops::Range<usize> {
        let o = self.slot_offsets[bidder];
        o..o + self.bundles[bidder].len()
    }

    /// Total slots of one flat profile.
    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn feasible_allocations(&self) -> &[Allocation] {
        &self.feasible
    }

    pub fn allocation(&self, index: usize) -> &Allocation {
        &self.feasible[index]
    }

    pub(crate) fn allocation_winners(&self, index: usize) -> u32 {
        self.alloc_winners[index]
    }

    /// Flat slot won by `bidder` under allocation `index`, if any.
    pub fn won_slot(&self, index: usize, bidder: usize) -> Option<usize> {
        self.feasible[index][bidder].map(|k| self.slot_offsets[bidder] + k)
    }

    /// Reported welfare of allocation `index` under a flat bid profile.
    #[inline]
    pub fn welfare(&self, index: usize, bids: &[f64]) -> f64 {
        self.alloc_slots[index].iter().map(|&s| bids[s]).sum()
    }

    pub(crate) fn check_profile(&self, profile: &[f64]) -> Result<()> {
        if profile.len() != self.n_slots {
            return Err(Error::Shape(format!(
                "profile has {} entries, setting expects {}",
                profile.len(),
                self.n_slots
            )));
        }
        Ok(())
    }

    /// Every item set per bidder as item indices, for display and serialization.
    pub fn to_def(&self) -> SettingDef {
        self.clone().into()
    }
}

/// All bidder→bundle assignments whose winning bundles are pairwise disjoint.
///
/// Order is lexicographic over bidders (bidder 0 most significant) with "no
/// bundle" sorting before bundle 0, so the empty allocation is always first.
pub fn enumerate_feasible_allocations(bundles: &[Vec<Bundle>], cap: u128) -> Result<Vec<Allocation>> {
    let combinations = bundles
        .iter()
        .try_fold(1u128, |acc, b| acc.checked_mul(b.len() as u128 + 1))
        .unwrap_or(u128::MAX);
    if combinations > cap {
        return Err(Error::EnumerationTooLarge { combinations, cap });
    }

    fn walk(
        bundles: &[Vec<Bundle>],
        bidder: usize,
        used: Bundle,
        current: &mut Allocation,
        out: &mut Vec<Allocation>,
    ) {
        if bidder == bundles.len() {
            out.push(current.clone());
            return;
        }
        current.push(None);
        walk(bundles, bidder + 1, used, current, out);
        current.pop();
        for (k, &mask) in bundles[bidder].iter().enumerate() {
            if mask & used == 0 {
                current.push(Some(k));
                walk(bundles, bidder + 1, used | mask, current, out);
                current.pop();
            }
        }
    }

    let mut out = Vec::new();
    walk(bundles, 0, 0, &mut Vec::with_capacity(bundles.len()), &mut out);
    Ok(out)
}
