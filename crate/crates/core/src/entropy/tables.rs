//! Integer frequency tables derived from a [`FactorizedDensity`].

use alloc::vec::Vec;

#[allow(unused_imports)] // the inherent methods shadow it when std is linked
use num_traits::Float;

use super::{DensityEvaluator, FactorizedDensity};
use crate::{Error, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
/// Upper bound on in-support symbols per channel.
pub const MAX_SUPPORT: usize = 4096;

/// Coding table of one latent channel.
///
/// Symbols `z_min..=z_max` occupy slots `0..=z_max - z_min`; the final slot is
/// the escape for values outside the support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTable {
    pub z_min: i32,
    pub z_max: i32,
    /// Cumulative frequencies, one more entry than slots; starts at 0, ends at [`FREQ_TOTAL`].
    pub cumulative: Vec<u32>,
}

impl ChannelTable {
    /// Builds a table from per-slot probabilities (in-support symbols, then escape).
    pub fn from_probabilities(z_min: i32, probs: &[f64]) -> Result<Self> {
        let slots = probs.len();
        if slots < 2 || slots > FREQ_TOTAL as usize {
            return Err(Error::InvalidArgument("table needs between 2 and 65536 slots".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("table probabilities must be finite and nonnegative".into()));
        }
        // every slot keeps at least one count; the rest is shared proportionally
        let spare = (FREQ_TOTAL as usize - slots) as f64;
        let mut freq: Vec<u32> = Vec::with_capacity(slots);
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(slots);
        for (i, &p) in probs.iter().enumerate() {
            let share = p / total * spare;
            freq.push(1 + share.floor() as u32);
            remainders.push((share - share.floor(), i));
        }
        let assigned: u32 = freq.iter().sum();
        let mut left = FREQ_TOTAL - assigned;
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, i) in remainders.iter().cycle() {
            if left == 0 {
                break;
            }
            freq[i] += 1;
            left -= 1;
        }
        let mut cumulative = Vec::with_capacity(slots + 1);
        cumulative.push(0);
        let mut acc = 0;
        for f in freq {
            acc += f;
            cumulative.push(acc);
        }
        Ok(Self { z_min, z_max: z_min + slots as i32 - 2, cumulative })
    }

    /// Number of slots including the escape.
    pub fn slots(&self) -> usize {
        self.cumulative.len() - 1
    }

    pub fn escape_slot(&self) -> usize {
        self.slots() - 1
    }

    /// Slot of `value`, or `None` if it must be escaped.
    pub fn slot_of(&self, value: i32) -> Option<usize> {
        (self.z_min..=self.z_max).contains(&value).then(|| (value - self.z_min) as usize)
    }

    pub fn frequency(&self, slot: usize) -> u32 {
        self.cumulative[slot + 1] - self.cumulative[slot]
    }

    /// Probability the coder assigns to `slot`.
    pub fn probability(&self, slot: usize) -> f64 {
        self.frequency(slot) as f64 / FREQ_TOTAL as f64
    }

    /// Slot whose cumulative range contains `target` (`< FREQ_TOTAL`).
    pub fn find_slot(&self, target: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.cumulative.len() >= 3
            && self.cumulative[0] == 0
            && *self.cumulative.last().unwrap() == FREQ_TOTAL
            && self.cumulative.windows(2).all(|w| w[0] < w[1])
            && self.z_max - self.z_min + 2 == self.slots() as i32;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("malformed coding table".into()))
        }
    }
}

/// Smallest `x` in `[-limit, limit]` with `cdf(x) >= target`, by bisection.
fn quantile(ev: &DensityEvaluator, channel: usize, target: f64) -> Option<f64> {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while ev.cdf(channel, lo) >= target {
        lo *= 2.0;
        if lo < -1e6 {
            return None;
        }
    }
    while ev.cdf(channel, hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ev.cdf(channel, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// One coding table per channel.
///
/// The support of each channel covers all but `tail_mass` of its probability
/// (capped at [`MAX_SUPPORT`] symbols around the median, and never narrower
/// than the median and its two neighbours); the remaining mass goes to the
/// escape slot. Both ends of the codec call this with the same density and
/// obtain identical tables.
pub fn build_cdf_tables(density: &FactorizedDensity, tail_mass: f64) -> Result<Vec<ChannelTable>> {
    if !(tail_mass > 0.0 && tail_mass < 0.5) {
        return Err(Error::InvalidArgument("tail mass must lie in (0, 0.5)".into()));
    }
    let ev = density.evaluator();
    (0..density.channels)
        .map(|c| {
            let degenerate = Error::DegenerateDensity { channel: c };
            let lo = quantile(&ev, c, tail_mass / 2.0).ok_or(degenerate.clone())?;
            let hi = quantile(&ev, c, 1.0 - tail_mass / 2.0).ok_or(degenerate.clone())?;
            let median = quantile(&ev, c, 0.5).ok_or(degenerate.clone())?.round();
            let half = (MAX_SUPPORT / 2) as f64;
            let z_min = lo.floor().min(median - 1.0).max(median - half) as i32;
            let z_max = hi.ceil().max(median + 1.0).min(median + half - 1.0) as i32;
            let mut probs: Vec<f64> = (z_min..=z_max).map(|v| ev.likelihood(c, v as f64)).collect();
            let inside: f64 = probs.iter().sum();
            if !(inside > 0.5) {
                return Err(degenerate);
            }
            probs.push((1.0 - inside).max(0.0));
            ChannelTable::from_probabilities(z_min, &probs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::DensityConfig;
    use alloc::vec;

    #[test]
    fn tables_are_normalized_and_strictly_increasing() {
        let d = FactorizedDensity::init(8, &DensityConfig::default(), 3).unwrap();
        let tables = build_cdf_tables(&d, 1e-9).unwrap();
        assert_eq!(tables.len(), 8);
        for t in &tables {
            t.validate().unwrap();
            assert_eq!(*t.cumulative.last().unwrap(), 65536);
            assert!(t.z_min < 0 && t.z_max > 0);
        }
        assert_eq!(tables, build_cdf_tables(&d, 1e-9).unwrap());
    }

    #[test]
    fn narrow_density_puts_almost_everything_on_zero() {
        let mut d = FactorizedDensity::init_symmetric(1, &DensityConfig::default()).unwrap();
        // steepen the first layer so the CDF jumps at zero
        d.matrices[0].data_mut().iter_mut().for_each(|v| *v = 100.0);
        let t = &build_cdf_tables(&d, 1e-9).unwrap()[0];
        assert!(t.z_min <= -1 && t.z_max >= 1);
        let zero = t.slot_of(0).unwrap();
        assert!(t.probability(zero) > 0.99, "p(0) = {}", t.probability(zero));
    }

    #[test]
    fn proportional_quantization() {
        let t = ChannelTable::from_probabilities(-1, &[0.25, 0.5, 0.25, 0.0]).unwrap();
        t.validate().unwrap();
        assert_eq!(t.z_max, 1);
        assert_eq!(t.frequency(3), 1);
        assert!((t.probability(1) - 0.5).abs() < 1e-4);
        assert_eq!(t.find_slot(0), 0);
        assert_eq!(t.find_slot(65535), 3);
        assert_eq!(t.slot_of(2), None);
        assert_eq!(t.slot_of(-1), Some(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ChannelTable::from_probabilities(0, &[1.0]).is_err());
        assert!(ChannelTable::from_probabilities(0, &[f64::NAN, 1.0]).is_err());
        assert!(ChannelTable::from_probabilities(0, &vec![1.0; 70_000]).is_err());
        let d = FactorizedDensity::init(1, &DensityConfig::default(), 0).unwrap();
        assert!(build_cdf_tables(&d, 0.0).is_err());
    }

    #[test]
    fn density_pushed_far_away_is_degenerate() {
        let mut d = FactorizedDensity::init_symmetric(1, &DensityConfig::default()).unwrap();
        // all mass beyond a million
        let last = d.biases.len() - 1;
        d.biases[last].data_mut()[0] = -1e9;
        assert_eq!(build_cdf_tables(&d, 1e-9), Err(Error::DegenerateDensity { channel: 0 }));
    }
}
