//! Small deterministic sampling helpers over `rand_core` streams.
//!
//! The simulator's event path is integer-only, so Bernoulli trials are
//! expressed as exact rationals and uniform draws use unbiased rejection
//! sampling instead of float scaling.

use rand_core::RngCore;

/// An exact probability num/den with 0 <= num <= den, den > 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u32, den: u32) -> Ratio {
        assert!(den > 0, "ratio denominator must be positive");
        assert!(num <= den, "ratio must not exceed 1");
        Ratio { num, den }
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Parse a decimal fraction like "0.05" into an exact ratio.
    pub fn parse_decimal(text: &str) -> Option<Ratio> {
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        let int_val: u32 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().ok()?
        };
        if frac_part.len() > 6 {
            return None;
        }
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let den = 10u32.pow(frac_part.len() as u32);
        let frac_val: u32 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().ok()?
        };
        let num = int_val.checked_mul(den)?.checked_add(frac_val)?;
        if num > den {
            return None;
        }
        Some(Ratio { num, den })
    }
}

/// Unbiased uniform draw from `[0, n)`. `n` must be nonzero.
pub fn uniform(rng: &mut impl RngCore, n: u64) -> u64 {
    assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}

/// Uniform draw from the inclusive range `[lo, hi]`.
pub fn uniform_range(rng: &mut impl RngCore, lo: u64, hi: u64) -> u64 {
    assert!(lo <= hi);
    lo + uniform(rng, hi - lo + 1)
}

/// One Bernoulli trial at probability `p`.
pub fn bernoulli(rng: &mut impl RngCore, p: Ratio) -> bool {
    if p.num == 0 {
        return false;
    }
    if p.num >= p.den {
        return true;
    }
    uniform(rng, p.den as u64) < p.num as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    #[test]
    fn parse_decimals() {
        assert_eq!(Ratio::parse_decimal("0.05"), Some(Ratio::new(5, 100)));
        assert_eq!(Ratio::parse_decimal("0"), Some(Ratio::new(0, 1)));
        assert_eq!(Ratio::parse_decimal("1"), Some(Ratio::new(1, 1)));
        assert_eq!(Ratio::parse_decimal("0.125"), Some(Ratio::new(125, 1000)));
        assert_eq!(Ratio::parse_decimal(".5"), Some(Ratio::new(5, 10)));
        assert_eq!(Ratio::parse_decimal("1.5"), None);
        assert_eq!(Ratio::parse_decimal("x"), None);
        assert_eq!(Ratio::parse_decimal(""), None);
    }

    #[test]
    fn uniform_stays_in_range_and_hits_all_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            let v = uniform(&mut rng, 7);
            assert!(v < 7);
            seen[v as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn bernoulli_frequency_tracks_probability() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = Ratio::new(3, 10);
        let hits = (0..10_000).filter(|_| bernoulli(&mut rng, p)).count();
        assert!((2800..=3200).contains(&hits), "hits = {hits}");
    }
}
