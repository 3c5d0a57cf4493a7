use std::collections::HashMap;

use super::{MetricsError, Result};

/// Empirical unigram entropy in bits.
pub fn entropy_bits<'a>(streams: impl IntoIterator<Item = &'a [usize]>) -> (f64, usize) {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut n = 0;
    for s in streams {
        for &sym in s {
            *counts.entry(sym).or_default() += 1;
            n += 1;
        }
    }
    if n == 0 {
        return (0.0, 0);
    }
    // sorted so the floating-point sum does not depend on hash order
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    let h = c
        .iter()
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.log2()
        })
        .sum::<f64>();
    (h.max(0.0), n)
}

/// Bits per second: symbol rate `n / duration` times unigram entropy.
pub fn bitrate<'a>(
    streams: impl IntoIterator<Item = &'a [usize]>,
    total_duration: f64,
) -> Result<f64> {
    if !(total_duration > 0.0) || !total_duration.is_finite() {
        return Err(MetricsError::Input(format!(
            "total duration must be positive, got {total_duration}"
        )));
    }
    let (h, n) = entropy_bits(streams);
    if n == 0 {
        return Err(MetricsError::Input("no symbols in corpus".into()));
    }
    Ok(n as f64 / total_duration * h)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn constant_stream_has_zero_rate() {
        let s = vec![7usize; 100];
        assert_eq!(bitrate([s.as_slice()], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn uniform_256_at_50_per_second() {
        let s: Vec<usize> = (0..256 * 4).map(|i| i % 256).collect();
        let duration = s.len() as f64 / 50.0;
        assert_eq!(bitrate([s.as_slice()], duration).unwrap(), 400.0);
    }

    #[test]
    fn hand_made_counts() {
        let s = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2];
        let h = -(0.5f64 * 0.5f64.log2() + 0.3 * 0.3f64.log2() + 0.2 * 0.2f64.log2());
        assert!((bitrate([s.as_slice()], 1.0).unwrap() - 10.0 * h).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(bitrate([[1usize].as_slice()], 0.0).is_err());
        let empty: [&[usize]; 0] = [];
        assert!(bitrate(empty, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn invariant_under_relabeling(s in proptest::collection::vec(0usize..8, 1..200), shift in 1usize..50) {
            let relabeled: Vec<usize> = s.iter().map(|v| (v * 7 + shift) % 97).collect();
            let a = bitrate([s.as_slice()], 3.0).unwrap();
            let b = bitrate([relabeled.as_slice()], 3.0).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn halving_symbol_rate_halves_bitrate(s in proptest::collection::vec(0usize..8, 1..200)) {
            let d = s.len() as f64 / 50.0;
            let a = bitrate([s.as_slice()], d).unwrap();
            let b = bitrate([s.as_slice()], 2.0 * d).unwrap();
            prop_assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }
}
