//! Deterministic low-discrepancy points used by the certificate samplers.

const PRIMES: [u64; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

pub const MAX_DIM: usize = PRIMES.len();

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// The `index`-th Halton point in `[0, 1)^dim`.
pub fn point(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= MAX_DIM, "halton dimension {dim} exceeds {MAX_DIM}");
    PRIMES[..dim].iter().map(|&p| radical_inverse(index, p)).collect()
}

/// Maps a unit-cube point into the box `ranges`. Index 0 of the sequence is
/// replaced by the box centre.
pub fn box_points(ranges: &[(f64, f64)], n: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..n as u64).map(move |i| {
        if i == 0 {
            ranges.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
        } else {
            point(i, ranges.len()).iter().zip(ranges).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_two_sequence() {
        let xs: Vec<f64> = (1..5).map(|i| point(i, 1)[0]).collect();
        assert_eq!(xs, vec![0.5, 0.25, 0.75, 0.125]);
    }

    #[test]
    fn box_starts_at_centre() {
        let pts: Vec<_> = box_points(&[(-1.0, 3.0), (0.0, 2.0)], 3).collect();
        assert_eq!(pts[0], vec![1.0, 1.0]);
        assert_eq!(pts[1], vec![1.0, 2.0 / 3.0]);
    }
}
