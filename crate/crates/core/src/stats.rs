//! Small order statistics shared by the server and the baseline aggregators.

/// Median with the even-length midpoint convention. `None` on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}

/// Median absolute deviation around the median (no consistency scaling).
pub fn mad(values: &[f64]) -> Option<(f64, f64)> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    Some((m, median(&dev)?))
}

/// Order-independent sum: terms are sorted before accumulation so any
/// permutation of the input yields the same bits.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn mad_of_small_sample() {
        let (m, d) = mad(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(m, 3.0);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn canonical_sum_is_permutation_invariant() {
        let a = [1e16, 1.0, -1e16, 3.5, 1e-3];
        let mut x = a;
        let mut y = [a[3], a[0], a[4], a[2], a[1]];
        assert_eq!(canonical_sum(&mut x).to_bits(), canonical_sum(&mut y).to_bits());
    }
}
