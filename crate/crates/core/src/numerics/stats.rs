use super::NumericsError;

/// 1-based ranks with ties assigned the average rank of their run.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite rank input"));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // Positions start..end share the same value; average their ranks.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), NumericsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(NumericsError::BadLength {
            left: a.len(),
            right: b.len(),
            min: 2,
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite {
            context: "correlation input",
        });
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(NumericsError::ZeroVariance);
    }
    // sqrt of the product, not product of sqrts: keeps exact linear
    // relations at exactly +/-1.
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson on average-rank vectors, so ties are
/// handled the conventional way.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    check_lengths(a, b)?;
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb).map_err(|e| match e {
        NumericsError::ZeroVariance => NumericsError::DegenerateRanks,
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        // Two-way tie in the middle: ranks 2 and 3 average to 2.5.
        assert_eq!(
            average_ranks(&[5.0, 7.0, 7.0, 9.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(average_ranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn pearson_exact_linear() {
        assert_eq!(pearson(&[0.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn pearson_zero_variance_is_error() {
        assert!(matches!(
            pearson(&[0.0, 1.0, 2.0], &[5.0, 5.0, 5.0]),
            Err(NumericsError::ZeroVariance)
        ));
    }

    #[test]
    fn pearson_reference_value() {
        // cov = 10, var_a = 35/4, var_b = 14, so r = 10/sqrt(122.5),
        // worked out with exact rationals.
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[1.0, 3.0, 2.0, 6.0]).unwrap();
        assert!((r - 0.9035079029052513).abs() < 1e-15);
    }

    #[test]
    fn spearman_reference_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // 1 - 6*4/(5*24) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn spearman_constant_list_is_degenerate() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(NumericsError::DegenerateRanks)
        ));
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(NumericsError::BadLength { .. })
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(NumericsError::BadLength { .. })
        ));
    }
}
