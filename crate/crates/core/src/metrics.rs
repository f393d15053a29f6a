/// Sample Pearson correlation.
///
/// Returns `None` when the coefficient is undefined: fewer than two samples
/// or a zero-variance argument. Never reports an undefined value as 0.
///
/// # Panics
/// If the slices have different lengths.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "pearson needs equal-length inputs");
    let n = a.len();
    if n < 2 {
        return None;
    }
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 || !(saa * sbb).is_finite() {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_negative_affine() {
        let x = [0.3, 1.0, -2.0, 4.5];
        assert_eq!(pearson(&x, &x), Some(1.0));
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 5.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn undefined_cases() {
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 2.0]), None);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }
}
