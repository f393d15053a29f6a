use crate::error::{Error, Result};

/// Euclidean projection onto the l1 ball `{x : ‖x‖₁ ≤ tau}`.
///
/// Sort the magnitudes, find the soft threshold `θ` that makes the shrunk
/// vector land exactly on the sphere, and shrink. Vectors already inside the
/// ball are returned unchanged.
pub fn project_l1_ball(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("l1 radius {tau} must be >= 0")));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out, tau);
    Ok(out)
}

pub(crate) fn project_in_place(x: &mut [f64], tau: f64) {
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    if norm <= tau {
        return;
    }
    if tau == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in mags.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - tau) / (k + 1) as f64;
        if u > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    for v in x.iter_mut() {
        *v = v.signum() * (v.abs() - theta).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feasible_vectors_untouched() {
        let v = vec![0.2, -0.3, 0.1];
        assert_eq!(project_l1_ball(&v, 0.6).unwrap(), v);
        assert_eq!(project_l1_ball(&v, 10.0).unwrap(), v);
    }

    #[test]
    fn analytic_cases() {
        assert_eq!(project_l1_ball(&[3.0, 0.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_l1_ball(&[-3.0, 1.0], 0.0).unwrap(), vec![0.0, 0.0]);
        let p = project_l1_ball(&[2.0, -2.0], 2.0).unwrap();
        assert_eq!(p, vec![1.0, -1.0]);
    }

    #[test]
    fn negative_radius_rejected() {
        assert!(project_l1_ball(&[1.0], -1e-12).is_err());
        assert!(project_l1_ball(&[1.0], f64::NAN).is_err());
    }
}
