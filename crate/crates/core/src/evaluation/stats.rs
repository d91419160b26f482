use statrs::distribution::{ContinuousCDF, StudentsT};

/// Outcome of a one-tailed Welch test of `mean(a) > mean(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    /// Set when both samples have zero variance and the p-value comes from
    /// the limiting case rather than the t distribution.
    pub degenerate: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// One-tailed Welch t-test with Welch-Satterthwaite degrees of freedom.
///
/// Returns `None` when either sample has fewer than two values. When both
/// variances are zero the statistic is infinite: the p-value is 0 when
/// `mean(a) > mean(b)`, 1 when smaller, and 0.5 when the means are equal.
pub fn one_tailed_welch_t(a: &[f64], b: &[f64]) -> Option<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t, p) = match ma.partial_cmp(&mb) {
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Some(WelchResult { t, dof: f64::INFINITY, p, degenerate: true });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).ok()?;
    Some(WelchResult { t, dof, p: dist.sf(t), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_half() {
        let a = [0.2, 0.3, 0.25, 0.22, 0.28];
        let r = one_tailed_welch_t(&a, &a).unwrap();
        assert!((r.p - 0.5).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn zero_variance_branch() {
        let r = one_tailed_welch_t(&[1.0; 5], &[0.0; 5]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        let r = one_tailed_welch_t(&[1.0; 5], &[1.0; 5]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.5);
    }

    #[test]
    fn matches_reference_values() {
        // Reference: scipy.stats.ttest_ind(equal_var=False, alternative="greater").
        let r = one_tailed_welch_t(&[5.0, 6.0, 7.0, 8.0, 9.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((r.t - 4.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        assert!((r.p - 0.001974886401722661).abs() < 1e-9);

        let r = one_tailed_welch_t(&[0.31, 0.35, 0.29, 0.33, 0.30], &[0.28, 0.30, 0.27, 0.29, 0.31]).unwrap();
        assert!((r.t - 2.017991366836463).abs() < 1e-9);
        assert!((r.dof - 6.907996991727247).abs() < 1e-9);
        assert!((r.p - 0.04195908860845904).abs() < 1e-9);
    }

    #[test]
    fn one_deterministic_side() {
        // A deterministic baseline is a zero-variance sample; the other side
        // still carries variance so the t distribution applies.
        let r = one_tailed_welch_t(&[0.5, 0.6, 0.7], &[0.4, 0.4, 0.4]).unwrap();
        assert!(!r.degenerate);
        assert!((r.dof - 2.0).abs() < 1e-12);
        assert!(r.p < 0.1);
    }

    #[test]
    fn too_few_samples() {
        assert!(one_tailed_welch_t(&[1.0], &[1.0, 2.0]).is_none());
    }
}
