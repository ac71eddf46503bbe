//! Split-chain R-hat and effective sample size.

/// A diagnostic value and whether it was computed from degenerate input
/// (zero variance or too few draws).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostic {
    pub value: f64,
    pub degenerate: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Potential scale reduction computed on chains split into halves.
///
/// Chains are trimmed to the shortest length; an odd middle draw is dropped.
/// Zero within-chain variance yields `1.0` (or `∞` if the chain means differ)
/// flagged as degenerate.
pub fn split_rhat(chains: &[&[f64]]) -> Diagnostic {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Diagnostic {
            value: f64::NAN,
            degenerate: true,
        };
    }
    let half = n / 2;
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n];
        pieces.push(&c[..half]);
        pieces.push(&c[n - half..]);
    }
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = mean(&pieces.iter().map(|p| sample_var(p)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    if !(w > 0.0) {
        let value = if b_over_n > 0.0 { f64::INFINITY } else { 1.0 };
        return Diagnostic {
            value,
            degenerate: true,
        };
    }
    let hn = half as f64;
    let var_plus = (hn - 1.0) / hn * w + b_over_n;
    Diagnostic {
        value: (var_plus / w).sqrt(),
        degenerate: false,
    }
}

/// Autocovariance of one chain at increasing lags, computed on demand.
struct Autocov<'a> {
    xs: &'a [f64],
    mean: f64,
}

impl Autocov<'_> {
    fn at(&self, lag: usize) -> f64 {
        let n = self.xs.len();
        let mut s = 0.0;
        for i in 0..n - lag {
            s += (self.xs[i] - self.mean) * (self.xs[i + lag] - self.mean);
        }
        s / n as f64
    }
}

/// Multi-chain effective sample size using Geyer's initial monotone
/// sequence estimator on the combined autocorrelations.
///
/// Constant input returns `0.0` flagged as degenerate.
pub fn ess(chains: &[&[f64]]) -> Diagnostic {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return Diagnostic {
            value: 0.0,
            degenerate: true,
        };
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|x| *x == first)) {
        return Diagnostic {
            value: 0.0,
            degenerate: true,
        };
    }
    let acs: Vec<Autocov> = chains
        .iter()
        .map(|c| Autocov {
            xs: c,
            mean: mean(c),
        })
        .collect();
    let nf = n as f64;
    let chain_var: Vec<f64> = acs.iter().map(|a| a.at(0) * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&acs.iter().map(|a| a.mean).collect::<Vec<_>>());
    }
    if !(var_plus > 0.0) {
        return Diagnostic {
            value: 0.0,
            degenerate: true,
        };
    }
    let rho_at = |lag: usize| {
        1.0 - (mean_var - mean(&acs.iter().map(|a| a.at(lag)).collect::<Vec<_>>())) / var_plus
    };

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut s = 1;
    while s < n - 4 && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(s + 1);
        rho_odd = rho_at(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho[max_s + 1] = rho_even;
    }
    // enforce a monotone sequence of pair sums
    let mut s = 1;
    while s + 3 <= max_s {
        if rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s] {
            rho[s + 1] = 0.5 * (rho[s - 1] + rho[s]);
            rho[s + 2] = rho[s + 1];
        }
        s += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + rho[max_s + 1];
    let tau = tau.max(1.0 / total.log10());
    Diagnostic {
        value: total / tau,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, mean: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| mean + rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn rhat_identical_iid_chains() {
        let a = normals(1, 5000, 0.0);
        let r = split_rhat(&[&a, &a]);
        assert!(!r.degenerate);
        // the estimator can land a hair below 1 on finite samples
        assert!((0.999..=1.01).contains(&r.value), "{}", r.value);
        let b = normals(2, 5000, 0.0);
        assert!(split_rhat(&[&a, &b]).value <= 1.01);
    }

    #[test]
    fn rhat_separated_chains() {
        let a = normals(3, 1000, 0.0);
        let b = normals(4, 1000, 10.0);
        assert!(split_rhat(&[&a, &b]).value > 3.0);
    }

    #[test]
    fn rhat_constant_chains() {
        let c = vec![2.0; 100];
        let r = split_rhat(&[&c, &c]);
        assert_eq!(
            r,
            Diagnostic {
                value: 1.0,
                degenerate: true
            }
        );
        let d = vec![3.0; 100];
        let r = split_rhat(&[&c, &d]);
        assert!(r.degenerate && r.value.is_infinite());
        assert!(split_rhat(&[&c[..3], &c[..3]]).degenerate);
    }

    #[test]
    fn ess_iid() {
        let a = normals(5, 5000, 0.0);
        let b = normals(6, 5000, 0.0);
        let e = ess(&[&a, &b]).value;
        assert!((e - 10_000.0).abs() < 2000.0, "{e}");
    }

    #[test]
    fn ess_ar1() {
        let a = ar1(7, 20_000, 0.9);
        let b = ar1(8, 20_000, 0.9);
        let e = ess(&[&a, &b]).value;
        let expected = 40_000.0 * 0.1 / 1.9;
        assert!((e - expected).abs() < 0.3 * expected, "{e} vs {expected}");
    }

    #[test]
    fn ess_constant() {
        let c = vec![1.5; 50];
        assert_eq!(
            ess(&[&c, &c]),
            Diagnostic {
                value: 0.0,
                degenerate: true
            }
        );
    }
}
