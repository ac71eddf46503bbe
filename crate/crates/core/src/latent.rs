//! Priors over the latent log-intensity sequence `f_1..f_T`.
//!
//! Two families are supported:
//!
//! * GAR: an order-`W` Gaussian autoregression,
//!   `f_t ~ N(β₀ + Σ_{τ=1}^{min(t-1, W)} β_τ f_{t-τ}, σ²)`. Early days regress
//!   only on the values that exist, so `f_1` has mean `β₀`.
//! * GGP: a Gaussian process with constant mean `c` and squared-exponential
//!   kernel `k(t, t') = a² exp(-(t - t')² / 2ℓ²)`.
//!
//! Day indices are `0..T-1`; only differences enter the kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{normal_logpdf, truncnormal_logpdf, TruncNormalPrior};

/// Jitter added to the GP covariance diagonal, relative to `a²`.
pub const RELATIVE_JITTER: f64 = 1e-6;

/// Autoregressive latent parameters: `beta = [β₀, β₁, ..., β_W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarParams {
    pub beta: Vec<f64>,
    pub sigma: f64,
}

impl GarParams {
    pub fn new(beta: Vec<f64>, sigma: f64) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::Domain(
                "GAR needs an intercept and at least one lag".into(),
            ));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::Domain(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { beta, sigma })
    }

    /// Autoregressive order `W`.
    pub fn window(&self) -> usize {
        self.beta.len() - 1
    }

    /// Conditional mean of `f[t]` (zero-based) given `f[..t]`.
    pub(crate) fn conditional_mean(&self, f: &[f64], t: usize) -> f64 {
        let lags = t.min(self.window());
        let mut m = self.beta[0];
        for tau in 1..=lags {
            m += self.beta[tau] * f[t - tau];
        }
        m
    }
}

/// Gaussian-process latent parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgpParams {
    pub c: f64,
    pub a: f64,
    pub ell: f64,
}

impl GgpParams {
    pub fn new(c: f64, a: f64, ell: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) || !(ell.is_finite() && ell > 0.0) {
            return Err(Error::Domain(format!(
                "need a > 0 and ell > 0, got a={a}, ell={ell}"
            )));
        }
        Ok(Self { c, a, ell })
    }

    pub fn default_jitter(&self) -> f64 {
        RELATIVE_JITTER * self.a * self.a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatentParams {
    Gar(GarParams),
    Ggp(GgpParams),
}

pub fn gar_logdensity(f: &[f64], p: &GarParams) -> f64 {
    (0..f.len())
        .map(|t| normal_logpdf(f[t], p.conditional_mean(f, t), p.sigma))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarGradient {
    pub df: Vec<f64>,
    pub dbeta: Vec<f64>,
    pub dsigma: f64,
}

pub fn gar_grad_logdensity(f: &[f64], p: &GarParams) -> GarGradient {
    let w = p.window();
    let s2 = p.sigma * p.sigma;
    let mut df = vec![0.0; f.len()];
    let mut dbeta = vec![0.0; w + 1];
    let mut dsigma = 0.0;
    for t in 0..f.len() {
        let r = f[t] - p.conditional_mean(f, t);
        let g = r / s2;
        df[t] -= g;
        dbeta[0] += g;
        for tau in 1..=t.min(w) {
            df[t - tau] += g * p.beta[tau];
            dbeta[tau] += g * f[t - tau];
        }
        dsigma += r * r / (s2 * p.sigma) - 1.0 / p.sigma;
    }
    GarGradient { df, dbeta, dsigma }
}

/// One step of the autoregression past the end of `history`.
pub fn gar_forecast_step(history: &[f64], p: &GarParams, noise: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::Domain(
            "forecast needs at least one history value".into(),
        ));
    }
    let n = history.len();
    let mut m = p.beta[0];
    for tau in 1..=n.min(p.window()) {
        m += p.beta[tau] * history[n - tau];
    }
    Ok(m + p.sigma * noise)
}

/// Squared-exponential cross-covariance `K[i][j] = a² exp(-(t_i - t_j)² / 2ℓ²)`.
pub fn se_kernel_matrix(times1: &[f64], times2: &[f64], p: &GgpParams) -> DMatrix<f64> {
    let a2 = p.a * p.a;
    let inv = 1.0 / (2.0 * p.ell * p.ell);
    DMatrix::from_fn(times1.len(), times2.len(), |i, j| {
        let d = times1[i] - times2[j];
        a2 * (-d * d * inv).exp()
    })
}

pub fn day_index(n: usize) -> Vec<f64> {
    (0..n).map(|t| t as f64).collect()
}

pub(crate) fn cholesky(mut k: DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] += jitter;
    }
    Cholesky::new(k).ok_or(Error::NotPositiveDefinite { jitter, size: n })
}

fn centered(f: &[f64], c: f64) -> DVector<f64> {
    DVector::from_iterator(f.len(), f.iter().map(|x| x - c))
}

/// `log N(f | c·1, K + jitter·I)` via Cholesky.
pub fn ggp_logdensity(f: &[f64], p: &GgpParams, jitter: f64) -> Result<f64> {
    let times = day_index(f.len());
    let chol = cholesky(se_kernel_matrix(&times, &times, p), jitter)?;
    let r = centered(f, p.c);
    let z = chol
        .l()
        .solve_lower_triangular(&r)
        .expect("triangular factor is nonsingular");
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = f.len() as f64;
    Ok(-0.5 * z.norm_squared() - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgpGradient {
    pub df: Vec<f64>,
    pub dc: f64,
    pub da: f64,
    pub dell: f64,
}

/// Gradient of [`ggp_logdensity`] with `jitter` held fixed.
pub fn ggp_grad_logdensity(f: &[f64], p: &GgpParams, jitter: f64) -> Result<GgpGradient> {
    let n = f.len();
    let times = day_index(n);
    let k = se_kernel_matrix(&times, &times, p);
    let chol = cholesky(k.clone(), jitter)?;
    let alpha = chol.solve(&centered(f, p.c));
    let a_inv = chol.inverse();
    // dK/da = 2K/a; dK/dℓ = K ∘ (Δt)²/ℓ³
    let mut quad_a = 0.0;
    let mut trace_a = 0.0;
    let mut quad_l = 0.0;
    let mut trace_l = 0.0;
    let ell3 = p.ell.powi(3);
    for i in 0..n {
        for j in 0..n {
            let dka = 2.0 * k[(i, j)] / p.a;
            let d = times[i] - times[j];
            let dkl = k[(i, j)] * d * d / ell3;
            quad_a += alpha[i] * dka * alpha[j];
            trace_a += a_inv[(j, i)] * dka;
            quad_l += alpha[i] * dkl * alpha[j];
            trace_l += a_inv[(j, i)] * dkl;
        }
    }
    Ok(GgpGradient {
        df: alpha.iter().map(|x| -x).collect(),
        dc: alpha.sum(),
        da: 0.5 * (quad_a - trace_a),
        dell: 0.5 * (quad_l - trace_l),
    })
}

/// Predictive distribution of the latent values at `future_times` given
/// values at `past_times`.
///
/// Returns the mean and the covariance without any added jitter.
pub fn ggp_conditional(
    past_f: &[f64],
    past_times: &[f64],
    future_times: &[f64],
    p: &GgpParams,
    jitter: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if past_f.len() != past_times.len() {
        return Err(Error::Dimension {
            expected: past_times.len(),
            got: past_f.len(),
        });
    }
    let k_ss = se_kernel_matrix(future_times, future_times, p);
    if past_f.is_empty() {
        return Ok((DVector::from_element(future_times.len(), p.c), k_ss));
    }
    let chol = cholesky(se_kernel_matrix(past_times, past_times, p), jitter)?;
    let k_s = se_kernel_matrix(past_times, future_times, p);
    let alpha = chol.solve(&centered(past_f, p.c));
    let mean = k_s.transpose() * alpha + DVector::from_element(future_times.len(), p.c);
    let v = chol
        .l()
        .solve_lower_triangular(&k_s)
        .expect("triangular factor is nonsingular");
    let cov = k_ss - v.transpose() * v;
    Ok((mean, cov))
}

/// Prior hyperparameters for every model parameter. Second arguments are
/// standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub beta0: TruncNormalPrior,
    pub beta1: TruncNormalPrior,
    pub beta_rest: TruncNormalPrior,
    pub sigma: TruncNormalPrior,
    pub c: TruncNormalPrior,
    pub a: TruncNormalPrior,
    pub ell: TruncNormalPrior,
    pub lambda: TruncNormalPrior,
    pub mu_ell: f64,
}

impl PriorConfig {
    pub fn with_mu_ell(mu_ell: f64) -> Result<Self> {
        if !(mu_ell.is_finite() && mu_ell >= 0.0) {
            return Err(Error::Config(format!(
                "mu_ell must be nonnegative, got {mu_ell}"
            )));
        }
        Ok(Self {
            beta0: TruncNormalPrior::normal(0.0, 0.1)?,
            beta1: TruncNormalPrior::normal(1.0, 0.1)?,
            beta_rest: TruncNormalPrior::normal(0.0, 0.1)?,
            sigma: TruncNormalPrior::half_normal(0.1)?,
            c: TruncNormalPrior::new(4.0, 2.0, 0.0, f64::INFINITY)?,
            a: TruncNormalPrior::half_normal(2.0)?,
            ell: TruncNormalPrior::new(mu_ell, 2.0, 0.0, f64::INFINITY)?,
            lambda: TruncNormalPrior::new(0.0, 0.3, -1.0, 1.0)?,
            mu_ell,
        })
    }

    pub fn beta_prior(&self, index: usize) -> &TruncNormalPrior {
        match index {
            0 => &self.beta0,
            1 => &self.beta1,
            _ => &self.beta_rest,
        }
    }

    pub fn gar_logprior(&self, p: &GarParams) -> f64 {
        let betas: f64 = p
            .beta
            .iter()
            .enumerate()
            .map(|(i, b)| truncnormal_logpdf(*b, self.beta_prior(i)))
            .sum();
        betas + truncnormal_logpdf(p.sigma, &self.sigma)
    }

    pub fn ggp_logprior(&self, p: &GgpParams) -> f64 {
        truncnormal_logpdf(p.c, &self.c)
            + truncnormal_logpdf(p.a, &self.a)
            + truncnormal_logpdf(p.ell, &self.ell)
    }

    pub fn dispersion_logprior(&self, lambda: f64) -> f64 {
        truncnormal_logpdf(lambda, &self.lambda)
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self::with_mu_ell(10.0).expect("default hyperparameters are valid")
    }
}

/// Sum of log priors over latent parameters and per-site dispersions.
pub fn prior_logdensity(latent: &LatentParams, lambdas: &[f64], cfg: &PriorConfig) -> f64 {
    let base = match latent {
        LatentParams::Gar(p) => cfg.gar_logprior(p),
        LatentParams::Ggp(p) => cfg.ggp_logprior(p),
    };
    base + lambdas
        .iter()
        .map(|l| cfg.dispersion_logprior(*l))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: f64 = 1e-6;

    fn fd<F: Fn(f64) -> f64>(x: f64, f: F) -> f64 {
        (f(x + H) - f(x - H)) / (2.0 * H)
    }

    /// Dense MVN log density using an explicit inverse and determinant.
    fn dense_mvn(f: &[f64], mean: f64, cov: &DMatrix<f64>) -> f64 {
        let n = f.len();
        let r = DVector::from_iterator(n, f.iter().map(|x| x - mean));
        let inv = cov.clone().try_inverse().unwrap();
        let q = (r.transpose() * inv * &r)[(0, 0)];
        -0.5 * q - 0.5 * cov.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    #[test]
    fn gar_examples() {
        let p = GarParams::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(
            gar_logdensity(&[0.0], &p),
            -0.918_938_533_204_672_7,
            epsilon = 1e-14
        );
        let p = GarParams::new(vec![0.0, 1.0], 0.1).unwrap();
        assert_abs_diff_eq!(
            gar_logdensity(&[1.0, 1.05], &p),
            -47.357_706_880_421_254,
            epsilon = 1e-10
        );
    }

    #[test]
    fn gar_matches_normal_pdf_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = rng.random_range(1..4);
            let beta: Vec<f64> = (0..=w).map(|_| rng.random_range(-0.5..1.0)).collect();
            let sigma = rng.random_range(0.05..2.0);
            let f: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = GarParams::new(beta.clone(), sigma).unwrap();
            let mut oracle = 0.0;
            for t in 0..f.len() {
                let mut m = beta[0];
                for tau in 1..=w {
                    if t >= tau {
                        m += beta[tau] * f[t - tau];
                    }
                }
                let pdf = (-(f[t] - m).powi(2) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                oracle += pdf.ln();
            }
            assert_abs_diff_eq!(gar_logdensity(&f, &p), oracle, epsilon = 1e-10);
            let doubled = GarParams::new(beta, 2.0 * sigma).unwrap();
            assert!(gar_logdensity(&f, &doubled).is_finite());
        }
    }

    #[test]
    fn gar_random_walk_equivalence() {
        let p = GarParams::new(vec![0.0, 1.0], 0.3).unwrap();
        let f: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let mut rw = normal_logpdf(f[0], 0.0, 0.3);
        for t in 1..f.len() {
            rw += normal_logpdf(f[t] - f[t - 1], 0.0, 0.3);
        }
        assert_abs_diff_eq!(gar_logdensity(&f, &p), rw, epsilon = 1e-12);
    }

    #[test]
    fn gar_gradient_examples() {
        let p = GarParams::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(gar_grad_logdensity(&[0.0], &p).df, vec![0.0]);
        let p = GarParams::new(vec![0.0, 1.0], 0.1).unwrap();
        assert_abs_diff_eq!(
            gar_grad_logdensity(&[1.0, 1.0], &p).dbeta[0],
            100.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn gar_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..1.0)).collect();
            let sigma = rng.random_range(0.2..1.0);
            let f: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = GarParams::new(beta.clone(), sigma).unwrap();
            let g = gar_grad_logdensity(&f, &p);
            for t in 0..f.len() {
                let num = fd(f[t], |x| {
                    let mut ff = f.clone();
                    ff[t] = x;
                    gar_logdensity(&ff, &p)
                });
                assert_abs_diff_eq!(g.df[t], num, epsilon = 1e-5);
            }
            for i in 0..beta.len() {
                let num = fd(beta[i], |x| {
                    let mut b = beta.clone();
                    b[i] = x;
                    gar_logdensity(&f, &GarParams::new(b, sigma).unwrap())
                });
                assert_abs_diff_eq!(g.dbeta[i], num, epsilon = 1e-5);
            }
            let num = fd(sigma, |s| {
                gar_logdensity(&f, &GarParams::new(beta.clone(), s).unwrap())
            });
            assert_abs_diff_eq!(g.dsigma, num, epsilon = 1e-5);
        }
    }

    #[test]
    fn gar_forecast_examples() {
        let p = GarParams::new(vec![0.0, 1.0], 0.1).unwrap();
        assert_abs_diff_eq!(gar_forecast_step(&[2.0], &p, 0.0).unwrap(), 2.0);
        let p = GarParams::new(vec![0.5, 0.9], 0.1).unwrap();
        assert_abs_diff_eq!(
            gar_forecast_step(&[2.0], &p, 1.0).unwrap(),
            2.4,
            epsilon = 1e-12
        );
        let w2 = GarParams::new(vec![0.5, 0.9, 0.3], 0.1).unwrap();
        assert_abs_diff_eq!(
            gar_forecast_step(&[2.0], &w2, 0.7).unwrap(),
            gar_forecast_step(&[2.0], &p, 0.7).unwrap()
        );
        assert!(gar_forecast_step(&[], &p, 0.0).is_err());
    }

    #[test]
    fn gar_mean_path_is_constant_at_prior_mode() {
        let p = GarParams::new(vec![0.0, 1.0], 0.1).unwrap();
        let mut path = vec![0.3, 1.7];
        for _ in 0..14 {
            let next = gar_forecast_step(&path, &p, 0.0).unwrap();
            path.push(next);
        }
        assert!(path[2..].iter().all(|x| *x == 1.7));
    }

    #[test]
    fn kernel_examples() {
        let p = GgpParams::new(0.0, 1.5, 3.0).unwrap();
        let k = se_kernel_matrix(&[2.0, 5.0], &[2.0], &p);
        assert_abs_diff_eq!(k[(0, 0)], 2.25);
        assert_abs_diff_eq!(k[(1, 0)], 2.25 * (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn kernel_is_psd_and_has_limits() {
        for &(a, ell) in &[(1.0, 0.5), (2.0, 5.0), (0.7, 40.0)] {
            let p = GgpParams::new(0.0, a, ell).unwrap();
            let t = day_index(100);
            let k = se_kernel_matrix(&t, &t, &p);
            assert!((&k - k.transpose()).abs().max() == 0.0);
            let eig = k.symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-8 * a * a);
        }
        let t = day_index(5);
        let wide = se_kernel_matrix(&t, &t, &GgpParams::new(0.0, 2.0, 1e6).unwrap());
        assert!(wide.iter().all(|x| (x - 4.0).abs() < 1e-9));
        let narrow = se_kernel_matrix(&t, &t, &GgpParams::new(0.0, 2.0, 1e-3).unwrap());
        assert_abs_diff_eq!(narrow, DMatrix::identity(5, 5) * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn ggp_logdensity_oracles() {
        let p = GgpParams::new(1.0, 0.8, 2.0).unwrap();
        let j = p.default_jitter();
        assert_abs_diff_eq!(
            ggp_logdensity(&[1.4], &p, j).unwrap(),
            normal_logpdf(1.4, 1.0, (0.64 + j).sqrt()),
            epsilon = 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = GgpParams::new(
                rng.random_range(-1.0..3.0),
                rng.random_range(0.3..2.0),
                rng.random_range(0.5..4.0),
            )
            .unwrap();
            let f: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..3.0)).collect();
            let t = day_index(3);
            let mut cov = se_kernel_matrix(&t, &t, &p);
            cov += DMatrix::identity(3, 3) * 1e-3;
            assert_abs_diff_eq!(
                ggp_logdensity(&f, &p, 1e-3).unwrap(),
                dense_mvn(&f, p.c, &cov),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn ggp_density_peaks_at_mean() {
        let p = GgpParams::new(2.0, 1.0, 3.0).unwrap();
        let j = p.default_jitter();
        let at_mean = ggp_logdensity(&[2.0; 6], &p, j).unwrap();
        for d in [-0.5, -0.01, 0.01, 0.3] {
            assert!(ggp_logdensity(&[2.0 + d; 6], &p, j).unwrap() < at_mean);
        }
    }

    #[test]
    fn ggp_gradient_checks() {
        let p = GgpParams::new(2.0, 1.0, 3.0).unwrap();
        let g = ggp_grad_logdensity(&[2.0; 4], &p, 1e-3).unwrap();
        assert!(g.df.iter().all(|x| x.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..15 {
            let (c, a, ell) = (
                rng.random_range(0.0..3.0),
                rng.random_range(0.5..1.5),
                rng.random_range(0.8..3.0),
            );
            let f: Vec<f64> = (0..5).map(|_| c + rng.random_range(-1.0..1.0)).collect();
            let j = 1e-2;
            let logp = |c: f64, a: f64, ell: f64, f: &[f64]| {
                ggp_logdensity(f, &GgpParams::new(c, a, ell).unwrap(), j).unwrap()
            };
            let g = ggp_grad_logdensity(&f, &GgpParams::new(c, a, ell).unwrap(), j).unwrap();
            assert_abs_diff_eq!(g.dc, fd(c, |x| logp(x, a, ell, &f)), epsilon = 1e-5);
            assert_abs_diff_eq!(g.da, fd(a, |x| logp(c, x, ell, &f)), epsilon = 1e-5);
            assert_abs_diff_eq!(g.dell, fd(ell, |x| logp(c, a, x, &f)), epsilon = 1e-5);
            for t in 0..f.len() {
                let num = fd(f[t], |x| {
                    let mut ff = f.clone();
                    ff[t] = x;
                    logp(c, a, ell, &ff)
                });
                assert_abs_diff_eq!(g.df[t], num, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn ggp_dc_matches_dense_algebra() {
        let p = GgpParams::new(1.0, 1.2, 2.5).unwrap();
        let f = [0.3, 1.1, 1.9, 0.7];
        let t = day_index(4);
        let cov = se_kernel_matrix(&t, &t, &p) + DMatrix::identity(4, 4) * 1e-2;
        let r = DVector::from_iterator(4, f.iter().map(|x| x - p.c));
        let expected =
            (DVector::from_element(4, 1.0).transpose() * cov.try_inverse().unwrap() * r)[(0, 0)];
        let g = ggp_grad_logdensity(&f, &p, 1e-2).unwrap();
        assert_abs_diff_eq!(g.dc, expected, epsilon = 1e-8);
    }

    #[test]
    fn ggp_conditional_limits_and_oracle() {
        let p = GgpParams::new(3.0, 0.5, 2.0).unwrap();
        let past_t = [0.0, 1.0, 2.0];
        let past_f = [3.2, 2.9, 3.4];
        let (m, v) = ggp_conditional(&past_f, &past_t, &[1.0], &p, 1e-12).unwrap();
        assert_abs_diff_eq!(m[0], 2.9, epsilon = 1e-6);
        assert!(v[(0, 0)].abs() < 1e-6);

        let (m, v) = ggp_conditional(&past_f, &past_t, &[500.0], &p, 1e-8).unwrap();
        assert_abs_diff_eq!(m[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[(0, 0)], 0.25, epsilon = 1e-12);

        let fut = [3.0, 4.5];
        let j = 1e-4;
        let (m, v) = ggp_conditional(&past_f, &past_t, &fut, &p, j).unwrap();
        let kpp = se_kernel_matrix(&past_t, &past_t, &p) + DMatrix::identity(3, 3) * j;
        let inv = kpp.try_inverse().unwrap();
        let kps = se_kernel_matrix(&past_t, &fut, &p);
        let r = DVector::from_iterator(3, past_f.iter().map(|x| x - p.c));
        let m_oracle = kps.transpose() * &inv * r + DVector::from_element(2, p.c);
        let v_oracle = se_kernel_matrix(&fut, &fut, &p) - kps.transpose() * inv * kps;
        assert_abs_diff_eq!(m, m_oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(v, v_oracle, epsilon = 1e-8);
    }

    #[test]
    fn ggp_conditional_edge_cases() {
        let p = GgpParams::new(1.0, 2.0, 3.0).unwrap();
        let (m, v) = ggp_conditional(&[1.0, 2.0], &[0.0, 1.0], &[], &p, 1e-6).unwrap();
        assert_eq!(m.len(), 0);
        assert_eq!(v.nrows(), 0);
        let fut = [4.0, 6.0];
        let (m, v) = ggp_conditional(&[], &[], &fut, &p, 1e-6).unwrap();
        assert_eq!(m, DVector::from_element(2, 1.0));
        assert_eq!(v, se_kernel_matrix(&fut, &fut, &p));
        assert!(ggp_conditional(&[1.0], &[0.0, 1.0], &fut, &p, 1e-6).is_err());
    }

    #[test]
    fn prior_examples() {
        let cfg = PriorConfig::default();
        let p = GarParams {
            beta: vec![0.0, 1.0],
            sigma: -0.1,
        };
        assert_eq!(cfg.gar_logprior(&p), f64::NEG_INFINITY);
        let mode = truncnormal_logpdf(1.0, &cfg.beta1);
        assert_abs_diff_eq!(mode, normal_logpdf(1.0, 1.0, 0.1), epsilon = 1e-14);
        assert!(truncnormal_logpdf(1.05, &cfg.beta1) < mode);

        let p = GarParams::new(vec![0.0, 1.0], 0.05).unwrap();
        let total = prior_logdensity(&LatentParams::Gar(p), &[0.0], &cfg);
        let oracle = normal_logpdf(0.0, 0.0, 0.1)
            + normal_logpdf(1.0, 1.0, 0.1)
            + normal_logpdf(0.05, 0.0, 0.1)
            + 2f64.ln()
            + 0.285_892_760_183_963_4;
        assert_abs_diff_eq!(total, oracle, epsilon = 1e-10);
    }

    #[test]
    fn zero_mu_ell_is_half_normal() {
        let cfg = PriorConfig::with_mu_ell(0.0).unwrap();
        assert_abs_diff_eq!(
            truncnormal_logpdf(1.3, &cfg.ell),
            normal_logpdf(1.3, 0.0, 2.0) + 2f64.ln(),
            epsilon = 1e-14
        );
        assert!(PriorConfig::with_mu_ell(-1.0).is_err());
    }
}
