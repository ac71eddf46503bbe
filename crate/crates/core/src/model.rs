//! Full posterior log densities over a flat unconstrained vector.
//!
//! Layout of the unconstrained vector, in order:
//!
//! | block | GAR(W) | GGP |
//! |-------|--------|-----|
//! | shared latent parameters | `β₀..β_W`, `log σ` | `c`, `log a`, `log ℓ` |
//! | per site `h` | `z_λ` (generalized Poisson only), `f_1..f_T` | `z_λ`, `v_1..v_T` |
//!
//! with `λ = tanh(z_λ / 2)`. The GGP latents are stored whitened:
//! `f = c + L v` where `L L' = K + jitter·I`; the density in `v` is the GP
//! density in `f` times `|det L|`, so the two coordinate systems describe the
//! same posterior. Out-of-support constrained values (for example `c < 0`)
//! produce `-∞`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{
    cholesky, gar_grad_logdensity, gar_logdensity, GarParams, GgpParams, LatentParams, PriorConfig,
    RELATIVE_JITTER,
};
use crate::likelihood::{genpoisson_grad_logpmf, genpoisson_logpmf, GenPoissonParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentKind {
    Gar { window: usize },
    Ggp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    Poisson,
    GenPoisson,
}

/// How GAR latents are stored in the unconstrained vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GarCoordinates {
    /// The latent values `f_t` themselves.
    Centered,
    /// Standardized innovations `e_t = (f_t - m_t) / σ`, where `m_t` is the
    /// conditional mean given earlier values.
    #[default]
    NonCentered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub latent: LatentKind,
    pub likelihood: LikelihoodKind,
    pub sites: usize,
    pub train_len: usize,
    pub priors: PriorConfig,
    pub gar_coordinates: GarCoordinates,
}

impl ModelSpec {
    pub fn new(
        latent: LatentKind,
        likelihood: LikelihoodKind,
        sites: usize,
        train_len: usize,
        priors: PriorConfig,
    ) -> Result<Self> {
        if sites == 0 || train_len == 0 {
            return Err(Error::Config(
                "need at least one site and one training day".into(),
            ));
        }
        match latent {
            LatentKind::Gar { window: 0 } => {
                return Err(Error::Config("GAR window must be at least 1".into()))
            }
            LatentKind::Ggp if sites > 1 => {
                return Err(Error::Config(
                    "multi-site models require GAR latents".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            latent,
            likelihood,
            sites,
            train_len,
            priors,
            gar_coordinates: GarCoordinates::default(),
        })
    }

    pub fn with_gar_coordinates(mut self, c: GarCoordinates) -> Self {
        self.gar_coordinates = c;
        self
    }

    fn noncentered_gar(&self) -> bool {
        matches!(self.latent, LatentKind::Gar { .. })
            && self.gar_coordinates == GarCoordinates::NonCentered
    }

    pub fn alpha_dim(&self) -> usize {
        match self.latent {
            LatentKind::Gar { window } => window + 2,
            LatentKind::Ggp => 3,
        }
    }

    fn has_dispersion(&self) -> bool {
        self.likelihood == LikelihoodKind::GenPoisson
    }

    fn site_block(&self) -> usize {
        self.train_len + usize::from(self.has_dispersion())
    }

    /// Offset of site `h`'s block in the unconstrained vector.
    fn site_offset(&self, h: usize) -> usize {
        self.alpha_dim() + h * self.site_block()
    }

    pub fn dim(&self) -> usize {
        self.alpha_dim() + self.sites * self.site_block()
    }

    /// Column names for the constrained representation, in the order used by
    /// [`Constrained::to_row`].
    pub fn constrained_names(&self) -> Vec<String> {
        let mut names = match self.latent {
            LatentKind::Gar { window } => {
                let mut n: Vec<String> = (0..=window).map(|i| format!("beta{i}")).collect();
                n.push("sigma".into());
                n
            }
            LatentKind::Ggp => vec!["c".into(), "a".into(), "ell".into()],
        };
        for h in 0..self.sites {
            if self.has_dispersion() {
                names.push(format!("lambda.{h}"));
            }
            names.extend((0..self.train_len).map(|t| format!("f.{h}.{t}")));
        }
        names
    }

    /// Unconstrained parameters at their prior means with latents at
    /// `log(y + 1)`.
    pub fn initial_point(&self, data: &[Vec<u64>]) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let pr = &self.priors;
        let latent = match self.latent {
            LatentKind::Gar { window } => LatentParams::Gar(GarParams {
                beta: (0..=window)
                    .map(|i| pr.beta_prior(i).mean_value())
                    .collect(),
                sigma: pr.sigma.mean_value(),
            }),
            LatentKind::Ggp => LatentParams::Ggp(GgpParams {
                c: pr.c.mean_value(),
                a: pr.a.mean_value(),
                ell: pr.ell.mean_value(),
            }),
        };
        let lambdas = if self.has_dispersion() {
            vec![0.0; self.sites]
        } else {
            vec![]
        };
        let latents: Vec<Vec<f64>> = data
            .iter()
            .map(|ys| ys.iter().map(|&y| (y as f64 + 1.0).ln()).collect())
            .collect();
        let mut v = pack(
            self,
            &Constrained {
                latent: latent.clone(),
                lambdas,
                latents: latents.clone(),
            },
        )?;
        if let LatentParams::Ggp(p) = latent {
            // Exact whitening of noisy log counts blows up along the
            // factor's tiny singular directions; start from the ridge
            // solution of a·L·v ≈ f - c instead.
            let a = correlation_factor(self.train_len, p.ell)? * p.a;
            let mut normal = a.transpose() * &a;
            for i in 0..self.train_len {
                normal[(i, i)] += 1.0;
            }
            let chol = normal.cholesky().ok_or(Error::NotPositiveDefinite {
                jitter: 0.0,
                size: self.train_len,
            })?;
            for (h, f) in latents.iter().enumerate() {
                let r = DVector::from_iterator(f.len(), f.iter().map(|x| x - p.c));
                let w = chol.solve(&(a.transpose() * r));
                let off = self.site_offset(h) + usize::from(self.has_dispersion());
                v[off..off + self.train_len].copy_from_slice(w.as_slice());
            }
        }
        Ok(v)
    }

    fn check_data(&self, data: &[Vec<u64>]) -> Result<()> {
        if data.len() != self.sites {
            return Err(Error::Dimension {
                expected: self.sites,
                got: data.len(),
            });
        }
        for ys in data {
            if ys.len() != self.train_len {
                return Err(Error::Dimension {
                    expected: self.train_len,
                    got: ys.len(),
                });
            }
        }
        Ok(())
    }
}

/// Constrained parameters and latent sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constrained {
    pub latent: LatentParams,
    /// One dispersion per site; empty under the Poisson likelihood.
    pub lambdas: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
}

impl Constrained {
    /// Dispersion used by site `h` (zero under the Poisson likelihood).
    pub fn lambda(&self, h: usize) -> f64 {
        self.lambdas.get(h).copied().unwrap_or(0.0)
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = match &self.latent {
            LatentParams::Gar(p) => {
                let mut r = p.beta.clone();
                r.push(p.sigma);
                r
            }
            LatentParams::Ggp(p) => vec![p.c, p.a, p.ell],
        };
        for (h, f) in self.latents.iter().enumerate() {
            if let Some(l) = self.lambdas.get(h) {
                row.push(*l);
            }
            row.extend_from_slice(f);
        }
        row
    }

    pub fn from_row(spec: &ModelSpec, row: &[f64]) -> Result<Self> {
        let expected = spec.dim();
        if row.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: row.len(),
            });
        }
        let latent = match spec.latent {
            LatentKind::Gar { window } => LatentParams::Gar(GarParams {
                beta: row[..=window].to_vec(),
                sigma: row[window + 1],
            }),
            LatentKind::Ggp => LatentParams::Ggp(GgpParams {
                c: row[0],
                a: row[1],
                ell: row[2],
            }),
        };
        let mut lambdas = Vec::new();
        let mut latents = Vec::new();
        for h in 0..spec.sites {
            let mut off = spec.site_offset(h);
            if spec.has_dispersion() {
                lambdas.push(row[off]);
                off += 1;
            }
            latents.push(row[off..off + spec.train_len].to_vec());
        }
        Ok(Self {
            latent,
            lambdas,
            latents,
        })
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub params: Constrained,
    pub chain: usize,
    pub draw: usize,
}

impl PosteriorSample {
    /// Constrained view of every retained draw, ordered by chain then draw.
    pub fn from_chains(
        spec: &ModelSpec,
        chains: &[crate::inference::ChainResult],
    ) -> Result<Vec<Self>> {
        let mut out = Vec::with_capacity(chains.iter().map(|c| c.draws.len()).sum());
        for c in chains {
            for (i, v) in c.draws.iter().enumerate() {
                out.push(Self {
                    params: unpack(spec, v)?,
                    chain: c.chain,
                    draw: i,
                });
            }
        }
        Ok(out)
    }
}

/// The unconstrained-to-constrained maps for the dispersion parameter.
pub mod transform {
    /// `λ = tanh(z/2)`.
    pub fn lambda_from_z(z: f64) -> f64 {
        (0.5 * z).tanh()
    }

    pub fn z_from_lambda(lambda: f64) -> f64 {
        2.0 * lambda.atanh()
    }

    /// `log dλ/dz = log(1 - λ²) - log 2`, evaluated without cancellation.
    pub fn lambda_log_jacobian(z: f64) -> f64 {
        // 1 - tanh²(x) = 4 e^{-2|x|} / (1 + e^{-2|x|})², x = z/2
        let x = z.abs();
        (2.0f64).ln() - x - 2.0 * (-x).exp().ln_1p()
    }

    /// `dλ/dz = (1 - λ²)/2`.
    pub fn lambda_dz(z: f64) -> f64 {
        lambda_log_jacobian(z).exp()
    }
}

use transform::{lambda_dz, lambda_from_z, lambda_log_jacobian, z_from_lambda};

/// `exp(-k² / 2ℓ²)` for lags `k = 0..n`; on the day grid the correlation
/// matrix is Toeplitz in these values.
fn correlation_row(n: usize, ell: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * ell * ell);
    (0..n)
        .map(|k| {
            let d = k as f64;
            (-d * d * inv).exp()
        })
        .collect()
}

/// Cholesky factor of the unit-amplitude GP correlation plus relative jitter.
fn correlation_factor(n: usize, ell: f64) -> Result<DMatrix<f64>> {
    let row = correlation_row(n, ell);
    let r = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
    Ok(cholesky(r, RELATIVE_JITTER)?.unpack())
}

/// Latent path from standardized innovations.
fn gar_from_innovations(e: &[f64], p: &GarParams) -> Vec<f64> {
    let mut f = Vec::with_capacity(e.len());
    for (t, et) in e.iter().enumerate() {
        let m = p.conditional_mean(&f, t);
        f.push(m + p.sigma * et);
    }
    f
}

fn gar_innovations(f: &[f64], p: &GarParams) -> Vec<f64> {
    (0..f.len())
        .map(|t| (f[t] - p.conditional_mean(f, t)) / p.sigma)
        .collect()
}

/// Pulls `d/df` back through `f = gar_from_innovations(e, p)`; returns the
/// derivatives in `e`, `β` and `σ`.
fn gar_backprop(e: &[f64], f: &[f64], p: &GarParams, df: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let w = p.window();
    let mut acc = df.to_vec();
    let mut de = vec![0.0; e.len()];
    let mut dbeta = vec![0.0; w + 1];
    let mut dsigma = 0.0;
    for t in (0..e.len()).rev() {
        let g = acc[t];
        de[t] = p.sigma * g;
        dsigma += e[t] * g;
        dbeta[0] += g;
        for tau in 1..=t.min(w) {
            dbeta[tau] += g * f[t - tau];
            acc[t - tau] += g * p.beta[tau];
        }
    }
    (de, dbeta, dsigma)
}

pub fn unpack(spec: &ModelSpec, v: &[f64]) -> Result<Constrained> {
    if v.len() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: v.len(),
        });
    }
    let t_len = spec.train_len;
    let mut lambdas = Vec::new();
    let mut raw_latents = Vec::new();
    for h in 0..spec.sites {
        let mut off = spec.site_offset(h);
        if spec.has_dispersion() {
            lambdas.push(lambda_from_z(v[off]));
            off += 1;
        }
        raw_latents.push(v[off..off + t_len].to_vec());
    }
    let (latent, latents) = match spec.latent {
        LatentKind::Gar { window } => {
            let p = GarParams {
                beta: v[..=window].to_vec(),
                sigma: v[window + 1].exp(),
            };
            let latents = if spec.noncentered_gar() {
                raw_latents
                    .iter()
                    .map(|e| gar_from_innovations(e, &p))
                    .collect()
            } else {
                raw_latents
            };
            (LatentParams::Gar(p), latents)
        }
        LatentKind::Ggp => {
            let p = GgpParams {
                c: v[0],
                a: v[1].exp(),
                ell: v[2].exp(),
            };
            let l = correlation_factor(t_len, p.ell)?;
            let latents = raw_latents
                .iter()
                .map(|w| {
                    let f = &l * DVector::from_column_slice(w) * p.a;
                    f.iter().map(|x| x + p.c).collect()
                })
                .collect();
            (LatentParams::Ggp(p), latents)
        }
    };
    Ok(Constrained {
        latent,
        lambdas,
        latents,
    })
}

enum Coords {
    Gar(GarParams),
    Ggp(DMatrix<f64>, GgpParams),
}

pub fn pack(spec: &ModelSpec, c: &Constrained) -> Result<Vec<f64>> {
    if c.latents.len() != spec.sites {
        return Err(Error::Dimension {
            expected: spec.sites,
            got: c.latents.len(),
        });
    }
    if spec.has_dispersion() && c.lambdas.len() != spec.sites {
        return Err(Error::Dimension {
            expected: spec.sites,
            got: c.lambdas.len(),
        });
    }
    let mut v = Vec::with_capacity(spec.dim());
    let factor = match (&c.latent, spec.latent) {
        (LatentParams::Gar(p), LatentKind::Gar { window }) => {
            if p.beta.len() != window + 1 {
                return Err(Error::Dimension {
                    expected: window + 1,
                    got: p.beta.len(),
                });
            }
            v.extend_from_slice(&p.beta);
            v.push(p.sigma.ln());
            Coords::Gar(p.clone())
        }
        (LatentParams::Ggp(p), LatentKind::Ggp) => {
            v.extend_from_slice(&[p.c, p.a.ln(), p.ell.ln()]);
            Coords::Ggp(correlation_factor(spec.train_len, p.ell)?, *p)
        }
        _ => {
            return Err(Error::Config(
                "latent parameters do not match the model kind".into(),
            ))
        }
    };
    for (h, f) in c.latents.iter().enumerate() {
        if f.len() != spec.train_len {
            return Err(Error::Dimension {
                expected: spec.train_len,
                got: f.len(),
            });
        }
        if spec.has_dispersion() {
            v.push(z_from_lambda(c.lambdas[h]));
        }
        match &factor {
            Coords::Gar(p) if spec.noncentered_gar() => v.extend(gar_innovations(f, p)),
            Coords::Gar(_) => v.extend_from_slice(f),
            Coords::Ggp(l, p) => {
                let r = DVector::from_iterator(f.len(), f.iter().map(|x| (x - p.c) / p.a));
                let w = l
                    .solve_lower_triangular(&r)
                    .expect("triangular factor is nonsingular");
                v.extend(w.iter());
            }
        }
    }
    Ok(v)
}

/// Log mass of one observation given `θ = exp(f)` together with `d/df` and
/// `d/dλ`.
fn site_day_loglik(kind: LikelihoodKind, y: u64, f: f64, lambda: f64) -> (f64, f64, f64) {
    let theta = f.exp();
    if !(theta.is_finite() && theta > 0.0) {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    match kind {
        LikelihoodKind::Poisson => {
            let p = GenPoissonParams::relaxed(theta, 0.0).expect("validated theta");
            (genpoisson_logpmf(y, &p), y as f64 - theta, 0.0)
        }
        LikelihoodKind::GenPoisson => {
            let p = match GenPoissonParams::relaxed(theta, lambda) {
                Ok(p) => p,
                Err(_) => return (f64::NEG_INFINITY, 0.0, 0.0),
            };
            match genpoisson_grad_logpmf(y, &p) {
                Ok((dt, dl)) => (genpoisson_logpmf(y, &p), dt * theta, dl),
                Err(_) => (f64::NEG_INFINITY, 0.0, 0.0),
            }
        }
    }
}

/// Log prior density of one parameter and its derivative.
fn prior_term(x: f64, prior: &crate::likelihood::TruncNormalPrior) -> (f64, f64) {
    (
        crate::likelihood::truncnormal_logpdf(x, prior),
        prior.dlogpdf(x),
    )
}

/// Joint log density and optionally its gradient in unconstrained
/// coordinates. Dimension mismatches are errors; out-of-support points give
/// `-∞` with an unspecified gradient.
pub fn log_joint_with_grad(
    spec: &ModelSpec,
    v: &[f64],
    data: &[Vec<u64>],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let n = spec.dim();
    if v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: v.len(),
        });
    }
    spec.check_data(data)?;
    if let Some(g) = grad.as_deref() {
        if g.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: g.len(),
            });
        }
    }
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let pr = &spec.priors;
    let t_len = spec.train_len;
    let mut total = 0.0;

    // per-site dispersion and likelihood; collects d(loglik)/df per site
    let mut lik_df: Vec<Vec<f64>> = Vec::with_capacity(spec.sites);
    let mut site_f: Vec<Vec<f64>> = Vec::with_capacity(spec.sites);

    let ggp = match spec.latent {
        LatentKind::Ggp => {
            let p = GgpParams {
                c: v[0],
                a: v[1].exp(),
                ell: v[2].exp(),
            };
            if !(p.a.is_finite() && p.ell.is_finite() && p.a > 0.0 && p.ell > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Some((p, correlation_factor(t_len, p.ell)?))
        }
        LatentKind::Gar { .. } => None,
    };
    let gar = match spec.latent {
        LatentKind::Gar { window } => {
            let p = GarParams {
                beta: v[..=window].to_vec(),
                sigma: v[window + 1].exp(),
            };
            if !(p.sigma.is_finite() && p.sigma > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Some(p)
        }
        LatentKind::Ggp => None,
    };

    for h in 0..spec.sites {
        let mut off = spec.site_offset(h);
        let mut lambda = 0.0;
        if spec.has_dispersion() {
            let z = v[off];
            lambda = lambda_from_z(z);
            let (lp, dlp) = prior_term(lambda, &pr.lambda);
            let dz = lambda_dz(z);
            total += lp + lambda_log_jacobian(z);
            if let Some(g) = grad.as_deref_mut() {
                // d/dz log(dλ/dz) = -λ
                g[off] += dlp * dz - lambda;
            }
            off += 1;
        }
        let raw = &v[off..off + t_len];
        let f: Vec<f64> = match (&ggp, &gar) {
            (Some((p, l)), _) => {
                let lv = l * DVector::from_column_slice(raw);
                lv.iter().map(|x| p.c + p.a * x).collect()
            }
            (None, Some(p)) if spec.noncentered_gar() => gar_from_innovations(raw, p),
            _ => raw.to_vec(),
        };
        let mut df = vec![0.0; t_len];
        let mut dlambda = 0.0;
        for (t, &y) in data[h].iter().enumerate() {
            let (lp, d_f, d_l) = site_day_loglik(spec.likelihood, y, f[t], lambda);
            total += lp;
            df[t] = d_f;
            dlambda += d_l;
        }
        if spec.has_dispersion() {
            if let Some(g) = grad.as_deref_mut() {
                g[off - 1] += dlambda * lambda_dz(v[off - 1]);
            }
        }
        lik_df.push(df);
        site_f.push(f);
    }
    if !total.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }

    match spec.latent {
        LatentKind::Gar { window } => {
            let p = gar.as_ref().expect("GAR parameters read above");
            for (i, b) in p.beta.iter().enumerate() {
                let (lp, dlp) = prior_term(*b, pr.beta_prior(i));
                total += lp;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] += dlp;
                }
            }
            let (lp, dlp) = prior_term(p.sigma, &pr.sigma);
            total += lp + v[window + 1];
            if let Some(g) = grad.as_deref_mut() {
                g[window + 1] += dlp * p.sigma + 1.0;
            }
            for h in 0..spec.sites {
                let off = spec.site_offset(h) + usize::from(spec.has_dispersion());
                if spec.noncentered_gar() {
                    // the σ^T Jacobian cancels the GAR normalizer
                    let e = &v[off..off + t_len];
                    total +=
                        -0.5 * e.iter().map(|x| x * x).sum::<f64>() - 0.5 * t_len as f64 * LN_2PI;
                    if let Some(g) = grad.as_deref_mut() {
                        let (de, dbeta, dsigma) = gar_backprop(e, &site_f[h], p, &lik_df[h]);
                        for (i, d) in dbeta.iter().enumerate() {
                            g[i] += d;
                        }
                        g[window + 1] += dsigma * p.sigma;
                        for t in 0..t_len {
                            g[off + t] += de[t] - e[t];
                        }
                    }
                    continue;
                }
                total += gar_logdensity(&site_f[h], p);
                if let Some(g) = grad.as_deref_mut() {
                    let gg = gar_grad_logdensity(&site_f[h], p);
                    for (i, d) in gg.dbeta.iter().enumerate() {
                        g[i] += d;
                    }
                    g[window + 1] += gg.dsigma * p.sigma;
                    for t in 0..t_len {
                        g[off + t] += gg.df[t] + lik_df[h][t];
                    }
                }
            }
        }
        LatentKind::Ggp => {
            let (p, l) = ggp.as_ref().expect("GGP factor computed above");
            let (lc, dc) = prior_term(p.c, &pr.c);
            let (la, da) = prior_term(p.a, &pr.a);
            let (ll, dl) = prior_term(p.ell, &pr.ell);
            total += lc + la + ll + v[1] + v[2];
            let off = spec.site_offset(0) + usize::from(spec.has_dispersion());
            let w = DVector::from_column_slice(&v[off..off + t_len]);
            total += -0.5 * w.norm_squared() - 0.5 * t_len as f64 * LN_2PI;
            if let Some(g) = grad.as_deref_mut() {
                let gf = DVector::from_column_slice(&lik_df[0]);
                let lt_g = l.transpose() * &gf;
                // d/dℓ of L: L Φ(L⁻¹ (dR/dℓ) L⁻ᵀ), Φ = lower triangle with half diagonal
                let ell3 = p.ell.powi(3);
                let drow: Vec<f64> = correlation_row(t_len, p.ell)
                    .iter()
                    .enumerate()
                    .map(|(k, r)| r * (k * k) as f64 / ell3)
                    .collect();
                let dr = DMatrix::from_fn(t_len, t_len, |i, j| drow[i.abs_diff(j)]);
                let x = l.solve_lower_triangular(&dr).expect("nonsingular");
                let mut m = l
                    .solve_lower_triangular(&x.transpose())
                    .expect("nonsingular")
                    .transpose();
                for i in 0..t_len {
                    m[(i, i)] *= 0.5;
                    for j in (i + 1)..t_len {
                        m[(i, j)] = 0.0;
                    }
                }
                let dl_term = (lt_g.transpose() * m * &w)[(0, 0)];
                let lw = l * &w;
                g[0] += gf.sum() + dc;
                g[1] += p.a * (gf.dot(&lw) + da) + 1.0;
                g[2] += p.ell * (p.a * dl_term + dl) + 1.0;
                let dw = lt_g * p.a - &w;
                for t in 0..t_len {
                    g[off + t] += dw[t];
                }
            }
        }
    }
    Ok(if total.is_finite() {
        total
    } else {
        f64::NEG_INFINITY
    })
}

pub fn log_joint(spec: &ModelSpec, v: &[f64], data: &[Vec<u64>]) -> Result<f64> {
    log_joint_with_grad(spec, v, data, None)
}

pub fn grad_log_joint(spec: &ModelSpec, v: &[f64], data: &[Vec<u64>]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; spec.dim()];
    log_joint_with_grad(spec, v, data, Some(&mut g))?;
    Ok(g)
}

/// A model bound to its training data, ready for sampling.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub spec: ModelSpec,
    pub data: Vec<Vec<u64>>,
}

impl Posterior {
    pub fn new(spec: ModelSpec, data: Vec<Vec<u64>>) -> Result<Self> {
        spec.check_data(&data)?;
        Ok(Self { spec, data })
    }
}

impl crate::inference::LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        log_joint_with_grad(&self.spec, x, &self.data, Some(grad)).unwrap_or(f64::NEG_INFINITY)
    }

    /// The global latent parameters; per-site coordinates stay diagonal.
    fn dense_block(&self) -> usize {
        self.spec.alpha_dim()
    }
}
