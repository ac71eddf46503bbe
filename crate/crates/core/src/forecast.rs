//! Posterior predictive forecasts and the scores used to compare models.
//!
//! Each posterior sample is extended `horizon` days: the latent path by the
//! autoregression (or the GP conditional) and the counts by inversion
//! sampling. Latent extensions are kept so the same draws can score heldout
//! data without resampling counts.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::latent::{cholesky, day_index, gar_forecast_step, ggp_conditional, LatentParams};
use crate::likelihood::{genpoisson_draw, genpoisson_logpmf, poisson_logpmf, GenPoissonParams};
use crate::model::{LikelihoodKind, ModelSpec, PosteriorSample};

/// Per-day summary of sampled counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DaySummary {
    pub mean: f64,
    pub median: f64,
    pub p2_5: f64,
    pub p97_5: f64,
}

/// Forecast paths for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteForecast {
    pub site: usize,
    /// Sampled counts, one row per posterior sample.
    pub paths: Vec<Vec<u64>>,
    /// Latent values behind `paths`.
    pub latent_paths: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub chains: Vec<usize>,
    pub summaries: Vec<DaySummary>,
    /// Count draws that hit the end of the support or the sampler cap.
    pub saturated: usize,
}

impl SiteForecast {
    /// Per-day mean of the sampled paths.
    pub fn point_forecast(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.mean).collect()
    }

    pub fn horizon(&self) -> usize {
        self.summaries.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub horizon: usize,
    pub sites: Vec<SiteForecast>,
}

/// Nearest-rank empirical quantile of sorted data: element `ceil(q n) - 1`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

pub fn summarize(paths: &[Vec<u64>], horizon: usize) -> Vec<DaySummary> {
    (0..horizon)
        .map(|t| {
            let mut col: Vec<f64> = paths.iter().map(|p| p[t] as f64).collect();
            col.sort_by(f64::total_cmp);
            DaySummary {
                mean: col.iter().sum::<f64>() / col.len() as f64,
                median: nearest_rank(&col, 0.5),
                p2_5: nearest_rank(&col, 0.025),
                p97_5: nearest_rank(&col, 0.975),
            }
        })
        .collect()
}

fn count_params(f: f64, lambda: f64) -> Result<GenPoissonParams> {
    GenPoissonParams::relaxed(f.exp(), lambda)
}

/// Largest rate used to draw forecast counts; explosive paths are clamped
/// here (and flagged) rather than overflowing.
const MAX_FORECAST_RATE: f64 = 1e15;

/// Latent extension of one site for one sample.
fn extend_latent(
    params: &LatentParams,
    past: &[f64],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    match params {
        LatentParams::Gar(p) => {
            let mut hist = past.to_vec();
            for _ in 0..horizon {
                let next = gar_forecast_step(&hist, p, rng.sample(StandardNormal))?;
                hist.push(next);
            }
            Ok(hist.split_off(past.len()))
        }
        LatentParams::Ggp(p) => {
            let t = past.len();
            let past_times = day_index(t);
            let future: Vec<f64> = (t..t + horizon).map(|x| x as f64).collect();
            let jitter = p.default_jitter();
            let (mean, cov) = ggp_conditional(past, &past_times, &future, p, jitter)?;
            let chol = cholesky(cov, jitter)?;
            let z = DVector::from_iterator(
                horizon,
                (0..horizon).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            Ok((mean + chol.l() * z).iter().copied().collect())
        }
    }
}

struct SampleDraw {
    latents: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
    saturated: Vec<usize>,
}

fn draw_one(
    sample: &PosteriorSample,
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<SampleDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = SampleDraw {
        latents: Vec::new(),
        counts: Vec::new(),
        saturated: Vec::new(),
    };
    for (h, past) in sample.params.latents.iter().enumerate() {
        let f = extend_latent(&sample.params.latent, past, horizon, &mut rng)?;
        let lambda = sample.params.lambda(h);
        let mut ys = Vec::with_capacity(horizon);
        let mut saturated = 0;
        for &ft in &f {
            let clamped = !(ft < MAX_FORECAST_RATE.ln());
            let rate = if clamped { MAX_FORECAST_RATE.ln() } else { ft };
            let d = genpoisson_draw(&count_params(rate, lambda)?, rng.random::<f64>());
            saturated += usize::from(d.saturated || clamped);
            ys.push(d.value);
        }
        out.saturated.push(saturated);
        out.latents.push(f);
        out.counts.push(ys);
    }
    Ok(out)
}

/// Forecast paths for every site, one per posterior sample.
///
/// Sample `i` uses stream `i` of a ChaCha8 generator seeded with `seed`, so
/// the result does not depend on thread scheduling.
pub fn draw_forecasts(
    samples: &[PosteriorSample],
    spec: &ModelSpec,
    horizon: usize,
    seed: u64,
) -> Result<ForecastResult> {
    if samples.is_empty() || horizon == 0 {
        return Err(Error::Config(
            "forecasting needs at least one sample and one day".into(),
        ));
    }
    for s in samples {
        if s.params.latents.len() != spec.sites {
            return Err(Error::Dimension {
                expected: spec.sites,
                got: s.params.latents.len(),
            });
        }
    }
    let draws: Vec<SampleDraw> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| draw_one(s, horizon, seed, i as u64))
        .collect::<Result<_>>()?;

    let sites = (0..spec.sites)
        .map(|h| {
            let paths: Vec<Vec<u64>> = draws.iter().map(|d| d.counts[h].clone()).collect();
            let summaries = summarize(&paths, horizon);
            SiteForecast {
                site: h,
                latent_paths: draws.iter().map(|d| d.latents[h].clone()).collect(),
                lambdas: samples.iter().map(|s| s.params.lambda(h)).collect(),
                chains: samples.iter().map(|s| s.chain).collect(),
                saturated: draws.iter().map(|d| d.saturated[h]).sum(),
                paths,
                summaries,
            }
        })
        .collect::<Vec<_>>();
    for s in &sites {
        if s.saturated > 0 {
            log::warn!(
                "site {}: {} forecast count draws saturated the inversion sampler",
                s.site,
                s.saturated
            );
        }
    }
    Ok(ForecastResult { horizon, sites })
}

/// Grouped Monte Carlo estimate of the per-day heldout log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeldoutScore {
    pub groups: Vec<f64>,
    pub mean: f64,
    pub sem: f64,
    pub group_size: usize,
    pub n_groups: usize,
    /// Mean of the group values within each chain, in chain order.
    pub chain_means: Vec<(usize, f64)>,
    /// Some group had zero likelihood for every draw.
    pub flagged: bool,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn path_loglik(kind: LikelihoodKind, latents: &[f64], lambda: f64, y: &[u64]) -> Result<f64> {
    let mut total = 0.0;
    for (&f, &yt) in latents.iter().zip(y) {
        if !f.exp().is_finite() {
            // an overflowing rate gives any finite count zero likelihood
            return Ok(f64::NEG_INFINITY);
        }
        total += match kind {
            LikelihoodKind::Poisson => poisson_logpmf(yt, f.exp())?,
            LikelihoodKind::GenPoisson => genpoisson_logpmf(yt, &count_params(f, lambda)?),
        };
    }
    Ok(total)
}

/// Scores `y_future` against the latent paths of `forecast`.
///
/// Draws are grouped in order within each chain; a chain's trailing draws
/// that do not fill a group are dropped. If no chain can fill a single group
/// all draws form one group. Each group contributes
/// `(1/F) log((1/|g|) Σ_s Π_τ p(y_τ | f^s_τ, λ^s))`.
pub fn heldout_loglik(
    forecast: &SiteForecast,
    kind: LikelihoodKind,
    y_future: &[u64],
    group_size: usize,
) -> Result<HeldoutScore> {
    let horizon = y_future.len();
    if horizon == 0 || group_size == 0 {
        return Err(Error::Config(
            "heldout scoring needs at least one day and a positive group size".into(),
        ));
    }
    if horizon > forecast.horizon() {
        return Err(Error::Dimension {
            expected: forecast.horizon(),
            got: horizon,
        });
    }
    let n = forecast.latent_paths.len();
    if n == 0 {
        return Err(Error::Config("no forecast draws to score".into()));
    }
    let logliks: Vec<f64> = (0..n)
        .map(|s| {
            path_loglik(
                kind,
                &forecast.latent_paths[s][..horizon],
                forecast.lambdas[s],
                y_future,
            )
        })
        .collect::<Result<_>>()?;

    // contiguous runs of draws from the same chain
    let mut runs: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for (i, &c) in forecast.chains.iter().enumerate() {
        match runs.last_mut() {
            Some((rc, r)) if *rc == c => r.end = i + 1,
            _ => runs.push((c, i..i + 1)),
        }
    }
    let mut size = group_size;
    let mut members: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for (c, r) in &runs {
        let mut start = r.start;
        while start + size <= r.end {
            members.push((*c, start..start + size));
            start += size;
        }
    }
    if members.is_empty() {
        size = n;
        members.push((forecast.chains[0], 0..n));
    }

    let f = horizon as f64;
    let mut flagged = false;
    let groups: Vec<f64> = members
        .iter()
        .map(|(_, r)| {
            let lse = log_sum_exp(&logliks[r.clone()]);
            if lse == f64::NEG_INFINITY {
                flagged = true;
            }
            (lse - (r.len() as f64).ln()) / f
        })
        .collect();
    let k = groups.len() as f64;
    let mean = groups.iter().sum::<f64>() / k;
    let sem = if groups.len() > 1 && mean.is_finite() {
        let var = groups.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        0.0
    };
    let mut chain_means: Vec<(usize, f64)> = Vec::new();
    for (c, _) in &runs {
        if chain_means.iter().any(|(cc, _)| cc == c) {
            continue;
        }
        let vals: Vec<f64> = members
            .iter()
            .zip(&groups)
            .filter(|((mc, _), _)| mc == c)
            .map(|(_, g)| *g)
            .collect();
        if !vals.is_empty() {
            chain_means.push((*c, vals.iter().sum::<f64>() / vals.len() as f64));
        }
    }
    Ok(HeldoutScore {
        n_groups: groups.len(),
        groups,
        mean,
        sem,
        group_size: size,
        chain_means,
        flagged,
    })
}

/// Mean absolute error.
pub fn mae(forecast: &[f64], actual: &[f64]) -> Result<f64> {
    if forecast.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Data("MAE of empty vectors".into()));
    }
    Ok(forecast
        .iter()
        .zip(actual)
        .map(|(f, a)| (f - a).abs())
        .sum::<f64>()
        / actual.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::{GarParams, GgpParams, PriorConfig};
    use crate::model::{Constrained, LatentKind};

    fn gar_sample(
        beta: Vec<f64>,
        sigma: f64,
        lambda: Option<f64>,
        f: Vec<f64>,
        chain: usize,
    ) -> PosteriorSample {
        PosteriorSample {
            params: Constrained {
                latent: LatentParams::Gar(GarParams { beta, sigma }),
                lambdas: lambda.into_iter().collect(),
                latents: vec![f],
            },
            chain,
            draw: 0,
        }
    }

    fn spec(lik: LikelihoodKind, t: usize) -> ModelSpec {
        ModelSpec::new(
            LatentKind::Gar { window: 1 },
            lik,
            1,
            t,
            PriorConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn degenerate_noise_keeps_latent_constant() {
        let s = gar_sample(vec![0.0, 1.0], 0.0, None, vec![1.0, 2.5], 0);
        let out = draw_forecasts(&[s], &spec(LikelihoodKind::Poisson, 2), 7, 3).unwrap();
        assert!(out.sites[0].latent_paths[0].iter().all(|&f| f == 2.5));
    }

    #[test]
    fn single_day_forecast_matches_pmf() {
        // one-step GAR with σ=0 fixes f_{T+1}; counts should follow GP(θ, λ)
        let theta: f64 = 12.0;
        let lambda = -0.2;
        let s = gar_sample(vec![theta.ln(), 0.0], 0.0, Some(lambda), vec![0.0], 0);
        let samples = vec![s; 20_000];
        let out = draw_forecasts(&samples, &spec(LikelihoodKind::GenPoisson, 1), 1, 11).unwrap();
        let p = GenPoissonParams::relaxed(theta, lambda).unwrap();
        let n = samples.len() as f64;
        let mut chi2 = 0.0;
        let mut bins = 0;
        for y in 4..=16u64 {
            let expected = n * genpoisson_logpmf(y, &p).exp();
            let observed = out.sites[0].paths.iter().filter(|r| r[0] == y).count() as f64;
            chi2 += (observed - expected).powi(2) / expected;
            bins += 1;
        }
        // 99.9% point of chi-square with 13 dof is about 34.5
        assert!(chi2 < 34.5, "chi2 {chi2} over {bins} bins");
    }

    #[test]
    fn forecasts_are_deterministic_and_ordered() {
        let samples: Vec<_> = (0..300)
            .map(|i| {
                gar_sample(
                    vec![0.1, 0.97],
                    0.05,
                    Some(-0.1),
                    vec![3.0, 3.1 + 0.001 * i as f64],
                    i % 2,
                )
            })
            .collect();
        let sp = spec(LikelihoodKind::GenPoisson, 2);
        let a = draw_forecasts(&samples, &sp, 14, 5).unwrap();
        let b = draw_forecasts(&samples, &sp, 14, 5).unwrap();
        assert_eq!(a, b);
        for d in &a.sites[0].summaries {
            assert!(d.p2_5 <= d.median && d.median <= d.p97_5);
        }
    }

    #[test]
    fn ggp_forecast_runs_and_is_near_mean_far_out() {
        let s = PosteriorSample {
            params: Constrained {
                latent: LatentParams::Ggp(GgpParams {
                    c: 2.0,
                    a: 0.3,
                    ell: 2.0,
                }),
                lambdas: vec![],
                latents: vec![vec![2.1, 2.2, 2.3, 2.2, 2.1]],
            },
            chain: 0,
            draw: 0,
        };
        let sp = ModelSpec::new(
            LatentKind::Ggp,
            LikelihoodKind::Poisson,
            1,
            5,
            PriorConfig::default(),
        )
        .unwrap();
        let samples = vec![s; 2000];
        let out = draw_forecasts(&samples, &sp, 40, 1).unwrap();
        let last: Vec<f64> = out.sites[0].latent_paths.iter().map(|p| p[39]).collect();
        let m = last.iter().sum::<f64>() / last.len() as f64;
        // far from the data the conditional reverts to N(c, a²)
        assert!((m - 2.0).abs() < 0.05, "{m}");
    }

    #[test]
    fn nearest_rank_percentiles() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 0.5), 5.0);
        assert_eq!(nearest_rank(&xs, 0.025), 1.0);
        assert_eq!(nearest_rank(&xs, 0.975), 10.0);
        assert_eq!(nearest_rank(&xs[..1], 0.5), 1.0);
    }

    fn fake_forecast(latents: Vec<f64>, chains: Vec<usize>, lambda: f64) -> SiteForecast {
        let n = latents.len();
        SiteForecast {
            site: 0,
            paths: vec![vec![0]; n],
            latent_paths: latents.into_iter().map(|f| vec![f]).collect(),
            lambdas: vec![lambda; n],
            chains,
            summaries: vec![DaySummary {
                mean: 0.0,
                median: 0.0,
                p2_5: 0.0,
                p97_5: 0.0,
            }],
            saturated: 0,
        }
    }

    #[test]
    fn single_sample_score_is_the_logpmf() {
        let fc = fake_forecast(vec![2.0], vec![0], 0.1);
        let s = heldout_loglik(&fc, LikelihoodKind::GenPoisson, &[9], 500).unwrap();
        let exact = genpoisson_logpmf(9, &GenPoissonParams::relaxed(2f64.exp(), 0.1).unwrap());
        assert!((s.mean - exact).abs() < 1e-12);
        assert_eq!((s.n_groups, s.group_size, s.sem), (1, 1, 0.0));
    }

    #[test]
    fn groups_follow_chains_and_pool_to_group_mean() {
        let latents: Vec<f64> = (0..5000).map(|i| 2.0 + 0.0001 * (i % 97) as f64).collect();
        let chains: Vec<usize> = (0..5000).map(|i| i / 2500).collect();
        let fc = fake_forecast(latents, chains, 0.0);
        let s = heldout_loglik(&fc, LikelihoodKind::Poisson, &[7], 500).unwrap();
        assert_eq!(s.n_groups, 10);
        assert_eq!(s.n_groups * s.group_size, 5000);
        let pooled = s.groups.iter().sum::<f64>() / 10.0;
        assert!((s.mean - pooled).abs() < 1e-15);
        assert_eq!(s.chain_means.len(), 2);
        assert!(s.sem >= 0.0);
    }

    #[test]
    fn zero_likelihood_group_is_flagged() {
        // θ + λy ≤ 0 for every draw
        let fc = fake_forecast(vec![0.0; 3], vec![0; 3], -0.5);
        let s = heldout_loglik(&fc, LikelihoodKind::GenPoisson, &[5], 500).unwrap();
        assert!(s.flagged);
        assert_eq!(s.mean, f64::NEG_INFINITY);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }
}
