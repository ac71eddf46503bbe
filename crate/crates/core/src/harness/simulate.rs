//! Synthetic count series drawn from the generative models.

use chrono::NaiveDate;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::CountSeries;
use crate::error::{Error, Result};
use crate::latent::{
    cholesky, day_index, gar_forecast_step, se_kernel_matrix, GarParams, GgpParams,
};
use crate::likelihood::{genpoisson_draw, GenPoissonParams};
use crate::model::LikelihoodKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "latent", rename_all = "snake_case")]
pub enum SimLatent {
    /// Autoregression shared by all sites.
    Gar { beta: Vec<f64>, sigma: f64 },
    /// Independent GP draw per site.
    Ggp { c: f64, a: f64, ell: f64 },
    /// Deterministic log-latent `ln(intercept + slope t)`.
    Linear { intercept: f64, slope: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(flatten)]
    pub latent: SimLatent,
    #[serde(default = "default_likelihood")]
    pub likelihood: LikelihoodKind,
    /// Dispersion per site; a single value is shared by all sites.
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default = "one")]
    pub sites: usize,
    pub days: usize,
    /// GAR steps simulated and discarded before the first reported day.
    #[serde(default)]
    pub burn_in: usize,
    /// Per-site count level used as the mean of the first GAR latent
    /// (`ln level`) instead of `β₀`.
    #[serde(default)]
    pub start_level: Option<Vec<f64>>,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_prefix")]
    pub site_prefix: String,
}

fn default_likelihood() -> LikelihoodKind {
    LikelihoodKind::GenPoisson
}
fn one() -> usize {
    1
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date")
}
fn default_prefix() -> String {
    "site".into()
}

impl SimulationConfig {
    pub fn new(
        latent: SimLatent,
        likelihood: LikelihoodKind,
        lambda: Vec<f64>,
        sites: usize,
        days: usize,
    ) -> Self {
        Self {
            latent,
            likelihood,
            lambda,
            sites,
            days,
            burn_in: 0,
            start_level: None,
            start_date: default_start(),
            site_prefix: default_prefix(),
        }
    }

    fn lambda_for(&self, h: usize) -> Result<f64> {
        if self.likelihood == LikelihoodKind::Poisson {
            return Ok(0.0);
        }
        match self.lambda.len() {
            0 => Ok(0.0),
            1 => Ok(self.lambda[0]),
            n if n == self.sites => Ok(self.lambda[h]),
            n => Err(Error::Config(format!(
                "{n} dispersion values for {} sites",
                self.sites
            ))),
        }
    }
}

/// Simulated counts together with the latent paths that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub series: Vec<CountSeries>,
    pub latents: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    /// Count draws that hit the end of the truncated support or the cap.
    pub saturated: usize,
}

fn latent_path(cfg: &SimulationConfig, h: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = cfg.days;
    match &cfg.latent {
        SimLatent::Gar { beta, sigma } => {
            let p = GarParams::new(beta.clone(), *sigma)?;
            let first_mean = match &cfg.start_level {
                Some(levels) => levels
                    .get(h)
                    .or(levels.first())
                    .map(|l| l.ln())
                    .ok_or_else(|| Error::Config("empty start_level".into()))?,
                None => p.beta[0],
            };
            let mut f = vec![first_mean + p.sigma * rng.sample::<f64, _>(StandardNormal)];
            while f.len() < cfg.burn_in + n {
                let next = gar_forecast_step(&f, &p, rng.sample(StandardNormal))?;
                f.push(next);
            }
            Ok(f.split_off(cfg.burn_in))
        }
        SimLatent::Ggp { c, a, ell } => {
            let p = GgpParams::new(*c, *a, *ell)?;
            let t = day_index(n);
            let chol = cholesky(se_kernel_matrix(&t, &t, &p), p.default_jitter())?;
            let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            Ok((chol.l() * z).iter().map(|x| c + x).collect())
        }
        SimLatent::Linear { intercept, slope } => (0..n)
            .map(|t| {
                let level = intercept + slope * t as f64;
                if level > 0.0 {
                    Ok(level.ln())
                } else {
                    Err(Error::Config(format!(
                        "linear level {level} at day {t} is not positive"
                    )))
                }
            })
            .collect(),
    }
}

/// Site `h` uses stream `h` of a ChaCha8 generator seeded with `seed`.
pub fn simulate(cfg: &SimulationConfig, seed: u64) -> Result<Simulation> {
    if cfg.sites == 0 || cfg.days == 0 {
        return Err(Error::Config(
            "simulation needs at least one site and one day".into(),
        ));
    }
    let mut out = Simulation {
        series: Vec::new(),
        latents: Vec::new(),
        lambdas: Vec::new(),
        saturated: 0,
    };
    for h in 0..cfg.sites {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(h as u64);
        let lambda = cfg.lambda_for(h)?;
        let f = latent_path(cfg, h, &mut rng)?;
        let mut counts = Vec::with_capacity(cfg.days);
        for &ft in &f {
            let p = GenPoissonParams::relaxed(ft.exp(), lambda)?;
            let d = genpoisson_draw(&p, rng.random::<f64>());
            out.saturated += usize::from(d.saturated);
            counts.push(d.value);
        }
        let name = if cfg.sites == 1 {
            cfg.site_prefix.clone()
        } else {
            format!("{}{}", cfg.site_prefix, h + 1)
        };
        out.series
            .push(CountSeries::new(name, cfg.start_date, counts));
        out.latents.push(f);
        out.lambdas.push(lambda);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gar_simulation_is_deterministic_and_shaped() {
        let cfg = SimulationConfig::new(
            SimLatent::Gar {
                beta: vec![0.05, 0.98],
                sigma: 0.05,
            },
            LikelihoodKind::GenPoisson,
            vec![-0.3],
            3,
            60,
        );
        let a = simulate(&cfg, 4).unwrap();
        assert_eq!(a, simulate(&cfg, 4).unwrap());
        assert_eq!(a.series.len(), 3);
        assert!(a.series.iter().all(|s| s.len() == 60));
        assert_eq!(a.series[2].site, "site3");
        assert_ne!(a.series[0].counts, a.series[1].counts);
    }

    #[test]
    fn start_level_and_burn_in() {
        let mut cfg = SimulationConfig::new(
            SimLatent::Gar {
                beta: vec![0.0, 1.0],
                sigma: 0.01,
            },
            LikelihoodKind::Poisson,
            vec![],
            1,
            30,
        );
        cfg.start_level = Some(vec![200.0]);
        cfg.burn_in = 10;
        let s = simulate(&cfg, 1).unwrap();
        assert!((s.latents[0][0] - 200f64.ln()).abs() < 0.2);
        let mean = s.series[0].counts.iter().sum::<u64>() as f64 / 30.0;
        assert!((mean - 200.0).abs() < 40.0, "{mean}");
    }

    #[test]
    fn linear_and_ggp() {
        let cfg = SimulationConfig::new(
            SimLatent::Linear {
                intercept: 100.0,
                slope: 2.0,
            },
            LikelihoodKind::Poisson,
            vec![],
            1,
            20,
        );
        let s = simulate(&cfg, 2).unwrap();
        assert!((s.latents[0][10] - 120f64.ln()).abs() < 1e-12);
        let cfg = SimulationConfig::new(
            SimLatent::Ggp {
                c: 3.0,
                a: 0.5,
                ell: 5.0,
            },
            LikelihoodKind::GenPoisson,
            vec![0.1],
            1,
            25,
        );
        assert_eq!(simulate(&cfg, 3).unwrap().series[0].len(), 25);
    }

    #[test]
    fn parses_from_toml() {
        let cfg: SimulationConfig = toml::from_str(
            "latent = \"gar\"\nbeta = [0.05, 0.98]\nsigma = 0.05\nlambda = [-0.3]\ndays = 60\n",
        )
        .unwrap();
        assert_eq!(cfg.sites, 1);
        assert_eq!(
            cfg.latent,
            SimLatent::Gar {
                beta: vec![0.05, 0.98],
                sigma: 0.05
            }
        );
    }
}
