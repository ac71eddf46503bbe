//! Regression baselines that rescale a state-level forecast by the site's
//! predicted share of state volume.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::CountSeries;
use crate::error::{Error, Result};

/// A per-day point forecast with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self {
            mean: x,
            lower: x,
            upper: x,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Ordinary least squares of `y` on the day index `0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    /// Residual standard deviation with `n - 2` degrees of freedom.
    pub resid_sd: f64,
    pub n: usize,
    x_mean: f64,
    sxx: f64,
}

pub fn ols_fit(y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    if n < 3 {
        return Err(Error::Data(format!(
            "linear trend needs at least 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (yi - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = y
        .iter()
        .enumerate()
        .map(|(i, yi)| (yi - intercept - slope * i as f64).powi(2))
        .sum();
    Ok(OlsFit {
        intercept,
        slope,
        resid_sd: (sse / (nf - 2.0)).sqrt(),
        n,
        x_mean,
        sxx,
    })
}

/// Two-sided 95% critical value of Student's t.
pub fn t_quantile_975(df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

impl OlsFit {
    /// Mean and 95% prediction interval at day index `x`.
    pub fn predict(&self, x: f64) -> Interval {
        let mean = self.intercept + self.slope * x;
        let nf = self.n as f64;
        let se = self.resid_sd * (1.0 + 1.0 / nf + (x - self.x_mean).powi(2) / self.sxx).sqrt();
        let half = t_quantile_975(nf - 2.0) * se;
        Interval {
            mean,
            lower: mean - half,
            upper: mean + half,
        }
    }
}

/// Linear-trend forecast of the `horizon` days after `y`.
pub fn ols_trend_forecast(y: &[f64], horizon: usize) -> Result<Vec<Interval>> {
    let fit = ols_fit(y)?;
    let n = y.len();
    Ok((n..n + horizon).map(|x| fit.predict(x as f64)).collect())
}

/// Predicted site share of state volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionForecast {
    pub days: Vec<Interval>,
    /// Some bound fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

/// Site counts divided by state counts over the `window` days ending with the
/// site's last observation.
pub fn fraction_series(site: &CountSeries, state: &CountSeries, window: usize) -> Result<Vec<f64>> {
    if site.len() < window {
        return Err(Error::Data(format!(
            "site {} has {} days, need {window}",
            site.site,
            site.len()
        )));
    }
    let first = site.len() - window;
    let mut zero_dates = Vec::new();
    let mut out = Vec::with_capacity(window);
    for i in first..site.len() {
        let date = site.date(i);
        let j = state.index_of(date).ok_or_else(|| {
            Error::Data(format!(
                "state series {} has no count for {date}",
                state.site
            ))
        })?;
        let s = state.counts[j];
        if s == 0 {
            zero_dates.push(date.to_string());
            continue;
        }
        let frac = site.counts[i] as f64 / s as f64;
        if frac > 1.0 {
            return Err(Error::Data(format!(
                "site {} exceeds the state count on {date} ({} > {s})",
                site.site, site.counts[i]
            )));
        }
        out.push(frac);
    }
    if !zero_dates.is_empty() {
        return Err(Error::Data(format!(
            "state count is zero on {}",
            zero_dates.join(", ")
        )));
    }
    Ok(out)
}

/// Linear trend on the trailing site fraction, clamped to `[0, 1]`.
pub fn fraction_forecast(
    site: &CountSeries,
    state: &CountSeries,
    window: usize,
    horizon: usize,
) -> Result<FractionForecast> {
    let fractions = fraction_series(site, state, window)?;
    let mut clamped = false;
    let mut clamp = |x: f64| {
        let c = x.clamp(0.0, 1.0);
        clamped |= c != x;
        c
    };
    let days = ols_trend_forecast(&fractions, horizon)?
        .into_iter()
        .map(|d| Interval {
            mean: clamp(d.mean),
            lower: clamp(d.lower),
            upper: clamp(d.upper),
        })
        .collect();
    if clamped {
        log::warn!("site {}: predicted fraction clamped to [0, 1]", site.site);
    }
    Ok(FractionForecast { days, clamped })
}

/// Site forecast as fraction times state volume, bound by bound.
pub fn rescale(fraction: &[Interval], state: &[Interval]) -> Result<Vec<Interval>> {
    if fraction.len() != state.len() {
        return Err(Error::Dimension {
            expected: fraction.len(),
            got: state.len(),
        });
    }
    Ok(fraction
        .iter()
        .zip(state)
        .map(|(f, s)| Interval {
            mean: f.mean * s.mean,
            lower: f.lower * s.lower,
            upper: f.upper * s.upper,
        })
        .collect())
}

/// State-level forecast supplied by another model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalStateForecast {
    pub start: NaiveDate,
    pub days: Vec<Interval>,
}

impl ExternalStateForecast {
    /// Reads `date,mean,lower95,upper95` with consecutive dates.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
        if headers != ["date", "mean", "lower95", "upper95"] {
            return Err(Error::Data(format!(
                "unexpected header {headers:?}; expected date,mean,lower95,upper95"
            )));
        }
        let mut start = None;
        let mut days = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|_| Error::Data(format!("line {line}: bad date {:?}", &rec[0])))?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("line {line}: bad number {:?}", &rec[k])))
            };
            let d = Interval {
                mean: num(1)?,
                lower: num(2)?,
                upper: num(3)?,
            };
            if !(d.lower <= d.mean && d.mean <= d.upper) {
                return Err(Error::Data(format!(
                    "line {line}: need lower95 <= mean <= upper95"
                )));
            }
            let s = *start.get_or_insert(date);
            if (date - s).num_days() != days.len() as i64 {
                return Err(Error::Data(format!(
                    "line {line}: dates must be consecutive, got {date}"
                )));
            }
            days.push(d);
        }
        let start = start.ok_or_else(|| Error::Data("external forecast has no rows".into()))?;
        Ok(Self { start, days })
    }

    /// The `horizon` days starting at `from`.
    pub fn window(&self, from: NaiveDate, horizon: usize) -> Result<Vec<Interval>> {
        let offset = (from - self.start).num_days();
        if offset < 0 || offset as usize + horizon > self.days.len() {
            return Err(Error::Data(format!(
                "external forecast starting {} with {} days does not cover {horizon} days from {from}",
                self.start,
                self.days.len()
            )));
        }
        Ok(self.days[offset as usize..offset as usize + horizon].to_vec())
    }
}

/// Site forecast from a linear trend on the state series, rescaled by the
/// site fraction. Both regressions use the trailing `window` days.
pub fn rescaled_ols_baseline(
    site: &CountSeries,
    state: &CountSeries,
    window: usize,
    horizon: usize,
) -> Result<Vec<Interval>> {
    let frac = fraction_forecast(site, state, window, horizon)?;
    let end = state.index_of(site.date(site.len() - 1)).ok_or_else(|| {
        Error::Data(format!(
            "state series {} does not cover the site's last day",
            state.site
        ))
    })? + 1;
    if end < window {
        return Err(Error::Data(format!(
            "state series has {end} days before the forecast, need {window}"
        )));
    }
    let y: Vec<f64> = state.counts[end - window..end]
        .iter()
        .map(|&c| c as f64)
        .collect();
    rescale(&frac.days, &ols_trend_forecast(&y, horizon)?)
}

/// Site forecast from an external state-level forecast.
pub fn rescaled_external_baseline(
    site: &CountSeries,
    state: &CountSeries,
    external: &ExternalStateForecast,
    window: usize,
    horizon: usize,
) -> Result<Vec<Interval>> {
    let frac = fraction_forecast(site, state, window, horizon)?;
    rescale(&frac.days, &external.window(site.end(), horizon)?)
}
