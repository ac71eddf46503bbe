//! Fitting a model to count series, scoring it, and persisting its draws.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::CountSeries;
use crate::error::{Error, Result};
use crate::forecast::{draw_forecasts, heldout_loglik, mae, ForecastResult, HeldoutScore};
use crate::inference::{nuts_sample, ConvergenceSummary, SamplerConfig};
use crate::latent::PriorConfig;
use crate::model::{
    Constrained, GarCoordinates, LatentKind, LikelihoodKind, ModelSpec, Posterior, PosteriorSample,
};

/// Convergence figures reported for every fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub max_rhat: f64,
    pub min_ess: f64,
    pub divergences: usize,
    /// Fraction of parameters with R-hat above the flag threshold.
    pub rhat_flagged_fraction: f64,
    pub n_params: usize,
}

impl FitDiagnostics {
    fn from_summary(s: &ConvergenceSummary, threshold: f64) -> Self {
        Self {
            max_rhat: s.max_rhat(),
            min_ess: s.min_ess(),
            divergences: s.divergences,
            rhat_flagged_fraction: s.fraction_rhat_above(threshold),
            n_params: s.rhat.len(),
        }
    }
}

/// Everything needed to rebuild a fit's model and read its draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub label: String,
    pub sites: Vec<String>,
    pub latent: LatentKind,
    pub likelihood: LikelihoodKind,
    pub mu_ell: f64,
    #[serde(default)]
    pub gar_coordinates: GarCoordinates,
    /// First training day.
    pub start: NaiveDate,
    pub train_len: usize,
    pub diagnostics: FitDiagnostics,
}

impl FitMeta {
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.latent,
            self.likelihood,
            self.sites.len(),
            self.train_len,
            PriorConfig::with_mu_ell(self.mu_ell)?,
        )
        .map(|s| s.with_gar_coordinates(self.gar_coordinates))
    }

    /// Day after the training window.
    pub fn end(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.train_len as u64)
    }
}

#[derive(Debug, Clone)]
pub struct FitRecord {
    pub meta: FitMeta,
    pub spec: ModelSpec,
    pub samples: Vec<PosteriorSample>,
}

impl FitRecord {
    /// Fit is unreliable by the R-hat rule.
    pub fn flagged(&self, max_fraction: f64) -> bool {
        !(self.meta.diagnostics.rhat_flagged_fraction <= max_fraction)
    }
}

fn constrained_summary(
    samples: &[PosteriorSample],
    divergences: usize,
    threshold: f64,
) -> FitDiagnostics {
    let mut by_chain: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for s in samples {
        match by_chain.iter_mut().find(|(c, _)| *c == s.chain) {
            Some((_, rows)) => rows.push(s.params.to_row()),
            None => by_chain.push((s.chain, vec![s.params.to_row()])),
        }
    }
    let refs: Vec<&[Vec<f64>]> = by_chain.iter().map(|(_, r)| r.as_slice()).collect();
    FitDiagnostics::from_summary(
        &ConvergenceSummary::from_draws(&refs, divergences),
        threshold,
    )
}

/// Samples the posterior of `spec` given the first `spec.train_len` days of
/// each series.
pub fn fit_series(
    label: &str,
    spec: &ModelSpec,
    series: &[CountSeries],
    sampler: &SamplerConfig,
    rhat_threshold: f64,
) -> Result<FitRecord> {
    if series.len() != spec.sites {
        return Err(Error::Dimension {
            expected: spec.sites,
            got: series.len(),
        });
    }
    let data: Vec<Vec<u64>> = series
        .iter()
        .map(|s| {
            s.counts
                .get(..spec.train_len)
                .map(<[u64]>::to_vec)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "site {} has {} days, need {}",
                        s.site,
                        s.len(),
                        spec.train_len
                    ))
                })
        })
        .collect::<Result<_>>()?;
    log::info!(
        "fit {label}: {} site(s), {} days from {}",
        spec.sites,
        spec.train_len,
        series[0].start
    );
    let init = spec.initial_point(&data)?;
    let posterior = Posterior::new(spec.clone(), data)?;
    let chains = nuts_sample(&posterior, &init, sampler)?;
    let samples = PosteriorSample::from_chains(spec, &chains)?;
    let divergences = chains.iter().map(|c| c.divergences).sum();
    let diagnostics = constrained_summary(&samples, divergences, rhat_threshold);
    log::info!(
        "fit {label}: max R-hat {:.3}, min ESS {:.0}, {} divergences",
        diagnostics.max_rhat,
        diagnostics.min_ess,
        diagnostics.divergences
    );
    let meta = FitMeta {
        label: label.to_string(),
        sites: series.iter().map(|s| s.site.clone()).collect(),
        latent: spec.latent,
        gar_coordinates: spec.gar_coordinates,
        likelihood: spec.likelihood,
        mu_ell: spec.priors.mu_ell,
        start: series[0].start,
        train_len: spec.train_len,
        diagnostics,
    };
    Ok(FitRecord {
        meta,
        spec: spec.clone(),
        samples,
    })
}

/// Heldout score and MAE of one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteScore {
    pub site: String,
    pub heldout: HeldoutScore,
    pub mae: f64,
}

/// Forecasts `future[h].len()` days after the training window and scores
/// each site's realized counts.
pub fn score_fit(
    fit: &FitRecord,
    future: &[Vec<u64>],
    seed: u64,
    group_size: usize,
) -> Result<(ForecastResult, Vec<SiteScore>)> {
    let horizon = future.first().map_or(0, Vec::len);
    if future.len() != fit.spec.sites || future.iter().any(|f| f.len() != horizon) {
        return Err(Error::Data(
            "heldout counts must cover every site for the same number of days".into(),
        ));
    }
    let fc = draw_forecasts(&fit.samples, &fit.spec, horizon, seed)?;
    let scores = fc
        .sites
        .iter()
        .zip(future)
        .zip(&fit.meta.sites)
        .map(|((sf, y), name)| {
            let actual: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            Ok(SiteScore {
                site: name.clone(),
                heldout: heldout_loglik(sf, fit.spec.likelihood, y, group_size)?,
                mae: mae(&sf.point_forecast(), &actual)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((fc, scores))
}

/// File-name-safe version of a site or fit label.
pub fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `draws_<label>.csv` (columns `chain,draw,` then constrained
/// parameter names) and `fit_<label>.json`. Returns the draw file path.
pub fn write_fit(dir: &Path, fit: &FitRecord) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let label = file_label(&fit.meta.label);
    let draws = dir.join(format!("draws_{label}.csv"));
    let mut w = csv::Writer::from_path(&draws)?;
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(fit.spec.constrained_names());
    w.write_record(&header)?;
    for s in &fit.samples {
        let mut rec = vec![s.chain.to_string(), s.draw.to_string()];
        rec.extend(s.params.to_row().iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    std::fs::write(
        dir.join(format!("fit_{label}.json")),
        serde_json::to_string_pretty(&fit.meta)? + "\n",
    )?;
    Ok(draws)
}

/// Reads a fit written by [`write_fit`] given its `fit_<label>.json` path.
pub fn read_fit(meta_path: &Path) -> Result<FitRecord> {
    let meta: FitMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
    let spec = meta.spec()?;
    let draws = meta_path.with_file_name(format!("draws_{}.csv", file_label(&meta.label)));
    let mut rdr = csv::Reader::from_path(&draws)?;
    let mut expected = vec!["chain".to_string(), "draw".to_string()];
    expected.extend(spec.constrained_names());
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != expected {
        return Err(Error::Data(format!(
            "{} does not match the model in {}",
            draws.display(),
            meta_path.display()
        )));
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Data(format!("{}: line {line}: bad {what}", draws.display()));
        let chain = rec[0].parse().map_err(|_| bad("chain"))?;
        let draw = rec[1].parse().map_err(|_| bad("draw"))?;
        let row: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|x| x.parse().map_err(|_| bad("value")))
            .collect::<Result<_>>()?;
        samples.push(PosteriorSample {
            params: Constrained::from_row(&spec, &row)?,
            chain,
            draw,
        });
    }
    Ok(FitRecord {
        meta,
        spec,
        samples,
    })
}

/// Forecast summary CSV: `date,mean,p2.5,p50,p97.5`.
pub fn write_forecast_csv(
    path: &Path,
    start: NaiveDate,
    rows: &[(f64, f64, f64, f64)],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["date", "mean", "p2.5", "p50", "p97.5"])?;
    for (i, (mean, lo, mid, hi)) in rows.iter().enumerate() {
        let date = start + chrono::Days::new(i as u64);
        w.write_record([
            date.to_string(),
            format!("{mean:.4}"),
            format!("{lo:.4}"),
            format!("{mid:.4}"),
            format!("{hi:.4}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows for [`write_forecast_csv`] from a site's sampled paths.
pub fn summary_rows(fc: &ForecastResult, site: usize) -> Vec<(f64, f64, f64, f64)> {
    fc.sites[site]
        .summaries
        .iter()
        .map(|d| (d.mean, d.p2_5, d.median, d.p97_5))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_sampler() -> SamplerConfig {
        SamplerConfig {
            n_warmup: 150,
            n_draws: 100,
            ..SamplerConfig::default()
        }
    }

    fn series() -> Vec<CountSeries> {
        let start = NaiveDate::from_ymd_opt(2020, 4, 1).unwrap();
        vec![CountSeries::new(
            "a b",
            start,
            vec![3, 4, 3, 5, 4, 6, 5, 6, 7, 6, 7, 8],
        )]
    }

    #[test]
    fn fit_write_read_round_trip() {
        let spec = ModelSpec::new(
            LatentKind::Gar { window: 1 },
            LikelihoodKind::GenPoisson,
            1,
            10,
            PriorConfig::default(),
        )
        .unwrap();
        let fit = fit_series("a b", &spec, &series(), &quick_sampler(), 1.1).unwrap();
        assert_eq!(fit.samples.len(), 200);
        let dir = tempfile::tempdir().unwrap();
        let draws = write_fit(dir.path(), &fit).unwrap();
        assert!(draws.ends_with("draws_a_b.csv"));
        let back = read_fit(&dir.path().join("fit_a_b.json")).unwrap();
        assert_eq!(back.meta, fit.meta);
        assert_eq!(back.samples, fit.samples);
        assert_eq!(
            back.meta.end(),
            NaiveDate::from_ymd_opt(2020, 4, 11).unwrap()
        );

        let (fc, scores) = score_fit(&back, &[vec![8, 9]], 1, 500).unwrap();
        assert_eq!(fc.horizon, 2);
        assert_eq!(scores[0].heldout.n_groups, 1);
        assert!(scores[0].heldout.mean.is_finite());
        assert!(score_fit(&back, &[vec![8], vec![9]], 1, 500).is_err());
    }
}
