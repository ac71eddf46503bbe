//! Retrospective model comparison and prospective forecasting runs.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::baselines::{
    rescaled_external_baseline, rescaled_ols_baseline, ExternalStateForecast, Interval,
};
use crate::data::{ingest_csv, screen_anomalies, split, AnomalyReport, CountSeries};
use crate::error::{Error, Result};
use crate::forecast::{mae, ForecastResult, HeldoutScore};
use crate::harness::config::{ExperimentConfig, LatentChoice, ModelConfig, RetroModel};
use crate::harness::fit::{
    file_label, fit_series, score_fit, summary_rows, write_fit, write_forecast_csv, FitDiagnostics,
};
use crate::harness::grid::{grid_search, refit_and_test, GridSearch, GridValue};
use crate::model::LikelihoodKind;

/// Reads the site series and, when asked, screens them for anomalies.
pub fn load_sites(cfg: &ExperimentConfig) -> Result<(Vec<CountSeries>, Vec<AnomalyReport>)> {
    let series = ingest_csv(&cfg.data.sites)?;
    let mut anomalies = Vec::new();
    if cfg.data.screen_anomalies {
        for s in &series {
            let r = screen_anomalies(s, cfg.data.anomaly_threshold);
            if !r.is_clean() {
                log::warn!(
                    "site {}: {} zero days, {} jump days",
                    s.site,
                    r.zero_days.len(),
                    r.jump_days.len()
                );
                anomalies.push(r);
            }
        }
    }
    Ok((series, anomalies))
}

/// Test-set result of one model on one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetroEntry {
    pub site: String,
    pub model: RetroModel,
    pub hyperparameter: Option<GridValue>,
    pub test: HeldoutScore,
    pub mae: f64,
    pub diagnostics: FitDiagnostics,
    pub grid: Option<GridSearch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetroReport {
    pub train_days: usize,
    pub val_days: usize,
    pub test_days: usize,
    pub entries: Vec<RetroEntry>,
    pub anomalies: Vec<AnomalyReport>,
}

fn model_name(m: RetroModel) -> &'static str {
    match m {
        RetroModel::Ggp => "GGP",
        RetroModel::Gar => "GAR",
        RetroModel::MultiGar => "multi-site GAR",
    }
}

impl RetroReport {
    /// Fixed-width table: mean ± SEM with each chain's mean on its own line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Normalized test log-likelihood ({} train, {} validation, {} test days)\n",
            self.train_days, self.val_days, self.test_days
        );
        let _ = writeln!(
            out,
            "{:<24} {:<16} {:<10} {:>18} {:>9} {:>9} {:>9}",
            "site", "model", "hyper", "score", "R-hat", "ESS", "MAE"
        );
        for e in &self.entries {
            let hyper = match e.hyperparameter {
                Some(GridValue::Window(w)) => format!("W={w}"),
                Some(GridValue::MuEll(m)) => format!("mu_l={m}"),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<24} {:<16} {:<10} {:>18} {:>9.3} {:>9.0} {:>9.2}",
                e.site,
                model_name(e.model),
                hyper,
                format!("{:.3} ± {:.3}", e.test.mean, e.test.sem),
                e.diagnostics.max_rhat,
                e.diagnostics.min_ess,
                e.mae
            );
            for (c, m) in &e.test.chain_means {
                let _ = writeln!(
                    out,
                    "{:<24} {:<16} {:<10} {:>18}",
                    "",
                    "",
                    format!("chain {c}"),
                    format!("{m:.3}")
                );
            }
        }
        for a in &self.anomalies {
            let _ = writeln!(
                out,
                "\nanomalies at {}: zero days {:?}, jump days {:?}",
                a.site, a.zero_days, a.jump_days
            );
        }
        out
    }
}

fn write_report<T: Serialize>(dir: &Path, stem: &str, report: &T, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    std::fs::write(dir.join(format!("{stem}.txt")), text)?;
    Ok(())
}

/// Grid search (optional), refit on training plus validation, and test
/// scores for every configured model and site.
pub fn run_retrospective(cfg: &ExperimentConfig) -> Result<RetroReport> {
    cfg.check_paths()?;
    let (series, anomalies) = load_sites(cfg)?;
    let parts = split(series[0].len(), &cfg.split)?;
    let sampler = cfg.sampler();
    let eval = &cfg.evaluation;
    let out_dir = cfg.output_dir.join("retrospective");
    let mut entries = Vec::new();

    let single = |model: RetroModel, site: &CountSeries| -> Result<RetroEntry> {
        let (base, grid_values): (ModelConfig, Vec<GridValue>) = match model {
            RetroModel::Ggp => (
                ModelConfig {
                    latent: LatentChoice::Ggp,
                    multi_site: false,
                    ..cfg.model.clone()
                },
                cfg.grid
                    .mu_ell
                    .iter()
                    .map(|&m| GridValue::MuEll(m))
                    .collect(),
            ),
            _ => (
                ModelConfig {
                    latent: LatentChoice::Gar,
                    multi_site: false,
                    ..cfg.model.clone()
                },
                cfg.grid
                    .windows
                    .iter()
                    .map(|&w| GridValue::Window(w))
                    .collect(),
            ),
        };
        let label = format!("{}-{}", site.site, model_name(model).replace(' ', "-"));
        let one = std::slice::from_ref(site);
        let (chosen, grid) = match (cfg.retrospective.tune, grid_values.as_slice()) {
            // a one-value grid needs no validation fit
            (true, [only]) => (Some(*only), None),
            (true, _) => {
                let g = grid_search(&label, one, &base, &grid_values, &cfg.split, &sampler, eval)?;
                (Some(g.best), Some(g))
            }
            (false, _) => (None, None),
        };
        let model_cfg = chosen.map_or(base.clone(), |v| v.apply(&base));
        let (fit, scores) = refit_and_test(&label, one, &model_cfg, &cfg.split, &sampler, eval)?;
        write_fit(&out_dir, &fit)?;
        let s = scores.into_iter().next().expect("one site");
        Ok(RetroEntry {
            site: site.site.clone(),
            model,
            hyperparameter: chosen.or(Some(match model {
                RetroModel::Ggp => GridValue::MuEll(model_cfg.mu_ell),
                _ => GridValue::Window(model_cfg.window),
            })),
            test: s.heldout,
            mae: s.mae,
            diagnostics: fit.meta.diagnostics.clone(),
            grid,
        })
    };

    for site in &series {
        for &m in &cfg.retrospective.models {
            if m != RetroModel::MultiGar {
                entries.push(single(m, site)?);
            }
        }
    }
    if cfg.retrospective.models.contains(&RetroModel::MultiGar) {
        let model_cfg = ModelConfig {
            latent: LatentChoice::Gar,
            window: 1,
            multi_site: true,
            ..cfg.model.clone()
        };
        let (fit, scores) = refit_and_test(
            "multi-site-GAR",
            &series,
            &model_cfg,
            &cfg.split,
            &sampler,
            eval,
        )?;
        write_fit(&out_dir, &fit)?;
        for s in scores {
            entries.push(RetroEntry {
                site: s.site,
                model: RetroModel::MultiGar,
                hyperparameter: Some(GridValue::Window(1)),
                test: s.heldout,
                mae: s.mae,
                diagnostics: fit.meta.diagnostics.clone(),
                grid: None,
            });
        }
    }
    // site-major order regardless of how the fits were scheduled
    let order = |e: &RetroEntry| {
        let site = series
            .iter()
            .position(|s| s.site == e.site)
            .unwrap_or(usize::MAX);
        let model = cfg
            .retrospective
            .models
            .iter()
            .position(|m| *m == e.model)
            .unwrap_or(usize::MAX);
        (site, model)
    };
    entries.sort_by_key(order);
    let report = RetroReport {
        train_days: parts.train.len(),
        val_days: parts.val.len(),
        test_days: parts.test.len(),
        entries,
        anomalies,
    };
    write_report(&out_dir, "report", &report, &report.to_text())?;
    Ok(report)
}

/// Per-day forecast of one method at one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodForecast {
    pub site: String,
    pub method: String,
    pub days: Vec<Interval>,
    pub mae: Option<f64>,
    pub diagnostics: Option<FitDiagnostics>,
}

impl MethodForecast {
    pub fn width(&self, day: usize) -> f64 {
        self.days[day].width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProspectiveReport {
    pub fit_start: NaiveDate,
    pub forecast_start: NaiveDate,
    pub horizon: usize,
    pub forecasts: Vec<MethodForecast>,
    pub anomalies: Vec<AnomalyReport>,
}

impl ProspectiveReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Forecasts for {} days from {} (fit from {})\n",
            self.horizon, self.forecast_start, self.fit_start
        );
        let _ = writeln!(
            out,
            "{:<24} {:<18} {:>12} {:>12} {:>12} {:>9}",
            "site", "method", "day-1 mean", "day-1 width", "last width", "MAE"
        );
        for f in &self.forecasts {
            let mae = f.mae.map_or("-".to_string(), |m| format!("{m:.2}"));
            let _ = writeln!(
                out,
                "{:<24} {:<18} {:>12.1} {:>12.1} {:>12.1} {:>9}",
                f.site,
                f.method,
                f.days[0].mean,
                f.width(0),
                f.width(f.days.len() - 1),
                mae
            );
        }
        out
    }
}

fn gar_method(
    fc: &ForecastResult,
    site: usize,
    name: &str,
    method: &str,
    actual: Option<&[f64]>,
    diagnostics: &FitDiagnostics,
) -> Result<MethodForecast> {
    let days: Vec<Interval> = fc.sites[site]
        .summaries
        .iter()
        .map(|d| Interval {
            mean: d.mean,
            lower: d.p2_5,
            upper: d.p97_5,
        })
        .collect();
    let mae = actual
        .map(|a| mae(&fc.sites[site].point_forecast(), a))
        .transpose()?;
    Ok(MethodForecast {
        site: name.into(),
        method: method.into(),
        days,
        mae,
        diagnostics: Some(diagnostics.clone()),
    })
}

/// GAR forecasts (per site and multi-site) and the rescaled regression
/// baselines, scored against the withheld trailing days when there are any.
pub fn run_prospective(cfg: &ExperimentConfig) -> Result<ProspectiveReport> {
    cfg.check_paths()?;
    let (all, anomalies) = load_sites(cfg)?;
    let p = &cfg.prospective;
    let horizon = cfg.split.horizon;
    let len = all[0].len();
    if p.holdout_days > 0 && p.holdout_days < horizon {
        return Err(Error::Config(format!(
            "holdout_days ({}) must be 0 or at least the horizon ({horizon})",
            p.holdout_days
        )));
    }
    if len <= p.holdout_days {
        return Err(Error::Data(format!(
            "{len} days of data cannot withhold {}",
            p.holdout_days
        )));
    }
    let avail = len - p.holdout_days;
    let fit_from = if p.train_days == 0 || p.train_days >= avail {
        0
    } else {
        avail - p.train_days
    };
    let history: Vec<CountSeries> = all.iter().map(|s| s.slice(0..avail)).collect();
    let train: Vec<CountSeries> = all.iter().map(|s| s.slice(fit_from..avail)).collect();
    let actual: Vec<Option<Vec<f64>>> = all
        .iter()
        .map(|s| {
            (p.holdout_days > 0).then(|| {
                s.counts[avail..avail + horizon]
                    .iter()
                    .map(|&c| c as f64)
                    .collect()
            })
        })
        .collect();

    let state = match (&cfg.data.state, p.baselines) {
        (Some(path), true) => {
            let mut st = ingest_csv(path)?;
            if st.len() != 1 {
                return Err(Error::Data("state file must hold a single series".into()));
            }
            Some(st.remove(0))
        }
        (None, true) => {
            return Err(Error::Config(
                "baselines requested but no state series configured ([data] state)".into(),
            ))
        }
        _ => None,
    };
    let external = match (&cfg.data.external_forecast, &state) {
        (Some(path), Some(_)) => Some(ExternalStateForecast::read_csv(path)?),
        _ => None,
    };

    let sampler = cfg.sampler();
    let eval = &cfg.evaluation;
    let out_dir = cfg.output_dir.join("prospective");
    std::fs::create_dir_all(&out_dir)?;
    let forecast_start = history[0].end();
    let mut forecasts = Vec::new();

    let single_cfg = ModelConfig {
        latent: LatentChoice::Gar,
        multi_site: false,
        ..cfg.model.clone()
    };
    for (h, site) in train.iter().enumerate() {
        let spec = single_cfg.spec(1, site.len())?;
        let label = format!("{}-GAR", site.site);
        let fit = fit_series(
            &label,
            &spec,
            std::slice::from_ref(site),
            &sampler,
            eval.rhat_threshold,
        )?;
        write_fit(&out_dir, &fit)?;
        let fc = crate::forecast::draw_forecasts(
            &fit.samples,
            &fit.spec,
            horizon,
            sampler.seed.wrapping_add(1),
        )?;
        write_forecast_csv(
            &out_dir.join(format!("forecast_{}_gar.csv", file_label(&site.site))),
            forecast_start,
            &summary_rows(&fc, 0),
        )?;
        forecasts.push(gar_method(
            &fc,
            0,
            &site.site,
            "gar",
            actual[h].as_deref(),
            &fit.meta.diagnostics,
        )?);
    }

    let multi_cfg = ModelConfig {
        latent: LatentChoice::Gar,
        window: 1,
        multi_site: true,
        ..cfg.model.clone()
    };
    let spec = multi_cfg.spec(train.len(), train[0].len())?;
    let fit = fit_series(
        "multi-site-GAR",
        &spec,
        &train,
        &sampler,
        eval.rhat_threshold,
    )?;
    write_fit(&out_dir, &fit)?;
    let fc = crate::forecast::draw_forecasts(
        &fit.samples,
        &fit.spec,
        horizon,
        sampler.seed.wrapping_add(1),
    )?;
    for (h, site) in train.iter().enumerate() {
        write_forecast_csv(
            &out_dir.join(format!("forecast_{}_multi_gar.csv", file_label(&site.site))),
            forecast_start,
            &summary_rows(&fc, h),
        )?;
        forecasts.push(gar_method(
            &fc,
            h,
            &site.site,
            "multi_gar",
            actual[h].as_deref(),
            &fit.meta.diagnostics,
        )?);
    }

    if let Some(state) = &state {
        for (h, site) in history.iter().enumerate() {
            let mut methods = vec![(
                "ols_rescaled",
                rescaled_ols_baseline(site, state, p.baseline_window, horizon)?,
            )];
            if let Some(ext) = &external {
                methods.push((
                    "external_rescaled",
                    rescaled_external_baseline(site, state, ext, p.baseline_window, horizon)?,
                ));
            }
            for (method, days) in methods {
                let rows: Vec<_> = days
                    .iter()
                    .map(|d| (d.mean, d.lower, d.mean, d.upper))
                    .collect();
                write_forecast_csv(
                    &out_dir.join(format!("forecast_{}_{method}.csv", file_label(&site.site))),
                    forecast_start,
                    &rows,
                )?;
                let point: Vec<f64> = days.iter().map(|d| d.mean).collect();
                let mae = actual[h].as_deref().map(|a| mae(&point, a)).transpose()?;
                forecasts.push(MethodForecast {
                    site: site.site.clone(),
                    method: method.into(),
                    days,
                    mae,
                    diagnostics: None,
                });
            }
        }
    }
    let order = |f: &MethodForecast| {
        all.iter()
            .position(|s| s.site == f.site)
            .unwrap_or(usize::MAX)
    };
    forecasts.sort_by_key(order);

    let report = ProspectiveReport {
        fit_start: train[0].start,
        forecast_start,
        horizon,
        forecasts,
        anomalies,
    };
    write_report(&out_dir, "report", &report, &report.to_text())?;
    Ok(report)
}

/// Scores of a fitted model on the days following its training window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub label: String,
    pub likelihood: LikelihoodKind,
    pub first_day: NaiveDate,
    pub days: usize,
    pub sites: Vec<crate::harness::fit::SiteScore>,
    pub diagnostics: FitDiagnostics,
}

/// Scores saved draws against the `days` observed right after the training
/// window, without resampling the posterior.
pub fn evaluate_fit(
    fit: &crate::harness::fit::FitRecord,
    series: &[CountSeries],
    days: usize,
    seed: u64,
    group_size: usize,
) -> Result<EvaluationReport> {
    let first_day = fit.meta.end();
    let mut future = Vec::with_capacity(fit.meta.sites.len());
    for name in &fit.meta.sites {
        let s = series
            .iter()
            .find(|s| &s.site == name)
            .ok_or_else(|| Error::Data(format!("no data for site {name}")))?;
        let i = s
            .index_of(first_day)
            .ok_or_else(|| Error::Data(format!("site {name} has no data after {first_day}")))?;
        if i + days > s.len() {
            return Err(Error::Data(format!(
                "site {name} has {} days after training, need {days}",
                s.len() - i
            )));
        }
        future.push(s.counts[i..i + days].to_vec());
    }
    let (_, sites) = score_fit(fit, &future, seed, group_size)?;
    Ok(EvaluationReport {
        label: fit.meta.label.clone(),
        likelihood: fit.meta.likelihood,
        first_day,
        days,
        sites,
        diagnostics: fit.meta.diagnostics.clone(),
    })
}
