//! Hyperparameter selection on a validation block, then a refit on training
//! plus validation for test scoring.

use serde::Serialize;

use crate::data::{split, CountSeries, SplitSpec};
use crate::error::{Error, Result};
use crate::harness::config::{EvalConfig, ModelConfig};
use crate::harness::fit::{fit_series, score_fit, FitRecord, SiteScore};
use crate::inference::SamplerConfig;

/// One hyperparameter value to try.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridValue {
    Window(usize),
    MuEll(f64),
}

impl GridValue {
    pub fn apply(&self, model: &ModelConfig) -> ModelConfig {
        let mut m = model.clone();
        match *self {
            GridValue::Window(w) => m.window = w,
            GridValue::MuEll(mu) => m.mu_ell = mu,
        }
        m
    }

    fn key(&self) -> f64 {
        match *self {
            GridValue::Window(w) => w as f64,
            GridValue::MuEll(mu) => mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub value: GridValue,
    /// Mean over sites of the pooled validation score.
    pub score: f64,
    pub sites: Vec<SiteScore>,
    pub max_rhat: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSearch {
    pub points: Vec<GridPoint>,
    pub best: GridValue,
}

/// Index of the best point: highest score among unflagged points (all
/// points if every one is flagged), ties going to the smaller value.
pub fn select_best(points: &[GridPoint]) -> Option<usize> {
    let any_clean = points.iter().any(|p| !p.flagged);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].value.key().total_cmp(&points[b].value.key()));
    let mut best: Option<usize> = None;
    for i in order {
        let p = &points[i];
        if any_clean && p.flagged {
            continue;
        }
        match best {
            Some(b) if !(p.score > points[b].score) => {}
            _ if p.score.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Fits each value on the training block and scores the validation block.
pub fn grid_search(
    label: &str,
    series: &[CountSeries],
    model: &ModelConfig,
    values: &[GridValue],
    split_spec: &SplitSpec,
    sampler: &SamplerConfig,
    eval: &EvalConfig,
) -> Result<GridSearch> {
    if values.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let len = series.first().map_or(0, CountSeries::len);
    let parts = split(len, split_spec)?;
    let val: Vec<Vec<u64>> = series
        .iter()
        .map(|s| s.counts[parts.val.clone()].to_vec())
        .collect();
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let m = v.apply(model);
        let spec = m.spec(series.len(), parts.train.len())?;
        let fit = fit_series(
            &format!("{label}-{v:?}"),
            &spec,
            series,
            sampler,
            eval.rhat_threshold,
        )?;
        let (_, sites) = score_fit(&fit, &val, sampler.seed.wrapping_add(1), eval.group_size)?;
        let score = sites.iter().map(|s| s.heldout.mean).sum::<f64>() / sites.len() as f64;
        log::info!("{label} {v:?}: validation score {score:.4}");
        points.push(GridPoint {
            value: *v,
            score,
            sites,
            max_rhat: fit.meta.diagnostics.max_rhat,
            flagged: fit.flagged(eval.max_flagged_fraction),
        });
    }
    let best = points[select_best(&points)
        .ok_or_else(|| Error::Sampler("no grid value produced a score".into()))?]
    .value;
    Ok(GridSearch { points, best })
}

/// Refit with `model` on training plus validation and score the test block.
pub fn refit_and_test(
    label: &str,
    series: &[CountSeries],
    model: &ModelConfig,
    split_spec: &SplitSpec,
    sampler: &SamplerConfig,
    eval: &EvalConfig,
) -> Result<(FitRecord, Vec<SiteScore>)> {
    let len = series.first().map_or(0, CountSeries::len);
    let parts = split(len, split_spec)?;
    let spec = model.spec(series.len(), parts.train_val().len())?;
    let fit = fit_series(label, &spec, series, sampler, eval.rhat_threshold)?;
    let test: Vec<Vec<u64>> = series
        .iter()
        .map(|s| s.counts[parts.test.clone()].to_vec())
        .collect();
    let (_, scores) = score_fit(&fit, &test, sampler.seed.wrapping_add(1), eval.group_size)?;
    Ok((fit, scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(value: GridValue, score: f64, flagged: bool) -> GridPoint {
        GridPoint {
            value,
            score,
            sites: vec![],
            max_rhat: 1.0,
            flagged,
        }
    }

    #[test]
    fn single_value_wins() {
        assert_eq!(
            select_best(&[point(GridValue::Window(3), -9.0, true)]),
            Some(0)
        );
    }

    #[test]
    fn argmax_with_ties_and_flags() {
        let pts = [
            point(GridValue::Window(1), -3.0, false),
            point(GridValue::Window(2), -2.5, false),
        ];
        assert_eq!(select_best(&pts), Some(1));
        let pts = [
            point(GridValue::Window(5), -2.5, false),
            point(GridValue::Window(2), -2.5, false),
        ];
        assert_eq!(select_best(&pts), Some(1));
        let pts = [
            point(GridValue::MuEll(0.0), -1.0, true),
            point(GridValue::MuEll(5.0), -4.0, false),
        ];
        assert_eq!(select_best(&pts), Some(1));
        let pts = [
            point(GridValue::MuEll(0.0), -1.0, true),
            point(GridValue::MuEll(5.0), -4.0, true),
        ];
        assert_eq!(select_best(&pts), Some(0));
    }
}
