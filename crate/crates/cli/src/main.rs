use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use census_core::data::{split, write_csv, CountSeries};
use census_core::forecast::draw_forecasts;
use census_core::harness::config::{ExperimentConfig, LatentChoice};
use census_core::harness::experiments::{evaluate_fit, load_sites};
use census_core::harness::fit::{file_label, fit_series, read_fit, summary_rows, write_fit, write_forecast_csv};
use census_core::harness::grid::{grid_search, refit_and_test, GridValue};
use census_core::harness::{run_prospective, run_retrospective, simulate, FitRecord, SimulationConfig};

/// Bayesian forecasting of daily hospital census counts.
#[derive(Parser, Debug)]
#[command(name = "census", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the configured model to every day except the test block.
    Fit,
    /// Forecast from saved fits.
    Forecast,
    /// Score saved fits on the days after their training window.
    Evaluate,
    /// Select the GAR window or GP time-scale prior on the validation block.
    GridSearch,
    /// Compare GGP, GAR and multi-site GAR on the test block.
    Retrospective,
    /// Forecast past the end of the data with GAR models and baselines.
    Prospective,
    /// Draw synthetic counts from a generative model.
    Simulate {
        /// Simulation settings (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV; the true latents go next to it as JSON.
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => bail!("this command needs --config"),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn fits_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("fits")
}

fn saved_fits(dir: &Path) -> Result<Vec<FitRecord>> {
    let mut metas: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}; run `census fit` first", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("fit_") && n.ends_with(".json"))
        })
        .collect();
    metas.sort();
    if metas.is_empty() {
        bail!("no saved fits in {}", dir.display());
    }
    metas.iter().map(|p| read_fit(p).with_context(|| format!("reading {}", p.display()))).collect()
}

/// Fitting groups: all sites together for multi-site models, else one each.
fn groups(cfg: &ExperimentConfig, series: &[CountSeries]) -> Vec<(String, Vec<CountSeries>)> {
    if cfg.model.multi_site {
        vec![("multi-site-GAR".into(), series.to_vec())]
    } else {
        series.iter().map(|s| (s.site.clone(), vec![s.clone()])).collect()
    }
}

fn cmd_fit(cfg: &ExperimentConfig) -> Result<()> {
    let (series, _) = load_sites(cfg)?;
    let parts = split(series[0].len(), &cfg.split)?;
    let dir = fits_dir(cfg);
    for (label, group) in groups(cfg, &series) {
        let spec = cfg.model.spec(group.len(), parts.train_val().len())?;
        let fit = fit_series(&label, &spec, &group, &cfg.sampler(), cfg.evaluation.rhat_threshold)?;
        let path = write_fit(&dir, &fit)?;
        let d = &fit.meta.diagnostics;
        println!(
            "{label}: {} draws -> {} (max R-hat {:.3}, min ESS {:.0}, divergences {})",
            fit.samples.len(),
            path.display(),
            d.max_rhat,
            d.min_ess,
            d.divergences
        );
    }
    Ok(())
}

fn cmd_forecast(cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.output_dir.join("forecasts");
    std::fs::create_dir_all(&dir)?;
    for fit in saved_fits(&fits_dir(cfg))? {
        let fc = draw_forecasts(&fit.samples, &fit.spec, cfg.split.horizon, cfg.seed.wrapping_add(1))?;
        for (h, site) in fit.meta.sites.iter().enumerate() {
            let path = dir.join(format!("forecast_{}_{}.csv", file_label(&fit.meta.label), file_label(site)));
            write_forecast_csv(&path, fit.meta.end(), &summary_rows(&fc, h))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let (series, _) = load_sites(cfg)?;
    let mut reports = Vec::new();
    for fit in saved_fits(&fits_dir(cfg))? {
        let days = cfg.split.horizon.min(cfg.split.test_days);
        let r = evaluate_fit(&fit, &series, days, cfg.seed.wrapping_add(1), cfg.evaluation.group_size)?;
        for s in &r.sites {
            println!(
                "{:<20} {:<24} {:.3} ± {:.3}  MAE {:.2}",
                r.label, s.site, s.heldout.mean, s.heldout.sem, s.mae
            );
        }
        reports.push(r);
    }
    let path = cfg.output_dir.join("evaluation.json");
    std::fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_grid_search(cfg: &ExperimentConfig) -> Result<()> {
    let (series, _) = load_sites(cfg)?;
    let values: Vec<GridValue> = match cfg.model.latent {
        LatentChoice::Gar => cfg.grid.windows.iter().map(|&w| GridValue::Window(w)).collect(),
        LatentChoice::Ggp => cfg.grid.mu_ell.iter().map(|&m| GridValue::MuEll(m)).collect(),
    };
    let sampler = cfg.sampler();
    let mut results = Vec::new();
    for (label, group) in groups(cfg, &series) {
        let g = grid_search(&label, &group, &cfg.model, &values, &cfg.split, &sampler, &cfg.evaluation)?;
        for p in &g.points {
            println!(
                "{label}: {:?} validation {:.3}{}",
                p.value,
                p.score,
                if p.flagged { " (R-hat flagged)" } else { "" }
            );
        }
        let (fit, test) = refit_and_test(&label, &group, &g.best.apply(&cfg.model), &cfg.split, &sampler, &cfg.evaluation)?;
        write_fit(&cfg.output_dir.join("grid"), &fit)?;
        for s in &test {
            println!("{label}: best {:?}, test {} {:.3} ± {:.3}", g.best, s.site, s.heldout.mean, s.heldout.sem);
        }
        results.push(serde_json::json!({ "label": label, "search": g, "test": test }));
    }
    let path = cfg.output_dir.join("grid").join("grid.json");
    std::fs::create_dir_all(path.parent().expect("has parent"))?;
    std::fs::write(&path, serde_json::to_string_pretty(&results)? + "\n")?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_simulate(spec: &Path, data: &Path, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let sim_cfg: SimulationConfig = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let sim = simulate(&sim_cfg, seed)?;
    if let Some(parent) = data.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_csv(data, &sim.series)?;
    let truth = data.with_extension("truth.json");
    let record = serde_json::json!({ "seed": seed, "config": sim_cfg, "simulation": sim });
    std::fs::write(&truth, serde_json::to_string_pretty(&record)? + "\n")?;
    println!("{} ({} site(s) x {} days), truth in {}", data.display(), sim.series.len(), sim_cfg.days, truth.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { spec, data } => cmd_simulate(spec, data, cli.seed.unwrap_or(0)),
        Command::Fit => cmd_fit(&load_config(&cli)?),
        Command::Forecast => cmd_forecast(&load_config(&cli)?),
        Command::Evaluate => cmd_evaluate(&load_config(&cli)?),
        Command::GridSearch => cmd_grid_search(&load_config(&cli)?),
        Command::Retrospective => {
            let r = run_retrospective(&load_config(&cli)?)?;
            print!("{}", r.to_text());
            Ok(())
        }
        Command::Prospective => {
            let r = run_prospective(&load_config(&cli)?)?;
            print!("{}", r.to_text());
            Ok(())
        }
    }
}
