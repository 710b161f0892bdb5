use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use serocontact::bootstrap::{run_bootstrap, BootstrapSpec, Interval};
use serocontact::contact::{reciprocity_residual, SmoothSurface, SmoothingSettings};
use serocontact::data::{
    compute_diary_weights, load_contact_survey, load_serology, write_serology, ContactFilter, ContactSurvey,
    SerologyDataset,
};
use serocontact::foi::{fit_piecewise_foi, prevalence_at_age, FoiFit, PiecewiseFoi};
use serocontact::pipeline::{estimate_contact_rates, fit_candidates, required_filters, CandidateModel, ContactEstimate};
use serocontact::selection::{akaike_table, bootstrap_model_average, model_average_r0, AkaikeRow, ModelFitSummary};
use serocontact::simulate::{
    ages_from_counts, allocate_by_population, augment_serology, simulate_serology as draw_serology, AugmentSize, PrevalenceSpec,
};

use crate::config::{existing, RunConfig};
use crate::report::{write_csv, write_json, write_matrix};
use crate::{CliError, Globals};

fn serology(cfg: &RunConfig, min_age: f64, max_age: f64) -> Result<SerologyDataset, CliError> {
    let path = cfg.path(&cfg.data.serology, "serology")?;
    Ok(load_serology(path, min_age, max_age)?)
}

fn survey(cfg: &RunConfig) -> Result<ContactSurvey, CliError> {
    let p = cfg.path(&cfg.data.participants, "participants")?;
    let c = cfg.path(&cfg.data.contacts, "contacts")?;
    Ok(load_contact_survey(p, c)?)
}

#[derive(Serialize)]
struct FoiReport<'a> {
    records: usize,
    excluded_below_min: usize,
    excluded_above_max: usize,
    fit: &'a FoiFit,
}

pub fn fit_foi(cfg: &RunConfig, g: &Globals) -> Result<(), CliError> {
    let d = cfg.demography(None)?;
    let data = serology(cfg, d.maternal_antibody_age, d.life_expectancy)?;
    let grid = cfg.grid()?;
    let fit = fit_piecewise_foi(&data, &grid)?;
    write_json(
        &g.out.join("foi_report.json"),
        &FoiReport {
            records: data.len(),
            excluded_below_min: data.excluded_below_min,
            excluded_above_max: data.excluded_above_max,
            fit: &fit,
        },
    )?;
    write_curve(&g.out.join("foi_curve.csv"), &fit.foi)?;
    println!(
        "lambda = {:?}, loglik = {:.3} ({} records)",
        fit.foi.lambdas(),
        fit.loglik,
        data.len()
    );
    Ok(())
}

/// Prevalence and force of infection on a 0.1-year grid over the classes.
fn write_curve(path: &std::path::Path, foi: &PiecewiseFoi) -> Result<(), CliError> {
    let (lo, hi) = (foi.grid().lower(), foi.grid().upper());
    let steps = ((hi - lo) * 10.0).round() as usize;
    let rows = (0..=steps)
        .map(|k| {
            let a = (lo * 10.0 + k as f64).round() / 10.0;
            Ok(vec![
                format!("{a:.1}"),
                prevalence_at_age(foi, a)?.to_string(),
                foi.rate_at_age(a).to_string(),
            ])
        })
        .collect::<serocontact::Result<Vec<_>>>()?;
    write_csv(path, &["age".into(), "prevalence".into(), "foi".into()], &rows)
}

fn weighted_survey(cfg: &RunConfig) -> Result<(ContactSurvey, Option<serocontact::data::HouseholdCensus>), CliError> {
    let census = cfg.census()?;
    let mut s = survey(cfg)?;
    if let Some(c) = &census {
        s = compute_diary_weights(&s, c)?;
    }
    Ok((s, census))
}

#[derive(Serialize)]
struct SmoothReport<'a> {
    filter: ContactFilter,
    participants: usize,
    contacts: usize,
    reciprocity_residual: f64,
    surface: &'a SmoothSurface,
}

pub fn smooth_contacts(cfg: &RunConfig, g: &Globals) -> Result<(), CliError> {
    let (survey, census) = weighted_survey(cfg)?;
    let d = cfg.demography(census.as_ref())?;
    let filter = cfg.filter()?;
    let est = estimate_contact_rates(&survey, filter, &cfg.smoothing()?, &d, &cfg.grid()?)?;
    write_estimate(g, &est)?;
    let kept = serocontact::data::filter_contacts(&survey, filter);
    let report = SmoothReport {
        filter,
        participants: survey.participants.len(),
        contacts: kept.participants.iter().map(|p| p.contacts.len()).sum(),
        reciprocity_residual: reciprocity_residual(&est.symmetric, &est.band_population),
        surface: &est.surface,
    };
    write_json(&g.out.join(format!("surface_{filter}.json")), &report)?;
    println!(
        "{filter}: {} contacts from {} participants, dispersion {:.3}, edf {:.1}",
        report.contacts, report.participants, est.surface.dispersion, est.surface.edf
    );
    Ok(())
}

fn write_estimate(g: &Globals, est: &ContactEstimate) -> Result<(), CliError> {
    let f = est.filter;
    let bands = est.raw.grid.labels();
    write_matrix(&g.out.join(format!("contacts_raw_{f}.csv")), &bands, &est.raw.m)?;
    write_matrix(&g.out.join(format!("contacts_symmetric_{f}.csv")), &bands, &est.symmetric.m)?;
    write_matrix(&g.out.join(format!("contact_rates_{f}.csv")), &est.rates.grid.labels(), &est.rates.c)
}

/// Contact estimates for the filters the candidates use; none are needed
/// (and no survey is read) for mixing patterns alone.
fn contact_estimates(
    cfg: &RunConfig,
    candidates: &[CandidateModel],
    smoothing: &SmoothingSettings,
) -> Result<(ContactSurvey, Option<serocontact::data::HouseholdCensus>, Vec<ContactEstimate>), CliError> {
    let filters = required_filters(candidates);
    if filters.is_empty() {
        return Ok((ContactSurvey::default(), cfg.census()?, Vec::new()));
    }
    let (survey, census) = weighted_survey(cfg)?;
    let d = cfg.demography(census.as_ref())?;
    let grid = cfg.grid()?;
    let est = filters
        .into_iter()
        .map(|f| estimate_contact_rates(&survey, f, smoothing, &d, &grid))
        .collect::<serocontact::Result<Vec<_>>>()?;
    Ok((survey, census, est))
}

#[derive(Serialize)]
struct ModelReport {
    name: String,
    candidate: CandidateModel,
    k: usize,
    params: Vec<f64>,
    loglik: f64,
    aic: f64,
    bic: f64,
    r0: f64,
    identifiable: bool,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct Failure {
    name: String,
    error: String,
}

#[derive(Serialize)]
struct FitModelsReport {
    models: Vec<ModelReport>,
    failures: Vec<Failure>,
    averaged_r0: f64,
}

fn selection_rows(table: &[AkaikeRow]) -> Vec<Vec<String>> {
    table
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                s.name.clone(),
                s.k.to_string(),
                s.loglik.to_string(),
                s.aic.to_string(),
                r.delta.to_string(),
                r.weight.to_string(),
                r.evidence_ratio.to_string(),
                s.r0.map_or(String::new(), |x| x.to_string()),
            ]
        })
        .collect()
}

const SELECTION_HEADER: [&str; 8] = ["model", "K", "loglik", "AIC", "delta", "weight", "evidence_ratio", "R0"];

pub fn fit_models(cfg: &RunConfig, g: &Globals) -> Result<(), CliError> {
    let candidates = cfg.candidates()?;
    let smoothing = cfg.smoothing()?;
    let grid = cfg.grid()?;
    let (_, census, contacts) = contact_estimates(cfg, &candidates, &smoothing)?;
    let d = cfg.demography(census.as_ref())?;
    let data = serology(cfg, d.maternal_antibody_age, d.life_expectancy)?;
    for est in &contacts {
        write_estimate(g, est)?;
    }
    let results = fit_candidates(&candidates, &contacts, &data, &d, &grid, g.schedule);

    let mut models = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (c, r) in candidates.iter().zip(results) {
        match r {
            Ok(f) => {
                let labels = grid.labels();
                write_matrix(&g.out.join(format!("beta_{}.csv", f.name)), &labels, &f.fit.beta)?;
                for w in &f.warnings {
                    eprintln!("warning: {}: {w}", f.name);
                }
                models.push(ModelReport {
                    name: f.name,
                    candidate: f.candidate,
                    k: f.fit.n_params,
                    params: f.fit.params,
                    loglik: f.fit.loglik,
                    aic: f.fit.aic,
                    bic: f.fit.bic,
                    r0: f.fit.r0,
                    identifiable: f.fit.identifiable,
                    warnings: f.warnings,
                });
            }
            Err(e) => {
                eprintln!("warning: {c} failed: {e}");
                failures.push(Failure {
                    name: c.to_string(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if models.is_empty() {
        return Err(first_error.map_or_else(|| CliError::Numerical("no model fitted".into()), CliError::from));
    }
    let summaries: Vec<ModelFitSummary> = models
        .iter()
        .map(|m| ModelFitSummary::new(&m.name, m.k, m.loglik, data.len(), Some(m.r0)))
        .collect();
    let table = akaike_table(&summaries)?;
    let averaged_r0 = model_average_r0(&table)?;
    let header: Vec<String> = SELECTION_HEADER.iter().map(|s| s.to_string()).collect();
    write_csv(&g.out.join("selection.csv"), &header, &selection_rows(&table))?;
    write_json(
        &g.out.join("models.json"),
        &FitModelsReport {
            models,
            failures,
            averaged_r0,
        },
    )?;
    for r in &table {
        println!(
            "{:<4} K={} AIC={:.3} delta={:.3} weight={:.3} R0={:.2}",
            r.summary.name,
            r.summary.k,
            r.summary.aic,
            r.delta,
            r.weight,
            r.summary.r0.unwrap_or(f64::NAN)
        );
    }
    println!("model-averaged R0 = {averaged_r0:.3}");
    Ok(())
}

#[derive(Serialize)]
struct ModelCi {
    name: String,
    r0: Interval,
    params: Vec<Interval>,
}

#[derive(Serialize)]
struct BootstrapSummary {
    seed: u64,
    replicates: usize,
    converged: usize,
    failed: usize,
    level: f64,
    models: Vec<ModelCi>,
    averaged_r0: Option<Interval>,
}

pub fn bootstrap(cfg: &RunConfig, g: &Globals) -> Result<(), CliError> {
    let b = &cfg.bootstrap;
    if b.replicates == 0 {
        return Err(CliError::Usage("bootstrap.replicates must be at least 1".into()));
    }
    let candidates = cfg.candidates()?;
    let settings = cfg.smoothing()?;
    let (survey, census, point) = contact_estimates(cfg, &candidates, &settings)?;
    let d = cfg.demography(census.as_ref())?;
    let data = serology(cfg, d.maternal_antibody_age, d.life_expectancy)?;
    // reuse the point estimate's smoothing when there is a single surface
    let smoothing = match point.as_slice() {
        [one] if !b.reselect_smoothing => SmoothingSettings::fixed_from(&one.surface),
        _ => settings,
    };
    let mut spec = BootstrapSpec::new(b.replicates, g.seed, candidates, smoothing);
    spec.grid = cfg.grid()?;
    spec.level = b.level;
    spec.schedule = g.schedule;
    spec.jitter = b.jitter;
    spec.resample = b.resample;
    let run = run_bootstrap(&spec, &survey, &data, census.as_ref(), &d)?;

    let n_params = run
        .replicates
        .iter()
        .flat_map(|r| r.estimates.iter().map(|e| e.params.len()))
        .max()
        .unwrap_or(0);
    let mut header: Vec<String> = ["replicate", "converged", "model", "k", "loglik", "r0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n_params).map(|p| format!("param_{p}")));
    header.push("failure".into());
    let mut rows = Vec::new();
    for r in &run.replicates {
        if !r.converged {
            let mut row = vec![r.index.to_string(), "false".into()];
            row.extend(std::iter::repeat_n(String::new(), 4 + n_params));
            row.push(r.failure.clone().unwrap_or_default());
            rows.push(row);
            continue;
        }
        for (name, e) in run.model_names.iter().zip(&r.estimates) {
            let mut row = vec![
                r.index.to_string(),
                "true".into(),
                name.clone(),
                e.k.to_string(),
                e.loglik.to_string(),
                e.r0.to_string(),
            ];
            row.extend((0..n_params).map(|p| e.params.get(p).map_or(String::new(), |x| x.to_string())));
            row.push(String::new());
            rows.push(row);
        }
    }
    write_csv(&g.out.join("replicates.csv"), &header, &rows)?;

    let models = (0..run.model_names.len())
        .map(|m| {
            let k = run.replicates.iter().find(|r| r.converged).map_or(0, |r| r.estimates[m].params.len());
            Ok(ModelCi {
                name: run.model_names[m].clone(),
                r0: run.r0_ci(m)?,
                params: (0..k).map(|p| run.param_ci(m, p)).collect::<serocontact::Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let averaged_r0 = if run.model_names.len() > 1 {
        let per_model: Vec<_> = (0..run.model_names.len()).map(|m| run.replicate_fits(m)).collect();
        Some(bootstrap_model_average(&per_model, b.level)?.interval)
    } else {
        None
    };
    write_json(
        &g.out.join("bootstrap_summary.json"),
        &BootstrapSummary {
            seed: g.seed,
            replicates: b.replicates,
            converged: run.converged(),
            failed: run.failed(),
            level: b.level,
            models,
            averaged_r0,
        },
    )?;
    println!("converged {}/{}", run.converged(), b.replicates);
    Ok(())
}

pub fn simulate_serology(cfg: &RunConfig, g: &Globals) -> Result<(), CliError> {
    let s = &cfg.simulate;
    let spec = match (s.prevalence, &s.foi) {
        (Some(p), None) => PrevalenceSpec::Constant(p),
        (None, Some(l)) => PrevalenceSpec::Foi(PiecewiseFoi::new(cfg.grid()?, l.clone())?),
        _ => {
            return Err(CliError::Usage(
                "set exactly one of simulate.prevalence and simulate.foi".into(),
            ))
        }
    };
    let [lo, hi] = s
        .age_range
        .ok_or_else(|| CliError::Usage("simulate.age_range is required".into()))?;
    let census = cfg.census()?;
    let d = cfg.demography(census.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let data = if let Some(base) = &s.augment {
        let base = load_serology(existing(base, "augment")?, -1.0, f64::INFINITY)?;
        let size = s.total.map_or(AugmentSize::MatchDensity, AugmentSize::Total);
        augment_serology(&base, &spec, lo, hi, size, &d.population_by_age, &mut rng)?
    } else {
        let counts = match (s.n_per_age, s.n) {
            (Some(k), None) => vec![k; hi.saturating_sub(lo) as usize],
            (None, Some(n)) => allocate_by_population(n, lo, hi, &d.population_by_age)?,
            _ => {
                return Err(CliError::Usage(
                    "set exactly one of simulate.n_per_age and simulate.n".into(),
                ))
            }
        };
        let ages = ages_from_counts(lo, &counts, &mut rng);
        draw_serology(&spec, &ages, "sim-", &mut rng)?
    };
    let path = s.output.clone().unwrap_or_else(|| g.out.join("simulated_serology.csv"));
    write_serology(&path, &data)?;
    println!(
        "{} records, immune fraction {:.4}, written to {}",
        data.len(),
        data.immune_fraction(),
        path.display()
    );
    Ok(())
}
