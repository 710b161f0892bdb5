use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serocontact::bootstrap::{run_bootstrap, BootstrapSpec};
use serocontact::contact::{SmoothingSettings, SURFACE_BANDS};
use serocontact::data::{AgeGrid, ContactFilter, ContactSurvey, Demography, SerologyDataset};
use serocontact::foi::PiecewiseFoi;
use serocontact::par::Schedule;
use serocontact::pipeline::{estimate_contact_rates, fit_candidates, CandidateModel, ContactEstimate};
use serocontact::selection::{akaike_table, ModelFitSummary};
use serocontact::simulate::{contact_matrix_from_fn, simulate_contact_survey, simulate_serology, PrevalenceSpec};

fn inputs() -> (ContactSurvey, SerologyDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let truth = contact_matrix_from_fn(SURFACE_BANDS, |a, b| (0.03 + 0.3 * (-((a - b) / 10.0).powi(2)).exp()).ln()).unwrap();
    let bands: Vec<usize> = (0..400).map(|i| i % 80).collect();
    let survey = simulate_contact_survey(&truth, &bands, 3.0, &mut rng).unwrap();
    let foi = PiecewiseFoi::new(AgeGrid::school_classes(), vec![0.2, 0.25, 0.15, 0.05, 0.03, 0.02]).unwrap();
    let ages: Vec<f64> = (0..1500).map(|i| 0.6 + 79.0 * f64::from(i) / 1500.0).collect();
    let serology = simulate_serology(&PrevalenceSpec::Foi(foi), &ages, "s", &mut rng).unwrap();
    (survey, serology)
}

fn models() -> Vec<CandidateModel> {
    ["C1", "M2", "M6", "W1"].iter().map(|m| m.parse().unwrap()).collect()
}

fn point(survey: &ContactSurvey) -> ContactEstimate {
    let d = Demography::belgium_2003();
    estimate_contact_rates(survey, ContactFilter::C1, &SmoothingSettings::default(), &d, &AgeGrid::school_classes())
        .unwrap()
}

#[test]
fn point_fits_and_selection() {
    let (survey, serology) = inputs();
    let d = Demography::belgium_2003();
    let g = AgeGrid::school_classes();
    let contacts = vec![point(&survey)];
    let fits = fit_candidates(&models(), &contacts, &serology, &d, &g, Schedule::Serial);
    let again = fit_candidates(&models(), &contacts, &serology, &d, &g, Schedule::Parallel);
    let summaries: Vec<ModelFitSummary> = fits
        .iter()
        .map(|f| {
            let f = f.as_ref().unwrap();
            ModelFitSummary::new(&f.name, f.fit.n_params, f.fit.loglik, f.fit.n_obs, Some(f.fit.r0))
        })
        .collect();
    for (a, b) in fits.iter().zip(&again) {
        assert_eq!(a.as_ref().unwrap().fit.params, b.as_ref().unwrap().fit.params);
    }
    let names: Vec<&str> = summaries.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["C1", "M2", "M6", "W1"]);
    let table = akaike_table(&summaries).unwrap();
    assert!((table.iter().map(|r| r.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    // M2 nests the constant model
    assert!(summaries[1].loglik >= summaries[0].loglik - 1e-6);
    assert!(summaries.iter().all(|s| s.r0.unwrap() > 1.0));
}

#[test]
fn bootstrap_is_deterministic_across_schedules() {
    let (survey, serology) = inputs();
    let d = Demography::belgium_2003();
    let smoothing = SmoothingSettings::fixed_from(&point(&survey).surface);
    let mut spec = BootstrapSpec::new(50, 2024, models(), smoothing);
    spec.schedule = Schedule::Serial;
    let serial = run_bootstrap(&spec, &survey, &serology, None, &d).unwrap();
    spec.schedule = Schedule::Parallel;
    let parallel = run_bootstrap(&spec, &survey, &serology, None, &d).unwrap();
    assert_eq!(serial.replicates, parallel.replicates);
    assert_eq!(serial.converged() + serial.failed(), 50);
    assert_eq!(serial.model_names, ["C1", "M2", "M6", "W1"]);

    let ci = serial.r0_ci(0).unwrap();
    assert!(ci.lower <= ci.upper);
    let q = serial.param_values(0, 0);
    assert_eq!(q.len(), serial.converged());
    assert!(q.iter().all(|&x| x > 0.0));

    spec.seed = 2025;
    let other = run_bootstrap(&spec, &survey, &serology, None, &d).unwrap();
    assert_ne!(other.replicates, serial.replicates);
}

#[test]
fn bootstrap_without_noise_reproduces_point_estimate() {
    let (survey, serology) = inputs();
    let d = Demography::belgium_2003();
    let g = AgeGrid::school_classes();
    let est = point(&survey);
    let mut spec = BootstrapSpec::new(1, 5, models(), SmoothingSettings::fixed_from(&est.surface));
    spec.jitter = false;
    spec.resample = false;
    let run = run_bootstrap(&spec, &survey, &serology, None, &d).unwrap();
    assert_eq!(run.converged(), 1);
    let fits = fit_candidates(&models(), &[est], &serology, &d, &g, Schedule::Serial);
    for (m, f) in fits.iter().enumerate() {
        let f = f.as_ref().unwrap();
        let b = &run.replicates[0].estimates[m];
        assert!((b.loglik - f.fit.loglik).abs() < 1e-6, "{}: {} vs {}", f.name, b.loglik, f.fit.loglik);
        assert!((b.r0 / f.fit.r0 - 1.0).abs() < 1e-4, "{}: {} vs {}", f.name, b.r0, f.fit.r0);
    }
}
