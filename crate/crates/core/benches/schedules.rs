use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serocontact::bootstrap::{run_bootstrap, BootstrapSpec};
use serocontact::contact::{SmoothingSettings, SURFACE_BANDS};
use serocontact::data::{AgeGrid, ContactFilter, Demography};
use serocontact::foi::PiecewiseFoi;
use serocontact::par::Schedule;
use serocontact::pipeline::estimate_contact_rates;
use serocontact::simulate::{contact_matrix_from_fn, simulate_contact_survey, simulate_serology, PrevalenceSpec};

fn bootstrap(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth = contact_matrix_from_fn(SURFACE_BANDS, |a, b| (0.03 + 0.3 * (-((a - b) / 10.0).powi(2)).exp()).ln()).unwrap();
    let bands: Vec<usize> = (0..300).map(|i| i % 80).collect();
    let survey = simulate_contact_survey(&truth, &bands, 3.0, &mut rng).unwrap();
    let foi = PiecewiseFoi::new(AgeGrid::school_classes(), vec![0.2, 0.25, 0.15, 0.05, 0.03, 0.02]).unwrap();
    let ages: Vec<f64> = (0..1000).map(|i| 0.6 + 79.0 * f64::from(i) / 1000.0).collect();
    let serology = simulate_serology(&PrevalenceSpec::Foi(foi), &ages, "s", &mut rng).unwrap();
    let d = Demography::belgium_2003();
    let point = estimate_contact_rates(
        &survey,
        ContactFilter::C1,
        &SmoothingSettings::default(),
        &d,
        &AgeGrid::school_classes(),
    )
    .unwrap();
    let models = ["C1", "M2", "M6"].iter().map(|m| m.parse().unwrap()).collect();
    let mut spec = BootstrapSpec::new(16, 7, models, SmoothingSettings::fixed_from(&point.surface));

    let mut group = c.benchmark_group("bootstrap_16");
    group.sample_size(10);
    for schedule in [Schedule::Serial, Schedule::Parallel] {
        spec.schedule = schedule;
        group.bench_function(format!("{schedule:?}").to_lowercase(), |b| {
            b.iter(|| run_bootstrap(&spec, &survey, &serology, None, &d).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bootstrap);
criterion_main!(benches);
