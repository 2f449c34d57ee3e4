mod common;

use common::*;
use oscloc::{likelihood_at, scan, spectral_stats, Hypothesis, Localizer, ReducedModel, ScanResult};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn ambient_data_gives_small_amplitudes() {
    let toy = Grid::bundled("line5");
    let short = toy.scan_all(&toy.ambient(200.0, 31), &toy.truth);
    let long = toy.scan_all(&toy.ambient(800.0, 32), &toy.truth);
    let gammas = |s: &ScanResult| s.entries.iter().map(|e| e.gamma_hat).collect::<Vec<_>>();
    let (ms, ml) = (median(gammas(&short)), median(gammas(&long)));
    assert!(gammas(&short).iter().all(|g| *g >= 0.0 && *g < 0.2));
    // γ̂ = O(N^{-1/2}): four times the data halves the typical amplitude.
    assert!((0.35..0.65).contains(&(ml / ms)), "median γ̂ {ms} -> {ml}");
    // Without forcing every hypothesis stays close to the baseline.
    let spread = short.winner().unwrap().loglik - short.ranked().last().unwrap().loglik;
    assert!(spread < 1e-2 * short.winner().unwrap().loglik.abs());
}

#[test]
fn generator_sources_are_found() {
    let toy = Grid::bundled("line5");
    for (source, seed) in [(1, 41), (5, 42)] {
        let traj = toy.forced(&forcing(source, 0.3, 0.48), EVENT_SECONDS, seed);
        let result = toy.scan_all(&traj, &toy.truth);
        let top = result.winner().unwrap();
        assert_eq!((top.source, top.bin), (source, 96));
        assert!((top.frequency - 96.0 / (9999.0 * 0.02)).abs() < 1e-12);
        // γ̂ is unbiased with a spread of about 0.03 here; allow four of those.
        assert!((top.gamma_hat - 0.3).abs() < 0.12, "{}", top.gamma_hat);
        assert_eq!(result.winner_group, vec![source]);
    }
}

#[test]
fn recovered_phase_matches_forcing() {
    let toy = Grid::bundled("line5");
    for (source, phase) in [(1, 0.2), (3, 0.7)] {
        let mut f = forcing(source, 0.5, 0.48);
        f.phase = phase;
        let traj = toy.forced(&f, EVENT_SECONDS, 43);
        let cache = spectral_stats(&traj, None).unwrap();
        let fit = likelihood_at(&cache, &toy.model, &toy.truth, Hypothesis { source, bin: 96 }).unwrap();
        let diff = (fit.phi_hat - phase).rem_euclid(1.0);
        assert!(diff.min(1.0 - diff) < 0.02, "{} vs {phase}", fit.phi_hat);
    }
}

#[test]
fn negating_the_gain_shifts_phase_by_half_a_cycle() {
    let toy = Grid::bundled("line5");
    let traj = toy.forced(&forcing(3, 0.3, 0.48), EVENT_SECONDS, 44);
    let cache = spectral_stats(&traj, None).unwrap();
    let mut flipped: ReducedModel = toy.model.clone();
    let col = flipped.column_of(3).unwrap();
    flipped.gamma.column_mut(col).neg_mut();
    for bin in [5, 96, 1000, 4000] {
        let hyp = Hypothesis { source: 3, bin };
        let a = likelihood_at(&cache, &toy.model, &toy.truth, hyp).unwrap();
        let b = likelihood_at(&cache, &flipped, &toy.truth, hyp).unwrap();
        assert!(rel_err(b.loglik, a.loglik) < 1e-12);
        assert!(rel_err(b.gamma_hat, a.gamma_hat) < 1e-12);
        let shift = (b.phi_hat - a.phi_hat).rem_euclid(1.0);
        assert!((shift - 0.5).abs() < 1e-9, "bin {bin}: {} vs {}", a.phi_hat, b.phi_hat);
    }
}

#[test]
fn degenerate_sources_agree_at_every_bin() {
    let ieee = Grid::bundled("ieee57");
    let traj = ieee.forced(&forcing(33, 3.0, 2.0), EVENT_SECONDS, 45);
    let cache = spectral_stats(&traj, None).unwrap();
    let result = scan(&cache, &ieee.model, &ieee.truth, &[32, 33], None).unwrap();
    let bins = cache.bins.len();
    for (a, b) in result.entries[..bins].iter().zip(&result.entries[bins..]) {
        assert_eq!((a.source, b.source, a.bin), (32, 33, b.bin));
        assert!(rel_err(a.loglik, b.loglik) < 1e-9);
    }
    assert_eq!(result.winner_group, vec![32, 33]);
    assert_eq!(result.winner().unwrap().bin, 400);
}

#[test]
fn moment_form_matches_projection() {
    let toy = Grid::bundled("line5");
    let traj = toy.forced(&forcing(4, 0.3, 0.48), EVENT_SECONDS, 46);
    let cache = spectral_stats(&traj, None).unwrap();
    let localizer = Localizer::new(&cache, &toy.model, &toy.truth).unwrap();
    let shape_inv = toy.model.sigma_shape.clone().try_inverse().unwrap();
    for source in 1..=5 {
        for bin in [1, 96, 777, 4999] {
            let hyp = Hypothesis { source, bin };
            let col = toy.model.column_of(source).unwrap();
            let w = nalgebra::DVector::from_fn(2, |i, _| toy.model.gamma[(i, col)] / toy.truth.inertia[i]);
            let c = &shape_inv * &w;
            let r = localizer.residual_spectrum(bin).unwrap();
            let z: nalgebra::Complex<f64> = c.iter().zip(r.iter()).map(|(a, b)| b * *a).sum();
            let moments = localizer.projection_power_from_moments(&toy.truth, hyp).unwrap();
            assert!(rel_err(moments, z.norm_sqr()) < 1e-9, "{moments} vs {}", z.norm_sqr());

            // The fitted γ̂ is the same projection normalized by wᵀS⁻¹w.
            let fit = localizer.fit(&toy.truth, hyp).unwrap();
            let gamma = 2.0 * moments.sqrt() / ((cache.n as f64).sqrt() * w.dot(&c));
            assert!(rel_err(fit.gamma_hat, gamma) < 1e-9);
        }
    }
}

#[test]
fn candidate_subsets_and_bands_reuse_values() {
    let toy = Grid::bundled("line5");
    let traj = toy.forced(&forcing(2, 0.3, 0.48), EVENT_SECONDS, 47);
    let cache = spectral_stats(&traj, None).unwrap();
    let full = scan(&cache, &toy.model, &toy.truth, &toy.model.bus_ids(), None).unwrap();
    let only = scan(&cache, &toy.model, &toy.truth, &[2], None).unwrap();
    let band = scan(&cache, &toy.model, &toy.truth, &[2], Some(cache.band(0.3, 0.6))).unwrap();
    let lookup = |s: &ScanResult, bin| s.entries.iter().find(|e| e.source == 2 && e.bin == bin).unwrap().loglik;
    assert_eq!(lookup(&only, 96), lookup(&full, 96));
    assert_eq!(lookup(&band, 96), lookup(&full, 96));
    assert_eq!(only.winner().unwrap().bin, 96);
    let f = likelihood_at(&cache, &toy.model, &toy.truth, Hypothesis { source: 2, bin: 96 }).unwrap();
    assert!(rel_err(f.loglik, lookup(&full, 96)) < 1e-12);
}

#[test]
fn thread_count_does_not_change_results() {
    let ieee = Grid::bundled("ieee57");
    let traj = ieee.forced(&forcing(30, 3.0, 2.0), 60.0, 48);
    let cache = spectral_stats(&traj, None).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| scan(&cache, &ieee.model, &ieee.truth, &ieee.model.bus_ids(), None).unwrap())
    };
    let serial = run(1);
    assert_eq!(serial, run(4));
    assert_eq!(serial, run(7));
}

#[test]
fn evidence_grows_with_record_length() {
    // The total log-likelihood gap n·(winner − runner-up) grows with n; the
    // per-sample gap itself settles to a constant.
    let toy = Grid::bundled("line5");
    let f = forcing(3, 0.5, 0.48);
    for seed in 1..=5 {
        let gap = |seconds: f64| {
            let traj = toy.forced(&f, seconds, 500 + seed);
            let result = toy.scan_all(&traj, &toy.truth);
            assert_eq!(result.winner().unwrap().source, 3);
            result.runner_up_gap().unwrap() * result.n as f64
        };
        let (short, long) = (gap(100.0), gap(400.0));
        assert!(long > short, "seed {seed}: {short} -> {long}");
    }
}

#[test]
fn empty_inputs_are_errors() {
    let toy = Grid::bundled("line5");
    let cache = spectral_stats(&toy.ambient(10.0, 1), None).unwrap();
    assert!(scan(&cache, &toy.model, &toy.truth, &[], None).is_err());
    assert!(scan(&cache, &toy.model, &toy.truth, &[1], Some(10..10)).is_err());
    assert!(scan(&cache, &toy.model, &toy.truth, &[42], None).is_err());
}
