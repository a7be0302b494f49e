mod common;

use common::*;
use jumpstab::matkit::{kron, spectral_radius, unvec, vec};
use jumpstab::mcsim::{
    sample_initial, simulate_ensemble, trajectory_rng, InitialSampler, Sampling, SimConfig,
};
use jumpstab::propagate::{w2_trajectory, Method, MogOptions};
use jumpstab::stability::{
    contraction_test, general_test, iid_matrix, iid_test, markov_matrix, markov_test, MatrixNorm,
    Verdict,
};
use jumpstab::{
    GaussianComponent, GaussianMixture, JumpLinearSystem, Matrix, SecondMomentState, SwitchingLaw,
};
use proptest::prelude::*;
use rand::Rng;

/// Rescales the modes so the i.i.d. lift has spectral radius `target`.
fn with_radius(sys: &JumpLinearSystem, pi: &[f64], target: f64) -> JumpLinearSystem {
    let rho = spectral_radius(&iid_matrix(sys, pi).unwrap()).unwrap();
    sys.scaled((target / rho).sqrt())
}

#[test]
fn iid_lift_matches_char_poly_oracle() {
    let mut r = rng(30);
    for _ in 0..20 {
        let sys = random_system(&mut r, 3, 2, 1.0);
        let pi = random_probability(&mut r, 3);
        let lift = iid_matrix(&sys, &pi).unwrap();
        let mut oracle = Matrix::zeros(4, 4);
        for (a, p) in sys.modes().iter().zip(&pi) {
            oracle = &oracle + &naive_kron(a, a).scale(*p);
        }
        assert!(lift.approx_eq(&oracle, 1e-13));
        let report = iid_test(&sys, &pi, 1e-9).unwrap();
        assert!(rel_err(report.evidence, oracle_spectral_radius(&oracle)) < 1e-9);
    }
}

#[test]
fn scalar_iid_example() {
    let sys = scalar_system(&[2.0, 0.1]);
    let report = iid_test(&sys, &[0.5, 0.5], 1e-9).unwrap();
    assert!((report.evidence - 2.005).abs() < 1e-12);
    assert_eq!(report.verdict, Verdict::Unstable);
}

#[test]
fn iid_verdict_matches_trajectory() {
    let mut r = rng(31);
    for &target in &[0.3, 0.9, 1.1, 2.0] {
        for _ in 0..5 {
            let m = r.random_range(2..=3);
            let n = r.random_range(1..=3);
            let pi = random_probability(&mut r, m);
            let sys = with_radius(&random_system(&mut r, m, n, 1.0), &pi, target);
            let report = iid_test(&sys, &pi, 1e-9).unwrap();
            assert!((report.evidence - target).abs() < 1e-9);
            let law = SwitchingLaw::Iid { pi: pi.clone() };
            let init = random_mixture(&mut r, n, 2);
            let horizon = 2 * (1e-9f64.ln() / target.ln()).abs().ceil() as usize + 50;
            let traj = w2_trajectory(
                &sys,
                &law,
                &init,
                horizon,
                Method::Moment,
                MogOptions::default(),
            )
            .unwrap();
            let w0 = traj[0].w2;
            if target < 1.0 {
                assert_eq!(report.verdict, Verdict::Stable);
                assert!(traj.iter().any(|t| t.w2 < 1e-9 * w0), "ρ={target}");
            } else {
                assert_eq!(report.verdict, Verdict::Unstable);
                assert!(traj.iter().any(|t| t.w2 > 1e6 * w0), "ρ={target}");
            }
        }
    }
}

#[test]
fn markov_scalar_example() {
    let sys = scalar_system(&[1.2, 0.5]);
    let p = Matrix::new(2, 2, &[0.3, 0.7, 0.7, 0.3]).unwrap();
    let lift = markov_matrix(&sys, &p).unwrap();
    let expected = Matrix::new(2, 2, &[0.432, 1.008, 0.175, 0.075]).unwrap();
    assert!(lift.approx_eq(&expected, 1e-15));
    let root = (0.507 + (0.507f64 * 0.507 + 0.576).sqrt()) / 2.0;
    let report = markov_test(&sys, &p, 1e-9).unwrap();
    assert!((report.evidence - root).abs() < 1e-12);
    assert_eq!(report.verdict, Verdict::Stable);
    assert!(report.notes[0].contains("unique"));
}

/// Exact `E‖x(k)‖²` by enumerating every mode path of a Markov chain.
fn enumerate_markov(
    sys: &JumpLinearSystem,
    p: &Matrix,
    pi0: &[f64],
    phi0: &Matrix,
    k: usize,
) -> f64 {
    let m = sys.m();
    let mut total = 0.0;
    for code in 0..m.pow(k as u32) {
        let path: Vec<usize> = (0..k).map(|t| (code / m.pow(t as u32)) % m).collect();
        let mut prob = pi0[path[0]];
        for t in 1..k {
            prob *= p.get(path[t - 1], path[t]);
        }
        let mut prod = Matrix::identity(sys.n());
        for &j in &path {
            prod = naive_mul(sys.mode(j), &prod);
        }
        total += prob * naive_mul(&naive_mul(&prod, phi0), &prod.transpose()).trace();
    }
    total
}

#[test]
fn markov_lift_propagates_conditional_moments() {
    let mut r = rng(32);
    for _ in 0..10 {
        let m = r.random_range(2..=3);
        let n = r.random_range(1..=2);
        let sys = random_system(&mut r, m, n, 1.0);
        let p = random_stochastic(&mut r, m);
        let pi0 = random_probability(&mut r, m);
        let phi0 = random_psd(&mut r, n, n);
        let lift = markov_matrix(&sys, &p).unwrap();
        let n2 = n * n;
        let mut entries = vec![0.0; m * n2];
        for i in 0..m {
            let a = sys.mode(i);
            let block = vec(&naive_mul(&naive_mul(a, &phi0), &a.transpose()).scale(pi0[i]));
            for t in 0..n2 {
                entries[i * n2 + t] = block.get(t, 0);
            }
        }
        let mut q = Matrix::column(&entries).unwrap();
        for k in 1..=5 {
            let mut second = 0.0;
            for i in 0..m {
                let block: Vec<f64> = (0..n2).map(|t| q.get(i * n2 + t, 0)).collect();
                second += unvec(&Matrix::column(&block).unwrap(), n, n)
                    .unwrap()
                    .trace();
            }
            let oracle = enumerate_markov(&sys, &p, &pi0, &phi0, k);
            assert!(rel_err(second, oracle) < 1e-11, "k={k}");
            q = naive_mul(&lift, &q);
        }
    }
}

#[test]
fn markov_with_identical_rows_reduces_to_iid() {
    let mut r = rng(33);
    for _ in 0..20 {
        let m = r.random_range(2..=3);
        let n = r.random_range(1..=3);
        let sys = random_system(&mut r, m, n, 1.0);
        let pi = random_probability(&mut r, m);
        let p = Matrix::from_rows(&vec![pi.clone(); m]).unwrap();
        let a = markov_test(&sys, &p, 1e-9).unwrap().evidence;
        let b = iid_test(&sys, &pi, 1e-9).unwrap().evidence;
        assert!((a - b).abs() < 1e-8 * b.max(1.0));
    }
}

#[test]
fn single_mode_reduces_to_squared_radius() {
    let mut r = rng(34);
    for n in 1..=4 {
        let a = random_matrix(&mut r, n, n);
        let sys = JumpLinearSystem::new(vec![a.clone()]).unwrap();
        let rho = oracle_spectral_radius(&a);
        let got = iid_test(&sys, &[1.0], 1e-9).unwrap().evidence;
        assert!(rel_err(got, rho * rho) < 1e-8);
        let lifted = spectral_radius(&kron(&a, &a)).unwrap();
        assert!(rel_err(got, lifted) < 1e-10);
    }
}

#[test]
fn general_test_on_iid_law_agrees_with_radius() {
    let mut r = rng(35);
    for &target in &[0.5, 1.5] {
        let pi = random_probability(&mut r, 2);
        let sys = with_radius(&random_system(&mut r, 2, 2, 1.0), &pi, target);
        let report = general_test(&sys, &SwitchingLaw::Iid { pi }, 200, 1e-12).unwrap();
        let want = if target < 1.0 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        };
        assert_eq!(report.verdict, want);
        assert!(
            (report.evidence - target).abs() < 0.05,
            "rate {}",
            report.evidence
        );
    }
}

#[test]
fn general_test_alternating_sequence() {
    // one mode expands in norm, the period product contracts
    let a = Matrix::new(2, 2, &[0.0, 2.0, 0.0, 0.0]).unwrap();
    let b = Matrix::new(2, 2, &[0.0, 0.0, 0.1, 0.0]).unwrap();
    let sys = JumpLinearSystem::new(vec![a, b]).unwrap();
    let law = SwitchingLaw::Sequence {
        indices: vec![1, 2],
    };
    let report = general_test(&sys, &law, 100, 1e-12).unwrap();
    assert_eq!(report.verdict, Verdict::Stable);
}

#[test]
fn contraction_example() {
    let a1 = Matrix::new(2, 2, &[2.0, 0.0, 0.0, 0.5]).unwrap();
    let a2 = Matrix::new(2, 2, &[0.1, 0.0, 0.0, 0.1]).unwrap();
    let sys = JumpLinearSystem::new(vec![a1, a2]).unwrap();
    let report = contraction_test(&sys, &[1, 2], 50, MatrixNorm::Spectral).unwrap();
    assert_eq!(report.verdict, Verdict::StablePerCorollary);
    assert_eq!(report.horizon_used, Some(2));
    assert!((report.evidence - 0.2).abs() < 1e-12);
}

#[test]
fn contraction_inconclusive_for_expanding_mode() {
    let sys = scalar_system(&[1.5]);
    let report = contraction_test(&sys, &[1], 50, MatrixNorm::Frobenius).unwrap();
    assert_eq!(report.verdict, Verdict::Inconclusive);
    assert!((report.evidence - 1.5).abs() < 1e-12);
}

#[test]
fn sample_initial_moments() {
    let init = GaussianMixture::gaussian(&[0.0, 0.0], Matrix::identity(2));
    let mut rng_s = trajectory_rng(5, 0);
    let draws = 1_000_000;
    let mut sum = [0.0f64; 2];
    let mut sq = [0.0f64; 3];
    let sampler = InitialSampler::new(&init).unwrap();
    for _ in 0..draws {
        let x = sampler.sample(&mut rng_s);
        sum[0] += x[0];
        sum[1] += x[1];
        sq[0] += x[0] * x[0];
        sq[1] += x[0] * x[1];
        sq[2] += x[1] * x[1];
    }
    let nf = draws as f64;
    let se_mean = (1.0 / nf).sqrt();
    // var(x²) = 2 and var(x y) = 1 for independent standard normals
    let se_var = (2.0 / nf).sqrt();
    assert!((sum[0] / nf).abs() < 4.0 * se_mean);
    assert!((sum[1] / nf).abs() < 4.0 * se_mean);
    assert!((sq[0] / nf - 1.0).abs() < 4.0 * se_var);
    assert!((sq[2] / nf - 1.0).abs() < 4.0 * se_var);
    assert!((sq[1] / nf).abs() < 4.0 * se_mean);
    let one = sample_initial(&init, &mut rng_s).unwrap();
    assert_eq!(one.len(), 2);
}

#[test]
fn sample_initial_component_frequencies() {
    let init = GaussianMixture::new(vec![
        GaussianComponent::new(0.9, &[0.0], Matrix::identity(1)),
        GaussianComponent::new(0.1, &[0.0], Matrix::identity(1)),
    ]);
    let sampler = InitialSampler::new(&init).unwrap();
    let mut rng_s = trajectory_rng(6, 0);
    let draws = 100_000;
    let first = (0..draws)
        .filter(|_| sampler.component(&mut rng_s) == 0)
        .count();
    let freq = first as f64 / draws as f64;
    let se = (0.9f64 * 0.1 / draws as f64).sqrt();
    assert!((freq - 0.9).abs() < 4.0 * se);
}

#[test]
fn point_mass_samples_exactly() {
    let init = GaussianMixture::point_mass(&[1.5, -2.0]);
    let mut rng_s = trajectory_rng(7, 3);
    let x = sample_initial(&init, &mut rng_s).unwrap();
    assert_eq!(x.as_slice(), &[1.5, -2.0]);
}

#[test]
fn monte_carlo_scalar_growth() {
    let sys = scalar_system(&[2.0, 0.1]);
    let law = SwitchingLaw::Iid { pi: vec![0.5, 0.5] };
    let init = GaussianMixture::gaussian(&[0.0], Matrix::identity(1));
    let stats = simulate_ensemble(&sys, &law, &init, &SimConfig::new(100_000, 10, 1)).unwrap();
    for s in &stats.steps {
        let want = 2.005f64.powi(s.k as i32);
        assert!(
            (s.mean_sq - want).abs() < 4.0 * s.stderr,
            "k={} {} vs {want}",
            s.k,
            s.mean_sq
        );
        assert_eq!(s.samples, 100_000);
    }
}

#[test]
fn monte_carlo_matches_moment_trajectory() {
    let mut r = rng(36);
    for _ in 0..3 {
        let m = r.random_range(2..=3);
        let n = r.random_range(1..=2);
        let pi = random_probability(&mut r, m);
        let sys = with_radius(&random_system(&mut r, m, n, 1.0), &pi, 0.9);
        let law = SwitchingLaw::Iid { pi };
        let init = random_mixture(&mut r, n, 2);
        let traj =
            w2_trajectory(&sys, &law, &init, 10, Method::Moment, MogOptions::default()).unwrap();
        let stats = simulate_ensemble(&sys, &law, &init, &SimConfig::new(50_000, 10, 2)).unwrap();
        for (t, s) in traj.iter().zip(&stats.steps) {
            assert!((s.mean_sq - t.w2).abs() < 4.0 * s.stderr, "k={}", t.k);
        }
    }
}

#[test]
fn path_sampling_follows_markov_verdict() {
    let sys = scalar_system(&[1.2, 0.5]);
    let p = Matrix::new(2, 2, &[0.3, 0.7, 0.7, 0.3]).unwrap();
    let law = SwitchingLaw::Markov {
        transition: p,
        pi0: vec![0.5, 0.5],
    };
    let init = GaussianMixture::gaussian(&[1.0], Matrix::identity(1));
    let mut cfg = SimConfig::new(20_000, 100, 3);
    cfg.sampling = Sampling::Path;
    let stats = simulate_ensemble(&sys, &law, &init, &cfg).unwrap();
    assert!(stats.steps[100].mean_sq < 1e-6 * stats.steps[0].mean_sq);

    // a chain that lingers in the expanding mode
    let sticky = Matrix::new(2, 2, &[0.95, 0.05, 0.05, 0.95]).unwrap();
    assert_eq!(
        markov_test(&sys, &sticky, 1e-9).unwrap().verdict,
        Verdict::Unstable
    );
    let law = SwitchingLaw::Markov {
        transition: sticky,
        pi0: vec![0.5, 0.5],
    };
    let mut cfg = SimConfig::new(20_000, 60, 4);
    cfg.sampling = Sampling::Path;
    let stats = simulate_ensemble(&sys, &law, &init, &cfg).unwrap();
    assert!(stats.steps[60].mean_sq > 10.0 * stats.steps[0].mean_sq);
}

#[test]
fn path_sampling_rejects_non_markov_law() {
    let sys = scalar_system(&[0.5]);
    let mut cfg = SimConfig::new(10, 2, 0);
    cfg.sampling = Sampling::Path;
    let init = GaussianMixture::point_mass(&[1.0]);
    assert!(simulate_ensemble(&sys, &SwitchingLaw::Iid { pi: vec![1.0] }, &init, &cfg).is_err());
}

#[test]
fn ensemble_is_thread_count_invariant() {
    let mut r = rng(37);
    let sys = random_system(&mut r, 2, 2, 0.9);
    let law = SwitchingLaw::Iid { pi: vec![0.4, 0.6] };
    let init = random_mixture(&mut r, 2, 2);
    let mut cfg = SimConfig::new(3_000, 12, 9);
    cfg.threads = Some(1);
    let a = simulate_ensemble(&sys, &law, &init, &cfg).unwrap();
    cfg.threads = Some(4);
    let b = simulate_ensemble(&sys, &law, &init, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaling_multiplies_radius_by_square(seed in 0u64..1000, c in 0.1f64..3.0) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, 2, 2, 1.0);
        let pi = random_probability(&mut r, 2);
        let base = iid_test(&sys, &pi, 1e-9).unwrap().evidence;
        let scaled = iid_test(&sys.scaled(c), &pi, 1e-9).unwrap().evidence;
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (c * c * base).max(1e-6));
    }

    #[test]
    fn stable_iid_second_moment_shrinks_eventually(seed in 0u64..1000) {
        let mut r = rng(seed);
        let pi = random_probability(&mut r, 2);
        let sys = with_radius(&random_system(&mut r, 2, 2, 1.0), &pi, 0.5);
        let phi = SecondMomentState::new(random_psd(&mut r, 2, 2), 0).unwrap();
        let lift = iid_matrix(&sys, &pi).unwrap();
        let mut v = vec(&phi.phi);
        for _ in 0..80 {
            v = &lift * &v;
        }
        prop_assert!(unvec(&v, 2, 2).unwrap().trace() < 1e-12 * phi.w2());
    }
}
