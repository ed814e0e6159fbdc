// SPDX-License-Identifier: Apache-2.0 OR MIT

use std::collections::BTreeMap;
use std::sync::Arc;

use prandtl_os::evolve_oracle::{LinearStepper, ModeState};
use prandtl_os::halfline_grid::{make_grid, HalfLineGrid, Stretch};
use prandtl_os::os_core::SpectralParams;
use prandtl_os::profiles::{build_profile, ProfileTrack, ShearProfile};
use prandtl_os::semigroup_engine::{
    energy_norm, evolution_operator, high_freq_bound, low_freq_bound, random_initial_data, EvolutionConfig,
    Semigroup, SemigroupConfig,
};
use prandtl_os::C64;

fn exp_profile() -> ShearProfile {
    build_profile("exp", &BTreeMap::new()).unwrap()
}

fn grid(n: usize) -> Arc<HalfLineGrid> {
    Arc::new(make_grid(n, 40.0, Stretch::Tanh { beta: 3.0 }).unwrap())
}

fn rel(g: &HalfLineGrid, alpha: f64, a: &[C64], b: &[C64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    energy_norm(g, alpha, &d) / energy_norm(g, alpha, b)
}

#[test]
fn dunford_semigroup_matches_sdirk_at_unit_time() {
    let p = exp_profile();
    let g = grid(240);
    for &(n, nu) in &[(10i64, 1e-2), (60, 1e-2), (32, 1e-3)] {
        let sp = SpectralParams::on_stability_line(n, nu, 2.0 / 3.0, 0.05, 0.0).unwrap();
        let vs = p.sample_grid(nu, &g);
        let cfg = SemigroupConfig::for_profile(&p);
        let sg = Semigroup::for_times(g.clone(), &vs, &sp, &[1.0], &cfg).unwrap();
        let data = random_initial_data(&g, 2, 7);
        let out = sg.propagate(&data, &[1.0]).unwrap();
        let track = ProfileTrack::frozen(&p, nu, &g);
        let mut st = LinearStepper::new(g.clone(), n, nu).unwrap();
        for (phi0, res) in data.iter().zip(&out) {
            let s0 = ModeState { n, tau: 0.0, phi: phi0.clone() };
            let (s1, _) = st.advance(&track, &s0, 1.0, 0.005).unwrap();
            let e = rel(&g, sp.alpha(), &res[0], &s1.phi);
            assert!(e < 1e-4, "n {n} nu {nu}: {e:.3e}");
        }
    }
}

#[test]
fn low_frequency_modes_respect_the_gronwall_factor() {
    let p = exp_profile();
    let nu = 1e-2;
    let g = grid(200);
    let (s, t) = (0.0, 0.5);
    let track = ProfileTrack::heat(&p, nu, &g, t, 6).unwrap();
    let snaps: Vec<ShearProfile> =
        (0..6).map(|k| prandtl_os::profiles::heat_evolve(&p, t * k as f64 / 5.0, &g).unwrap()).collect();
    let refs: Vec<&ShearProfile> = snaps.iter().collect();
    let cert = low_freq_bound(&refs, 3, s, t).unwrap();
    let data = random_initial_data(&g, 20, 11);
    let tau_end = t / nu.sqrt();
    for (k, phi0) in data.iter().enumerate() {
        let n = 1 + (k % 2) as i64;
        let mut st = LinearStepper::new(g.clone(), n, nu).unwrap();
        let s0 = ModeState { n, tau: 0.0, phi: phi0.clone() };
        let (s1, _) = st.advance(&track, &s0, tau_end, 0.02).unwrap();
        let a = n as f64 * nu.sqrt();
        let ratio = energy_norm(&g, a, &s1.phi) / energy_norm(&g, a, phi0);
        assert!(ratio <= cert.factor, "datum {k}: {ratio} > {}", cert.factor);
    }
}

#[test]
fn high_frequency_modes_decay_at_the_viscous_rate() {
    let p = exp_profile();
    let (n, nu) = (96i64, 1e-2);
    let g = grid(240);
    let (s, t) = (0.0, 0.1);
    let cert = high_freq_bound(&p, n, nu, s, t).unwrap();
    let track = ProfileTrack::frozen(&p, nu, &g);
    let data = random_initial_data(&g, 10, 5);
    let mut st = LinearStepper::new(g.clone(), n, nu).unwrap();
    let a = n as f64 * nu.sqrt();
    for phi0 in &data {
        let s0 = ModeState { n, tau: 0.0, phi: phi0.clone() };
        let (s1, _) = st.advance(&track, &s0, t / nu.sqrt(), 0.01).unwrap();
        let ratio = energy_norm(&g, a, &s1.phi) / energy_norm(&g, a, phi0);
        assert!(ratio <= cert.factor, "{ratio} > {}", cert.factor);
    }
}

#[test]
fn evolution_operator_matches_time_varying_stepping() {
    let p = exp_profile();
    let (n, nu, gamma) = (16i64, 1e-3, 7.0 / 9.0);
    let g = grid(200);
    let t = 0.1;
    let track = ProfileTrack::heat(&p, nu, &g, t, 11).unwrap();
    let sp = SpectralParams::on_stability_line(n, nu, gamma, 0.05, 0.0).unwrap();
    let cfg = EvolutionConfig { semigroup: SemigroupConfig::for_profile(&p), delta_tilde: 0.05 };
    let data = random_initial_data(&g, 2, 3);
    let ev = evolution_operator(&track, &sp, g.clone(), &data, 0.0, t, &cfg).unwrap();
    let mut st = LinearStepper::new(g.clone(), n, nu).unwrap();
    for (phi0, res) in data.iter().zip(&ev.phi) {
        let s0 = ModeState { n, tau: 0.0, phi: phi0.clone() };
        let (s1, _) = st.advance(&track, &s0, t / nu.sqrt(), 0.005).unwrap();
        let e = rel(&g, sp.alpha(), res, &s1.phi);
        assert!(e < 1e-3, "{e:.3e} over {} subintervals", ev.subintervals);
    }
}
