// SPDX-License-Identifier: Apache-2.0

mod common;

use cellsim::bench::{canonical_scenarios, run_scenario, summarize};
use cellsim::hvcore::{Cause, CellId};
use cellsim::irq::{lattice_ns, quantize_62_5ns, rng_from_seed, sample_latency, DeliveryPath, Scenario};
use cellsim::machine::{build_platform, BusModel, MachinePlatform, PlatformSpec};

fn jetson() -> MachinePlatform {
    build_platform(PlatformSpec::jetson_tk1()).unwrap()
}

fn scenario(vmm_on: bool, freq_hz: f64, stress: bool, n: u64, seed: u64) -> Scenario {
    Scenario {
        vmm_on,
        freq_hz,
        stress,
        n_samples: n,
        seed,
    }
}

#[test]
fn closed_form_means() {
    let bus = BusModel::default();
    let off = bus.base_latency_us;
    let on = off + bus.hv_overhead.mean();
    let stress = on + bus.contention_prob * bus.contention.mean();
    assert!((off - 0.45).abs() < 0.01);
    assert!((on - 1.26).abs() / 1.26 < 0.05, "{on}");
    assert!((stress - 1.36).abs() / 1.36 < 0.05, "{stress}");
}

#[test]
fn reinjected_mean_matches_reference() {
    let (st, _) = run_scenario(&jetson(), &scenario(true, 10.0, false, 100_000, 11)).unwrap();
    assert!((st.mean_us - 1.26).abs() / 1.26 < 0.05, "{st:?}");
}

#[test]
fn stress_sigma_at_a_million() {
    let bus = BusModel::default();
    let mut rng = rng_from_seed(5);
    let xs: Vec<f64> = (0..1_000_000).map(|_| sample_latency(true, true, &bus, &mut rng)).collect();
    let st = summarize(&xs).unwrap();
    assert!((st.sigma_us - 0.34).abs() / 0.34 < 0.15, "{st:?}");
    let (m, s, _) = common::naive_stats(&xs);
    assert!((st.mean_us - m).abs() < 1e-12 * m && (st.sigma_us - s).abs() < 1e-9 * s);
}

#[test]
fn samples_sit_on_the_lattice() {
    let bus = BusModel::default();
    let mut rng = rng_from_seed(8);
    for i in 0..10_000 {
        let x = sample_latency(i % 2 == 0, i % 3 == 0, &bus, &mut rng);
        assert_eq!(quantize_62_5ns(x), x);
        assert!(x >= 0.4375);
    }
}

#[test]
fn frequency_does_not_matter() {
    let p = jetson();
    for stress in [false, true] {
        let a = run_scenario(&p, &scenario(true, 10.0, stress, 50_000, 21)).unwrap().0;
        let b = run_scenario(&p, &scenario(true, 50.0, stress, 50_000, 22)).unwrap().0;
        assert!((a.mean_us - b.mean_us).abs() / a.mean_us < 0.02, "{a:?} {b:?}");
    }
}

#[test]
fn latency_grows_with_virtualisation_and_load() {
    let p = jetson();
    let rows: Vec<_> = canonical_scenarios(Some(20_000), 7)
        .iter()
        .map(|sc| run_scenario(&p, sc).unwrap().0)
        .collect();
    assert!(rows[0].mean_us < rows[2].mean_us && rows[2].mean_us < rows[4].mean_us);
    assert!(rows[2].sigma_us < rows[4].sigma_us && rows[2].max_us < rows[4].max_us);
}

#[test]
fn every_reinjection_is_logged_at_its_raise_time() {
    let p = jetson();
    let sc = scenario(true, 50.0, true, 2_000, 3);
    let mut tb = cellsim::bench::testbed(&p, true, true).unwrap();
    let mut rng = rng_from_seed(sc.seed);
    let mut deliveries = Vec::new();
    for i in 0..sc.n_samples {
        deliveries.push(tb.hv.raise_irq(tb.line, i * sc.period_ns(), &mut rng).unwrap());
        tb.hv.tick_all(i).unwrap();
    }
    let reinj: Vec<_> = tb
        .hv
        .events()
        .iter()
        .filter(|e| matches!(e.cause, Cause::IrqReinjection { .. }))
        .collect();
    assert_eq!(reinj.len(), deliveries.len());
    for (d, e) in deliveries.iter().zip(reinj) {
        assert_eq!(d.path, DeliveryPath::Reinjected);
        assert_eq!(e.time, d.raised_at);
        assert_eq!(e.cell, d.owner);
        assert_eq!(d.delivered_at, d.raised_at + lattice_ns(d.latency_us));
    }
    assert!(tb.hv.events().iter().all(|e| !e.cause.is_violation()));
}

#[test]
fn bare_metal_bypasses_the_hypervisor() {
    let (st, ds) = run_scenario(&jetson(), &scenario(false, 10.0, false, 1_000, 1)).unwrap();
    assert!(ds.iter().all(|d| d.path == DeliveryPath::BareMetal && d.owner == CellId::ROOT));
    assert!(st.max_us <= 0.5);
}
