use mcvd_core::channel::{hit_probability, ChannelParams};
use mcvd_core::eval::angular_error_deg;
use mcvd_core::geometry::mean;
use mcvd_core::sim::{sample_tx_placement, simulate_scenario, ScenarioConfig, Stepping};
use mcvd_core::Vec3;

fn config(tx: Vec<Vec3>, n: u64, t: f64, dt: f64, stepping: Stepping) -> ScenarioConfig {
    ScenarioConfig {
        tx_positions: tx,
        n_molecules_per_tx: n,
        channel: ChannelParams::new(5.0, 79.4, t).unwrap(),
        dt_s: dt,
        master_seed: 11,
        scenario_index: 0,
        stepping,
    }
}

/// Binomial tolerance used throughout: the larger of 3 sigma and 5% relative.
fn tolerance(p: f64, n: u64) -> f64 {
    (3.0 * (p * (1.0 - p) / n as f64).sqrt()).max(0.05 * p)
}

#[test]
fn absorbed_fraction_matches_closed_form() {
    for d in [7.5, 10.0, 12.5] {
        let n = 4000;
        let cfg = config(vec![Vec3::new(0.0, 0.0, d)], n, 0.4, 1e-4, Stepping::default());
        let hs = simulate_scenario(&cfg).unwrap();
        let frac = hs.true_sizes[0] as f64 / n as f64;
        let p = hit_probability(d, &cfg.channel).unwrap().value();
        assert!(
            (frac - p).abs() < tolerance(p, n),
            "d = {d}: simulated {frac}, closed form {p}"
        );
    }
}

#[test]
fn hits_gather_around_the_transmitter_direction() {
    let cfg = config(vec![Vec3::new(0.0, 0.0, 8.0)], 24_000, 0.4, 1e-4, Stepping::default());
    let hs = simulate_scenario(&cfg).unwrap();
    assert!(hs.hits.len() >= 10_000, "{}", hs.hits.len());
    let m = mean(&hs.positions());
    assert!(angular_error_deg(m, Vec3::Z) < 2.0, "{m:?}");
    assert!(hs.hits.iter().all(|h| (h.position.norm() - 5.0).abs() < 1e-9));
    assert!(hs.hits.iter().all(|h| h.time_s > 0.0 && h.time_s <= 0.4));
}

#[test]
fn merged_steps_agree_with_fixed_steps() {
    let tx = vec![Vec3::new(9.0, 0.0, 0.0), Vec3::new(0.0, -12.0, 0.0)];
    let n = 3000;
    let fixed = simulate_scenario(&config(tx.clone(), n, 0.2, 1e-4, Stepping::Fixed)).unwrap();
    let merged = simulate_scenario(&config(tx, n, 0.2, 1e-4, Stepping::default())).unwrap();
    for i in 0..2 {
        let a = fixed.true_sizes[i] as f64 / n as f64;
        let b = merged.true_sizes[i] as f64 / n as f64;
        // Two independent binomial draws of the same p.
        let sd = (a.max(b) * (1.0 - a.min(b)) * 2.0 / n as f64).sqrt();
        assert!((a - b).abs() < 4.0 * sd, "tx {i}: fixed {a}, merged {b}");
    }
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let tx = vec![Vec3::new(6.0, 3.0, 1.0), Vec3::new(-2.0, 0.0, -9.0)];
    let cfg = config(tx, 500, 0.4, 1e-4, Stepping::default());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_scenario(&cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn placement_is_isotropic_and_within_bounds() {
    let mut dirs = Vec::new();
    for seed in 0..100_000u64 {
        for p in sample_tx_placement(1, 5.5, 15.0, 5.0, seed).unwrap() {
            let r = p.norm();
            assert!((5.5..=15.0).contains(&r));
            dirs.push(p / r);
        }
    }
    let m = mean(&dirs);
    // Standard error of each mean component is sqrt(1/3 / 1e5) ~ 0.0018.
    assert!(m.to_array().iter().all(|c| c.abs() < 0.01), "{m:?}");
    let upper = dirs.iter().filter(|u| u.z > 0.0).count() as f64 / dirs.len() as f64;
    assert!((upper - 0.5).abs() < 0.01);
}
