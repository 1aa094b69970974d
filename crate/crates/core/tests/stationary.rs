use hetsched::engine::EventKind;
use hetsched::policy::PolicyKind;
use hetsched::simulation::{run_simulation, StepOutcome};
use hetsched::workload::SpeedSpec;
use hetsched::{PolicyConfig, SimConfig, Simulation, WorkloadSpec};

const LEVELS: usize = 12;

/// Per-queue arrival rate into queues holding exactly `k` tasks under
/// homogeneous two-choice routing matches `alpha (M_k + M_{k+1})` with
/// `M_k = alpha^(2^k - 1)`.
#[test]
fn per_size_arrival_rates_match_fixed_point() {
    let alpha = 0.9f64;
    let n = 1000;
    let mut cfg = SimConfig::new(
        n,
        SpeedSpec::Homogeneous(1.0),
        WorkloadSpec::with_alpha(alpha),
        PolicyConfig::simple(PolicyKind::Pot),
    );
    cfg.max_events = Some(1_500_000);
    let mut sim = Simulation::new(cfg).unwrap();
    let mut loads = vec![0usize; n];
    let mut by_size = [0usize; LEVELS + 1];
    by_size[0] = n;
    let mut occupancy = [0.0f64; LEVELS + 1];
    let mut arrivals = [0u64; LEVELS + 1];
    let mut last = sim.now();
    let bucket = |q: usize| q.min(LEVELS);
    loop {
        let measuring = !sim.in_warmup();
        let outcome = sim.step().unwrap();
        if outcome == StepOutcome::Finished {
            break;
        }
        let now = sim.now();
        if measuring {
            for k in 0..=LEVELS {
                occupancy[k] += by_size[k] as f64 * (now - last);
            }
        }
        last = now;
        let StepOutcome::Processed(kind) = outcome else {
            unreachable!()
        };
        let changed = match kind {
            EventKind::TaskCompletion(i) => Some(i),
            EventKind::JobArrival => (0..n).find(|&i| sim.loads()[i] != loads[i]),
            _ => None,
        };
        if let Some(i) = changed {
            let (before, after) = (loads[i], sim.loads()[i]);
            if measuring && after > before {
                arrivals[bucket(before)] += 1;
            }
            by_size[bucket(before)] -= 1;
            by_size[bucket(after)] += 1;
            loads[i] = after;
        }
    }
    let tail = |k: u32| alpha.powf(2f64.powi(k as i32) - 1.0);
    for k in 0..=2u32 {
        let expected = alpha * (tail(k) + tail(k + 1));
        let measured = arrivals[k as usize] as f64 / occupancy[k as usize];
        let rel = (measured - expected).abs() / expected;
        assert!(
            rel <= 0.15,
            "k={k}: measured {measured:.4} expected {expected:.4}"
        );
    }
}

fn total_variation(a: &[u64], b: &[u64]) -> f64 {
    let (ta, tb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let at = |h: &[u64], q: usize| h.get(q).copied().unwrap_or(0) as f64;
    let len = a.len().max(b.len());
    0.5 * (0..len)
        .map(|q| (at(a, q) / ta - at(b, q) / tb).abs())
        .sum::<f64>()
}

#[test]
fn fastest_and_slowest_workers_share_a_marginal() {
    let mut cfg = SimConfig::new(
        15,
        SpeedSpec::FixedSet("S1".into()),
        WorkloadSpec::with_alpha(0.7),
        PolicyConfig::simple(PolicyKind::PpotSq),
    );
    cfg.max_events = Some(2_000_000);
    cfg.sample_interval = 0.5;
    let r = run_simulation(cfg).unwrap();
    let by_speed = |cmp: fn(f64, f64) -> bool| {
        (0..r.workers.len())
            .reduce(|best, i| {
                if cmp(r.workers[i].speed, r.workers[best].speed) {
                    i
                } else {
                    best
                }
            })
            .unwrap()
    };
    let fastest = by_speed(|a, b| a > b);
    let slowest = by_speed(|a, b| a < b);
    let tv = total_variation(
        r.histograms[fastest].counts(),
        r.histograms[slowest].counts(),
    );
    assert!(tv <= 0.05, "total variation {tv:.4}");
    assert!((tv - r.histograms[fastest].total_variation(&r.histograms[slowest])).abs() < 1e-12);
}
