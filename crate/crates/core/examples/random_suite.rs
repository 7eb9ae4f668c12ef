// Classification theorems on random TRI models.
//
// Pass the ensemble size as the first argument (default 10 per manifold).

use phasetop::cli::{random_suite, RunConfig, SuiteConfig};
use phasetop::phasespace::Manifold;

fn ensemble(count: usize) -> Result<(), Box<dyn std::error::Error>> {
    for manifold in [Manifold::Sphere, Manifold::Torus] {
        let cfg = RunConfig {
            suite: Some(SuiteConfig {
                count,
                manifold,
                n_a: 4,
                frequency_cutoff: 2,
            }),
            ..RunConfig::default()
        };
        let r = random_suite(&cfg)?;
        let t = &r.tally;
        println!(
            "{manifold}: {} models, {} groups, parity {}/{}, k = c/2 {}/{}, plaquette = winding {}/{}",
            t.models, t.groups, t.parity_ok, t.groups, t.km_relation_ok, t.even_rank_groups, t.cross_method_ok, t.groups
        );
        let mut hist = std::collections::BTreeMap::new();
        for g in r.models.iter().flat_map(|m| &m.groups) {
            *hist.entry((g.rank, g.c_plaquette)).or_insert(0) += 1;
        }
        println!("  (rank, c) counts: {hist:?}");
        assert!(r.all_hold);
    }
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    ensemble(4)
}

#[allow(dead_code)]
fn main() {
    let count = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    if let Err(e) = ensemble(count) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
