//! Full model against the backbone on the two sparsest synthetic domains, over several seeds.
//!
//! `cargo run --release --example desk_scale -- [profile] [seeds] [domain_shift_scale]`

use ssctl::data::{generate, SyntheticConfig};
use ssctl::train::{run_pipeline, MetricsReport, TrainConfig};

fn sparse_pair(report: &MetricsReport) -> Option<f64> {
    let mut d = report.domains.clone();
    d.sort_by_key(|r| r.n);
    let a: Vec<f64> = d.iter().take(2).filter_map(|r| r.auc).collect();
    (a.len() == 2).then(|| (a[0] + a[1]) / 2.0)
}

fn main() -> ssctl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let profile = args.first().map_or("tiny", String::as_str);
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let base = SyntheticConfig::six_domain();
    let shift = args
        .get(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(base.domain_shift_scale);
    let mut wins = 0;
    for seed in 0..seeds {
        let ds = generate(&SyntheticConfig {
            seed,
            domain_shift_scale: shift,
            ..base.clone()
        })?;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::profile(profile)?
        };
        let full = sparse_pair(&run_pipeline(&ds, &cfg)?.report);
        let backbone = sparse_pair(&run_pipeline(&ds, &cfg.backbone())?.report);
        if let (Some(f), Some(b)) = (full, backbone) {
            wins += usize::from(f >= b);
            println!(
                "seed {seed}: full {f:.4}  backbone {b:.4}  diff {:+.4}",
                f - b
            );
        }
    }
    println!("full >= backbone in {wins} of {seeds} seeds");
    Ok(())
}
