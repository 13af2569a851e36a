//! Yeast polarization case study: sweep the total number of Cdc42
//! molecules and watch the density-dependent switch.
//!
//! ```bash
//! cargo run --release --example yeast_polarization
//! ```
//!
//! Writes `yeast_switch.csv` and `yeast_switch.json` with per-N summary
//! statistics (time-averaged maximum polarization percent, its temporal
//! standard deviation, and the mean membrane-count series).

use rfsim::polarization::{run_switch_sweep, YeastParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = YeastParams::default();
    let n_values: Vec<u64> = std::env::args()
        .nth(1)
        .map(|s| {
            s.split(',')
                .map(|v| v.parse().expect("N values must be integers"))
                .collect()
        })
        .unwrap_or_else(|| vec![100, 250, 400, 600, 900, 1500, 3000, 6000]);
    let ensemble_size: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().expect("ensemble size"))
        .unwrap_or(4);
    let workers: usize = std::env::args()
        .nth(3)
        .map(|s| s.parse().expect("workers"))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    println!(
        "sweeping N over {n_values:?} (ensemble {ensemble_size}, {workers} workers, \
         mesh subdiv {}, t_end {})",
        params.mesh_subdiv, params.t_end
    );
    println!(
        "mean-field switch estimate: N_c = k_off*V/k_fb = {:.0}",
        params.predicted_switch()
    );

    let started = std::time::Instant::now();
    let table = run_switch_sweep(&n_values, &params, ensemble_size, workers, 2024)?;
    println!("sweep finished in {:.1}s", started.elapsed().as_secs_f64());

    println!("\n  N      polarization%   (temporal std)   final membrane count");
    for point in &table.points {
        let n = point.values[0].1;
        match &point.outcome {
            Ok(summary) => {
                let last = summary.mean.len() - 1;
                println!(
                    "  {:>6}  {:>8.1}       {:>8.1}          {:>10.1}",
                    n, summary.mean[0], summary.mean[1], summary.mean[last]
                );
            }
            Err(e) => println!("  {n:>6}  failed: {e}"),
        }
    }

    std::fs::write("yeast_switch.csv", table.to_csv())?;
    std::fs::write(
        "yeast_switch.json",
        serde_json::to_string_pretty(&table.to_json())?,
    )?;
    println!("\nwrote yeast_switch.csv and yeast_switch.json");
    Ok(())
}
