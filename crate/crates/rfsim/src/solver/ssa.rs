//! Direct-method oracle over the flattened channel list.
//!
//! Every (voxel, reaction) pair and every (voxel, species, neighbor)
//! diffusion channel competes in one global Gillespie loop, and all
//! propensities are recomputed from scratch for every event. Slow on
//! purpose: this path shares no bookkeeping with the NSM solver, which is
//! what makes their distributional agreement evidence of correctness.

use std::time::Instant;

use crate::mesh::DiffusionMatrix;
use crate::model::CompiledModel;
use crate::trajectory::{RunStats, SolverKind, Trajectory};

use super::{event_rng, setup, SolverError, SolverOptions};

pub fn run_direct_ssa_with(
    model: &CompiledModel<'_>,
    diffusion: &DiffusionMatrix,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Trajectory, SolverError> {
    let started = Instant::now();
    let init = setup(model, diffusion, seed)?;
    let mut counts = init.counts;
    let mut t = init.t0;
    let k = model.n_voxels();
    let s = model.n_species();
    let m = model.n_reactions();
    let tspan = model.model.tspan.clone();
    let mut rng = event_rng(seed);

    let mut frames: Vec<u64> = Vec::with_capacity(tspan.len() * k * s);
    frames.extend_from_slice(&counts);
    let mut next_out = 1;

    let mut events: u64 = 0;
    let mut reaction_events: u64 = 0;
    let mut diffusion_events: u64 = 0;

    // per-event scratch: reaction propensities, voxel-major
    let mut reaction_prop = vec![0.0f64; k * m];

    'outer: while next_out < tspan.len() {
        let mut total_reaction = 0.0;
        for v in 0..k {
            let row = &counts[v * s..(v + 1) * s];
            let lookup = |sp: usize| row[sp] as f64;
            for r in 0..m {
                let p = model
                    .propensity(r, v, &lookup)
                    .map_err(|f| SolverError::from_fault(f, t))?;
                reaction_prop[v * m + r] = p;
                total_reaction += p;
            }
        }
        let mut total_diffusion = 0.0;
        for v in 0..k {
            for sp in 0..s {
                total_diffusion +=
                    diffusion.species(sp).exit_rate(v) * counts[v * s + sp] as f64;
            }
        }
        let a0 = total_reaction + total_diffusion;
        if a0 <= 0.0 {
            break; // nothing can ever fire again
        }
        let tau = t + rng.exp(a0);
        while next_out < tspan.len() && tau > tspan[next_out] {
            frames.extend_from_slice(&counts);
            next_out += 1;
        }
        if next_out >= tspan.len() {
            break;
        }
        events += 1;
        if events > opts.max_events {
            return Err(SolverError::BudgetExceeded {
                budget: opts.max_events,
                time: tau,
            });
        }
        t = tau;

        let pick = rng.next_f64() * a0;
        if pick < total_reaction {
            reaction_events += 1;
            let mut remaining = pick;
            let mut chosen = None;
            'rx: for v in 0..k {
                for r in 0..m {
                    let p = reaction_prop[v * m + r];
                    if remaining < p {
                        chosen = Some((v, r));
                        break 'rx;
                    }
                    remaining -= p;
                }
            }
            let (v, r) = match chosen {
                Some(c) => c,
                None => {
                    // fp slack: last channel with positive propensity
                    let flat = (0..k * m)
                        .rev()
                        .find(|&i| reaction_prop[i] > 0.0)
                        .expect("reaction branch with zero total");
                    (flat / m, flat % m)
                }
            };
            for &(species, delta) in &model.reactions[r].delta {
                let slot = &mut counts[v * s + species];
                if delta < 0 {
                    let need = (-delta) as u64;
                    if *slot < need {
                        return Err(SolverError::NegativeCount {
                            reaction: r,
                            voxel: v,
                            time: t,
                        });
                    }
                    *slot -= need;
                } else {
                    *slot += delta as u64;
                }
            }
        } else {
            diffusion_events += 1;
            let mut remaining = pick - total_reaction;
            let mut fallback: Option<(usize, usize, usize)> = None;
            for v in 0..k {
                for sp in 0..s {
                    let x = counts[v * s + sp] as f64;
                    if x == 0.0 {
                        continue;
                    }
                    for &(dest, rate) in diffusion.species(sp).row(v) {
                        let w = rate * x;
                        if w <= 0.0 {
                            continue;
                        }
                        if remaining < w {
                            counts[v * s + sp] -= 1;
                            counts[dest * s + sp] += 1;
                            continue 'outer;
                        }
                        remaining -= w;
                        fallback = Some((v, sp, dest));
                    }
                }
            }
            let (v, sp, dest) =
                fallback.expect("diffusion branch selected with zero total propensity");
            counts[v * s + sp] -= 1;
            counts[dest * s + sp] += 1;
        }
    }
    while next_out < tspan.len() {
        frames.extend_from_slice(&counts);
        next_out += 1;
    }

    let mut traj = Trajectory::new(model.content_hash, seed, tspan, k, s, frames);
    traj.stats = RunStats {
        solver: SolverKind::DirectSsa,
        wall_seconds: started.elapsed().as_secs_f64(),
        reaction_events,
        diffusion_events,
        max_resync_drift: 0.0,
    };
    Ok(traj)
}
