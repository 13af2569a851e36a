//! Next Subvolume Method.
//!
//! One pending event time per voxel, kept in an indexed binary min-heap.
//! Per-voxel totals (reaction propensity `a_i`, diffusion propensity
//! `d_i`) are maintained incrementally and re-synced from scratch every
//! `resync_every` events to bound floating-point drift; the largest
//! observed drift lands in the trajectory's run stats.

use std::time::Instant;

use crate::heap::IndexedMinHeap;
use crate::mesh::DiffusionMatrix;
use crate::model::CompiledModel;
use crate::trajectory::{RunStats, SolverKind, Trajectory};

use super::{event_rng, setup, RescheduleMode, SolverError, SolverOptions};

pub fn run_nsm_with(
    model: &CompiledModel<'_>,
    diffusion: &DiffusionMatrix,
    seed: u64,
    opts: &SolverOptions,
) -> Result<Trajectory, SolverError> {
    let started = Instant::now();
    let init = setup(model, diffusion, seed)?;
    let mut sim = Nsm {
        model,
        diffusion,
        n_species: model.n_species(),
        counts: init.counts,
        a: vec![0.0; model.n_voxels()],
        d: vec![0.0; model.n_voxels()],
        scratch: vec![0.0; model.n_reactions()],
        t: init.t0,
    };
    let k = model.n_voxels();
    let tspan = model.model.tspan.clone();
    let mut rng = event_rng(seed);

    for v in 0..k {
        sim.a[v] = sim.reaction_total(v)?;
        sim.d[v] = sim.diffusion_total(v);
    }
    let keys: Vec<f64> = (0..k)
        .map(|v| sim.t + rng.exp(sim.a[v] + sim.d[v]))
        .collect();
    let mut queue = IndexedMinHeap::new(keys);

    let mut frames: Vec<u64> = Vec::with_capacity(tspan.len() * k * sim.n_species);
    frames.extend_from_slice(&sim.counts); // state at tspan[0]
    let mut next_out = 1;

    let mut events: u64 = 0;
    let mut reaction_events: u64 = 0;
    let mut diffusion_events: u64 = 0;
    let mut max_drift: f64 = 0.0;

    while next_out < tspan.len() {
        let Some((voxel, tau)) = queue.peek() else {
            break; // no voxels at all
        };
        if tau > tspan[next_out] {
            frames.extend_from_slice(&sim.counts);
            next_out += 1;
            continue;
        }
        events += 1;
        if events > opts.max_events {
            return Err(SolverError::BudgetExceeded {
                budget: opts.max_events,
                time: tau,
            });
        }
        sim.t = tau;
        let total = sim.a[voxel] + sim.d[voxel];
        let pick = rng.next_f64() * total;
        if pick < sim.a[voxel] {
            reaction_events += 1;
            sim.fire_reaction(voxel, pick)?;
            sim.a[voxel] = sim.reaction_total(voxel)?;
            sim.d[voxel] = sim.diffusion_total(voxel);
            queue.update(voxel, sim.t + rng.exp(sim.a[voxel] + sim.d[voxel]));
        } else {
            diffusion_events += 1;
            let dest = sim.move_molecule(voxel, pick - sim.a[voxel]);
            let dest_old_total = sim.a[dest] + sim.d[dest];
            sim.a[voxel] = sim.reaction_total(voxel)?;
            sim.d[voxel] = sim.diffusion_total(voxel);
            sim.a[dest] = sim.reaction_total(dest)?;
            sim.d[dest] = sim.diffusion_total(dest);
            queue.update(voxel, sim.t + rng.exp(sim.a[voxel] + sim.d[voxel]));
            let dest_new_total = sim.a[dest] + sim.d[dest];
            let new_key = match opts.reschedule {
                RescheduleMode::Redraw => sim.t + rng.exp(dest_new_total),
                RescheduleMode::Rescale => {
                    let old_key = queue.key_of(dest);
                    if dest_new_total <= 0.0 {
                        f64::INFINITY
                    } else if old_key.is_infinite() || dest_old_total <= 0.0 {
                        sim.t + rng.exp(dest_new_total)
                    } else {
                        sim.t + (old_key - sim.t) * dest_old_total / dest_new_total
                    }
                }
            };
            queue.update(dest, new_key);
        }
        if events % opts.resync_every == 0 {
            max_drift = max_drift.max(sim.resync()?);
        }
    }
    while next_out < tspan.len() {
        frames.extend_from_slice(&sim.counts);
        next_out += 1;
    }
    if k > 0 {
        max_drift = max_drift.max(sim.resync()?);
    }

    let mut traj = Trajectory::new(
        model.content_hash,
        seed,
        tspan,
        k,
        sim.n_species,
        frames,
    );
    traj.stats = RunStats {
        solver: SolverKind::Nsm,
        wall_seconds: started.elapsed().as_secs_f64(),
        reaction_events,
        diffusion_events,
        max_resync_drift: max_drift,
    };
    Ok(traj)
}

struct Nsm<'a, 'm> {
    model: &'a CompiledModel<'m>,
    diffusion: &'a DiffusionMatrix,
    n_species: usize,
    counts: Vec<u64>,
    /// Per-voxel total reaction propensity.
    a: Vec<f64>,
    /// Per-voxel total diffusion propensity.
    d: Vec<f64>,
    scratch: Vec<f64>,
    t: f64,
}

impl Nsm<'_, '_> {
    fn count(&self, voxel: usize, species: usize) -> u64 {
        self.counts[voxel * self.n_species + species]
    }

    fn reaction_total(&self, voxel: usize) -> Result<f64, SolverError> {
        let row = &self.counts[voxel * self.n_species..(voxel + 1) * self.n_species];
        let lookup = |s: usize| row[s] as f64;
        let mut sum = 0.0;
        for r in 0..self.model.n_reactions() {
            sum += self
                .model
                .propensity(r, voxel, &lookup)
                .map_err(|f| SolverError::from_fault(f, self.t))?;
        }
        Ok(sum)
    }

    fn diffusion_total(&self, voxel: usize) -> f64 {
        let mut sum = 0.0;
        for s in 0..self.n_species {
            sum += self.diffusion.species(s).exit_rate(voxel) * self.count(voxel, s) as f64;
        }
        sum
    }

    /// Select and apply one reaction in `voxel`; `target` falls in
    /// `[0, a_voxel)`.
    fn fire_reaction(&mut self, voxel: usize, target: f64) -> Result<(), SolverError> {
        let base = voxel * self.n_species;
        let row = &self.counts[base..base + self.n_species];
        let lookup = |s: usize| row[s] as f64;
        let mut chosen = None;
        let mut cum = 0.0;
        for r in 0..self.model.n_reactions() {
            let p = self
                .model
                .propensity(r, voxel, &lookup)
                .map_err(|f| SolverError::from_fault(f, self.t))?;
            self.scratch[r] = p;
            cum += p;
            if target < cum {
                chosen = Some(r);
                break;
            }
        }
        // guard against last-ulp disagreement with the cached total
        let r = chosen.unwrap_or_else(|| {
            (0..self.model.n_reactions())
                .rev()
                .find(|&r| self.scratch[r] > 0.0)
                .expect("reaction branch selected with zero total propensity")
        });
        for &(species, delta) in &self.model.reactions[r].delta {
            let slot = &mut self.counts[base + species];
            if delta < 0 {
                let need = (-delta) as u64;
                if *slot < need {
                    return Err(SolverError::NegativeCount {
                        reaction: r,
                        voxel,
                        time: self.t,
                    });
                }
                *slot -= need;
            } else {
                *slot += delta as u64;
            }
        }
        Ok(())
    }

    /// Select a diffusion channel in `voxel` and move one molecule;
    /// returns the destination voxel. `target` falls in `[0, d_voxel)`.
    fn move_molecule(&mut self, voxel: usize, target: f64) -> usize {
        let mut remaining = target;
        let mut fallback: Option<(usize, usize)> = None;
        for s in 0..self.n_species {
            let x = self.count(voxel, s) as f64;
            if x == 0.0 {
                continue;
            }
            let species_weight = self.diffusion.species(s).exit_rate(voxel) * x;
            if species_weight <= 0.0 {
                continue;
            }
            if remaining >= species_weight {
                remaining -= species_weight;
                if let Some(&(dest, _)) = self.diffusion.species(s).row(voxel).last() {
                    fallback = Some((s, dest));
                }
                continue;
            }
            for &(dest, rate) in self.diffusion.species(s).row(voxel) {
                let w = rate * x;
                if remaining < w {
                    return self.apply_move(voxel, dest, s);
                }
                remaining -= w;
                fallback = Some((s, dest));
            }
            // fp slack within the species row: take its last channel
            let (fs, fdest) = fallback.expect("species weight positive but no channels");
            return self.apply_move(voxel, fdest, fs);
        }
        let (fs, fdest) = fallback.expect("diffusion branch selected with zero total propensity");
        self.apply_move(voxel, fdest, fs)
    }

    fn apply_move(&mut self, from: usize, to: usize, species: usize) -> usize {
        debug_assert!(self.count(from, species) > 0);
        self.counts[from * self.n_species + species] -= 1;
        self.counts[to * self.n_species + species] += 1;
        to
    }

    /// Recompute all totals from scratch; returns the largest relative
    /// drift of the incrementally maintained values.
    fn resync(&mut self) -> Result<f64, SolverError> {
        let mut worst: f64 = 0.0;
        for v in 0..self.a.len() {
            let fresh_a = self.reaction_total(v)?;
            let fresh_d = self.diffusion_total(v);
            for (cached, fresh) in [(self.a[v], fresh_a), (self.d[v], fresh_d)] {
                let scale = fresh.abs().max(1e-300);
                worst = worst.max((cached - fresh).abs() / scale);
            }
            self.a[v] = fresh_a;
            self.d[v] = fresh_d;
        }
        Ok(worst)
    }
}
