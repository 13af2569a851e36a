//! Master-equation generator on a capped, enumerated state space.
//!
//! For tiny systems the reaction-diffusion master equation can be solved
//! directly: enumerate every state with per-voxel species counts up to a
//! cap, build the CTMC generator Q (transitions that would leave the
//! capped space are truncated), and evolve `p(t) = p(0) exp(Qt)` by
//! uniformization. The enumerated space is limited to 2e5 states.

use crate::markov::SparseGenerator;
use crate::mesh::DiffusionMatrix;
use crate::model::CompiledModel;

use super::SolverError;

pub const MAX_ENUMERATED_STATES: usize = 200_000;

/// Dense enumeration of the capped RDME state space with its generator.
pub struct CtmcGenerator {
    k: usize,
    s: usize,
    /// Per species: cell values run 0..=cap.
    caps: Vec<u64>,
    gen: SparseGenerator,
}

impl CtmcGenerator {
    /// Enumerate all states with per-(voxel, species) counts up to
    /// `caps[species]` and build the generator.
    pub fn build(
        model: &CompiledModel<'_>,
        diffusion: &DiffusionMatrix,
        caps: &[u64],
    ) -> Result<Self, SolverError> {
        let k = model.n_voxels();
        let s = model.n_species();
        if caps.len() != s {
            return Err(SolverError::Mismatch(format!(
                "{} caps for {} species",
                caps.len(),
                s
            )));
        }
        if diffusion.n_voxels() != k || diffusion.n_species() != s {
            return Err(SolverError::Mismatch(
                "diffusion matrix does not match the model".into(),
            ));
        }
        let mut n_states: u128 = 1;
        for _ in 0..k {
            for &cap in caps {
                n_states = n_states.saturating_mul(u128::from(cap) + 1);
                if n_states > MAX_ENUMERATED_STATES as u128 {
                    return Err(SolverError::Capacity {
                        states: n_states,
                        cap: MAX_ENUMERATED_STATES,
                    });
                }
            }
        }
        let n = n_states as usize;

        let this = CtmcGenerator {
            k,
            s,
            caps: caps.to_vec(),
            gen: SparseGenerator::from_rates(0, |_| vec![]),
        };

        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut state = vec![0u64; k * s];
        for idx in 0..n {
            this.decode_into(idx, &mut state);
            rows.push(this.transitions(model, diffusion, &state)?);
        }
        Ok(CtmcGenerator {
            gen: SparseGenerator::from_rates(n, |i| rows[i].clone()),
            ..this
        })
    }

    fn transitions(
        &self,
        model: &CompiledModel<'_>,
        diffusion: &DiffusionMatrix,
        state: &[u64],
    ) -> Result<Vec<(usize, f64)>, SolverError> {
        let mut out = Vec::new();
        let mut target = state.to_vec();
        for v in 0..self.k {
            let row = &state[v * self.s..(v + 1) * self.s];
            let lookup = |sp: usize| row[sp] as f64;
            for r in 0..model.n_reactions() {
                let rate = model
                    .propensity(r, v, &lookup)
                    .map_err(|f| SolverError::from_fault(f, 0.0))?;
                if rate <= 0.0 {
                    continue;
                }
                target.copy_from_slice(state);
                if self.apply_delta(&mut target, v, &model.reactions[r].delta) {
                    out.push((self.index_of(&target).unwrap(), rate));
                }
            }
            for sp in 0..self.s {
                let x = state[v * self.s + sp];
                if x == 0 {
                    continue;
                }
                for &(dest, rate) in diffusion.species(sp).row(v) {
                    let w = rate * x as f64;
                    if w <= 0.0 {
                        continue;
                    }
                    if state[dest * self.s + sp] + 1 > self.caps[sp] {
                        continue; // truncated at the cap
                    }
                    target.copy_from_slice(state);
                    target[v * self.s + sp] -= 1;
                    target[dest * self.s + sp] += 1;
                    out.push((self.index_of(&target).unwrap(), w));
                }
            }
        }
        Ok(out)
    }

    /// Apply a reaction delta; false when the result leaves the capped
    /// space (insufficient reactants or a count above the cap).
    fn apply_delta(&self, state: &mut [u64], voxel: usize, delta: &[(usize, i64)]) -> bool {
        for &(sp, d) in delta {
            let slot = voxel * self.s + sp;
            if d < 0 {
                let need = (-d) as u64;
                if state[slot] < need {
                    return false;
                }
                state[slot] -= need;
            } else {
                let next = state[slot] + d as u64;
                if next > self.caps[sp] {
                    return false;
                }
                state[slot] = next;
            }
        }
        true
    }

    pub fn n_states(&self) -> usize {
        self.gen.n_states()
    }

    pub fn generator(&self) -> &SparseGenerator {
        &self.gen
    }

    /// Index of a full K x S state (voxel-major), if it lies in the
    /// capped space.
    pub fn index_of(&self, state: &[u64]) -> Option<usize> {
        if state.len() != self.k * self.s {
            return None;
        }
        let mut idx: usize = 0;
        let mut stride: usize = 1;
        for (cell, &x) in state.iter().enumerate() {
            let cap = self.caps[cell % self.s];
            if x > cap {
                return None;
            }
            idx += x as usize * stride;
            stride *= cap as usize + 1;
        }
        Some(idx)
    }

    /// State vector for an enumeration index.
    pub fn decode(&self, idx: usize) -> Vec<u64> {
        let mut state = vec![0u64; self.k * self.s];
        self.decode_into(idx, &mut state);
        state
    }

    fn decode_into(&self, mut idx: usize, state: &mut [u64]) {
        for (cell, slot) in state.iter_mut().enumerate() {
            let base = self.caps[cell % self.s] as usize + 1;
            *slot = (idx % base) as u64;
            idx /= base;
        }
    }

    /// Distribution over enumerated states at time `t`, starting from a
    /// point mass on `initial`.
    pub fn transient_from(&self, initial: &[u64], t: f64) -> Result<Vec<f64>, SolverError> {
        let idx = self.index_of(initial).ok_or_else(|| {
            SolverError::Mismatch("initial state lies outside the capped space".into())
        })?;
        let mut p0 = vec![0.0; self.n_states()];
        p0[idx] = 1.0;
        Ok(self.gen.transient(&p0, t))
    }

    /// Dense Q for inspection; rows are source states and sum to zero.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.gen.to_dense()
    }
}

/// Free-function constructor; `state_cap` applies per voxel to every
/// species.
pub fn build_ctmc_generator(
    model: &CompiledModel<'_>,
    diffusion: &DiffusionMatrix,
    state_cap: &[u64],
) -> Result<CtmcGenerator, SolverError> {
    CtmcGenerator::build(model, diffusion, state_cap)
}
