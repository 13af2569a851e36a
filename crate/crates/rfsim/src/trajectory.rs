//! Trajectories and their persistence format.
//!
//! A trajectory is the K x S count matrix sampled at each output time,
//! plus identifying metadata. The binary layout is bit-exact and
//! versioned (see `docs/trajectory-format.md`):
//!
//! ```text
//! bytes 0-7   magic "RFTRAJ01"
//! u32         version (currently 1; upper 16 bits reserved for a codec id)
//! 32 bytes    model content hash (SHA-256)
//! u64         seed
//! u32 u32 u32 K, S, T
//! T x f64     output times
//! T blocks    K x S u32 counts, voxel-major rows
//! u64         XXH64 (seed 0) of every preceding byte
//! ```
//!
//! All integers little-endian. Counts are 32-bit unsigned by design;
//! larger counts are a serialization overflow error rather than a silent
//! widening. Identical trajectories serialize to identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::mesh::{Mesh, SubdomainMap};

pub const TRAJ_MAGIC: &[u8; 8] = b"RFTRAJ01";
pub const TRAJ_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: not a trajectory file")]
    BadMagic,
    #[error("unsupported trajectory format version {0}")]
    VersionMismatch(u32),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("checksum failure: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("count {count} at t-index {t_index}, voxel {voxel}, species {species} exceeds the 32-bit format bound")]
    CountOverflow {
        t_index: usize,
        voxel: usize,
        species: usize,
        count: u64,
    },
    #[error("unknown species index {0}")]
    UnknownSpecies(usize),
    #[error("unknown voxel index {0}")]
    UnknownVoxel(usize),
    #[error("unknown subdomain label {0}")]
    UnknownLabel(u32),
    #[error("trajectory i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Which sampler produced a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolverKind {
    Nsm,
    DirectSsa,
    /// Loaded from storage; the file format does not carry solver
    /// identity.
    #[default]
    Stored,
}

/// Per-run statistics. Not persisted; excluded from equality.
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub solver: SolverKind,
    pub wall_seconds: f64,
    pub reaction_events: u64,
    pub diffusion_events: u64,
    /// Largest relative disagreement between incrementally maintained
    /// propensity totals and their from-scratch recomputation, observed
    /// at any resync point.
    pub max_resync_drift: f64,
}

/// Time series of state snapshots for one realization.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model_hash: [u8; 32],
    pub seed: u64,
    pub tspan: Vec<f64>,
    pub n_voxels: usize,
    pub n_species: usize,
    /// T x K x S counts, t-major then voxel-major.
    frames: Vec<u64>,
    pub stats: RunStats,
}

impl PartialEq for Trajectory {
    /// Equality over the persisted fields; `stats` is run-local.
    fn eq(&self, other: &Self) -> bool {
        self.model_hash == other.model_hash
            && self.seed == other.seed
            && self.tspan == other.tspan
            && self.n_voxels == other.n_voxels
            && self.n_species == other.n_species
            && self.frames == other.frames
    }
}

impl Trajectory {
    pub fn new(
        model_hash: [u8; 32],
        seed: u64,
        tspan: Vec<f64>,
        n_voxels: usize,
        n_species: usize,
        frames: Vec<u64>,
    ) -> Self {
        assert_eq!(frames.len(), tspan.len() * n_voxels * n_species);
        Trajectory {
            model_hash,
            seed,
            tspan,
            n_voxels,
            n_species,
            frames,
            stats: RunStats::default(),
        }
    }

    pub fn n_times(&self) -> usize {
        self.tspan.len()
    }

    /// K x S counts (voxel-major) at output time `t_index`.
    pub fn frame(&self, t_index: usize) -> &[u64] {
        let n = self.n_voxels * self.n_species;
        &self.frames[t_index * n..(t_index + 1) * n]
    }

    pub fn count(&self, t_index: usize, voxel: usize, species: usize) -> u64 {
        self.frames[(t_index * self.n_voxels + voxel) * self.n_species + species]
    }

    /// Sum of one species over a scope at each output time.
    pub fn timeseries(&self, species: usize, scope: Scope<'_>) -> Result<Vec<(f64, u64)>, StoreError> {
        if species >= self.n_species {
            return Err(StoreError::UnknownSpecies(species));
        }
        let voxels: Vec<usize> = match scope {
            Scope::Voxel(v) => {
                if v >= self.n_voxels {
                    return Err(StoreError::UnknownVoxel(v));
                }
                vec![v]
            }
            Scope::Subdomain(label, map) => {
                if map.len() != self.n_voxels {
                    return Err(StoreError::SizeMismatch(format!(
                        "subdomain map covers {} voxels, trajectory has {}",
                        map.len(),
                        self.n_voxels
                    )));
                }
                if !map.is_declared(label) {
                    return Err(StoreError::UnknownLabel(label));
                }
                map.voxels_with(label)
            }
            Scope::Domain => (0..self.n_voxels).collect(),
        };
        Ok(self
            .tspan
            .iter()
            .enumerate()
            .map(|(ti, &t)| {
                let sum = voxels.iter().map(|&v| self.count(ti, v, species)).sum();
                (t, sum)
            })
            .collect())
    }

    /// CSV rows `t,species,voxel,count` for every sample.
    pub fn export_csv(&self, w: &mut dyn Write) -> Result<(), StoreError> {
        writeln!(w, "t,species,voxel,count")?;
        for (ti, &t) in self.tspan.iter().enumerate() {
            for s in 0..self.n_species {
                for v in 0..self.n_voxels {
                    writeln!(w, "{t},{s},{v},{}", self.count(ti, v, s))?;
                }
            }
        }
        Ok(())
    }

    /// One row per voxel at a fixed time: coordinates, subdomain, counts.
    pub fn export_mesh_snapshot(
        &self,
        mesh: &Mesh,
        subs: &SubdomainMap,
        t_index: usize,
        w: &mut dyn Write,
    ) -> Result<(), StoreError> {
        if t_index >= self.n_times() {
            return Err(StoreError::SizeMismatch(format!(
                "t-index {t_index} out of range 0..{}",
                self.n_times()
            )));
        }
        if mesh.n_voxels() != self.n_voxels {
            return Err(StoreError::SizeMismatch(format!(
                "mesh has {} voxels, trajectory has {}",
                mesh.n_voxels(),
                self.n_voxels
            )));
        }
        write!(w, "x,y,z,subdomain")?;
        for s in 0..self.n_species {
            write!(w, ",s{s}")?;
        }
        writeln!(w)?;
        for v in 0..self.n_voxels {
            let c = mesh.coords(v);
            write!(w, "{},{},{},{}", c[0], c[1], c[2], subs.label(v))?;
            for s in 0..self.n_species {
                write!(w, ",{}", self.count(t_index, v, s))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Aggregation scope for [`Trajectory::timeseries`].
#[derive(Clone, Copy, Debug)]
pub enum Scope<'a> {
    Voxel(usize),
    Subdomain(u32, &'a SubdomainMap),
    Domain,
}

/// Serialize; returns the byte count written.
pub fn write_trajectory(traj: &Trajectory, sink: &mut dyn Write) -> Result<u64, StoreError> {
    let bytes = trajectory_to_bytes(traj)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn trajectory_to_bytes(traj: &Trajectory) -> Result<Vec<u8>, StoreError> {
    let t = traj.tspan.len();
    let k = traj.n_voxels;
    let s = traj.n_species;
    let mut out = Vec::with_capacity(8 + 4 + 32 + 8 + 12 + 8 * t + 4 * t * k * s + 8);
    out.extend_from_slice(TRAJ_MAGIC);
    out.extend_from_slice(&TRAJ_VERSION.to_le_bytes());
    out.extend_from_slice(&traj.model_hash);
    out.extend_from_slice(&traj.seed.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(s as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    for &tv in &traj.tspan {
        out.extend_from_slice(&tv.to_le_bytes());
    }
    for (i, &count) in traj.frames.iter().enumerate() {
        if count > u64::from(u32::MAX) {
            // the loop body implies k > 0 and s > 0
            let per_frame = k * s;
            return Err(StoreError::CountOverflow {
                t_index: i / per_frame,
                voxel: (i % per_frame) / s,
                species: i % s,
                count,
            });
        }
        out.extend_from_slice(&(count as u32).to_le_bytes());
    }
    let checksum = twox_hash::XxHash64::oneshot(0, &out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

pub fn read_trajectory(source: &mut dyn Read) -> Result<Trajectory, StoreError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    trajectory_from_bytes(&bytes)
}

pub fn trajectory_from_bytes(bytes: &[u8]) -> Result<Trajectory, StoreError> {
    let need = |n: usize, what: &str| -> Result<(), StoreError> {
        if bytes.len() < n {
            Err(StoreError::SizeMismatch(format!(
                "stream truncated in {what}: have {} bytes, need {n}",
                bytes.len()
            )))
        } else {
            Ok(())
        }
    };
    need(8 + 4 + 32 + 8 + 12 + 8, "header")?;
    if &bytes[..8] != TRAJ_MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != TRAJ_VERSION {
        return Err(StoreError::VersionMismatch(version));
    }
    let mut model_hash = [0u8; 32];
    model_hash.copy_from_slice(&bytes[12..44]);
    let seed = u64::from_le_bytes(bytes[44..52].try_into().unwrap());
    let k = u32::from_le_bytes(bytes[52..56].try_into().unwrap()) as usize;
    let s = u32::from_le_bytes(bytes[56..60].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[60..64].try_into().unwrap()) as usize;

    let expected = 64 + 8 * t + 4 * t * k * s + 8;
    if bytes.len() != expected {
        return Err(StoreError::SizeMismatch(format!(
            "declared K={k} S={s} T={t} needs {expected} bytes, stream has {}",
            bytes.len()
        )));
    }

    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = twox_hash::XxHash64::oneshot(0, &bytes[..body_end]);
    if stored != computed {
        return Err(StoreError::ChecksumMismatch { stored, computed });
    }

    let mut at = 64;
    let mut tspan = Vec::with_capacity(t);
    for _ in 0..t {
        tspan.push(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()));
        at += 8;
    }
    let mut frames = Vec::with_capacity(t * k * s);
    for _ in 0..t * k * s {
        frames.push(u64::from(u32::from_le_bytes(
            bytes[at..at + 4].try_into().unwrap(),
        )));
        at += 4;
    }
    Ok(Trajectory::new(model_hash, seed, tspan, k, s, frames))
}

pub fn write_trajectory_file(traj: &Trajectory, path: &Path) -> Result<u64, StoreError> {
    let mut f = std::fs::File::create(path)?;
    write_trajectory(traj, &mut f)
}

pub fn read_trajectory_file(path: &Path) -> Result<Trajectory, StoreError> {
    let mut f = std::fs::File::open(path)?;
    read_trajectory(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    fn sample_traj(k: usize, s: usize, t: usize, seed: u64) -> Trajectory {
        let mut rng = SimRng::new(seed);
        let tspan: Vec<f64> = (0..t).map(|i| i as f64 * 0.5).collect();
        let frames: Vec<u64> = (0..t * k * s).map(|_| rng.below(1000)).collect();
        Trajectory::new([7u8; 32], seed, tspan, k, s, frames)
    }

    #[test]
    fn xxh64_reference_vectors() {
        // Published XXH64 one-shot values pin the checksum algorithm.
        assert_eq!(twox_hash::XxHash64::oneshot(0, b""), 0xEF46_DB37_51D8_E999);
        assert_eq!(twox_hash::XxHash64::oneshot(0, b"a"), 0xD24E_C4F1_A98C_6E5B);
        assert_eq!(
            twox_hash::XxHash64::oneshot(0, b"abc"),
            0x44BC_2CF5_AD77_0999
        );
    }

    #[test]
    fn roundtrip_identity() {
        let traj = sample_traj(4, 3, 5, 99);
        let bytes = trajectory_to_bytes(&traj).unwrap();
        let back = trajectory_from_bytes(&bytes).unwrap();
        assert_eq!(back, traj);
        assert_eq!(back.model_hash, traj.model_hash);
        assert_eq!(back.seed, traj.seed);
    }

    #[test]
    fn deterministic_bytes() {
        let a = trajectory_to_bytes(&sample_traj(3, 2, 4, 1)).unwrap();
        let b = trajectory_to_bytes(&sample_traj(3, 2, 4, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_species_is_header_only() {
        let traj = Trajectory::new([0u8; 32], 5, vec![0.0, 1.0], 3, 0, vec![]);
        let bytes = trajectory_to_bytes(&traj).unwrap();
        assert_eq!(bytes.len(), 64 + 16 + 8);
        let back = trajectory_from_bytes(&bytes).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn count_overflow_is_an_error() {
        let traj = Trajectory::new(
            [0u8; 32],
            1,
            vec![0.0],
            1,
            1,
            vec![u64::from(u32::MAX) + 1],
        );
        match trajectory_to_bytes(&traj) {
            Err(StoreError::CountOverflow { count, .. }) => {
                assert_eq!(count, u64::from(u32::MAX) + 1)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_stream_is_size_mismatch() {
        let bytes = trajectory_to_bytes(&sample_traj(2, 2, 3, 4)).unwrap();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(
            trajectory_from_bytes(cut),
            Err(StoreError::SizeMismatch(_))
        ));
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = trajectory_to_bytes(&sample_traj(2, 2, 3, 4)).unwrap();
        bytes[70] ^= 0x01; // inside the tspan/count body
        assert!(matches!(
            trajectory_from_bytes(&bytes),
            Err(StoreError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = trajectory_to_bytes(&sample_traj(1, 1, 1, 4)).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            trajectory_from_bytes(&wrong),
            Err(StoreError::BadMagic)
        ));
        bytes[8] = 9; // version 9
        assert!(matches!(
            trajectory_from_bytes(&bytes),
            Err(StoreError::VersionMismatch(9))
        ));
    }

    #[test]
    fn timeseries_scopes() {
        // 2 voxels, 1 species, constant counts 3 and 4
        let traj = Trajectory::new(
            [0u8; 32],
            0,
            vec![0.0, 1.0],
            2,
            1,
            vec![3, 4, 3, 4],
        );
        let whole = traj.timeseries(0, Scope::Domain).unwrap();
        assert_eq!(whole, vec![(0.0, 7), (1.0, 7)]);
        let single = traj.timeseries(0, Scope::Voxel(1)).unwrap();
        assert_eq!(single, vec![(0.0, 4), (1.0, 4)]);
        let map = SubdomainMap::new(vec![1, 2]);
        let sub = traj.timeseries(0, Scope::Subdomain(2, &map)).unwrap();
        assert_eq!(sub, single);
        assert!(traj.timeseries(1, Scope::Domain).is_err());
        assert!(traj.timeseries(0, Scope::Voxel(9)).is_err());
        assert!(traj.timeseries(0, Scope::Subdomain(9, &map)).is_err());
    }

    #[test]
    fn csv_export_shape() {
        let traj = Trajectory::new([0u8; 32], 0, vec![0.0, 2.0], 1, 1, vec![5, 6]);
        let mut buf = Vec::new();
        traj.export_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,species,voxel,count");
        assert_eq!(lines.len(), 3); // header + 2 rows
        assert_eq!(lines[1], "0,0,0,5");
        assert_eq!(lines[2], "2,0,0,6");
    }
}
