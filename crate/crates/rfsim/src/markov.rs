//! Sparse continuous-time Markov chain generators and exact transient
//! distributions via uniformization (Jensen's method).
//!
//! Used both for the per-molecule diffusion generator (mean-field checks)
//! and for the enumerated reaction-diffusion generator on tiny systems.

/// Row-sparse CTMC generator: off-diagonal jump rates plus the implied
/// diagonal. Rows sum to zero by construction.
#[derive(Clone, Debug)]
pub struct SparseGenerator {
    n: usize,
    /// Per state: (destination, rate > 0).
    rows: Vec<Vec<(usize, f64)>>,
    /// Per state: total exit rate (= -diagonal).
    exit: Vec<f64>,
}

impl SparseGenerator {
    /// Build from a per-state jump-rate closure.
    pub fn from_rates(n: usize, row: impl Fn(usize) -> Vec<(usize, f64)>) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| row(i).into_iter().filter(|&(_, r)| r > 0.0).collect())
            .collect();
        let exit = rows
            .iter()
            .map(|r: &Vec<(usize, f64)>| r.iter().map(|&(_, x)| x).sum())
            .collect();
        SparseGenerator { n, rows, exit }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn jumps(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        self.exit[state]
    }

    /// Dense matrix view; rows are source states. Intended for tiny
    /// systems and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for &(j, r) in &self.rows[i] {
                q[i][j] += r;
            }
            q[i][i] = -self.exit[i];
        }
        q
    }

    /// Row-vector product `p * P` where `P = I + Q/lambda`.
    fn uniformized_step(&self, p: &[f64], lambda: f64, out: &mut [f64]) {
        out.copy_from_slice(p);
        for i in 0..self.n {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            out[i] -= pi * self.exit[i] / lambda;
            for &(j, r) in &self.rows[i] {
                out[j] += pi * r / lambda;
            }
        }
    }

    /// Distribution at time `t` starting from `p0`: `p0 * exp(Q t)`.
    ///
    /// Uniformization with the Poisson series truncated at relative tail
    /// mass 1e-13; large `lambda * t` is handled by time chunking so the
    /// leading Poisson weight never underflows.
    pub fn transient(&self, p0: &[f64], t: f64) -> Vec<f64> {
        assert_eq!(p0.len(), self.n);
        let lambda_raw = self.exit.iter().cloned().fold(0.0, f64::max);
        if lambda_raw == 0.0 || t == 0.0 {
            return p0.to_vec();
        }
        let lambda = lambda_raw * 1.02;
        let chunks = (lambda * t / 500.0).ceil().max(1.0) as usize;
        let dt = t / chunks as f64;
        let mut p = p0.to_vec();
        let mut v = vec![0.0; self.n];
        let mut next = vec![0.0; self.n];
        for _ in 0..chunks {
            let lt = lambda * dt;
            let mut weight = (-lt).exp();
            let mut acc: Vec<f64> = p.iter().map(|&x| x * weight).collect();
            let mut consumed = weight;
            v.copy_from_slice(&p);
            let mut k = 1.0;
            while consumed < 1.0 - 1e-13 {
                self.uniformized_step(&v, lambda, &mut next);
                std::mem::swap(&mut v, &mut next);
                weight *= lt / k;
                k += 1.0;
                for (a, &b) in acc.iter_mut().zip(v.iter()) {
                    *a += weight * b;
                }
                consumed += weight;
                if k > lt + 60.0 * (lt.sqrt() + 1.0) {
                    break;
                }
            }
            p.copy_from_slice(&acc);
        }
        p
    }
}
