//! Operator factories for the two kinds of factors that appear in the model
//! family: finite spin spaces (single multiplets or direct sums of them) and
//! truncated boson (Fock) spaces.
//!
//! Basis conventions, fixed here and relied on everywhere else:
//!
//! * A spin multiplet of size `2j+1` is ordered by descending magnetic
//!   quantum number: index `k` holds `m = j - k`.
//! * A multi-multiplet space is the direct sum in the order the multiplets
//!   were listed; labels carry `(2j, 2m)` as integers.
//! * A Fock space truncated at `n_max` is ordered `n = 0 ..= n_max`.

use crate::linalg::{kron, OperatorMatrix, SpaceLayout, StateVector};
use crate::numeric::log_factorial;
use crate::C64;

/// Direct sum of spin multiplets, each given by its doubled spin `2j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinSpace {
    /// Doubled spin of each multiplet, in basis order.
    pub two_js: Vec<u32>,
}

impl SpinSpace {
    pub fn single(two_j: u32) -> Self {
        Self {
            two_js: vec![two_j],
        }
    }

    pub fn multi(two_js: Vec<u32>) -> Self {
        assert!(!two_js.is_empty(), "spin space needs at least one multiplet");
        Self { two_js }
    }

    pub fn dim(&self) -> usize {
        self.two_js.iter().map(|&t| t as usize + 1).sum()
    }

    /// Starting index of each multiplet block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.two_js.len());
        let mut acc = 0usize;
        for &t in &self.two_js {
            offs.push(acc);
            acc += t as usize + 1;
        }
        offs
    }

    /// `(2j, 2m)` for every basis state, in order.
    pub fn labels(&self) -> Vec<(u32, i32)> {
        let mut out = Vec::with_capacity(self.dim());
        for &two_j in &self.two_js {
            for k in 0..=two_j {
                out.push((two_j, two_j as i32 - 2 * k as i32));
            }
        }
        out
    }

    /// z-projection operator (diagonal `m` values).
    pub fn jz(&self) -> OperatorMatrix {
        let labels = self.labels();
        OperatorMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(labels[i].1 as f64 / 2.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Raising operator: maps `m` to `m + 1` within each multiplet.
    pub fn jplus(&self) -> OperatorMatrix {
        let dim = self.dim();
        let mut out = OperatorMatrix::zeros(dim, dim);
        let offsets = self.offsets();
        for (block, &two_j) in self.two_js.iter().enumerate() {
            let base = offsets[block];
            // Index k holds m = j - k; J+ maps k -> k-1 with amplitude
            // sqrt((j - m)(j + m + 1)) evaluated at the source m.
            for k in 1..=(two_j as usize) {
                let two_m = two_j as i32 - 2 * k as i32;
                let jm = (two_j as f64 - two_m as f64) / 2.0;
                let jp1 = (two_j as f64 + two_m as f64) / 2.0 + 1.0;
                out[(base + k - 1, base + k)] = C64::new((jm * jp1).sqrt(), 0.0);
            }
        }
        out
    }

    pub fn jminus(&self) -> OperatorMatrix {
        self.jplus().adjoint()
    }

    /// Total-spin Casimir: block-diagonal `j(j+1)`.
    pub fn jsquared(&self) -> OperatorMatrix {
        let labels = self.labels();
        OperatorMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                let jv = labels[i].0 as f64 / 2.0;
                C64::new(jv * (jv + 1.0), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Diagonal of the spin-magnitude quantum number itself (`j` per block).
    pub fn j_value_diag(&self) -> OperatorMatrix {
        let labels = self.labels();
        OperatorMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(labels[i].0 as f64 / 2.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }
}

/// Truncated boson space with levels `0 ..= n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    pub n_max: usize,
}

impl FockSpace {
    pub fn new(n_max: usize) -> Self {
        Self { n_max }
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    /// Annihilation operator: `a |n> = sqrt(n) |n-1>`.
    pub fn annihilation(&self) -> OperatorMatrix {
        let d = self.dim();
        let mut out = OperatorMatrix::zeros(d, d);
        for n in 1..d {
            out[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        out
    }

    pub fn creation(&self) -> OperatorMatrix {
        self.annihilation().adjoint()
    }

    /// Number operator `a^dag a` (diagonal `n`).
    pub fn number(&self) -> OperatorMatrix {
        OperatorMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(i as f64, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// Position quadrature `(a + a^dag)/sqrt(2)`.
    pub fn position(&self) -> OperatorMatrix {
        let a = self.annihilation();
        (&a + a.adjoint()).map(|z| z / C64::new(2.0f64.sqrt(), 0.0))
    }

    /// Momentum quadrature `i (a^dag - a)/sqrt(2)`.
    pub fn momentum(&self) -> OperatorMatrix {
        let a = self.annihilation();
        (a.adjoint() - &a).map(|z| z * C64::i() / C64::new(2.0f64.sqrt(), 0.0))
    }

    /// Basis vector `|n>`.
    pub fn fock_vector(&self, n: usize) -> StateVector {
        assert!(n <= self.n_max, "level {n} beyond truncation {}", self.n_max);
        let mut v = StateVector::zeros(self.dim());
        v[n] = C64::new(1.0, 0.0);
        v
    }

    /// Truncated coherent state `e^{-|alpha|^2/2} alpha^n / sqrt(n!)`, plus
    /// the weight lost to truncation (`1 - |returned|^2` in exact arithmetic).
    pub fn coherent_vector(&self, alpha: C64) -> (StateVector, f64) {
        let log_norm2 = alpha.norm_sqr();
        let mut v = StateVector::zeros(self.dim());
        let mut kept = 0.0f64;
        for n in 0..=self.n_max {
            // log magnitude of the amplitude: -|a|^2/2 + n ln|a| - ln(n!)/2
            let log_mag = -log_norm2 / 2.0
                + if n == 0 {
                    0.0
                } else {
                    n as f64 * alpha.norm().ln()
                }
                - log_factorial(n).expect("n_max within factorial table") / 2.0;
            let phase = if n == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, alpha.arg() * n as f64)
            };
            let amp = phase * log_mag.exp();
            kept += amp.norm_sqr();
            v[n] = amp;
        }
        (v, (1.0 - kept).max(0.0))
    }
}

/// Identity on a `dim`-dimensional factor.
pub fn identity(dim: usize) -> OperatorMatrix {
    OperatorMatrix::identity(dim, dim)
}

/// Embed a system-factor operator into the joint space: `op ⊗ I_env`.
pub fn embed_system(op: &OperatorMatrix, layout: SpaceLayout) -> OperatorMatrix {
    assert_eq!(op.nrows(), layout.system_dim, "system operator dimension");
    kron(op, &identity(layout.env_dim))
}

/// Embed an environment-factor operator into the joint space: `I_sys ⊗ op`.
pub fn embed_env(op: &OperatorMatrix, layout: SpaceLayout) -> OperatorMatrix {
    assert_eq!(op.nrows(), layout.env_dim, "environment operator dimension");
    kron(&identity(layout.system_dim), op)
}

/// Projector `|i><i|` on a `dim`-dimensional factor.
pub fn projector(dim: usize, i: usize) -> OperatorMatrix {
    assert!(i < dim);
    let mut p = OperatorMatrix::zeros(dim, dim);
    p[(i, i)] = C64::new(1.0, 0.0);
    p
}
