// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the 64-bit root seed and
//! addressed by a stream id, so sub-streams never overlap and do not depend
//! on the order in which they are created.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Returns the generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill keeps draws reproducible across nalgebra versions
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Random `n × k` matrix with orthonormal columns (QR of a Gaussian matrix).
pub fn orthonormal_columns<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    assert!(
        k <= n,
        "cannot draw {k} orthonormal columns in dimension {n}"
    );
    let g = normal_matrix(rng, n, k);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // fix signs so the draw is a deterministic function of the Gaussian sample
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
