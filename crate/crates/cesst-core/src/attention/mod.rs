//! Spatial token shuffling and the three multi-head self-attention variants.

mod flops;
mod msa;

pub use flops::{count_flops, flop_csv_header, flop_csv_row, FlopCount, MsaVariant};
pub use msa::{
    cyclic_shift, global_msa, global_msa_traced, shifted_window_msa, shuffle_window_msa,
    shuffle_window_msa_traced, spectral_msa, spectral_msa_cross, spectral_msa_qkv_traced,
    spectral_msa_traced, window_msa, window_msa_traced, AttentionParams, DepthwiseBridge,
    MsaTrace,
};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Window geometry for spatial attention: window size `M` over an `H x W`
/// token grid with `N = H * W` tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub height: usize,
    pub width: usize,
}

impl WindowSpec {
    pub fn new(window: usize, height: usize, width: usize) -> Result<Self> {
        if window == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArg {
                op: "window_spec",
                msg: format!("zero extent in (M={window}, H={height}, W={width})"),
            });
        }
        Ok(WindowSpec {
            window,
            height,
            width,
        })
    }

    pub fn token_count(&self) -> usize {
        self.height * self.width
    }

    pub fn divides(&self) -> bool {
        self.height % self.window == 0 && self.width % self.window == 0
    }

    /// Token-order permutation of the spatial shuffle: reshape the token
    /// sequence to `(M, N/M)`, transpose, flatten. Output position `j`
    /// takes the token from `shuffle[j]`.
    pub fn shuffle_permutation(&self) -> Result<Vec<usize>> {
        shuffle_indices(self.token_count(), self.window)
    }

    /// Exact inverse of the shuffle: reshape to `(N/M, M)`, transpose, flatten.
    pub fn alignment_permutation(&self) -> Result<Vec<usize>> {
        let n = self.token_count();
        if n % self.window != 0 {
            return Err(Error::InvalidArg {
                op: "alignment_permutation",
                msg: format!("window {} does not divide token count {n}", self.window),
            });
        }
        shuffle_indices(n, n / self.window)
    }
}

/// Gather indices realizing reshape `(m, n/m)` -> transpose -> flatten:
/// position `b*m + a` reads from `a*(n/m) + b`.
pub fn shuffle_indices(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || n % m != 0 {
        return Err(Error::InvalidArg {
            op: "shuffle_indices",
            msg: format!("window {m} does not divide token count {n}"),
        });
    }
    let cols = n / m;
    let mut idx = Vec::with_capacity(n);
    for b in 0..cols {
        for a in 0..m {
            idx.push(a * cols + b);
        }
    }
    Ok(idx)
}

/// Reorder tokens `[B, N, C]` by the shuffle permutation. Pure data movement.
pub fn spatial_shuffle<E: Element>(tokens: &Tensor<E>, spec: &WindowSpec) -> Result<Tensor<E>> {
    apply_token_permutation(tokens, &spec.shuffle_permutation()?, spec)
}

/// Inverse reorder of `spatial_shuffle`.
pub fn spatial_alignment<E: Element>(tokens: &Tensor<E>, spec: &WindowSpec) -> Result<Tensor<E>> {
    apply_token_permutation(tokens, &spec.alignment_permutation()?, spec)
}

fn apply_token_permutation<E: Element>(
    tokens: &Tensor<E>,
    perm: &[usize],
    spec: &WindowSpec,
) -> Result<Tensor<E>> {
    let dims = tokens.dims();
    if dims.len() != 3 || dims[1] != spec.token_count() {
        return Err(Error::ShapeMismatch {
            op: "spatial_shuffle",
            lhs: tokens.shape().to_string(),
            rhs: format!("[B, {}, C]", spec.token_count()),
        });
    }
    tokens.index_select(1, perm)
}

/// Shuffle applied to `[B, C, H, W]` feature maps (tokens flattened row-major).
pub(crate) fn shuffle_bchw<E: Element>(x: &Tensor<E>, spec: &WindowSpec) -> Result<Tensor<E>> {
    permute_bchw(x, &spec.shuffle_permutation()?)
}

pub(crate) fn alignment_bchw<E: Element>(x: &Tensor<E>, spec: &WindowSpec) -> Result<Tensor<E>> {
    permute_bchw(x, &spec.alignment_permutation()?)
}

fn permute_bchw<E: Element>(x: &Tensor<E>, perm: &[usize]) -> Result<Tensor<E>> {
    let d = x.dims().to_vec();
    x.reshape(&[d[0], d[1], d[2] * d[3]])?
        .index_select(2, perm)?
        .reshape(&d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: literally reshape the identity sequence into an
    /// `(m, n/m)` matrix, transpose it, flatten it.
    fn brute_force_shuffle(n: usize, m: usize) -> Vec<usize> {
        let cols = n / m;
        let matrix: Vec<Vec<usize>> = (0..m).map(|a| (0..cols).map(|b| a * cols + b).collect()).collect();
        let mut out = Vec::with_capacity(n);
        for b in 0..cols {
            for a in 0..m {
                out.push(matrix[a][b]);
            }
        }
        out
    }

    fn apply(data: &[usize], perm: &[usize]) -> Vec<usize> {
        perm.iter().map(|&i| data[i]).collect()
    }

    #[test]
    fn shuffle_examples() {
        assert_eq!(shuffle_indices(4, 2).unwrap(), vec![0, 2, 1, 3]);
        assert_eq!(shuffle_indices(6, 2).unwrap(), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn degenerate_windows_are_identity() {
        for n in [1usize, 4, 9, 16] {
            assert_eq!(shuffle_indices(n, 1).unwrap(), (0..n).collect::<Vec<_>>());
            assert_eq!(shuffle_indices(n, n).unwrap(), (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn alignment_inverts_shuffle_example() {
        // N=6, M=2: [0,3,1,4,2,5] -> [0..5]
        let spec = WindowSpec::new(2, 2, 3).unwrap();
        let shuffled = apply(&[0, 1, 2, 3, 4, 5], &spec.shuffle_permutation().unwrap());
        assert_eq!(shuffled, vec![0, 3, 1, 4, 2, 5]);
        let restored = apply(&shuffled, &spec.alignment_permutation().unwrap());
        assert_eq!(restored, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn matches_brute_force_for_all_small_sizes() {
        for n in 1..=64usize {
            for m in 1..=n {
                if n % m != 0 {
                    continue;
                }
                assert_eq!(
                    shuffle_indices(n, m).unwrap(),
                    brute_force_shuffle(n, m),
                    "n={n} m={m}"
                );
            }
        }
    }

    #[test]
    fn maps_index_am_plus_b_to_bm_plus_a() {
        // invariant: token at i = a*(N/M)+b lands at position b*M+a
        let (n, m) = (24usize, 4usize);
        let perm = shuffle_indices(n, m).unwrap();
        let cols = n / m;
        for a in 0..m {
            for b in 0..cols {
                assert_eq!(perm[b * m + a], a * cols + b);
            }
        }
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let spec = WindowSpec::new(2, 4, 4).unwrap();
        let data: Vec<f32> = (0..2 * 16 * 3).map(|v| v as f32 * 0.37).collect();
        let x = Tensor::from_vec(data.clone(), &[2, 16, 3]).unwrap();
        let y = spatial_alignment(&spatial_shuffle(&x, &spec).unwrap(), &spec).unwrap();
        for (a, b) in y.to_vec().iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn shuffle_errors_on_token_count_mismatch() {
        let spec = WindowSpec::new(2, 4, 4).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 8, 3]).unwrap();
        assert!(spatial_shuffle(&x, &spec).is_err());
    }
}
