//! The eight rotation/flip actions on square patches.
//!
//! Actions are stored as index permutations over the `patch_side^2` spatial
//! positions rather than permutation matrices; applying one is O(p). The
//! set `[P1..P8] = [id, rot90, rot180, rot270, flip, flip*rot90, flip*rot180,
//! flip*rot270]` is closed under composition (the dihedral group of the
//! square), every element is invertible, and the inverse permutation equals
//! the matrix transpose of the corresponding action matrix.
//!
//! Conventions: rotations are clockwise; the flip mirrors the patch
//! left-right (across the vertical axis); `flip*rotN` means rotate first,
//! then flip. Multi-channel patches are permuted identically per channel.

use crate::error::{Error, Result};

/// Number of actions in the rotation-flip set.
pub const ACTION_COUNT: usize = 8;

/// Index of the inverse of action `k` (1-based, position 0 unused).
const INVERSE_INDEX: [u8; 9] = [0, 1, 4, 3, 2, 5, 6, 7, 8];

/// One spatial permutation of a square patch.
///
/// `perm[s] = d` sends the value at flattened position `s` to position `d`:
/// `out[d] = in[s]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    index: u8,
    side: usize,
    perm: Vec<usize>,
}

impl Action {
    /// 1-based index `k` of this action within `[P1..P8]`.
    pub fn index(&self) -> u8 {
        self.index
    }

    pub fn patch_side(&self) -> usize {
        self.side
    }

    /// Destination permutation over `{0..patch_side^2-1}`.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &d)| i == d)
    }

    /// Apply to a vectorized patch (length must be a multiple of
    /// `patch_side^2`; each channel block is permuted identically).
    pub fn apply(&self, patch: &[f64]) -> Result<Vec<f64>> {
        let p = self.perm.len();
        if p == 0 || !patch.len().is_multiple_of(p) {
            return Err(Error::shape(
                "Action::apply",
                format!("multiple of {p}"),
                patch.len(),
            ));
        }
        let mut out = vec![0.0; patch.len()];
        self.apply_into(patch, &mut out);
        Ok(out)
    }

    /// Permute `src` into `dst`; both must have the same valid length.
    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        let p = self.perm.len();
        debug_assert_eq!(src.len(), dst.len());
        debug_assert_eq!(src.len() % p, 0);
        for (block_src, block_dst) in src.chunks_exact(p).zip(dst.chunks_exact_mut(p)) {
            for (s, &d) in self.perm.iter().enumerate() {
                block_dst[d] = block_src[s];
            }
        }
    }

    /// The action undoing this one. For permutation matrices the inverse
    /// equals the transpose, so `apply(inverse, apply(self, x)) == x` exactly.
    pub fn inverse(&self) -> Action {
        let mut perm = vec![0usize; self.perm.len()];
        for (s, &d) in self.perm.iter().enumerate() {
            perm[d] = s;
        }
        Action {
            index: INVERSE_INDEX[self.index as usize],
            side: self.side,
            perm,
        }
    }

    /// Composition `self * other`: apply `other` first, then `self`.
    /// Returns the composed permutation (an element of the same group).
    pub fn compose_perm(&self, other: &Action) -> Vec<usize> {
        other.perm.iter().map(|&mid| self.perm[mid]).collect()
    }
}

/// Destination index of source cell `(r, c)` under a clockwise quarter turn.
fn rot90_dest(side: usize, r: usize, c: usize) -> usize {
    c * side + (side - 1 - r)
}

/// Destination index of source cell `(r, c)` under a left-right mirror.
fn flip_dest(side: usize, r: usize, c: usize) -> usize {
    r * side + (side - 1 - c)
}

fn perm_from_dest(side: usize, dest: impl Fn(usize, usize) -> usize) -> Vec<usize> {
    let mut perm = vec![0usize; side * side];
    for r in 0..side {
        for c in 0..side {
            perm[r * side + c] = dest(r, c);
        }
    }
    perm
}

fn compose(first: &[usize], then: &[usize]) -> Vec<usize> {
    first.iter().map(|&mid| then[mid]).collect()
}

/// Build the eight rotation/flip actions for a given patch side.
pub fn build_actions(patch_side: usize) -> Vec<Action> {
    assert!(patch_side >= 1, "patch_side must be >= 1");
    let identity: Vec<usize> = (0..patch_side * patch_side).collect();
    let rot90 = perm_from_dest(patch_side, |r, c| rot90_dest(patch_side, r, c));
    let rot180 = compose(&rot90, &rot90);
    let rot270 = compose(&rot180, &rot90);
    let flip = perm_from_dest(patch_side, |r, c| flip_dest(patch_side, r, c));
    let perms = [
        identity,
        rot90.clone(),
        rot180.clone(),
        rot270.clone(),
        flip.clone(),
        compose(&rot90, &flip),
        compose(&rot180, &flip),
        compose(&rot270, &flip),
    ];
    perms
        .into_iter()
        .enumerate()
        .map(|(i, perm)| Action {
            index: (i + 1) as u8,
            side: patch_side,
            perm,
        })
        .collect()
}

/// The identity-only action set (reduces the model to a plain denoising
/// auto-encoder).
pub fn identity_only(patch_side: usize) -> Vec<Action> {
    build_actions(patch_side).into_iter().take(1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Coordinate-level oracle: apply a named spatial operation to a
    /// side x side grid of values, independent of the permutation encoding.
    fn oracle_apply(op: usize, side: usize, v: &[f64]) -> Vec<f64> {
        let at = |r: usize, c: usize| v[r * side + c];
        let mut out = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                out[r * side + c] = match op {
                    1 => at(r, c),
                    2 => at(side - 1 - c, r),            // rot 90 cw
                    3 => at(side - 1 - r, side - 1 - c), // rot 180
                    4 => at(c, side - 1 - r),            // rot 270 cw
                    5 => at(r, side - 1 - c),            // flip left-right
                    6 => at(c, r),                       // flip of rot90 = transpose
                    7 => at(side - 1 - r, c),            // flip of rot180 = up-down
                    8 => at(side - 1 - c, side - 1 - r), // flip of rot270 = anti-transpose
                    _ => unreachable!(),
                };
            }
        }
        out
    }

    #[test]
    fn two_by_two_rotation_matches_hand_case() {
        let actions = build_actions(2);
        // [a, b; c, d] rotated 90 degrees clockwise is [c, a; d, b].
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = actions[1].apply(&x).unwrap();
        assert_eq!(y, vec![3.0, 1.0, 4.0, 2.0]);
    }

    #[test]
    fn all_eight_match_the_coordinate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for side in [2usize, 3, 4, 5] {
            let actions = build_actions(side);
            let v: Vec<f64> = (0..side * side).map(|_| rng.random()).collect();
            for k in 1..=ACTION_COUNT {
                let got = actions[k - 1].apply(&v).unwrap();
                let want = oracle_apply(k, side, &v);
                assert_eq!(got, want, "action P{k} side {side}");
            }
        }
    }

    #[test]
    fn identity_is_first_and_trivial_for_side_one() {
        let actions = build_actions(1);
        assert_eq!(actions.len(), 8);
        for a in &actions {
            assert!(a.is_identity());
        }
        assert!(build_actions(5)[0].is_identity());
    }

    #[test]
    fn flip_compositions_match_their_definitions() {
        // P6 = P5 P2, P7 = P5 P3, P8 = P5 P4 (right factor applied first).
        for side in [2usize, 3, 7] {
            let a = build_actions(side);
            assert_eq!(a[5].perm(), a[4].compose_perm(&a[1]), "P6 = P5 P2");
            assert_eq!(a[6].perm(), a[4].compose_perm(&a[2]), "P7 = P5 P3");
            assert_eq!(a[7].perm(), a[4].compose_perm(&a[3]), "P8 = P5 P4");
        }
    }

    #[test]
    fn group_is_closed_with_identity_and_inverses() {
        for side in 1..=9usize {
            let actions = build_actions(side);
            // Closure: every pairwise composition is again one of the eight.
            for a in &actions {
                for b in &actions {
                    let comp = a.compose_perm(b);
                    assert!(
                        actions.iter().any(|c| c.perm() == comp.as_slice()),
                        "composition left the set at side {side}"
                    );
                }
            }
            // Inverse: P * P^-1 = identity, with the table-declared index.
            for a in &actions {
                let inv = a.inverse();
                let comp = a.compose_perm(&inv);
                assert_eq!(comp, actions[0].perm(), "P{} * inv", a.index());
                if side > 1 {
                    assert_eq!(
                        actions[(inv.index() - 1) as usize].perm(),
                        inv.perm(),
                        "inverse index table disagrees with inverse perm"
                    );
                }
            }
        }
    }

    #[test]
    fn cayley_table_matches_brute_force_composition() {
        // The full 8x8 table, derived independently via the coordinate
        // oracle: entry (i, j) is the unique k with P_i P_j = P_k.
        let side = 3usize;
        let actions = build_actions(side);
        let probe: Vec<f64> = (0..side * side).map(|i| i as f64).collect();
        let mut oracle_table = [[0usize; 8]; 8];
        for i in 1..=8 {
            for j in 1..=8 {
                let composed = oracle_apply(i, side, &oracle_apply(j, side, &probe));
                let k = (1..=8)
                    .find(|&k| oracle_apply(k, side, &probe) == composed)
                    .expect("composition must stay in the group");
                oracle_table[i - 1][j - 1] = k;
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                let comp = actions[i].compose_perm(&actions[j]);
                let k = actions
                    .iter()
                    .position(|c| c.perm() == comp.as_slice())
                    .unwrap();
                assert_eq!(
                    k + 1,
                    oracle_table[i][j],
                    "Cayley entry ({}, {})",
                    i + 1,
                    j + 1
                );
            }
        }
    }

    #[test]
    fn involutions_and_quarter_turn_inverse() {
        let actions = build_actions(4);
        for k in [1usize, 3, 5, 6, 7, 8] {
            assert_eq!(actions[k - 1].inverse().index() as usize, k, "P{k} self-inverse");
        }
        assert_eq!(actions[1].inverse().index(), 4, "inverse of rot90 is rot270");
        assert_eq!(actions[3].inverse().index(), 2);
    }

    #[test]
    fn rot90_has_order_four() {
        let actions = build_actions(5);
        let x: Vec<f64> = (0..25).map(f64::from).collect();
        let mut y = x.clone();
        for _ in 0..4 {
            y = actions[1].apply(&y).unwrap();
        }
        assert_eq!(x, y);
    }

    #[test]
    fn multichannel_blocks_are_permuted_identically() {
        let actions = build_actions(2);
        let x = vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0, -1.0, -2.0, -3.0, -4.0];
        let y = actions[1].apply(&x).unwrap();
        assert_eq!(&y[0..4], &[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(&y[4..8], &[30.0, 10.0, 40.0, 20.0]);
        assert_eq!(&y[8..12], &[-3.0, -1.0, -4.0, -2.0]);
    }

    #[test]
    fn apply_preserves_the_multiset_of_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let actions = build_actions(3);
        let v: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        for a in &actions {
            let mut w = a.apply(&v).unwrap();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            w.sort_by(f64::total_cmp);
            assert_eq!(w, sorted);
        }
    }

    #[test]
    fn round_trip_with_inverse_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let actions = build_actions(4);
        let v: Vec<f64> = (0..16 * 3).map(|_| rng.random()).collect();
        for a in &actions {
            let fwd = a.apply(&v).unwrap();
            let back = a.inverse().apply(&fwd).unwrap();
            assert_eq!(v, back);
        }
    }

    #[test]
    fn orbit_sizes_divide_eight_and_constants_are_fixed() {
        let actions = build_actions(3);
        let constant = vec![0.7; 9];
        let orbit: std::collections::BTreeSet<Vec<u64>> = actions
            .iter()
            .map(|a| a.apply(&constant).unwrap().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(orbit.len(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let generic: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let orbit: std::collections::BTreeSet<Vec<u64>> = actions
            .iter()
            .map(|a| a.apply(&generic).unwrap().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert!(8 % orbit.len() == 0, "orbit size {} must divide 8", orbit.len());
        assert_eq!(orbit.len(), 8, "a generic patch has a full orbit");
    }

    #[test]
    fn apply_rejects_bad_length() {
        let actions = build_actions(3);
        assert!(actions[2].apply(&[0.0; 10]).is_err());
    }
}
