//! Per-patch action selection and the batched canonicalization operators.
//!
//! The discrete half of the alternating optimization: each patch picks the
//! action whose transformed copy the auto-encoder reconstructs best, then
//! whole patch matrices are permuted column-by-column according to those
//! labels (and un-permuted afterwards with the inverse actions).

use std::io::Write;
use std::path::Path;

use crate::action::Action;
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::patch::{PatchGrid, PatchMatrix};

/// Chosen action label (1-based index into the action set) for every patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionAssignment {
    labels: Vec<u8>,
}

impl ActionAssignment {
    /// All-identity assignment for `t` patches.
    pub fn identity(t: usize) -> Self {
        Self { labels: vec![1; t] }
    }

    pub fn from_labels(labels: Vec<u8>, action_count: usize) -> Result<Self> {
        if labels
            .iter()
            .any(|&l| l == 0 || l as usize > action_count)
        {
            return Err(Error::InvalidConfig(format!(
                "assignment labels must lie in 1..={action_count}"
            )));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Write the labels as an ASCII PGM laid out on the patch-origin grid.
    pub fn write_pgm(&self, grid: &PatchGrid, path: impl AsRef<Path>) -> Result<()> {
        let (rows, cols) = self.grid_shape(grid)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "P2")?;
        writeln!(f, "{cols} {rows}")?;
        writeln!(f, "8")?;
        for r in 0..rows {
            let line: Vec<String> = (0..cols)
                .map(|c| self.labels[r * cols + c].to_string())
                .collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Same label map as CSV (one row per origin row).
    pub fn write_csv(&self, grid: &PatchGrid, path: impl AsRef<Path>) -> Result<()> {
        let (rows, cols) = self.grid_shape(grid)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..rows {
            let line: Vec<String> = (0..cols)
                .map(|c| self.labels[r * cols + c].to_string())
                .collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }

    fn grid_shape(&self, grid: &PatchGrid) -> Result<(usize, usize)> {
        let (rows, cols) = (grid.origin_rows(), grid.origin_cols());
        if rows * cols != self.labels.len() {
            return Err(Error::shape(
                "ActionAssignment label map",
                rows * cols,
                self.labels.len(),
            ));
        }
        Ok((rows, cols))
    }
}

fn check_lengths(patches: &PatchMatrix, assignment: &ActionAssignment) -> Result<()> {
    if patches.ncols() != assignment.len() {
        return Err(Error::shape(
            "canon: assignment length",
            patches.ncols(),
            assignment.len(),
        ));
    }
    Ok(())
}

fn check_patch_dim(patches: &PatchMatrix, actions: &[Action]) -> Result<usize> {
    let p = actions
        .first()
        .map(|a| a.patch_side() * a.patch_side())
        .unwrap_or(0);
    if p == 0 || !patches.nrows().is_multiple_of(p) {
        return Err(Error::shape(
            "canon: patch rows",
            format!("multiple of {p}"),
            patches.nrows(),
        ));
    }
    Ok(p)
}

/// Apply one action to every column (a pure row permutation of the matrix).
pub fn permute_all(patches: &PatchMatrix, action: &Action) -> PatchMatrix {
    let p = action.patch_side() * action.patch_side();
    let channels = patches.nrows() / p;
    let mut out = PatchMatrix::zeros(patches.dim());
    for ch in 0..channels {
        for (s, &d) in action.perm().iter().enumerate() {
            let src = patches.row(ch * p + s);
            out.row_mut(ch * p + d).assign(&src);
        }
    }
    out
}

fn apply_per_column(
    patches: &PatchMatrix,
    assignment: &ActionAssignment,
    perms: &[Vec<usize>],
    p: usize,
) -> PatchMatrix {
    let (rows, cols) = patches.dim();
    let channels = rows / p;
    let mut out = PatchMatrix::zeros((rows, cols));
    for t in 0..cols {
        let perm = &perms[(assignment.labels[t] - 1) as usize];
        for ch in 0..channels {
            for (s, &d) in perm.iter().enumerate() {
                out[[ch * p + d, t]] = patches[[ch * p + s, t]];
            }
        }
    }
    out
}

/// Column `t` becomes `P^(label_t) x_t`.
pub fn canonicalize(
    patches: &PatchMatrix,
    assignment: &ActionAssignment,
    actions: &[Action],
) -> Result<PatchMatrix> {
    check_lengths(patches, assignment)?;
    let p = check_patch_dim(patches, actions)?;
    if assignment.labels.iter().any(|&l| l as usize > actions.len()) {
        return Err(Error::InvalidConfig(
            "assignment label exceeds action set".into(),
        ));
    }
    let perms: Vec<Vec<usize>> = actions.iter().map(|a| a.perm().to_vec()).collect();
    Ok(apply_per_column(patches, assignment, &perms, p))
}

/// Column `t` becomes `P^(label_t)^T x_t`, undoing [`canonicalize`].
pub fn decanonicalize(
    patches: &PatchMatrix,
    assignment: &ActionAssignment,
    actions: &[Action],
) -> Result<PatchMatrix> {
    check_lengths(patches, assignment)?;
    let p = check_patch_dim(patches, actions)?;
    if assignment.labels.iter().any(|&l| l as usize > actions.len()) {
        return Err(Error::InvalidConfig(
            "assignment label exceeds action set".into(),
        ));
    }
    let perms: Vec<Vec<usize>> = actions.iter().map(|a| a.inverse().perm().to_vec()).collect();
    Ok(apply_per_column(patches, assignment, &perms, p))
}

/// Noise-free per-patch action selection.
///
/// For each column `t` independently, evaluates all candidate actions and
/// keeps the one minimizing `|| P x_t - A(P x_t) ||^2`; ties resolve to the
/// smallest action index.
pub fn update_assignment(
    net: &Mlp,
    patches: &PatchMatrix,
    actions: &[Action],
) -> Result<ActionAssignment> {
    if actions.is_empty() {
        return Err(Error::InvalidConfig("empty action set".into()));
    }
    check_patch_dim(patches, actions)?;
    if net.input_dim() != patches.nrows() {
        return Err(Error::shape(
            "canon::update_assignment",
            net.input_dim(),
            patches.nrows(),
        ));
    }
    let cols = patches.ncols();
    let mut best = vec![f64::INFINITY; cols];
    let mut labels = vec![1u8; cols];
    for (k, action) in actions.iter().enumerate() {
        let permuted = permute_all(patches, action);
        let out = net.forward(&permuted)?;
        for t in 0..cols {
            let mut score = 0.0;
            for r in 0..patches.nrows() {
                let d = permuted[[r, t]] - out[[r, t]];
                score += d * d;
            }
            if score < best[t] {
                best[t] = score;
                labels[t] = (k + 1) as u8;
            }
        }
    }
    Ok(ActionAssignment { labels })
}

/// Sum over patches of the noise-free auto-encoding error under an
/// assignment. Used to check that assignment updates never increase it.
pub fn assignment_energy(
    net: &Mlp,
    patches: &PatchMatrix,
    assignment: &ActionAssignment,
    actions: &[Action],
) -> Result<f64> {
    let canon = canonicalize(patches, assignment, actions)?;
    let out = net.forward(&canon)?;
    Ok((&canon - &out).iter().map(|v| v * v).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{build_actions, identity_only};
    use crate::mlp::DEFAULT_SLOPE;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patches(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> PatchMatrix {
        Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>())
    }

    /// Independent brute force: score every action on one column with
    /// plain loops and a scalar-by-scalar forward pass.
    fn oracle_label(net: &Mlp, column: &[f64], actions: &[Action]) -> u8 {
        let mut best = f64::INFINITY;
        let mut label = 1u8;
        for (k, a) in actions.iter().enumerate() {
            let v = a.apply(column).unwrap();
            let m = Array2::from_shape_vec((v.len(), 1), v.clone()).unwrap();
            let out = net.forward(&m).unwrap();
            let score: f64 = v
                .iter()
                .enumerate()
                .map(|(i, &x)| (x - out[[i, 0]]) * (x - out[[i, 0]]))
                .sum();
            if score < best {
                best = score;
                label = (k + 1) as u8;
            }
        }
        label
    }

    #[test]
    fn identity_action_set_gives_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[9, 4, 9], DEFAULT_SLOPE, 1).unwrap();
        let patches = random_patches(&mut rng, 9, 12);
        let actions = identity_only(3);
        let a = update_assignment(&net, &patches, &actions).unwrap();
        assert!(a.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn constant_patches_tie_break_to_one() {
        let net = Mlp::new(&[4, 3, 4], DEFAULT_SLOPE, 2).unwrap();
        let patches = Array2::from_elem((4, 5), 0.42);
        let actions = build_actions(2);
        let a = update_assignment(&net, &patches, &actions).unwrap();
        assert!(a.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[9, 6, 9], DEFAULT_SLOPE, 4).unwrap();
        let actions = build_actions(3);
        let patches = random_patches(&mut rng, 9, 200);
        let got = update_assignment(&net, &patches, &actions).unwrap();
        for t in 0..patches.ncols() {
            let col: Vec<f64> = patches.column(t).to_vec();
            assert_eq!(
                got.labels()[t],
                oracle_label(&net, &col, &actions),
                "patch {t}"
            );
        }
    }

    #[test]
    fn canonicalize_with_identity_labels_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let patches = random_patches(&mut rng, 4, 7);
        let actions = build_actions(2);
        let a = ActionAssignment::identity(7);
        let c = canonicalize(&patches, &a, &actions).unwrap();
        assert_eq!(patches, c);
    }

    #[test]
    fn decanonicalize_round_trip_is_exact_for_any_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let patches = random_patches(&mut rng, 9 * 3, 16);
        let actions = build_actions(3);
        let labels: Vec<u8> = (0..16).map(|_| rng.random_range(1..=8) as u8).collect();
        let a = ActionAssignment::from_labels(labels, 8).unwrap();
        let c = canonicalize(&patches, &a, &actions).unwrap();
        let back = decanonicalize(&c, &a, &actions).unwrap();
        assert_eq!(patches, back);
    }

    #[test]
    fn decanonicalize_single_column_uses_group_inverse() {
        // Label 2 (rot90) must be undone by applying P4 (rot270).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let patches = random_patches(&mut rng, 4, 1);
        let actions = build_actions(2);
        let a = ActionAssignment::from_labels(vec![2], 8).unwrap();
        let de = decanonicalize(&patches, &a, &actions).unwrap();
        let manual = actions[3].apply(&patches.column(0).to_vec()).unwrap();
        assert_eq!(de.column(0).to_vec(), manual);
    }

    #[test]
    fn orbit_partners_with_unique_minima_collapse_to_one_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Mlp::new(&[9, 5, 9], DEFAULT_SLOPE, 9).unwrap();
        let actions = build_actions(3);
        let base: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let rotated = actions[2].apply(&base).unwrap();
        let mut patches = Array2::zeros((9, 2));
        for i in 0..9 {
            patches[[i, 0]] = base[i];
            patches[[i, 1]] = rotated[i];
        }
        // Check uniqueness of the per-patch minimum before asserting.
        let col: Vec<f64> = patches.column(0).to_vec();
        let mut scores: Vec<f64> = actions
            .iter()
            .map(|a| {
                let v = a.apply(&col).unwrap();
                let m = Array2::from_shape_vec((9, 1), v.clone()).unwrap();
                let out = net.forward(&m).unwrap();
                v.iter()
                    .enumerate()
                    .map(|(i, &x)| (x - out[[i, 0]]) * (x - out[[i, 0]]))
                    .sum()
            })
            .collect();
        scores.sort_by(f64::total_cmp);
        assert!(scores[1] - scores[0] > 1e-12, "minimum must be unique");

        let assign = update_assignment(&net, &patches, &actions).unwrap();
        let canon = canonicalize(&patches, &assign, &actions).unwrap();
        assert_eq!(
            canon.column(0).to_vec(),
            canon.column(1).to_vec(),
            "orbit partners must canonicalize to the same patch"
        );
    }

    #[test]
    fn update_never_increases_the_assignment_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = Mlp::new(&[4, 2, 4], DEFAULT_SLOPE, 11).unwrap();
        let actions = build_actions(2);
        let patches = random_patches(&mut rng, 4, 25);
        let labels: Vec<u8> = (0..25).map(|_| rng.random_range(1..=8) as u8).collect();
        let before = ActionAssignment::from_labels(labels, 8).unwrap();
        let e0 = assignment_energy(&net, &patches, &before, &actions).unwrap();
        let after = update_assignment(&net, &patches, &actions).unwrap();
        let e1 = assignment_energy(&net, &patches, &after, &actions).unwrap();
        assert!(e1 <= e0 + 1e-12, "energy rose from {e0} to {e1}");
    }

    #[test]
    fn multichannel_patches_permute_per_channel() {
        let actions = build_actions(2);
        let mut patches = Array2::zeros((8, 1));
        for i in 0..8 {
            patches[[i, 0]] = i as f64;
        }
        let a = ActionAssignment::from_labels(vec![2], 8).unwrap();
        let c = canonicalize(&patches, &a, &actions).unwrap();
        let expect_first = actions[1].apply(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        let expect_second = actions[1].apply(&[4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(c.column(0).to_vec()[..4], expect_first[..]);
        assert_eq!(c.column(0).to_vec()[4..], expect_second[..]);
    }

    #[test]
    fn dimension_mismatches_error() {
        let net = Mlp::new(&[9, 4, 9], DEFAULT_SLOPE, 12).unwrap();
        let actions = build_actions(3);
        let patches = Array2::zeros((8, 4));
        assert!(update_assignment(&net, &patches, &actions).is_err());
        let a = ActionAssignment::identity(3);
        assert!(canonicalize(&patches, &a, &actions).is_err());
    }

    #[test]
    fn label_map_pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.pgm");
        let grid = PatchGrid::new(2, 2, 4, 6, 1).unwrap();
        assert_eq!(grid.patch_count(), 6);
        let a = ActionAssignment::from_labels(vec![1, 2, 3, 4, 5, 6], 8).unwrap();
        a.write_pgm(&grid, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "P2");
        assert_eq!(lines[1], "3 2");
        assert_eq!(lines[2], "8");
        assert_eq!(lines[3], "1 2 3");
        assert_eq!(lines[4], "4 5 6");
    }
}
