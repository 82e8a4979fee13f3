//! Relevant Feature Test: scores each feature column by the best two-sided
//! weighted MSE of the target over binned thresholds, then selects by elbow
//! and by agreement between a training and a validation ranking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GuslError, Result};
use crate::features::ColumnSource;

pub const DEFAULT_BINS: usize = 16;

/// Per-column RFT losses with their ascending order and elbow cutoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RftReport {
    pub losses: Vec<f64>,
    /// Column indices sorted by ascending loss (ties: lower index first).
    pub order: Vec<usize>,
    /// Number of leading columns in `order` before the elbow.
    pub elbow: usize,
}

impl RftReport {
    fn from_losses(losses: Vec<f64>) -> Self {
        let order = sort_by_loss(&losses);
        let sorted: Vec<f64> = order.iter().map(|&j| losses[j]).collect();
        let elbow = elbow_index(&sorted);
        Self { losses, order, elbow }
    }

    /// Rank (0 = best) of every column.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.order.len()];
        for (r, &j) in self.order.iter().enumerate() {
            ranks[j] = r;
        }
        ranks
    }
}

fn sort_by_loss(losses: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    // stable sort keeps lower column index first on ties
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    order
}

fn variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(GuslError::InvalidConfig(format!("RFT needs at least 2 bins, got {bins}")));
    }
    Ok(())
}

/// RFT loss of one feature column against the target.
pub fn rft_loss(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GuslError::Shape(format!("feature has {} rows, target {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(GuslError::InsufficientData("RFT needs at least 2 rows".into()));
    }
    check_bins(bins)?;
    Ok(rft_loss_unchecked(x, y, bins))
}

fn rft_loss_unchecked(x: &[f64], y: &[f64], bins: usize) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return variance(y);
    }
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let width = (hi - lo) / bins as f64;
    let centres: Vec<f64> = (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect();

    // bucket b holds samples with exactly b centres strictly below them,
    // so threshold k keeps buckets 0..=k on the left
    let mut count = vec![0usize; bins + 1];
    let mut s1 = vec![0.0; bins + 1];
    let mut s2 = vec![0.0; bins + 1];
    for (&xv, &yv) in x.iter().zip(y) {
        let guess = ((xv - lo) / width - 0.5).ceil();
        let mut b = if guess <= 0.0 { 0 } else { (guess as usize).min(bins) };
        while b > 0 && centres[b - 1] >= xv {
            b -= 1;
        }
        while b < bins && centres[b] < xv {
            b += 1;
        }
        let d = yv - mean;
        count[b] += 1;
        s1[b] += d;
        s2[b] += d * d;
    }
    let (total1, total2): (f64, f64) = (s1.iter().sum(), s2.iter().sum());
    let sse = |c: usize, a: f64, b: f64| if c == 0 { 0.0 } else { (b - a * a / c as f64).max(0.0) };

    let mut best = f64::INFINITY;
    let (mut nl, mut l1, mut l2) = (0usize, 0.0, 0.0);
    for k in 0..bins {
        nl += count[k];
        l1 += s1[k];
        l2 += s2[k];
        let nr = n - nl;
        if nl == 0 || nr == 0 {
            continue;
        }
        let loss = (sse(nl, l1, l2) + sse(nr, total1 - l1, total2 - l2)) / n as f64;
        if loss < best {
            best = loss;
        }
    }
    if best.is_finite() {
        best
    } else {
        variance(y)
    }
}

/// Losses for every column of `x`.
pub fn rank_features<S: ColumnSource>(x: &S, y: &[f64], bins: usize) -> Result<RftReport> {
    if x.cols() == 0 || x.rows() == 0 {
        return Err(GuslError::InvalidInput("empty feature matrix".into()));
    }
    if x.rows() != y.len() {
        return Err(GuslError::Shape(format!("{} feature rows vs {} targets", x.rows(), y.len())));
    }
    if y.len() < 2 {
        return Err(GuslError::InsufficientData("RFT needs at least 2 rows".into()));
    }
    check_bins(bins)?;
    let losses = (0..x.cols())
        .into_par_iter()
        .map_init(
            || vec![0.0; x.rows()],
            |buf, j| {
                x.fill_column(j, buf);
                rft_loss_unchecked(buf, y, bins)
            },
        )
        .collect();
    Ok(RftReport::from_losses(losses))
}

/// Elbow of a sorted curve by maximum perpendicular distance to the chord between
/// its endpoints, with both axes min-max normalized. Returns a count (index + 1);
/// flat and straight curves give 1.
pub fn elbow_index(sorted: &[f64]) -> usize {
    let n = sorted.len();
    if n <= 2 {
        return 1;
    }
    let (lo, hi) = sorted.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return 1;
    }
    let ny = |v: f64| (v - lo) / (hi - lo);
    let (x0, y0) = (0.0, ny(sorted[0]));
    let (x1, y1) = (1.0, ny(sorted[n - 1]));
    let (dx, dy) = (x1 - x0, y1 - y0);
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = 0;
    let mut best_d = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        let px = i as f64 / (n - 1) as f64;
        let d = ((px - x0) * dy - (ny(v) - y0) * dx).abs() / norm;
        if d > best_d + 1e-12 {
            best_d = d;
            best = i;
        }
    }
    best + 1
}

/// Outcome of the train/validation joint ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSelection {
    pub selected: Vec<usize>,
    pub train: RftReport,
    pub validation: RftReport,
    /// max(train rank, validation rank) per column.
    pub joint: Vec<usize>,
    /// Columns with joint score below this are selected.
    pub radius: usize,
}

/// Ranks columns independently on a seeded `split` / `1 - split` row partition
/// and keeps those ranked well in both.
pub fn joint_select<S: ColumnSource>(x: &S, y: &[f64], bins: usize, split: f64, seed: u64) -> Result<JointSelection> {
    if !(split > 0.0 && split < 1.0) {
        return Err(GuslError::InvalidConfig(format!("split must be in (0, 1), got {split}")));
    }
    check_bins(bins)?;
    if x.rows() != y.len() {
        return Err(GuslError::Shape(format!("{} feature rows vs {} targets", x.rows(), y.len())));
    }
    if x.cols() == 0 {
        return Err(GuslError::InvalidInput("empty feature matrix".into()));
    }
    let n = x.rows();
    if n < 10 {
        return Err(GuslError::InsufficientData(format!("joint selection needs at least 10 rows, got {n}")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((split * n as f64).round() as usize).clamp(2, n - 2);
    let (train_rows, val_rows) = rows.split_at(n_train);
    let y_train: Vec<f64> = train_rows.iter().map(|&r| y[r]).collect();
    let y_val: Vec<f64> = val_rows.iter().map(|&r| y[r]).collect();

    let pairs: Vec<(f64, f64)> = (0..x.cols())
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; train_rows.len()], vec![0.0; val_rows.len()]),
            |(full, tr, va), j| {
                x.fill_column(j, full);
                tr.iter_mut().zip(train_rows).for_each(|(o, &r)| *o = full[r]);
                va.iter_mut().zip(val_rows).for_each(|(o, &r)| *o = full[r]);
                (rft_loss_unchecked(tr, &y_train, bins), rft_loss_unchecked(va, &y_val, bins))
            },
        )
        .collect();
    let train = RftReport::from_losses(pairs.iter().map(|p| p.0).collect());
    let validation = RftReport::from_losses(pairs.iter().map(|p| p.1).collect());
    let (rt, rv) = (train.ranks(), validation.ranks());
    let joint: Vec<usize> = rt.iter().zip(&rv).map(|(a, b)| *a.max(b)).collect();
    let (selected, radius) = select_by_joint_rank(&joint);
    Ok(JointSelection { selected, train, validation, joint, radius })
}

/// Columns whose joint score is below the elbow of the sorted joint scores.
/// Falls back to the best-scoring columns when the radius admits none.
pub fn select_by_joint_rank(joint: &[usize]) -> (Vec<usize>, usize) {
    let mut sorted: Vec<f64> = joint.iter().map(|&s| s as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let radius = elbow_index(&sorted);
    let mut selected: Vec<usize> = (0..joint.len()).filter(|&j| joint[j] < radius).collect();
    if selected.is_empty() {
        let best = joint.iter().copied().min().unwrap_or(0);
        selected = (0..joint.len()).filter(|&j| joint[j] == best).collect();
    }
    (selected, radius)
}

/// Selection from precomputed rank pairs with an explicit radius.
pub fn select_within_radius(train_ranks: &[usize], val_ranks: &[usize], radius: usize) -> Vec<usize> {
    train_ranks
        .iter()
        .zip(val_ranks)
        .enumerate()
        .filter(|(_, (a, b))| (**a).max(**b) < radius)
        .map(|(j, _)| j)
        .collect()
}
