//! Lloyd iteration for weighted 1-D k-means.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::next_up_f32;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Relative to the value range.
    pub tol: f64,
    /// Substitute uniform weights when every weight is zero.
    pub zero_weight_fallback: bool,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            zero_weight_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Strictly ascending, length k.
    pub centroids: Vec<f32>,
    pub assignment: Vec<u16>,
    /// Weighted objective of the returned centroids and assignment.
    pub objective: f64,
    /// Objective after every assignment step of the Lloyd run that produced
    /// the result; non-increasing.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Unweighted k-means: [`weighted_kmeans_1d`] with every weight 1.
pub fn kmeans_1d(values: &[f32], k: usize, params: &KMeansParams) -> Result<KMeansFit> {
    weighted_kmeans_1d(values, &vec![1.0; values.len()], k, params)
}

/// Weighted 1-D k-means.
///
/// Each Lloyd step assigns every value to its nearest centroid (lower index
/// on ties), moves an empty cluster onto the value with the largest
/// weighted squared error, and recenters every cluster at its weighted
/// mean.
///
/// Lloyd only finds a local optimum, and with strongly skewed weights the
/// one reached from a single start can be far from the best. Up to three
/// deterministic starts are therefore tried, and the lowest objective wins
/// (earlier start on ties):
///
/// 1. weighted quantiles: centroid `j` is the first sorted value whose
///    cumulative weight reaches `(j + 0.5) / k` of the total;
/// 2. the plain (unweighted) k-means solution, so the weighted objective
///    never exceeds that of plain k-means under the same weights;
/// 3. greedy farthest-point seeding: the weighted mean, then repeatedly the
///    value with the largest weighted squared distance to its nearest seed.
///
/// Starts 2 and 3 are only used when the weights are not all equal. Every
/// start is polished by single-point transfers between clusters that
/// strictly lower the objective, followed by a final Lloyd run.
pub fn weighted_kmeans_1d(values: &[f32], weights: &[f64], k: usize, params: &KMeansParams) -> Result<KMeansFit> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            actual: weights.len(),
        });
    }
    if k == 0 {
        return Err(Error::ZeroClusters);
    }
    if k > usize::from(u16::MAX) {
        return Err(Error::InvalidConfig(alloc::format!("k = {k} exceeds the index width")));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    for (index, w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::NonFiniteValue { index });
        }
        if *w < 0.0 {
            return Err(Error::NegativeValue { index });
        }
    }

    let xs: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    let total: f64 = weights.iter().sum();
    let fallback;
    let weights = if total > 0.0 {
        weights
    } else if params.zero_weight_fallback {
        fallback = vec![1.0; values.len()];
        &fallback[..]
    } else {
        return Err(Error::ZeroTotalWeight);
    };

    let order = sorted_order(&xs);
    let distinct = count_distinct(&xs, &order);
    if distinct <= k {
        let mut centroids: Vec<f64> = Vec::with_capacity(k);
        for &i in &order {
            if centroids.last() != Some(&xs[i]) {
                centroids.push(xs[i]);
            }
        }
        let last = *centroids.last().expect("non-empty input");
        centroids.resize(k, last);
        return Ok(finish(&xs, weights, &centroids, vec![0.0], 0));
    }

    let mut best = polished(&xs, weights, &order, quantile_init(&xs, weights, &order, k), params);
    if weights.windows(2).all(|w| w[0] == w[1]) {
        return Ok(best);
    }
    let ones = vec![1.0; xs.len()];
    let plain = polished(&xs, &ones, &order, quantile_init(&xs, &ones, &order, k), params);
    let plain_start = plain.centroids.iter().map(|&c| f64::from(c)).collect();
    for init in [plain_start, farthest_point_init(&xs, weights, k)] {
        let fit = polished(&xs, weights, &order, init, params);
        if fit.objective < best.objective {
            best = fit;
        }
    }
    Ok(best)
}

fn farthest_point_init(xs: &[f64], w: &[f64], k: usize) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mean = xs.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let mut c = vec![mean];
    while c.len() < k {
        let mut best = (0, -1.0);
        for (i, (&x, &wi)) in xs.iter().zip(w).enumerate() {
            let d = c.iter().map(|&m| (x - m) * (x - m)).fold(f64::MAX, f64::min) * wi;
            if d > best.1 {
                best = (i, d);
            }
        }
        c.push(xs[best.0]);
    }
    c
}

/// Single-point transfers that strictly lower the objective, repeated until
/// none is left.
fn transfer_points(xs: &[f64], w: &[f64], mut c: Vec<f64>) -> Vec<f64> {
    let k = c.len();
    c.sort_by(f64::total_cmp);
    let mut assign: Vec<usize> = xs.iter().map(|&x| nearest(&c, x)).collect();
    let mut sw = vec![0.0f64; k];
    let mut swx = vec![0.0f64; k];
    for ((&x, &wi), &a) in xs.iter().zip(w).zip(&assign) {
        sw[a] += wi;
        swx[a] += wi * x;
    }
    for j in 0..k {
        if sw[j] > 0.0 {
            c[j] = swx[j] / sw[j];
        }
    }
    for _ in 0..100 {
        let mut moved = false;
        for i in 0..xs.len() {
            let (x, wi, a) = (xs[i], w[i], assign[i]);
            if wi <= 0.0 || sw[a] - wi <= 0.0 {
                continue;
            }
            let remove = wi * sw[a] / (sw[a] - wi) * (x - c[a]) * (x - c[a]);
            let mut best = (a, 0.0);
            for b in 0..k {
                if b == a {
                    continue;
                }
                let add = if sw[b] > 0.0 {
                    wi * sw[b] / (sw[b] + wi) * (x - c[b]) * (x - c[b])
                } else {
                    0.0
                };
                let gain = remove - add;
                if gain > best.1 * (1.0 + 1e-12) + 1e-300 {
                    best = (b, gain);
                }
            }
            if best.0 != a {
                let b = best.0;
                sw[a] -= wi;
                swx[a] -= wi * x;
                sw[b] += wi;
                swx[b] += wi * x;
                c[a] = swx[a] / sw[a];
                c[b] = swx[b] / sw[b];
                assign[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    c
}

/// `sum_i w_i * (x_i - centroids[a_i])^2`, ascending `i`.
pub fn weighted_objective(values: &[f32], weights: &[f64], centroids: &[f32], assignment: &[u16]) -> f64 {
    values
        .iter()
        .zip(weights)
        .zip(assignment)
        .map(|((&x, &w), &a)| {
            let d = f64::from(x) - f64::from(centroids[usize::from(a)]);
            w * d * d
        })
        .sum()
}

struct RawRun {
    centroids: Vec<f64>,
    history: Vec<f64>,
    iterations: usize,
}

/// Lloyd, transfers, Lloyd again. The reported history is that of the last
/// Lloyd run.
fn polished(xs: &[f64], w: &[f64], order: &[usize], init: Vec<f64>, params: &KMeansParams) -> KMeansFit {
    let first = lloyd_raw(xs, w, order, init, params);
    let moved = transfer_points(xs, w, first.centroids);
    let run = lloyd_raw(xs, w, order, moved, params);
    finish(xs, w, &run.centroids, run.history, first.iterations + run.iterations)
}

fn lloyd_raw(xs: &[f64], w: &[f64], order: &[usize], init: Vec<f64>, params: &KMeansParams) -> RawRun {
    let k = init.len();
    let lo = xs[order[0]];
    let hi = xs[order[order.len() - 1]];
    let range = hi - lo;

    let mut c = init;
    let mut assign = vec![0usize; xs.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut sum_w = vec![0.0f64; k];
    let mut sum_wx = vec![0.0f64; k];

    while iterations < params.max_iters {
        iterations += 1;
        c.sort_by(f64::total_cmp);
        for (a, &x) in assign.iter_mut().zip(xs) {
            *a = nearest(&c, x);
        }
        repair_empty(xs, w, order, &mut c, &mut assign);
        history.push(objective(xs, w, &c, &assign));

        sum_w.iter_mut().for_each(|s| *s = 0.0);
        sum_wx.iter_mut().for_each(|s| *s = 0.0);
        for ((&x, &wi), &a) in xs.iter().zip(w).zip(&assign) {
            sum_w[a] += wi;
            sum_wx[a] += wi * x;
        }
        let mut movement = 0.0f64;
        for j in 0..k {
            if sum_w[j] > 0.0 {
                let next = sum_wx[j] / sum_w[j];
                movement = movement.max((next - c[j]).abs());
                c[j] = next;
            }
        }
        if movement <= params.tol * range {
            break;
        }
    }
    c.sort_by(f64::total_cmp);
    RawRun {
        centroids: c,
        history,
        iterations,
    }
}

/// Rounds centroids to f32, forces them strictly ascending and assigns.
fn finish(xs: &[f64], w: &[f64], centroids: &[f64], history: Vec<f64>, iterations: usize) -> KMeansFit {
    let mut c32: Vec<f32> = centroids.iter().map(|&c| c as f32).collect();
    c32.sort_by(f32::total_cmp);
    for i in 1..c32.len() {
        if c32[i] <= c32[i - 1] {
            c32[i] = next_up_f32(c32[i - 1]);
        }
    }
    let c64: Vec<f64> = c32.iter().map(|&c| f64::from(c)).collect();
    let assign: Vec<usize> = xs.iter().map(|&x| nearest(&c64, x)).collect();
    let objective = objective(xs, w, &c64, &assign);
    KMeansFit {
        centroids: c32,
        assignment: assign.into_iter().map(|a| a as u16).collect(),
        objective,
        history,
        iterations,
    }
}

fn sorted_order(xs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    order
}

fn count_distinct(xs: &[f64], order: &[usize]) -> usize {
    1 + order.windows(2).filter(|p| xs[p[0]] != xs[p[1]]).count()
}

fn quantile_init(xs: &[f64], w: &[f64], order: &[usize], k: usize) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut c = Vec::with_capacity(k);
    let mut cum = 0.0;
    for &i in order {
        cum += w[i];
        while c.len() < k && cum >= (c.len() as f64 + 0.5) / k as f64 * total {
            c.push(xs[i]);
        }
        if c.len() == k {
            break;
        }
    }
    let last = xs[order[order.len() - 1]];
    c.resize(k, last);
    c
}

/// Nearest centroid in a sorted list; equal distances go to the lower index.
pub(crate) fn nearest(c: &[f64], x: f64) -> usize {
    let hi = c.partition_point(|&v| v < x);
    let pick = if hi == c.len() {
        hi - 1
    } else if hi == 0 {
        0
    } else {
        let up = c[hi] - x;
        let down = x - c[hi - 1];
        match up.partial_cmp(&down) {
            Some(Ordering::Less) => hi,
            _ => hi - 1,
        }
    };
    let mut j = pick;
    while j > 0 && c[j - 1] == c[pick] {
        j -= 1;
    }
    j
}

fn repair_empty(xs: &[f64], w: &[f64], order: &[usize], c: &mut [f64], assign: &mut [usize]) {
    let k = c.len();
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &i in order {
            let d = xs[i] - c[assign[i]];
            let cost = w[i] * d * d;
            if cost > best.map_or(0.0, |b| b.1) {
                best = Some((i, cost));
            }
        }
        let Some((i, _)) = best else { break };
        counts[assign[i]] -= 1;
        counts[j] += 1;
        c[j] = xs[i];
        assign[i] = j;
    }
}

fn objective(xs: &[f64], w: &[f64], c: &[f64], assign: &[usize]) -> f64 {
    xs.iter()
        .zip(w)
        .zip(assign)
        .map(|((&x, &wi), &a)| {
            let d = x - c[a];
            wi * d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuq::oracle::dp_kmeans_oracle;
    use proptest::prelude::*;

    fn p() -> KMeansParams {
        KMeansParams::default()
    }

    #[test]
    fn two_point_masses() {
        let fit = kmeans_1d(&[1.0, 1.0, 5.0, 5.0], 2, &p()).unwrap();
        assert_eq!(fit.centroids, vec![1.0, 5.0]);
        assert_eq!(fit.assignment, vec![0, 0, 1, 1]);
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn enough_clusters_is_exact() {
        let fit = kmeans_1d(&[3.0, -1.0, 3.0, 2.5], 4, &p()).unwrap();
        assert_eq!(fit.objective, 0.0);
        assert!(fit.centroids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(fit.centroids.len(), 4);
    }

    #[test]
    fn heavy_weight_example_matches_oracle() {
        let values = [0.0, 1.0, 2.0, 10.0];
        let weights = [1.0, 1.0, 1.0, 100.0];
        let fit = weighted_kmeans_1d(&values, &weights, 2, &p()).unwrap();
        let oracle = dp_kmeans_oracle(&values, &weights, 2).unwrap();
        // Optimal split: {0,1,2} around 1 and {10} alone gives 2.0.
        assert_eq!(oracle.objective, 2.0);
        assert_eq!(fit.objective, oracle.objective);
        assert_eq!(fit.centroids, vec![1.0, 10.0]);
    }

    #[test]
    fn ties_go_to_lower_centroid() {
        assert_eq!(nearest(&[0.0, 2.0], 1.0), 0);
        assert_eq!(nearest(&[0.0, 1.0, 1.0, 4.0], 1.0), 1);
        assert_eq!(nearest(&[0.0, 1.0, 1.0, 4.0], 2.5), 1);
        assert_eq!(nearest(&[0.0, 1.0, 1.0, 4.0], 3.0), 3);
        assert_eq!(nearest(&[0.0, 1.0], -5.0), 0);
        assert_eq!(nearest(&[0.0, 1.0], 5.0), 1);
    }

    #[test]
    fn errors() {
        assert_eq!(kmeans_1d(&[1.0], 0, &p()), Err(Error::ZeroClusters));
        assert_eq!(kmeans_1d(&[], 2, &p()), Err(Error::EmptyInput));
        assert_eq!(
            weighted_kmeans_1d(&[1.0, 2.0], &[1.0, -1.0], 2, &p()),
            Err(Error::NegativeValue { index: 1 })
        );
        let strict = KMeansParams {
            zero_weight_fallback: false,
            ..p()
        };
        assert_eq!(
            weighted_kmeans_1d(&[1.0, 2.0, 3.0], &[0.0; 3], 2, &strict),
            Err(Error::ZeroTotalWeight)
        );
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let values = [0.0, 0.1, 0.2, 5.0, 5.1, 9.0];
        let zero = weighted_kmeans_1d(&values, &[0.0; 6], 3, &p()).unwrap();
        let plain = kmeans_1d(&values, 3, &p()).unwrap();
        assert_eq!(zero.centroids, plain.centroids);
        assert_eq!(zero.assignment, plain.assignment);
    }

    #[test]
    fn constant_input_is_exact() {
        let fit = kmeans_1d(&[2.0; 10], 8, &p()).unwrap();
        assert_eq!(fit.objective, 0.0);
        assert!(fit.assignment.iter().all(|&a| a == 0));
    }

    fn instance() -> impl Strategy<Value = (Vec<f32>, Vec<f64>, usize)> {
        (2usize..48, prop_oneof![Just(2usize), Just(4), Just(8)]).prop_flat_map(|(n, k)| {
            (
                proptest::collection::vec(-50.0f32..50.0, n),
                proptest::collection::vec(0.0f64..10.0, n),
                Just(k),
            )
        })
    }

    proptest! {
        #[test]
        fn lloyd_history_never_increases((values, weights, k) in instance()) {
            let fit = weighted_kmeans_1d(&values, &weights, k, &p()).unwrap();
            for pair in fit.history.windows(2) {
                prop_assert!(pair[1] <= pair[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.history);
            }
        }

        #[test]
        fn weighted_beats_unweighted_under_its_own_weights((values, weights, k) in instance()) {
            let weighted = weighted_kmeans_1d(&values, &weights, k, &p()).unwrap();
            let plain = kmeans_1d(&values, k, &p()).unwrap();
            let plain_obj = weighted_objective(&values, &weights, &plain.centroids, &plain.assignment);
            prop_assert!(weighted.objective <= plain_obj * (1.0 + 1e-9) + 1e-12,
                "{} > {}", weighted.objective, plain_obj);
        }

        #[test]
        fn argmin_is_scale_invariant((values, weights, k) in instance(), e in -8i32..8, mant in 1.0f64..2.0) {
            let c = libm::ldexp(mant, e);
            let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let a = weighted_kmeans_1d(&values, &weights, k, &p()).unwrap();
            let b = weighted_kmeans_1d(&values, &scaled, k, &p()).unwrap();
            prop_assert_eq!(a.centroids, b.centroids);
            prop_assert_eq!(a.assignment, b.assignment);
        }

        #[test]
        fn uniform_weights_are_plain_kmeans(values in proptest::collection::vec(-5.0f32..5.0, 1..40), k in 1usize..9) {
            let twos = vec![2.0; values.len()];
            let a = weighted_kmeans_1d(&values, &twos, k, &p()).unwrap();
            let b = kmeans_1d(&values, k, &p()).unwrap();
            prop_assert_eq!(&a.centroids, &b.centroids);
            prop_assert_eq!(&a.assignment, &b.assignment);
            prop_assert_eq!(a.objective, 2.0 * b.objective);
        }

        #[test]
        fn oracle_dominates_lloyd((values, weights, k) in instance()) {
            let fit = weighted_kmeans_1d(&values, &weights, k, &p()).unwrap();
            let oracle = dp_kmeans_oracle(&values, &weights, k).unwrap();
            prop_assert!(oracle.objective <= fit.objective * (1.0 + 1e-9) + 1e-9,
                "oracle {} > lloyd {}", oracle.objective, fit.objective);
        }

        #[test]
        fn centroids_strictly_sorted_and_indices_in_range((values, weights, k) in instance()) {
            let fit = weighted_kmeans_1d(&values, &weights, k, &p()).unwrap();
            prop_assert_eq!(fit.centroids.len(), k);
            prop_assert!(fit.centroids.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(fit.assignment.iter().all(|&a| usize::from(a) < k));
        }
    }
}
