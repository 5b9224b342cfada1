//! Hierarchical overlapped clustering (gray level, then entropy level) and g2NN matching.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::descriptor::Descriptor;
use crate::entropy::ENTROPY_CEILING;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scale_space::Keypoint;

const GRAY_MAX: u32 = 255;

/// Gray interval `[lo, hi)`; closed at the top when `hi == 255` so that 255 is clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrayInterval {
    pub lo: u32,
    pub hi: u32,
}

impl GrayInterval {
    pub const FULL: GrayInterval = GrayInterval { lo: 0, hi: GRAY_MAX };

    #[inline]
    pub fn contains(&self, g: u8) -> bool {
        let g = u32::from(g);
        g >= self.lo && (g < self.hi || (self.hi == GRAY_MAX && g == GRAY_MAX))
    }
}

/// Closed entropy interval `[lo, hi]` in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyInterval {
    pub lo: f64,
    pub hi: f64,
}

impl EntropyInterval {
    pub const FULL: EntropyInterval = EntropyInterval {
        lo: 0.0,
        hi: ENTROPY_CEILING,
    };

    #[inline]
    pub fn contains(&self, e: f64) -> bool {
        e >= self.lo && e <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGroup {
    /// 1-based gray group index; 0 for the brute-force group.
    pub u: usize,
    /// 1-based entropy subgroup index; 0 for a level-1 group.
    pub v: usize,
    pub gray: GrayInterval,
    pub entropy: EntropyInterval,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Gray interval size.
    pub step1: u32,
    /// Gray overlap.
    pub step2: u32,
    /// Entropy interval size.
    pub step3: f64,
    /// Entropy overlap.
    pub step4: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            step1: 50,
            step2: 10,
            step3: 1.0,
            step4: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams<T> {
    /// g2NN ratio `T`.
    pub ratio: T,
    pub min_spatial_distance: T,
    /// Test every neighbour instead of stopping at the first ratio failure.
    pub exhaustive: bool,
}

impl<T: Real> Default for MatchParams<T> {
    fn default() -> Self {
        Self {
            ratio: T::lit(0.5),
            min_spatial_distance: T::lit(10.0),
            exhaustive: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Gray level groups subdivided by entropy level.
    Clustered,
    /// Gray level groups only.
    GrayOnly,
    /// One group holding every keypoint.
    BruteForce,
}

/// A match between keypoints `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchPair<T> {
    pub i: usize,
    pub j: usize,
    pub distance: T,
    pub spatial_distance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome<T> {
    pub pairs: Vec<MatchPair<T>>,
    /// Descriptor distance evaluations performed.
    pub comparisons: u64,
    /// Number of groups that were matched.
    pub groups: usize,
}

fn ceil_div(num: i64, den: i64) -> i64 {
    let q = num / den;
    if (num % den != 0) && ((num < 0) == (den < 0)) {
        q + 1
    } else {
        q
    }
}

/// `ceil((255 - step1) / (step1 - step2)) + 1`, at least 1.
pub fn gray_group_count(step1: u32, step2: u32) -> Result<usize> {
    if step1 <= step2 {
        return Err(Error::InvalidArgument(format!(
            "gray interval size {step1} must exceed overlap {step2}"
        )));
    }
    let n = ceil_div(i64::from(GRAY_MAX) - i64::from(step1), i64::from(step1 - step2)) + 1;
    Ok(n.max(1) as usize)
}

/// `ceil((7 - step4) / step3)`, at least 1.
pub fn entropy_group_count(step3: f64, step4: f64) -> Result<usize> {
    if !(step3 > 0.0) || !step3.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "entropy interval size must be positive, got {step3}"
        )));
    }
    if !(step4 >= 0.0) || !step4.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "entropy overlap must be non-negative, got {step4}"
        )));
    }
    let n = ((ENTROPY_CEILING - step4) / step3).ceil();
    Ok(n.max(1.0) as usize)
}

/// Interval of the `u`-th (1-based) gray group.
pub fn gray_interval(u: usize, step1: u32, step2: u32) -> GrayInterval {
    let lo = (u as u32 - 1) * (step1 - step2);
    GrayInterval {
        lo,
        hi: (lo + step1).min(GRAY_MAX),
    }
}

/// Interval of the `v`-th (1-based) entropy subgroup.
pub fn entropy_interval(v: usize, step3: f64, step4: f64) -> EntropyInterval {
    EntropyInterval {
        lo: ((v as f64 - 1.0) * step3 - step4).max(0.0),
        hi: (v as f64 * step3 + step4).min(ENTROPY_CEILING),
    }
}

pub fn gray_level_groups<T: Real>(
    kps: &[Keypoint<T>],
    step1: u32,
    step2: u32,
) -> Result<Vec<ClusterGroup>> {
    let n = gray_group_count(step1, step2)?;
    Ok((1..=n)
        .map(|u| {
            let gray = gray_interval(u, step1, step2);
            ClusterGroup {
                u,
                v: 0,
                gray,
                entropy: EntropyInterval::FULL,
                members: (0..kps.len()).filter(|&i| gray.contains(kps[i].gray_value)).collect(),
            }
        })
        .collect())
}

pub fn entropy_level_subgroups<T: Real>(
    group: &ClusterGroup,
    kps: &[Keypoint<T>],
    step3: f64,
    step4: f64,
) -> Result<Vec<ClusterGroup>> {
    let n = entropy_group_count(step3, step4)?;
    Ok((1..=n)
        .map(|v| {
            let entropy = entropy_interval(v, step3, step4);
            ClusterGroup {
                u: group.u,
                v,
                gray: group.gray,
                entropy,
                members: group
                    .members
                    .iter()
                    .copied()
                    .filter(|&i| entropy.contains(kps[i].entropy_value.as_f64()))
                    .collect(),
            }
        })
        .collect())
}

/// Level-2 groups for `mode`.
pub fn build_groups<T: Real>(
    kps: &[Keypoint<T>],
    params: &ClusterParams,
    mode: MatchMode,
) -> Result<Vec<ClusterGroup>> {
    match mode {
        MatchMode::BruteForce => Ok(vec![ClusterGroup {
            u: 0,
            v: 0,
            gray: GrayInterval::FULL,
            entropy: EntropyInterval::FULL,
            members: (0..kps.len()).collect(),
        }]),
        MatchMode::GrayOnly => gray_level_groups(kps, params.step1, params.step2),
        MatchMode::Clustered => {
            let mut out = Vec::new();
            for g in gray_level_groups(kps, params.step1, params.step2)? {
                out.extend(entropy_level_subgroups(&g, kps, params.step3, params.step4)?);
            }
            Ok(out)
        }
    }
}

#[inline]
fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = *x - *y;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn cmp_candidate<T: Real>(a: &(T, usize), b: &(T, usize)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Neighbours of one query accepted by the g2NN scan, in ascending distance order.
///
/// `candidates` holds squared distances; it is reordered in place.
fn g2nn_scan<T: Real>(candidates: &mut [(T, usize)], ratio: T, exhaustive: bool) -> Vec<(usize, T)> {
    let n = candidates.len();
    if n < 2 {
        return Vec::new();
    }
    let mut sorted = if exhaustive { n } else { n.min(8) };
    if sorted < n {
        candidates.select_nth_unstable_by(sorted - 1, cmp_candidate);
    }
    candidates[..sorted].sort_unstable_by(cmp_candidate);

    let mut accepted = Vec::new();
    let mut i = 0;
    loop {
        if i + 1 >= sorted {
            if sorted == n {
                break;
            }
            // the scan ran past the partially sorted prefix
            candidates.sort_unstable_by(cmp_candidate);
            sorted = n;
            continue;
        }
        let d_i = candidates[i].0.sqrt();
        let d_next = candidates[i + 1].0.sqrt();
        if d_i < ratio * d_next {
            accepted.push((candidates[i].1, d_i));
        } else if !exhaustive {
            break;
        }
        i += 1;
    }
    accepted
}

/// g2NN inside one group. Returns the raw (not deduplicated) pairs and the comparison count.
pub fn match_group<T: Real>(
    members: &[usize],
    kps: &[Keypoint<T>],
    descriptors: &[Descriptor<T>],
    params: &MatchParams<T>,
) -> (Vec<MatchPair<T>>, u64) {
    let active: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| !descriptors[i].is_degenerate())
        .collect();
    if active.len() < 3 {
        return (Vec::new(), 0);
    }
    let per_query: Vec<(Vec<MatchPair<T>>, u64)> = active
        .par_iter()
        .map(|&q| {
            let dq = descriptors[q].values();
            let mut cands: Vec<(T, usize)> = active
                .iter()
                .filter(|&&c| c != q)
                .map(|&c| (squared_distance(dq, descriptors[c].values()), c))
                .collect();
            let count = cands.len() as u64;
            let pairs = g2nn_scan(&mut cands, params.ratio, params.exhaustive)
                .into_iter()
                .filter_map(|(c, d)| {
                    let spatial = kps[q].distance_to(&kps[c]);
                    (spatial >= params.min_spatial_distance).then(|| MatchPair {
                        i: q.min(c),
                        j: q.max(c),
                        distance: d,
                        spatial_distance: spatial,
                    })
                })
                .collect();
            (pairs, count)
        })
        .collect();
    let comparisons = per_query.iter().map(|(_, c)| c).sum();
    (per_query.into_iter().flat_map(|(p, _)| p).collect(), comparisons)
}

/// Sorts by `(i, j)` and keeps one entry per pair.
pub fn dedup_pairs<T: Real>(mut pairs: Vec<MatchPair<T>>) -> Vec<MatchPair<T>> {
    pairs.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
    pairs.dedup_by(|a, b| a.i == b.i && a.j == b.j);
    pairs
}

fn validate_inputs<T: Real>(kps: &[Keypoint<T>], descriptors: &[Descriptor<T>], params: &MatchParams<T>) -> Result<()> {
    if kps.len() != descriptors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} keypoints but {} descriptors",
            kps.len(),
            descriptors.len()
        )));
    }
    if !(params.ratio > T::zero() && params.ratio < T::one()) {
        return Err(Error::InvalidArgument(format!(
            "ratio must lie in (0, 1), got {}",
            params.ratio
        )));
    }
    Ok(())
}

pub fn match_all<T: Real>(
    kps: &[Keypoint<T>],
    descriptors: &[Descriptor<T>],
    cluster: &ClusterParams,
    params: &MatchParams<T>,
    mode: MatchMode,
) -> Result<MatchOutcome<T>> {
    validate_inputs(kps, descriptors, params)?;
    let groups = build_groups(kps, cluster, mode)?;
    let results: Vec<_> = groups
        .par_iter()
        .map(|g| match_group(&g.members, kps, descriptors, params))
        .collect();
    let comparisons = results.iter().map(|(_, c)| c).sum();
    let pairs = dedup_pairs(results.into_iter().flat_map(|(p, _)| p).collect());
    Ok(MatchOutcome {
        pairs,
        comparisons,
        groups: groups.len(),
    })
}

/// Each keypoint's nearest non-degenerate neighbours over the whole population, in g2NN order.
///
/// A group's candidate list is the population order filtered to the group, so a scan that stops
/// inside the cached prefix needs no distance evaluations. Used to run many clusterings of the
/// same keypoints (parameter sweeps) at the cost of one.
#[derive(Debug, Clone)]
pub struct NeighborCache<T> {
    lists: Vec<Vec<(T, usize)>>,
}

impl<T: Real> NeighborCache<T> {
    pub fn new(descriptors: &[Descriptor<T>], depth: usize) -> Self {
        let active: Vec<usize> = (0..descriptors.len())
            .filter(|&i| !descriptors[i].is_degenerate())
            .collect();
        let lists = (0..descriptors.len())
            .into_par_iter()
            .map(|q| {
                if descriptors[q].is_degenerate() {
                    return Vec::new();
                }
                let dq = descriptors[q].values();
                let mut cands: Vec<(T, usize)> = active
                    .iter()
                    .filter(|&&c| c != q)
                    .map(|&c| (squared_distance(dq, descriptors[c].values()), c))
                    .collect();
                let keep = depth.min(cands.len());
                if keep > 0 && keep < cands.len() {
                    cands.select_nth_unstable_by(keep - 1, cmp_candidate);
                }
                cands.truncate(keep);
                cands.sort_unstable_by(cmp_candidate);
                cands
            })
            .collect();
        Self { lists }
    }

    pub fn depth_of(&self, i: usize) -> usize {
        self.lists[i].len()
    }
}

/// g2NN over an ascending prefix of a candidate list of length `total`. `None` if the decision
/// needs candidates beyond the prefix.
fn scan_prefix<T: Real>(prefix: &[(T, usize)], total: usize, ratio: T, exhaustive: bool) -> Option<Vec<(usize, T)>> {
    let mut accepted = Vec::new();
    let mut i = 0;
    loop {
        if i + 1 >= prefix.len() {
            return (prefix.len() == total).then_some(accepted);
        }
        let d_i = prefix[i].0.sqrt();
        let d_next = prefix[i + 1].0.sqrt();
        if d_i < ratio * d_next {
            accepted.push((prefix[i].1, d_i));
        } else if !exhaustive {
            return Some(accepted);
        }
        i += 1;
    }
}

fn match_group_cached<T: Real>(
    members: &[usize],
    kps: &[Keypoint<T>],
    descriptors: &[Descriptor<T>],
    cache: &NeighborCache<T>,
    params: &MatchParams<T>,
) -> (Vec<MatchPair<T>>, u64) {
    let active: Vec<usize> = members
        .iter()
        .copied()
        .filter(|&i| !descriptors[i].is_degenerate())
        .collect();
    if active.len() < 3 {
        return (Vec::new(), 0);
    }
    let mut in_group = vec![false; kps.len()];
    for &i in &active {
        in_group[i] = true;
    }
    let total = active.len() - 1;
    let pairs: Vec<MatchPair<T>> = active
        .par_iter()
        .flat_map_iter(|&q| {
            let prefix: Vec<(T, usize)> = cache.lists[q].iter().copied().filter(|&(_, c)| in_group[c]).collect();
            let accepted = match scan_prefix(&prefix, total, params.ratio, params.exhaustive) {
                Some(a) => a,
                None => {
                    let dq = descriptors[q].values();
                    let mut cands: Vec<(T, usize)> = active
                        .iter()
                        .filter(|&&c| c != q)
                        .map(|&c| (squared_distance(dq, descriptors[c].values()), c))
                        .collect();
                    g2nn_scan(&mut cands, params.ratio, params.exhaustive)
                }
            };
            accepted.into_iter().filter_map(move |(c, d)| {
                let spatial = kps[q].distance_to(&kps[c]);
                (spatial >= params.min_spatial_distance).then(|| MatchPair {
                    i: q.min(c),
                    j: q.max(c),
                    distance: d,
                    spatial_distance: spatial,
                })
            })
        })
        .collect();
    let n = active.len() as u64;
    (pairs, n * (n - 1))
}

/// Same output as [`match_all`], with candidate lists served from `cache` where possible.
/// `comparisons` counts the evaluations the uncached matcher would perform.
pub fn match_all_cached<T: Real>(
    kps: &[Keypoint<T>],
    descriptors: &[Descriptor<T>],
    cache: &NeighborCache<T>,
    cluster: &ClusterParams,
    params: &MatchParams<T>,
    mode: MatchMode,
) -> Result<MatchOutcome<T>> {
    validate_inputs(kps, descriptors, params)?;
    if cache.lists.len() != kps.len() {
        return Err(Error::DimensionMismatch("neighbour cache built for other descriptors".into()));
    }
    let groups = build_groups(kps, cluster, mode)?;
    let results: Vec<_> = groups
        .iter()
        .map(|g| match_group_cached(&g.members, kps, descriptors, cache, params))
        .collect();
    let comparisons = results.iter().map(|(_, c)| c).sum();
    let pairs = dedup_pairs(results.into_iter().flat_map(|(p, _)| p).collect());
    Ok(MatchOutcome {
        pairs,
        comparisons,
        groups: groups.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DESCRIPTOR_LEN;
    use proptest::prelude::*;

    fn kp(gray: u8, entropy: f64) -> Keypoint<f64> {
        let mut k = Keypoint::new(0.0, 0.0, 1.0);
        k.gray_value = gray;
        k.entropy_value = entropy;
        k
    }

    #[test]
    fn gray_groups_default_steps() {
        assert_eq!(gray_group_count(50, 10).unwrap(), 7);
        assert_eq!(gray_interval(1, 50, 10), GrayInterval { lo: 0, hi: 50 });
        assert_eq!(gray_interval(2, 50, 10), GrayInterval { lo: 40, hi: 90 });
        assert_eq!(gray_interval(7, 50, 10), GrayInterval { lo: 240, hi: 255 });
        let kps = vec![kp(49, 0.0), kp(51, 0.0)];
        let groups = gray_level_groups(&kps, 50, 10).unwrap();
        assert_eq!(groups[1].members, vec![0, 1]);
        assert_eq!(groups[0].members, vec![0]);
    }

    #[test]
    fn full_range_gray_group() {
        assert_eq!(gray_group_count(255, 0).unwrap(), 1);
        let kps: Vec<_> = (0..=255u8).map(|g| kp(g, 1.0)).collect();
        let groups = gray_level_groups(&kps, 255, 0).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members.len(), 256);
    }

    #[test]
    fn invalid_steps() {
        assert!(gray_group_count(10, 10).is_err());
        assert!(gray_group_count(5, 10).is_err());
        assert!(entropy_group_count(0.0, 0.0).is_err());
        assert!(entropy_group_count(-1.0, 0.0).is_err());
        assert!(entropy_group_count(1.0, -0.1).is_err());
    }

    #[test]
    fn entropy_subgroup_bounds() {
        assert_eq!(entropy_group_count(1.0, 0.0).unwrap(), 7);
        let iv: Vec<_> = (1..=7).map(|v| entropy_interval(v, 1.0, 0.0)).collect();
        for (v, i) in iv.iter().enumerate() {
            assert_eq!((i.lo, i.hi), (v as f64, v as f64 + 1.0));
        }
        let i2 = entropy_interval(2, 1.0, 0.2);
        assert!((i2.lo - 0.8).abs() < 1e-12 && (i2.hi - 2.2).abs() < 1e-12);
        assert_eq!(entropy_group_count(7.0, 0.0).unwrap(), 1);
        let i = entropy_interval(1, 7.0, 0.0);
        assert_eq!((i.lo, i.hi), (0.0, 7.0));
    }

    #[test]
    fn g2nn_hand_examples() {
        // squared distances for d = [1, 5, 6] (self excluded)
        let mut c = vec![(25.0, 2), (1.0, 1), (36.0, 3)];
        let acc = g2nn_scan(&mut c, 0.5, false);
        assert_eq!(acc, vec![(1, 1.0)]);
        let mut c = vec![(16.0, 1), (25.0, 2)];
        assert!(g2nn_scan(&mut c, 0.5, false).is_empty());
        let mut c = vec![(1.0, 1)];
        assert!(g2nn_scan(&mut c, 0.5, false).is_empty());
    }

    #[test]
    fn g2nn_scan_extends_past_prefix() {
        // geometric distances: every ratio passes until the last element
        let mut c: Vec<(f64, usize)> = (0..20).map(|k| (9f64.powi(k), 19 - k as usize)).collect();
        let acc = g2nn_scan(&mut c, 0.5, false);
        assert_eq!(acc.len(), 19);
    }

    fn unit(hot: &[(usize, f64)]) -> Descriptor<f64> {
        let mut v = vec![0.0; DESCRIPTOR_LEN];
        for &(i, x) in hot {
            v[i] = x;
        }
        Descriptor::from_histogram(v)
    }

    #[test]
    fn group_of_two_never_matches() {
        let kps = vec![Keypoint::new(0.0, 0.0, 1.0), Keypoint::new(50.0, 0.0, 1.0)];
        let d = vec![unit(&[(0, 1.0)]), unit(&[(0, 1.0)])];
        let (p, _) = match_group(&[0, 1], &kps, &d, &MatchParams::default());
        assert!(p.is_empty());
    }

    #[test]
    fn duplicate_pairs_across_groups_collapse() {
        // two identical-ish descriptors far apart plus unrelated distractors
        let mut kps: Vec<_> = (0..5).map(|i| Keypoint::new(i as f64 * 40.0, 0.0, 1.0)).collect();
        for (k, g) in kps.iter_mut().zip([45u8, 45, 45, 45, 45]) {
            k.gray_value = g;
            k.entropy_value = 1.0;
        }
        let d = vec![
            unit(&[(0, 1.0), (1, 0.1)]),
            unit(&[(0, 1.0), (1, 0.11)]),
            unit(&[(5, 1.0)]),
            unit(&[(9, 1.0)]),
            unit(&[(20, 1.0)]),
        ];
        // gray 45 lies in groups 1 and 2, entropy 1.0 in subgroups 1 and 2: four groups see the pair
        let out = match_all(&kps, &d, &ClusterParams::default(), &MatchParams::default(), MatchMode::Clustered).unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!((out.pairs[0].i, out.pairs[0].j), (0, 1));
        let bf = match_all(&kps, &d, &ClusterParams::default(), &MatchParams::default(), MatchMode::BruteForce).unwrap();
        assert_eq!(bf.groups, 1);
        assert_eq!(bf.comparisons, 5 * 4);
    }

    #[test]
    fn spatial_and_degenerate_filters() {
        let kps: Vec<_> = [0.0, 5.0, 100.0, 200.0, 300.0]
            .iter()
            .map(|&x| Keypoint::new(x, 0.0, 1.0))
            .collect();
        let d = vec![
            unit(&[(0, 1.0), (1, 0.1)]),
            unit(&[(0, 1.0), (1, 0.1)]),
            unit(&[(5, 1.0)]),
            Descriptor::zero(),
            unit(&[(30, 1.0)]),
        ];
        let p = MatchParams::default();
        let (pairs, count) = match_group(&[0, 1, 2, 3, 4], &kps, &d, &p);
        // 0 and 1 are each other's neighbour but only 5 px apart
        assert!(pairs.is_empty());
        assert_eq!(count, 4 * 3);
    }

    fn clustered_population(seed: u64, n: usize) -> (Vec<Keypoint<f64>>, Vec<Descriptor<f64>>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut kps: Vec<Keypoint<f64>> = Vec::new();
        let mut descs: Vec<Descriptor<f64>> = Vec::new();
        for k in 0..n {
            let src = (k > 0 && rng.gen_bool(0.5)).then(|| rng.gen_range(0..k));
            let hist: Vec<f64> = match src {
                Some(s) => descs[s].values().iter().map(|v| v + rng.gen_range(0.0..0.02)).collect(),
                None => (0..DESCRIPTOR_LEN).map(|_| rng.gen_range(0.0..1.0)).collect(),
            };
            descs.push(if rng.gen_bool(0.02) { Descriptor::zero() } else { Descriptor::from_histogram(hist) });
            let mut p = Keypoint::new(rng.gen_range(0.0..400.0), rng.gen_range(0.0..400.0), 1.6);
            p.gray_value = match src {
                Some(s) => kps[s].gray_value.saturating_add(rng.gen_range(0..8)),
                None => rng.gen(),
            };
            p.entropy_value = rng.gen_range(0.0..7.0);
            kps.push(p);
        }
        (kps, descs)
    }

    #[test]
    fn cached_matching_equals_direct() {
        for seed in 0..6 {
            let (kps, descs) = clustered_population(seed, 300);
            for depth in [1, 3, 32] {
                let cache = NeighborCache::new(&descs, depth);
                for step4 in [0.0, 0.2, 0.5] {
                    for exhaustive in [false, true] {
                        let cluster = ClusterParams { step4, ..ClusterParams::default() };
                        let params = MatchParams { exhaustive, ..MatchParams::default() };
                        for mode in [MatchMode::Clustered, MatchMode::GrayOnly, MatchMode::BruteForce] {
                            let a = match_all(&kps, &descs, &cluster, &params, mode).unwrap();
                            let b = match_all_cached(&kps, &descs, &cache, &cluster, &params, mode).unwrap();
                            assert_eq!(a, b, "seed {seed} depth {depth} step4 {step4} {mode:?}");
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn coverage_and_overlap(step1 in 2u32..=255, step2_frac in 0.0f64..1.0, step3 in 0.05f64..7.5, step4 in 0.0f64..2.0) {
            let step2 = ((step1 - 1) as f64 * step2_frac) as u32;
            let nu = gray_group_count(step1, step2).unwrap();
            let nv = entropy_group_count(step3, step4).unwrap();
            let grays: Vec<_> = (1..=nu).map(|u| gray_interval(u, step1, step2)).collect();
            let ents: Vec<_> = (1..=nv).map(|v| entropy_interval(v, step3, step4)).collect();
            for g in 0..=255u8 {
                prop_assert!(grays.iter().any(|i| i.contains(g)));
                let g2 = (g as u32 + step2).min(255) as u8;
                prop_assert!(grays.iter().any(|i| i.contains(g) && i.contains(g2)));
            }
            for k in 0..=140 {
                let e = k as f64 * 0.05;
                prop_assert!(ents.iter().any(|i| i.contains(e)));
                let e2 = (e + step4).min(7.0);
                prop_assert!(ents.iter().any(|i| i.contains(e) && i.contains(e2)));
            }
        }
    }
}
