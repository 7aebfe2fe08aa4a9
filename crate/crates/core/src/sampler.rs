//! Sampling integral assignments with prescribed marginals, and Monte Carlo
//! estimation of the pairwise assignment covariances.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{PairGrid, PairId, Venue, SUPPORT_EPS};
use crate::error::{Error, Result};
use crate::lp::MarginalMatrix;
use crate::rounding::{self, FractionalState};

/// Reusable sampler over the support of one marginal matrix.
#[derive(Debug, Clone)]
pub struct AssignmentSampler {
    reviewers: usize,
    papers: usize,
    support: Vec<PairId>,
    start: FractionalState<f64>,
}

impl AssignmentSampler {
    pub fn new(marginals: &MarginalMatrix, venue: &Venue) -> Result<Self> {
        let bad = marginals.violations(venue, 1e-6);
        if !bad.is_empty() {
            return Err(Error::Sampler(format!(
                "marginals are not a feasible fractional assignment: {}",
                bad.join("; ")
            )));
        }
        let support: Vec<PairId> = marginals
            .probs
            .iter()
            .filter(|(_, &x)| x > SUPPORT_EPS)
            .map(|(p, _)| p)
            .collect();
        let values = support
            .iter()
            .map(|&p| {
                let x = marginals.prob(p);
                if x > 1.0 - SUPPORT_EPS {
                    1.0
                } else {
                    x
                }
            })
            .collect();
        let start = FractionalState::new(
            venue.num_reviewers(),
            venue.num_papers(),
            support.iter().map(|p| (p.reviewer, p.paper)).collect(),
            values,
        );
        // Fail early on corrupt supports rather than on the first draw.
        start.find_structure()?;
        Ok(Self {
            reviewers: venue.num_reviewers(),
            papers: venue.num_papers(),
            support,
            start,
        })
    }

    /// Pairs with positive probability, in grid order; sample indices refer to this list.
    pub fn support(&self) -> &[PairId] {
        &self.support
    }

    /// Indices into [`Self::support`] of the pairs selected by one draw.
    pub fn draw_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u32>> {
        let mut state = self.start.clone();
        state.round_with(|p| rng.gen::<f64>() < p)?;
        Ok(state
            .selected()
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s)
            .map(|(i, _)| i as u32)
            .collect())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PairGrid<bool>> {
        let idx = self.draw_indices(rng)?;
        Ok(self.to_grid(&idx))
    }

    fn to_grid(&self, idx: &[u32]) -> PairGrid<bool> {
        let mut z = PairGrid::filled(self.reviewers, self.papers, false);
        for &i in idx {
            z.set(self.support[i as usize], true);
        }
        z
    }

    /// Exact distribution of the sampler: every reachable assignment with its probability.
    pub fn distribution(&self) -> Result<Vec<(PairGrid<bool>, f64)>> {
        Ok(rounding::enumerate(&self.start)?
            .into_iter()
            .map(|(sel, p)| {
                let idx: Vec<u32> = sel
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| **s)
                    .map(|(i, _)| i as u32)
                    .collect();
                (self.to_grid(&idx), p)
            })
            .collect())
    }

    /// The fractional start state, for exact-arithmetic analysis.
    pub fn start_state(&self) -> &FractionalState<f64> {
        &self.start
    }
}

/// Draw one assignment whose per-pair law matches the marginals.
pub fn sample_assignment(
    marginals: &MarginalMatrix,
    venue: &Venue,
    seed: u64,
) -> Result<PairGrid<bool>> {
    let sampler = AssignmentSampler::new(marginals, venue)?;
    sampler.draw(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Streaming first and second moments of the support indicators.
///
/// Joint counts are kept only for pairs of pairs that were ever selected
/// together; every other off-diagonal joint moment is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    support: Vec<PairId>,
    samples: u64,
    first: Vec<u64>,
    joint: HashMap<(u32, u32), u64>,
    seed: u64,
    workers: usize,
}

impl CovarianceAccumulator {
    pub fn new(support: Vec<PairId>, seed: u64, workers: usize) -> Self {
        let n = support.len();
        Self {
            support,
            samples: 0,
            first: vec![0; n],
            joint: HashMap::new(),
            seed,
            workers,
        }
    }

    /// Record one draw, given the sorted support indices it selected.
    pub fn add_sample(&mut self, selected: &[u32]) {
        self.samples += 1;
        for (k, &a) in selected.iter().enumerate() {
            self.first[a as usize] += 1;
            for &b in &selected[k + 1..] {
                *self.joint.entry((a, b)).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        assert_eq!(self.support, other.support, "merging accumulators over different supports");
        self.samples += other.samples;
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            *a += b;
        }
        for (&k, &v) in &other.joint {
            *self.joint.entry(k).or_insert(0) += v;
        }
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn support(&self) -> &[PairId] {
        &self.support
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.first[i] as f64 / self.samples as f64
    }

    /// Empirical (population-normalized) covariance between support indices.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        let n = self.samples as f64;
        if i == j {
            let m = self.mean(i);
            return m * (1.0 - m);
        }
        let key = (i.min(j) as u32, i.max(j) as u32);
        let both = self.joint.get(&key).copied().unwrap_or(0) as f64 / n;
        both - self.mean(i) * self.mean(j)
    }

    pub fn finish(&self) -> CovarianceMatrix {
        let means: Vec<f64> = (0..self.support.len()).map(|i| self.mean(i)).collect();
        let mut entries: Vec<(u32, u32, f64)> = self
            .joint
            .keys()
            .map(|&(a, b)| (a, b, self.cov(a as usize, b as usize)))
            .collect();
        entries.extend((0..self.support.len() as u32).map(|i| (i, i, self.cov(i as usize, i as usize))));
        entries.sort_by_key(|&(a, b, _)| (a, b));
        CovarianceMatrix::new(
            self.support.clone(),
            means,
            entries,
            CovarianceProvenance {
                samples: self.samples,
                seed: self.seed,
                workers: self.workers,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovarianceProvenance {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
}

/// Read-only covariance of assignment indicators under the on-policy.
///
/// Stores the diagonal and every co-occurring off-diagonal entry; any other
/// off-diagonal entry equals `-mean_a * mean_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    support: Vec<PairId>,
    index: HashMap<PairId, u32>,
    means: Vec<f64>,
    entries: HashMap<(u32, u32), f64>,
    provenance: CovarianceProvenance,
}

impl CovarianceMatrix {
    pub fn new(
        support: Vec<PairId>,
        means: Vec<f64>,
        entries: Vec<(u32, u32, f64)>,
        provenance: CovarianceProvenance,
    ) -> Self {
        let index = support
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as u32))
            .collect();
        let entries = entries
            .into_iter()
            .map(|(a, b, v)| ((a.min(b), a.max(b)), v))
            .collect();
        Self {
            support,
            index,
            means,
            entries,
            provenance,
        }
    }

    pub fn support(&self) -> &[PairId] {
        &self.support
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn provenance(&self) -> CovarianceProvenance {
        self.provenance
    }

    /// Stored triplets `(a, b, value)` with `a <= b`, sorted.
    pub fn triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut v: Vec<_> = self.entries.iter().map(|(&(a, b), &x)| (a, b, x)).collect();
        v.sort_by_key(|&(a, b, _)| (a, b));
        v
    }

    pub fn index_of(&self, pair: PairId) -> Option<usize> {
        self.index.get(&pair).map(|&i| i as usize)
    }

    pub fn cov_index(&self, a: usize, b: usize) -> f64 {
        let key = (a.min(b) as u32, a.max(b) as u32);
        match self.entries.get(&key) {
            Some(&v) => v,
            None if a == b => self.means[a] * (1.0 - self.means[a]),
            None => -self.means[a] * self.means[b],
        }
    }

    /// Covariance of two pairs, or `None` if either lies outside the support.
    pub fn cov(&self, a: PairId, b: PairId) -> Option<f64> {
        Some(self.cov_index(self.index_of(a)?, self.index_of(b)?))
    }
}

/// Monte Carlo covariance over `n_samples` independent draws.
///
/// Draws are split over `workers` threads, worker `w` using stream `w` of a
/// ChaCha generator seeded with `seed`; the result depends only on
/// `(seed, workers)`.
pub fn estimate_covariance(
    marginals: &MarginalMatrix,
    venue: &Venue,
    n_samples: u64,
    seed: u64,
    workers: usize,
) -> Result<CovarianceAccumulator> {
    if n_samples < 2 {
        return Err(Error::Invalid("covariance estimation needs at least 2 samples".into()));
    }
    let workers = workers.max(1);
    let sampler = AssignmentSampler::new(marginals, venue)?;
    let share = |w: usize| n_samples / workers as u64 + u64::from((w as u64) < n_samples % workers as u64);
    let run = |w: usize| -> Result<CovarianceAccumulator> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(w as u64);
        let mut acc = CovarianceAccumulator::new(sampler.support().to_vec(), seed, workers);
        for _ in 0..share(w) {
            let idx = sampler.draw_indices(&mut rng)?;
            acc.add_sample(&idx);
        }
        Ok(acc)
    };
    let parts: Vec<Result<CovarianceAccumulator>> = if workers == 1 {
        vec![run(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|w| s.spawn(move || run(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling worker panicked"))
                .collect()
        })
    };
    let mut total = CovarianceAccumulator::new(sampler.support().to_vec(), seed, workers);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Reviewer;
    use crate::similarity::BidScheme;

    fn venue(nr: usize, np: usize, load: u32, cap: u32) -> Venue {
        Venue::new(
            (0..nr)
                .map(|i| Reviewer {
                    id: format!("r{i}"),
                    cap,
                    profile: true,
                })
                .collect(),
            (0..np).map(|i| format!("p{i}")).collect(),
            load,
            Vec::new(),
            BidScheme::aaai(),
            None,
        )
        .unwrap()
    }

    fn uniform() -> (Venue, MarginalMatrix) {
        let v = venue(2, 2, 1, 1);
        let m = MarginalMatrix::from_probs(v.grid(0.5));
        (v, m)
    }

    #[test]
    fn integral_marginals_returned_verbatim() {
        let v = venue(2, 2, 1, 1);
        let mut probs = v.grid(0.0);
        probs.set(PairId::new(0, 1), 1.0);
        probs.set(PairId::new(1, 0), 1.0);
        let m = MarginalMatrix::from_probs(probs.clone());
        let z = sample_assignment(&m, &v, 3).unwrap();
        assert_eq!(z, probs.map(|_, &x| x == 1.0));
        let cov = estimate_covariance(&m, &v, 100, 1, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(cov.cov(i, j), 0.0);
            }
        }
    }

    #[test]
    fn draws_are_feasible() {
        let (v, m) = uniform();
        let sampler = AssignmentSampler::new(&m, &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z = sampler.draw(&mut rng).unwrap();
            for p in 0..2 {
                assert_eq!((0..2).filter(|&r| *z.get(PairId::new(r, p))).count(), 1);
            }
        }
    }

    #[test]
    fn infeasible_marginals_rejected() {
        let v = venue(2, 2, 1, 1);
        let m = MarginalMatrix::from_probs(v.grid(0.3));
        assert!(matches!(AssignmentSampler::new(&m, &v), Err(Error::Sampler(_))));
    }

    #[test]
    fn covariance_signs_on_uniform_fixture() {
        let (v, m) = uniform();
        let acc = estimate_covariance(&m, &v, 20_000, 5, 2).unwrap();
        let c = acc.finish();
        let d = c.cov(PairId::new(0, 0), PairId::new(1, 1)).unwrap();
        let o = c.cov(PairId::new(0, 0), PairId::new(0, 1)).unwrap();
        assert!((d - 0.25).abs() < 0.01, "{d}");
        assert!((o + 0.25).abs() < 0.01, "{o}");
        let diag = c.cov(PairId::new(0, 0), PairId::new(0, 0)).unwrap();
        let mean = c.means()[0];
        assert!((diag - mean * (1.0 - mean)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_and_workers_reproduce() {
        let (v, m) = uniform();
        let a = estimate_covariance(&m, &v, 1000, 7, 3).unwrap();
        let b = estimate_covariance(&m, &v, 1000, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples(), 1000);
    }

    #[test]
    fn merge_is_associative_on_counts() {
        let support = vec![PairId::new(0, 0), PairId::new(0, 1), PairId::new(1, 0)];
        let mut x = CovarianceAccumulator::new(support.clone(), 0, 1);
        let mut y = x.clone();
        let mut z = x.clone();
        x.add_sample(&[0, 2]);
        y.add_sample(&[1]);
        z.add_sample(&[0, 1, 2]);
        let mut left = x.clone();
        left.merge(&y);
        left.merge(&z);
        let mut yz = y.clone();
        yz.merge(&z);
        let mut right = x.clone();
        right.merge(&yz);
        assert_eq!(left, right);
    }

    #[test]
    fn too_few_samples_rejected() {
        let (v, m) = uniform();
        assert!(estimate_covariance(&m, &v, 1, 0, 1).is_err());
    }
}
