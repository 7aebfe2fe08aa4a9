//! Dependent rounding of fractional bipartite assignments.
//!
//! Each step finds either a cycle of fractional entries or a maximal path of
//! fractional entries whose two ends are reviewers, then shifts mass along it
//! with alternating signs. Interior vertices keep their load exactly; path
//! ends move between the floor and ceiling of their current load, which never
//! exceeds the reviewer cap. A step moves by `+alpha` with probability
//! `beta / (alpha + beta)` and by `-beta` otherwise, so every entry keeps its
//! expectation, and at least one entry becomes integral.
//!
//! The structure picked at each step depends only on which entries are still
//! fractional, never on randomness. That makes the whole procedure a finite
//! branching tree which [`enumerate`] can walk exactly.

use std::collections::BTreeMap;
use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};

/// Scalar type the rounding runs in.
pub trait Mass:
    Clone
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    /// Normalize a value after an update (snaps float noise at 0 and 1).
    fn settle(self) -> Self {
        self
    }
    fn is_zero(&self) -> bool;
    fn is_one(&self) -> bool;
}

const SNAP: f64 = 1e-12;

impl Mass for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn settle(self) -> Self {
        if self.abs() < SNAP {
            0.0
        } else if (1.0 - self).abs() < SNAP {
            1.0
        } else {
            self
        }
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn is_one(&self) -> bool {
        *self == 1.0
    }
}

/// A fractional matrix restricted to its support, as a bipartite edge list.
#[derive(Debug, Clone)]
pub struct FractionalState<M> {
    reviewers: usize,
    papers: usize,
    edges: Vec<(usize, usize)>,
    values: Vec<M>,
}

/// Cycle or path of fractional edges with alternating shift signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Structure {
    pub edges: Vec<usize>,
    /// `true` where the entry grows on an upward shift.
    pub up: Vec<bool>,
    pub is_cycle: bool,
}

impl<M: Mass> FractionalState<M> {
    /// `edges` are `(reviewer, paper)` index pairs with values in `[0, 1]`.
    pub fn new(reviewers: usize, papers: usize, edges: Vec<(usize, usize)>, values: Vec<M>) -> Self {
        assert_eq!(edges.len(), values.len());
        let values = values.into_iter().map(M::settle).collect();
        Self {
            reviewers,
            papers,
            edges,
            values,
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn values(&self) -> &[M] {
        &self.values
    }

    fn is_fractional(&self, e: usize) -> bool {
        !(self.values[e].is_zero() || self.values[e].is_one())
    }

    pub fn is_integral(&self) -> bool {
        (0..self.edges.len()).all(|e| !self.is_fractional(e))
    }

    /// Which edges ended at one; meaningful once [`Self::is_integral`] holds.
    pub fn selected(&self) -> Vec<bool> {
        self.values.iter().map(Mass::is_one).collect()
    }

    fn node_of(&self, e: usize, paper_side: bool) -> usize {
        let (r, p) = self.edges[e];
        if paper_side {
            self.reviewers + p
        } else {
            r
        }
    }

    fn other_end(&self, e: usize, node: usize) -> usize {
        let a = self.node_of(e, false);
        if a == node {
            self.node_of(e, true)
        } else {
            a
        }
    }

    /// Next cycle or reviewer-to-reviewer path to shift along, or `None`
    /// once every entry is integral.
    pub fn find_structure(&self) -> Result<Option<Structure>> {
        let n = self.reviewers + self.papers;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut first = None;
        for e in 0..self.edges.len() {
            if self.is_fractional(e) {
                first.get_or_insert(e);
                adj[self.node_of(e, false)].push(e);
                adj[self.node_of(e, true)].push(e);
            }
        }
        let Some(e0) = first else {
            return Ok(None);
        };

        // nodes[k] and nodes[k+1] are joined by path_edges[k].
        let mut nodes = std::collections::VecDeque::from([
            self.node_of(e0, false),
            self.node_of(e0, true),
        ]);
        let mut path_edges = std::collections::VecDeque::from([e0]);
        let mut on_path = vec![false; n];
        on_path[nodes[0]] = true;
        on_path[nodes[1]] = true;

        for forward in [true, false] {
            loop {
                let (cur, via) = if forward {
                    (*nodes.back().unwrap(), *path_edges.back().unwrap())
                } else {
                    (*nodes.front().unwrap(), *path_edges.front().unwrap())
                };
                let Some(&next_edge) = adj[cur].iter().find(|&&e| e != via) else {
                    break;
                };
                let next = self.other_end(next_edge, cur);
                if on_path[next] {
                    return Ok(Some(self.close_cycle(&nodes, &path_edges, next, next_edge, forward)));
                }
                on_path[next] = true;
                if forward {
                    nodes.push_back(next);
                    path_edges.push_back(next_edge);
                } else {
                    nodes.push_front(next);
                    path_edges.push_front(next_edge);
                }
            }
        }

        for end in [nodes.front().unwrap(), nodes.back().unwrap()] {
            if *end >= self.reviewers {
                return Err(Error::Sampler(format!(
                    "paper {} has a single fractional entry; its load is not integral",
                    end - self.reviewers
                )));
            }
        }
        let edges: Vec<usize> = path_edges.into_iter().collect();
        let up = (0..edges.len()).map(|k| k % 2 == 0).collect();
        Ok(Some(Structure {
            edges,
            up,
            is_cycle: false,
        }))
    }

    fn close_cycle(
        &self,
        nodes: &std::collections::VecDeque<usize>,
        path_edges: &std::collections::VecDeque<usize>,
        hit: usize,
        closing: usize,
        forward: bool,
    ) -> Structure {
        let pos = nodes.iter().position(|&v| v == hit).unwrap();
        let mut edges: Vec<usize> = if forward {
            path_edges.iter().skip(pos).copied().collect()
        } else {
            path_edges.iter().take(pos).copied().collect()
        };
        edges.push(closing);
        debug_assert!(edges.len().is_multiple_of(2), "bipartite cycles have even length");
        let up = (0..edges.len()).map(|k| k % 2 == 0).collect();
        Structure {
            edges,
            up,
            is_cycle: true,
        }
    }

    /// Largest upward and downward shifts that keep entries in `[0, 1]`.
    pub fn shift_limits(&self, s: &Structure) -> (M, M) {
        let mut alpha: Option<M> = None;
        let mut beta: Option<M> = None;
        for (&e, &up) in s.edges.iter().zip(&s.up) {
            let x = self.values[e].clone();
            let (a, b) = if up {
                (M::one() - x.clone(), x)
            } else {
                (x.clone(), M::one() - x)
            };
            alpha = Some(match alpha {
                Some(cur) if cur <= a => cur,
                _ => a,
            });
            beta = Some(match beta {
                Some(cur) if cur <= b => cur,
                _ => b,
            });
        }
        (alpha.unwrap(), beta.unwrap())
    }

    /// Shift `amount` along the structure, upward or downward.
    pub fn apply(&mut self, s: &Structure, amount: &M, upward: bool) {
        for (&e, &up) in s.edges.iter().zip(&s.up) {
            let x = self.values[e].clone();
            let v = if up == upward {
                x + amount.clone()
            } else {
                x - amount.clone()
            };
            self.values[e] = v.settle();
        }
    }

    /// One step of the rounding: returns the two successor states with the
    /// probability of the upward one, or `None` when already integral.
    pub fn branch(&self) -> Result<Option<(Self, M, Self)>> {
        let Some(s) = self.find_structure()? else {
            return Ok(None);
        };
        let (alpha, beta) = self.shift_limits(&s);
        let p_up = beta.clone() / (alpha.clone() + beta.clone());
        let mut up = self.clone();
        up.apply(&s, &alpha, true);
        let mut down = self.clone();
        down.apply(&s, &beta, false);
        Ok(Some((up, p_up, down)))
    }
}

impl FractionalState<f64> {
    /// Run the randomized rounding to completion; `coin(p)` returns true with probability `p`.
    pub fn round_with(&mut self, mut coin: impl FnMut(f64) -> bool) -> Result<()> {
        let limit = self.edges.len() + 1;
        for _ in 0..limit {
            let Some(s) = self.find_structure()? else {
                return Ok(());
            };
            let (alpha, beta) = self.shift_limits(&s);
            if alpha + beta <= 0.0 {
                return Err(Error::Sampler("degenerate shift along fractional structure".into()));
            }
            if coin(beta / (alpha + beta)) {
                self.apply(&s, &alpha, true);
            } else {
                self.apply(&s, &beta, false);
            }
        }
        if self.is_integral() {
            Ok(())
        } else {
            Err(Error::Sampler("rounding did not terminate".into()))
        }
    }

    /// Deterministic rounding that never lowers `sum(weight * value)`.
    pub fn round_greedy(&mut self, weights: &[f64]) -> Result<()> {
        let limit = self.edges.len() + 1;
        for _ in 0..limit {
            let Some(s) = self.find_structure()? else {
                return Ok(());
            };
            let (alpha, beta) = self.shift_limits(&s);
            let gain: f64 = s
                .edges
                .iter()
                .zip(&s.up)
                .map(|(&e, &up)| if up { weights[e] } else { -weights[e] })
                .sum();
            if gain >= 0.0 {
                self.apply(&s, &alpha, true);
            } else {
                self.apply(&s, &beta, false);
            }
        }
        if self.is_integral() {
            Ok(())
        } else {
            Err(Error::Sampler("rounding did not terminate".into()))
        }
    }
}

/// Exact distribution of the rounding: each reachable integral outcome with its probability.
pub fn enumerate<M: Mass>(start: &FractionalState<M>) -> Result<Vec<(Vec<bool>, M)>> {
    let mut out: BTreeMap<Vec<bool>, M> = BTreeMap::new();
    let mut stack = vec![(start.clone(), M::one())];
    while let Some((state, prob)) = stack.pop() {
        match state.branch()? {
            None => {
                let key = state.selected();
                let acc = match out.remove(&key) {
                    Some(p) => p + prob,
                    None => prob,
                };
                out.insert(key, acc);
            }
            Some((up, p_up, down)) => {
                let p_down = M::one() - p_up.clone();
                if !p_up.is_zero() {
                    stack.push((up, prob.clone() * p_up));
                }
                if !p_down.is_zero() {
                    stack.push((down, prob * p_down));
                }
            }
        }
    }
    Ok(out.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_2x2() -> FractionalState<f64> {
        FractionalState::new(
            2,
            2,
            vec![(0, 0), (0, 1), (1, 0), (1, 1)],
            vec![0.5, 0.5, 0.5, 0.5],
        )
    }

    #[test]
    fn uniform_2x2_has_two_equiprobable_outcomes() {
        let dist = enumerate(&uniform_2x2()).unwrap();
        assert_eq!(dist.len(), 2);
        for (sel, p) in &dist {
            assert!((p - 0.5).abs() < 1e-15);
            assert_eq!(sel.iter().filter(|&&b| b).count(), 2);
        }
    }

    #[test]
    fn integral_input_is_untouched() {
        let mut s = FractionalState::new(2, 2, vec![(0, 0), (1, 1)], vec![1.0, 1.0]);
        s.round_with(|_| panic!("no coin needed")).unwrap();
        assert_eq!(s.selected(), vec![true, true]);
    }

    #[test]
    fn path_between_underloaded_reviewers() {
        // one paper, load 1, two reviewers at 0.3 / 0.7
        let s = FractionalState::new(2, 1, vec![(0, 0), (1, 0)], vec![0.3, 0.7]);
        let st = s.find_structure().unwrap().unwrap();
        assert!(!st.is_cycle);
        let dist = enumerate(&s).unwrap();
        let p_first: f64 = dist.iter().filter(|(sel, _)| sel[0]).map(|(_, p)| p).sum();
        assert!((p_first - 0.3).abs() < 1e-12);
    }

    #[test]
    fn paper_with_single_fractional_entry_is_rejected() {
        let s = FractionalState::new(1, 1, vec![(0, 0)], vec![0.4]);
        assert!(matches!(s.find_structure(), Err(Error::Sampler(_))));
    }

    #[test]
    fn greedy_rounding_keeps_better_matching() {
        let mut s = uniform_2x2();
        s.round_greedy(&[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.selected(), vec![true, false, false, true]);
    }
}
