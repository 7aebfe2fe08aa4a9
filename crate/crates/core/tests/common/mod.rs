#![allow(dead_code)]

use rand::Rng;
use review_ope::domain::{
    Covariates, OutcomeRecord, OutcomeRecords, OutcomeScale, OutcomeStatus, PairGrid, PairId,
    Reviewer, Venue,
};
use review_ope::similarity::{BidScheme, SimilarityMatrix};

pub fn venue(reviewers: usize, papers: usize, load: u32, cap: u32, conflicts: &[(usize, usize)]) -> Venue {
    venue_with_scale(reviewers, papers, load, cap, conflicts, Some(OutcomeScale::new(1.0, 5.0, None).unwrap()))
}

pub fn venue_with_scale(
    reviewers: usize,
    papers: usize,
    load: u32,
    cap: u32,
    conflicts: &[(usize, usize)],
    scale: Option<OutcomeScale>,
) -> Venue {
    let rs = (0..reviewers)
        .map(|i| Reviewer {
            id: format!("r{i}"),
            cap,
            profile: true,
        })
        .collect();
    let ps = (0..papers).map(|i| format!("p{i}")).collect();
    let cs = conflicts
        .iter()
        .map(|&(r, p)| (format!("r{r}"), format!("p{p}")))
        .collect::<Vec<_>>();
    Venue::new(rs, ps, load, cs, BidScheme::tpdp(), scale).unwrap()
}

pub fn random_sim<R: Rng>(venue: &Venue, rng: &mut R) -> SimilarityMatrix {
    let rows = (0..venue.num_reviewers())
        .map(|_| (0..venue.num_papers()).map(|_| rng.gen::<f64>()).collect())
        .collect();
    SimilarityMatrix::from_dense(venue, rows)
}

pub fn text_table(venue: &Venue, text: impl Fn(PairId) -> f64) -> PairGrid<Covariates> {
    PairGrid::from_fn(venue.num_reviewers(), venue.num_papers(), |p| Covariates {
        text: Some(text(p)),
        subject: None,
        bid: None,
    })
}

/// Every assigned pair observed with its outcome.
pub fn full_records(assigned: &PairGrid<bool>, y: &PairGrid<f64>) -> OutcomeRecords {
    OutcomeRecords::new(
        assigned
            .iter()
            .filter(|(_, &z)| z)
            .map(|(pair, _)| OutcomeRecord {
                pair,
                value: Some(*y.get(pair)),
                status: OutcomeStatus::Observed,
            })
            .collect(),
    )
    .unwrap()
}

/// Best total similarity over all 0/1 assignments, by exhaustive search.
pub fn brute_force_optimum(sim: &SimilarityMatrix, venue: &Venue) -> Option<f64> {
    #[allow(clippy::too_many_arguments)]
    fn go(
        paper: usize,
        slot: u32,
        start: usize,
        venue: &Venue,
        sim: &SimilarityMatrix,
        used: &mut Vec<u32>,
        acc: f64,
        best: &mut Option<f64>,
    ) {
        if paper == venue.num_papers() {
            *best = Some(best.map_or(acc, |b: f64| b.max(acc)));
            return;
        }
        if slot == venue.paper_load() {
            go(paper + 1, 0, 0, venue, sim, used, acc, best);
            return;
        }
        for r in start..venue.num_reviewers() {
            let pair = PairId::new(r, paper);
            if venue.is_conflict(pair) || used[r] >= venue.cap(r) {
                continue;
            }
            let s = sim.scores.get(pair).unwrap_or(0.0);
            used[r] += 1;
            go(paper, slot + 1, r + 1, venue, sim, used, acc + s, best);
            used[r] -= 1;
        }
    }
    let mut best = None;
    let mut used = vec![0; venue.num_reviewers()];
    go(0, 0, 0, venue, sim, &mut used, 0.0, &mut best);
    best
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6}"))
}
