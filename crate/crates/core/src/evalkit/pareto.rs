use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

/// One `(cost, top1)` operating point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoPoint {
    pub label: String,
    pub cost: f64,
    pub top1: f64,
    pub dominated: bool,
}

impl ParetoPoint {
    pub fn new(label: impl Into<String>, cost: f64, top1: f64) -> Self {
        Self {
            label: label.into(),
            cost,
            top1,
            dominated: false,
        }
    }
}

/// `a` dominates `b`: no more cost, no less accuracy, strictly better in one.
pub fn dominates(a: &ParetoPoint, b: &ParetoPoint) -> bool {
    a.cost <= b.cost && a.top1 >= b.top1 && (a.cost < b.cost || a.top1 > b.top1)
}

/// Sets `dominated` on every point; duplicates never dominate each other.
pub fn mark_dominated(points: &mut [ParetoPoint]) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i]
            .cost
            .total_cmp(&points[j].cost)
            .then(points[j].top1.total_cmp(&points[i].top1))
    });
    // best accuracy among strictly cheaper points
    let mut cheaper_best = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let cost = points[order[k]].cost;
        let group_end = order[k..]
            .iter()
            .position(|&i| points[i].cost != cost)
            .map_or(order.len(), |p| k + p);
        let group_best = points[order[k]].top1;
        for &i in &order[k..group_end] {
            let p = &mut points[i];
            p.dominated = p.top1 < group_best || p.top1 <= cheaper_best;
        }
        cheaper_best = cheaper_best.max(group_best);
        k = group_end;
    }
}

/// Evaluates every grid setting (in parallel) and flags dominated results.
pub fn pareto_sweep<G, F>(grid: &[G], eval: F) -> Result<Vec<ParetoPoint>>
where
    G: Sync,
    F: Fn(&G) -> Result<ParetoPoint> + Sync,
{
    let mut points = grid.par_iter().map(&eval).collect::<Result<Vec<_>>>()?;
    mark_dominated(&mut points);
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_is_on_the_frontier() {
        let mut p = vec![ParetoPoint::new("a", 2.0, 90.0)];
        mark_dominated(&mut p);
        assert!(!p[0].dominated);
    }

    #[test]
    fn exactly_one_flagged_when_one_dominates() {
        let mut p = vec![ParetoPoint::new("a", 1.5, 91.0), ParetoPoint::new("b", 2.0, 90.0)];
        mark_dominated(&mut p);
        assert_eq!(p.iter().filter(|x| x.dominated).count(), 1);
        assert!(p[1].dominated);
    }

    #[test]
    fn ties_and_equal_costs() {
        let mut p = vec![
            ParetoPoint::new("a", 1.0, 90.0),
            ParetoPoint::new("b", 1.0, 90.0),
            ParetoPoint::new("c", 1.0, 89.0),
            ParetoPoint::new("d", 2.0, 90.0),
            ParetoPoint::new("e", 2.0, 92.0),
        ];
        mark_dominated(&mut p);
        let flags: Vec<bool> = p.iter().map(|x| x.dominated).collect();
        assert_eq!(flags, vec![false, false, true, true, false]);
    }
}
