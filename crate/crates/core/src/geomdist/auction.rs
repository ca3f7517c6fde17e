use super::{dist, Assignment, GeomError, PointCloud, Result};

/// ε-scaling schedule for the auction solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionConfig {
    pub eps_start: f64,
    pub eps_factor: f64,
    pub eps_min: f64,
    /// Total bid budget across all phases.
    pub max_bids: usize,
}

impl AuctionConfig {
    /// Defaults scaled to the pair of clouds: ε starts at a quarter of the
    /// largest pairwise cost and shrinks by 4× down to `1/(8N)`.
    pub fn for_clouds(x: &PointCloud, y: &PointCloud) -> Self {
        let n = x.len();
        let mut max_cost: f64 = 0.0;
        for p in x.points() {
            for q in y.points() {
                max_cost = max_cost.max(dist(p, q));
            }
        }
        let eps_min = 1.0 / (8.0 * n as f64);
        AuctionConfig {
            eps_start: (max_cost / 4.0).max(2.0 * eps_min),
            eps_factor: 0.25,
            eps_min,
            max_bids: 10 * n * n + 64,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.eps_min > 0.0
            && self.eps_start > self.eps_min
            && self.eps_factor > 0.0
            && self.eps_factor < 1.0
            && self.eps_start.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GeomError::BadConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmdResult {
    pub cost: f64,
    pub assignment: Assignment,
    /// False when the bid budget ran out and the remaining points were
    /// completed greedily.
    pub converged: bool,
    pub bids: usize,
}

/// Auction-approximated EMD with the default schedule.
pub fn emd(x: &PointCloud, y: &PointCloud) -> Result<EmdResult> {
    if x.len() != y.len() {
        return Err(GeomError::SizeMismatch(x.len(), y.len()));
    }
    emd_auction(x, y, &AuctionConfig::for_clouds(x, y))
}

/// Gauss-Seidel forward auction with ε-scaling. Prices persist across phases;
/// each phase restarts from an empty assignment.
pub fn emd_auction(x: &PointCloud, y: &PointCloud, cfg: &AuctionConfig) -> Result<EmdResult> {
    let n = x.len();
    if n != y.len() {
        return Err(GeomError::SizeMismatch(n, y.len()));
    }
    cfg.validate()?;
    let (xp, yp) = (x.points(), y.points());
    const FREE: usize = usize::MAX;

    let mut price = vec![0.0f64; n];
    let mut owner = vec![FREE; n];
    let mut assigned = vec![FREE; n];
    let mut eps = cfg.eps_start;
    let mut bids = 0usize;
    let mut converged = true;

    'phases: loop {
        owner.fill(FREE);
        assigned.fill(FREE);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            if bids >= cfg.max_bids {
                converged = false;
                break 'phases;
            }
            bids += 1;
            let (mut best, mut best_v, mut second_v) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, q) in yp.iter().enumerate() {
                let v = -dist(&xp[i], q) - price[j];
                if v > best_v {
                    second_v = best_v;
                    best_v = v;
                    best = j;
                } else if v > second_v {
                    second_v = v;
                }
            }
            let raise = if n == 1 { eps } else { best_v - second_v + eps };
            price[best] += raise;
            let prev = std::mem::replace(&mut owner[best], i);
            if prev != FREE {
                assigned[prev] = FREE;
                queue.push(prev);
            }
            assigned[i] = best;
        }
        if eps <= cfg.eps_min {
            break;
        }
        eps = (eps * cfg.eps_factor).max(cfg.eps_min);
    }

    if !converged {
        let mut free = (0..n).filter(|&j| owner[j] == FREE);
        for slot in assigned.iter_mut().filter(|a| **a == FREE) {
            *slot = free.next().expect("free object count matches free persons");
        }
    }
    let assignment = Assignment::from_perm(x, y, assigned)?;
    Ok(EmdResult {
        cost: assignment.cost,
        assignment,
        converged,
        bids,
    })
}
