//! Single-point Bolza problems: one curve end is pinned at the evaluation
//! point, the other end `z` is free and pays an endpoint cost.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::caratheodory::Trajectory;
use crate::error::{Error, Result};
use crate::lagrangian::Vector;
use crate::optimize::LbfgsReport;
use crate::variational::{minimize_curve, perturbation, FreeNodes, Layout, VariationalOptions, WeightedAction};

use super::SearchBox;

/// Values closer than this with endpoints farther apart than
/// [`DISTINCT_ENDPOINTS`] count as distinct minimizers.
pub(crate) const TIED_VALUES: f64 = 1e-6;
pub(crate) const DISTINCT_ENDPOINTS: f64 = 1e-3;

/// Which end of the curve is free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FreeEnd {
    /// Node 0 is free, node `N` is pinned.
    Start,
    /// Node 0 is pinned, node `N` is free.
    End,
}

pub(crate) type EndCost<'a> = dyn Fn(&Vector) -> (f64, Vector) + Sync + 'a;

/// `min_z cost(z) + min over curves of the weighted action`, with the
/// pinned end fixed.
pub(crate) struct FreeEndProblem<'a> {
    pub action: &'a WeightedAction,
    pub pinned: Vector,
    pub free: FreeEnd,
    pub cost: &'a EndCost<'a>,
}

#[derive(Debug, Clone)]
pub(crate) struct Refined {
    pub value: f64,
    pub nodes: Vec<Vector>,
    pub report: LbfgsReport,
}

#[derive(Debug, Clone)]
pub(crate) struct FreeEndSolution {
    pub value: f64,
    pub endpoint: Vector,
    pub curve: Trajectory,
    pub multiple: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Scan points the refinement started from, best first.
    pub candidates: Vec<Vector>,
    pub search_box: SearchBox,
}

impl FreeEndProblem<'_> {
    fn free_index(&self) -> usize {
        match self.free {
            FreeEnd::Start => 0,
            FreeEnd::End => self.action.segments(),
        }
    }

    pub(crate) fn line(&self, z: &Vector) -> Vec<Vector> {
        let (t, n) = (self.action.horizon(), self.action.segments());
        let line = match self.free {
            FreeEnd::Start => Trajectory::straight_line(t, z, &self.pinned, n),
            FreeEnd::End => Trajectory::straight_line(t, &self.pinned, z, n),
        };
        line.expect("endpoint dimensions are checked by the caller").nodes().to_vec()
    }

    fn objective(&self, nodes: &[Vector]) -> (f64, Vec<Vector>) {
        let (value, mut grad) = self.action.integral_with_gradient(nodes);
        let k = self.free_index();
        let (c, gc) = (self.cost)(&nodes[k]);
        grad[k] += gc;
        (value + c, grad)
    }

    /// Endpoint cost plus the action of the straight line.
    pub(crate) fn proxy(&self, z: &Vector) -> f64 {
        (self.cost)(z).0 + self.action.integral(&self.line(z))
    }

    fn free_nodes(&self) -> FreeNodes {
        match self.free {
            FreeEnd::Start => FreeNodes::AllButLast,
            FreeEnd::End => FreeNodes::AllButFirst,
        }
    }

    fn run(&self, init: Vec<Vector>, opts: &VariationalOptions) -> Refined {
        let layout = Layout::new(init.clone(), self.free_nodes());
        let report = minimize_curve(self.action, init, self.free_nodes(), |nodes| self.objective(nodes), opts);
        Refined { value: report.value, nodes: layout.unpack(&report.x), report }
    }

    /// Joint minimization over the curve and its free end, starting from the
    /// straight line to `z0`, with one perturbed restart on failure.
    pub(crate) fn refine(&self, z0: &Vector, opts: &VariationalOptions, seed: u64) -> Result<(Refined, bool)> {
        let first = self.run(self.line(z0), opts);
        if first.report.converged {
            return Ok((first, false));
        }
        let n = self.action.segments();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = opts.retry_amplitude * (1.0 + (z0 - &self.pinned).norm());
        let mut bump = perturbation(n, self.action.dim(), amp, &mut rng);
        // The sine bump vanishes at both ends; let the free end move too.
        let k = self.free_index();
        bump[k] = &bump[n / 2] * 0.5;
        let init = self.line(z0).iter().zip(&bump).map(|(p, b)| p + b).collect();
        let second = self.run(init, opts);
        let multiple = (second.value - first.value).abs() <= TIED_VALUES
            && (&second.nodes[k] - &first.nodes[k]).amax() > DISTINCT_ENDPOINTS;
        let best = if (second.report.converged && !first.report.converged) || second.value < first.value {
            second
        } else {
            first
        };
        let g = best.report.gradient_norm();
        if !best.report.converged && !(g <= opts.stall_factor * opts.lbfgs.gradient_tolerance) {
            return Err(Error::convergence(
                "free-end curve minimization",
                best.report.iterations,
                g,
                best.nodes.iter().flat_map(|v| v.iter().copied()).collect(),
            ));
        }
        Ok((best, multiple))
    }

    /// Local minima of the proxy on a scan of `bx`, best first.
    pub(crate) fn scan(&self, bx: &SearchBox, points: usize, keep: usize) -> Vec<Vector> {
        let shape = vec![points; bx.dim()];
        let total: usize = shape.iter().product();
        let unflat = |mut f: usize| {
            let mut idx = vec![0usize; shape.len()];
            for a in (0..shape.len()).rev() {
                idx[a] = f % points;
                f /= points;
            }
            idx
        };
        let flat = |idx: &[usize]| idx.iter().fold(0, |acc, &i| acc * points + i);
        let values: Vec<f64> = (0..total).map(|f| self.proxy(&bx.lattice_point(&unflat(f), points))).collect();
        let mut minima: Vec<usize> = (0..total)
            .filter(|&f| {
                let idx = unflat(f);
                let local = neighbours(&idx, points).all(|nb| values[f] <= values[flat(&nb)]);
                local
            })
            .collect();
        minima.sort_by(|&p, &q| values[p].total_cmp(&values[q]).then(p.cmp(&q)));
        minima.truncate(keep.max(1));
        minima.into_iter().map(|f| bx.lattice_point(&unflat(f), points)).collect()
    }

    /// Scan, refine the best local minima, and widen the box once if the
    /// winning endpoint is not inside it.
    pub(crate) fn solve(
        &self,
        bx: &SearchBox,
        scan_points: usize,
        max_candidates: usize,
        opts: &VariationalOptions,
        seed: u64,
    ) -> Result<FreeEndSolution> {
        let mut bx = bx.clone();
        for attempt in 0..2 {
            let candidates = self.scan(&bx, scan_points, max_candidates);
            let mut refined: Vec<(Refined, bool)> = Vec::with_capacity(candidates.len());
            let k = self.free_index();
            let d = self.action.dim();
            let mut escaped = None;
            for (c, z0) in candidates.iter().enumerate() {
                match self.refine(z0, opts, seed.wrapping_add(c as u64)) {
                    Ok(r) => refined.push(r),
                    // A run that diverged with its free end outside the box is
                    // an unbounded search, not an optimizer failure.
                    Err(Error::Convergence { last, .. })
                        if last.len() >= (k + 1) * d
                            && !bx.contains_with_margin(&Vector::from_column_slice(&last[k * d..(k + 1) * d]), 0.0) =>
                    {
                        escaped = Some(Vector::from_column_slice(&last[k * d..(k + 1) * d]));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if let Some(z) = escaped {
                if attempt == 0 {
                    bx = bx.dilated(2.0);
                    continue;
                }
                return Err(exhausted(&z, &bx));
            }
            let best = (0..refined.len())
                .min_by(|&p, &q| refined[p].0.value.total_cmp(&refined[q].0.value))
                .expect("scan returns at least one candidate");
            let z = refined[best].0.nodes[k].clone();
            let margin = 0.5 * bx.cell(scan_points);
            if !bx.contains_with_margin(&z, margin) {
                if attempt == 0 {
                    bx = bx.dilated(2.0);
                    continue;
                }
                return Err(exhausted(&z, &bx));
            }
            let tied = refined.iter().enumerate().any(|(c, (r, _))| {
                c != best
                    && (r.value - refined[best].0.value).abs() <= TIED_VALUES
                    && (&r.nodes[k] - &z).amax() > DISTINCT_ENDPOINTS
            });
            let (r, own) = refined.swap_remove(best);
            let curve = Trajectory::new(self.action.horizon(), r.nodes)?;
            return Ok(FreeEndSolution {
                value: r.value,
                endpoint: z,
                curve,
                multiple: tied || own,
                iterations: r.report.iterations,
                gradient_norm: r.report.gradient_norm(),
                candidates,
                search_box: bx,
            });
        }
        unreachable!("the loop returns on its second pass")
    }
}

fn exhausted(z: &Vector, bx: &SearchBox) -> Error {
    Error::SearchBoxExhausted(format!(
        "endpoint {:?} outside the widened box {:?}..{:?}",
        z.as_slice(),
        bx.lower.as_slice(),
        bx.upper.as_slice()
    ))
}

/// Lattice neighbours of `idx` (all `3^d - 1` offsets, clipped to the scan).
fn neighbours(idx: &[usize], points: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    let d = idx.len();
    (0..3usize.pow(d as u32)).filter_map(move |code| {
        let mut c = code;
        let mut nb = idx.to_vec();
        let mut moved = false;
        for slot in nb.iter_mut() {
            let off = c % 3;
            c /= 3;
            match off {
                0 if *slot == 0 => return None,
                0 => *slot -= 1,
                2 if *slot + 1 == points => return None,
                2 => *slot += 1,
                _ => continue,
            }
            moved = true;
        }
        moved.then_some(nb)
    })
}
