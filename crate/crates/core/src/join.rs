//! Joining independent segment filters.
//!
//! Each pair of adjacent segments is coupled by a boundary matrix of ratios
//! `p(first state of m | last state of m-1) / r_m(first state of m)`. With
//! the history-weight identity every joint-index sum of the canonical and
//! ratio estimators factorizes into a chain of such matrices, so the
//! likelihood, the latent-state estimate and the per-filter variance
//! estimates all reduce to vector-matrix sweeps costing `O(K^2)` per
//! boundary.
//!
//! The sweeps keep every intermediate vector rescaled to a unit maximum and
//! carry the scale in a log offset; matrix entries are stored shifted by
//! their own maximum for the same reason.

use crate::error::{Error, Result};
use crate::filter::SegmentOutput;
use crate::model::{SegmentInitializer, StateSpaceModel};

/// Log-scale coupling between segment `segment - 1` and `segment`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMatrix {
    /// Index of the later segment.
    pub segment: usize,
    pub rows: usize,
    pub cols: usize,
    /// Maximum of `ln B(i, j)`.
    pub log_offset: f64,
    /// `B(i, j) / exp(log_offset)`, row-major, rows indexed by the previous
    /// segment's particles and columns by the next segment's. Only this
    /// scaled copy is kept; entries far below the maximum flush to zero.
    scaled: Vec<f64>,
}

impl BoundaryMatrix {
    /// Build from raw log entries, checking that every column has mass.
    pub fn from_log_entries(segment: usize, rows: usize, cols: usize, log_entries: Vec<f64>) -> Result<Self> {
        if log_entries.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "boundary {segment}: {} entries for a {rows}x{cols} matrix",
                log_entries.len()
            )));
        }
        for j in 0..cols {
            let ok = (0..rows).any(|i| {
                let v = log_entries[i * cols + j];
                v.is_finite() || v == f64::INFINITY
            });
            if !ok || (0..rows).any(|i| log_entries[i * cols + j].is_nan()) {
                return Err(Error::DominanceViolation { segment, particle: j });
            }
        }
        let log_offset = log_entries.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut scaled = log_entries;
        scaled.iter_mut().for_each(|v| *v = (*v - log_offset).exp());
        Ok(BoundaryMatrix { segment, rows, cols, log_offset, scaled })
    }

    #[inline]
    pub fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_offset + self.scaled[i * self.cols + j].ln()
    }

    /// `ln(sum_{i,j} B(i, j) / (rows * cols))`, the boundary's factor in the
    /// product-form likelihood.
    pub fn log_mean(&self) -> f64 {
        self.log_offset + self.scaled.iter().sum::<f64>().ln() - ((self.rows * self.cols) as f64).ln()
    }

    /// `ln(rows^-1 sum_i B(i, j))` for every column `j`.
    pub fn column_log_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.scaled.chunks_exact(self.cols) {
            sums.iter_mut().zip(row).for_each(|(s, b)| *s += b);
        }
        sums.iter().map(|s| self.log_offset + s.ln() - (self.rows as f64).ln()).collect()
    }

    /// Return a copy with `shift` added to every log entry.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(Error::InvalidParams(format!("boundary shift {shift} is not finite")));
        }
        Ok(BoundaryMatrix { log_offset: self.log_offset + shift, ..self.clone() })
    }

    /// `v^T B`, in the matrix's shifted scale.
    fn left_mul(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.scaled[i * self.cols..(i + 1) * self.cols];
            for (o, &b) in out.iter_mut().zip(row) {
                *o += vi * b;
            }
        }
    }

    /// `B v`, in the matrix's shifted scale.
    fn right_mul(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.scaled[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(v).map(|(b, x)| b * x).sum();
        }
    }
}

/// Boundary matrix between `prev` and `next`, where `next` was initialized
/// with `init_next`.
pub fn boundary_matrix<M: StateSpaceModel + ?Sized>(
    model: &M,
    prev: &SegmentOutput,
    next: &SegmentOutput,
    init_next: &SegmentInitializer,
) -> Result<BoundaryMatrix> {
    if prev.config.start + prev.config.len != next.config.start {
        return Err(Error::DimensionMismatch(format!(
            "segments {} and {} are not adjacent",
            prev.config.index, next.config.index
        )));
    }
    let t = next.config.start;
    let lasts = prev.last_states();
    let firsts = next.first_states();
    let log_r: Vec<f64> = firsts.iter().map(|&x| init_next.log_density(model, x)).collect();
    let mut entries = Vec::with_capacity(lasts.len() * firsts.len());
    for &xl in &lasts {
        for (&xf, &lr) in firsts.iter().zip(&log_r) {
            entries.push(model.transition_log_density(xl, xf, t) - lr);
        }
    }
    BoundaryMatrix::from_log_entries(next.config.index, lasts.len(), firsts.len(), entries)
}

/// Which algebraic form of the likelihood estimate to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodForm {
    /// Joint sum over all index tuples, evaluated as a matrix chain.
    Chain,
    /// Product of independent per-boundary double sums.
    Product,
}

/// The quantity `psi(x_0, ..., x_{U-1})` whose smoothed expectation is
/// estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// `x_u` for a 0-based stage `u`.
    Coordinate(usize),
    /// `sum_i x_{u_i}`.
    Additive(Vec<usize>),
    /// A constant.
    Constant(f64),
}

/// Per-filter variance estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// In-sample estimate of the variance contribution of each filter.
    pub sigma2: Vec<f64>,
    /// `sqrt(sum_m sigma2_m / K_m)`
    pub stderr: f64,
}

/// Estimates produced from one set of joined segments.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub psi_tilde: f64,
    pub log_lambda_chain: f64,
    pub log_lambda_product: f64,
    pub sigma2_pm: Vec<f64>,
    pub stderr: f64,
    pub allocation: Vec<usize>,
}

/// Forward sweep state: `f_m = 1^T B_1 ... B_m` and the same chain with the
/// functional folded in, for every segment, in a shared per-segment scale.
struct Forward {
    plain: Vec<Vec<f64>>,
    with_psi: Vec<Vec<f64>>,
    log_scale: Vec<f64>,
}

/// Backward sweep: `b_m = B_{m+1} ... B_M 1` and the functional's later
/// segments folded in (segment `m`'s own term excluded).
struct Backward {
    plain: Vec<Vec<f64>>,
    later_psi: Vec<Vec<f64>>,
}

/// A set of segment outputs and the boundary matrices that couple them.
#[derive(Debug, Clone, Copy)]
pub struct Join<'a> {
    segments: &'a [SegmentOutput],
    boundaries: &'a [BoundaryMatrix],
}

impl<'a> Join<'a> {
    pub fn new(segments: &'a [SegmentOutput], boundaries: &'a [BoundaryMatrix]) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::DimensionMismatch("no segments to join".into()));
        }
        if boundaries.len() + 1 != segments.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} segments need {} boundaries, got {}",
                segments.len(),
                segments.len() - 1,
                boundaries.len()
            )));
        }
        for (m, b) in boundaries.iter().enumerate() {
            let (prev, next) = (&segments[m], &segments[m + 1]);
            if b.rows != prev.particles() || b.cols != next.particles() {
                return Err(Error::DimensionMismatch(format!(
                    "boundary {} is {}x{} but segments have {} and {} particles",
                    m + 1,
                    b.rows,
                    b.cols,
                    prev.particles(),
                    next.particles()
                )));
            }
            if prev.config.start + prev.config.len != next.config.start {
                return Err(Error::DimensionMismatch(format!("segments {m} and {} are not adjacent", m + 1)));
            }
        }
        Ok(Join { segments, boundaries })
    }

    pub fn segments(&self) -> &'a [SegmentOutput] {
        self.segments
    }

    pub fn boundaries(&self) -> &'a [BoundaryMatrix] {
        self.boundaries
    }

    /// Total number of stages covered.
    pub fn horizon(&self) -> usize {
        let last = &self.segments[self.segments.len() - 1];
        last.config.start + last.config.len
    }

    fn sum_log_wbar(&self) -> f64 {
        self.segments.iter().map(|s| s.sum_log_wbar()).sum()
    }

    fn log_particle_product(&self) -> f64 {
        self.segments.iter().map(|s| (s.particles() as f64).ln()).sum()
    }

    /// Split a functional into an additive constant and per-segment terms.
    fn segment_terms(&self, psi: &Functional) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut terms: Vec<Option<Vec<f64>>> = vec![None; self.segments.len()];
        let coords: &[usize] = match psi {
            Functional::Constant(c) => return Ok((*c, terms)),
            Functional::Coordinate(u) => std::slice::from_ref(u),
            Functional::Additive(us) => us,
        };
        for &u in coords {
            let m =
                self.segments.iter().position(|s| s.contains(u)).ok_or_else(|| {
                    Error::InvalidConfig(format!("coordinate {u} outside stages 0..{}", self.horizon()))
                })?;
            let seg = &self.segments[m];
            let term = terms[m].get_or_insert_with(|| vec![0.0; seg.particles()]);
            for (k, v) in term.iter_mut().enumerate() {
                *v += seg.state_at(k, u);
            }
        }
        Ok((0.0, terms))
    }

    fn forward(&self, terms: &[Option<Vec<f64>>]) -> Result<Forward> {
        let m_n = self.segments.len();
        let mut plain = Vec::with_capacity(m_n);
        let mut with_psi = Vec::with_capacity(m_n);
        let mut log_scale = Vec::with_capacity(m_n);
        let k0 = self.segments[0].particles();
        plain.push(vec![1.0; k0]);
        with_psi.push(terms[0].clone().unwrap_or_else(|| vec![0.0; k0]));
        log_scale.push(0.0);
        for m in 1..m_n {
            let b = &self.boundaries[m - 1];
            let mut f = vec![0.0; b.cols];
            let mut g = vec![0.0; b.cols];
            b.left_mul(&plain[m - 1], &mut f);
            b.left_mul(&with_psi[m - 1], &mut g);
            if let Some(phi) = &terms[m] {
                for ((gj, fj), p) in g.iter_mut().zip(&f).zip(phi) {
                    *gj += fj * p;
                }
            }
            let s = f.iter().copied().fold(0.0, f64::max);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateJoin { segment: m });
            }
            f.iter_mut().for_each(|v| *v /= s);
            g.iter_mut().for_each(|v| *v /= s);
            log_scale.push(log_scale[m - 1] + s.ln() + b.log_offset);
            plain.push(f);
            with_psi.push(g);
        }
        Ok(Forward { plain, with_psi, log_scale })
    }

    fn backward(&self, terms: &[Option<Vec<f64>>]) -> Result<Backward> {
        let m_n = self.segments.len();
        let mut plain = vec![Vec::new(); m_n];
        let mut later_psi = vec![Vec::new(); m_n];
        let kl = self.segments[m_n - 1].particles();
        plain[m_n - 1] = vec![1.0; kl];
        later_psi[m_n - 1] = vec![0.0; kl];
        for m in (0..m_n - 1).rev() {
            let b = &self.boundaries[m];
            // Fold segment m+1's own term into the vector carried left.
            let mut carried = later_psi[m + 1].clone();
            if let Some(phi) = &terms[m + 1] {
                for ((c, p), bv) in carried.iter_mut().zip(phi).zip(&plain[m + 1]) {
                    *c += p * bv;
                }
            }
            let mut bv = vec![0.0; b.rows];
            let mut hv = vec![0.0; b.rows];
            b.right_mul(&plain[m + 1], &mut bv);
            b.right_mul(&carried, &mut hv);
            let s = bv.iter().copied().fold(0.0, f64::max);
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateJoin { segment: m });
            }
            bv.iter_mut().for_each(|v| *v /= s);
            hv.iter_mut().for_each(|v| *v /= s);
            plain[m] = bv;
            later_psi[m] = hv;
        }
        Ok(Backward { plain, later_psi })
    }

    /// `ln(1^T B_1 ... B_{M-1} 1)` in true (unshifted) scale.
    pub fn log_chain_sum(&self) -> Result<f64> {
        let fw = self.forward(&vec![None; self.segments.len()])?;
        let last = fw.plain.len() - 1;
        Ok(fw.log_scale[last] + fw.plain[last].iter().sum::<f64>().ln())
    }

    /// Log of the likelihood estimate under the weights the segments were
    /// run with. Constants dropped from those weights are not restored.
    pub fn log_likelihood(&self, form: LikelihoodForm) -> Result<f64> {
        let wbar = self.sum_log_wbar();
        match form {
            LikelihoodForm::Chain => Ok(wbar + self.log_chain_sum()? - self.log_particle_product()),
            LikelihoodForm::Product => Ok(wbar + self.boundaries.iter().map(|b| b.log_mean()).sum::<f64>()),
        }
    }

    /// Ratio estimate of `E(psi(X) | Y)`.
    pub fn latent_estimate(&self, psi: &Functional) -> Result<f64> {
        let (constant, terms) = self.segment_terms(psi)?;
        if terms.iter().all(Option::is_none) {
            return Ok(constant);
        }
        let fw = self.forward(&terms)?;
        let last = fw.plain.len() - 1;
        let num: f64 = fw.with_psi[last].iter().sum();
        let den: f64 = fw.plain[last].iter().sum();
        if !(den > 0.0) {
            return Err(Error::DegenerateJoin { segment: last });
        }
        Ok(constant + num / den)
    }

    /// In-sample variance estimates for each filter, grouping particles by
    /// their first-generation ancestor and centering `psi` at `center`.
    pub fn variance_estimate(&self, psi: &Functional, center: f64) -> Result<VarianceEstimate> {
        let (constant, terms) = self.segment_terms(psi)?;
        let center = center - constant;
        let fw = self.forward(&terms)?;
        let bw = self.backward(&terms)?;
        let mut sigma2 = Vec::with_capacity(self.segments.len());
        for (m, seg) in self.segments.iter().enumerate() {
            let k_m = seg.particles();
            let (f, g) = (&fw.plain[m], &fw.with_psi[m]);
            let (b, h) = (&bw.plain[m], &bw.later_psi[m]);
            let den: f64 = f.iter().zip(b).map(|(x, y)| x * y).sum();
            if !(den > 0.0) {
                return Err(Error::DegenerateJoin { segment: m });
            }
            let mut q = vec![0.0; k_m];
            for l in 0..k_m {
                let fb = f[l] * b[l];
                let c = g[l] * b[l] + f[l] * h[l] - center * fb;
                q[seg.ancestors[l]] += c;
            }
            let scale = k_m as f64 / den;
            let s2 = q.iter().map(|v| (v * scale) * (v * scale)).sum::<f64>() / k_m as f64;
            sigma2.push(s2);
        }
        let stderr = sigma2.iter().zip(self.segments).map(|(s, seg)| s / seg.particles() as f64).sum::<f64>().sqrt();
        Ok(VarianceEstimate { sigma2, stderr })
    }

    /// All estimates for `psi`, plus a particle allocation for `budget`
    /// total particles (defaults to the current total).
    pub fn report(&self, psi: &Functional, budget: Option<usize>) -> Result<EstimateReport> {
        let psi_tilde = self.latent_estimate(psi)?;
        let var = self.variance_estimate(psi, psi_tilde)?;
        let budget = budget.unwrap_or_else(|| self.segments.iter().map(|s| s.particles()).sum());
        Ok(EstimateReport {
            psi_tilde,
            log_lambda_chain: self.log_likelihood(LikelihoodForm::Chain)?,
            log_lambda_product: self.log_likelihood(LikelihoodForm::Product)?,
            allocation: allocate_particles(&var.sigma2, budget)?,
            sigma2_pm: var.sigma2,
            stderr: var.stderr,
        })
    }
}

/// Split `budget` particles over filters to minimize `sum_m sigma2_m / K_m`:
/// `K_m ∝ sigma_m`, at least 2 per filter, rounded by largest remainder.
pub fn allocate_particles(sigma2: &[f64], budget: usize) -> Result<Vec<usize>> {
    const FLOOR: usize = 2;
    let n = sigma2.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no filters to allocate".into()));
    }
    if budget < FLOOR * n {
        return Err(Error::InvalidConfig(format!(
            "budget {budget} is below {FLOOR} particles per filter for {n} filters"
        )));
    }
    if sigma2.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidConfig("variance estimates must be finite and non-negative".into()));
    }
    let sd: Vec<f64> = sigma2.iter().map(|s| s.sqrt()).collect();
    if sd.iter().all(|&s| s == 0.0) {
        // Nothing to trade off: spread evenly.
        let mut alloc = vec![budget / n; n];
        for a in alloc.iter_mut().take(budget % n) {
            *a += 1;
        }
        return Ok(alloc);
    }

    // Filters pinned at the floor, iterated until every free filter's share
    // clears it.
    let mut pinned: Vec<bool> = sd.iter().map(|&s| s == 0.0).collect();
    let mut ideal = vec![FLOOR as f64; n];
    loop {
        let free_budget = (budget - FLOOR * pinned.iter().filter(|&&p| p).count()) as f64;
        let free_sd: f64 = sd.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(s, _)| s).sum();
        let mut changed = false;
        for i in 0..n {
            if pinned[i] {
                ideal[i] = FLOOR as f64;
                continue;
            }
            ideal[i] = free_budget * sd[i] / free_sd;
            if ideal[i] < FLOOR as f64 {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut alloc: Vec<usize> = ideal.iter().map(|&v| v.floor() as usize).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
    order.sort_by(|&i, &j| {
        let (fi, fj) = (ideal[i] - ideal[i].floor(), ideal[j] - ideal[j].floor());
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{run_segment, SegmentConfig};
    use crate::model::{BootstrapProposal, LinearGaussian, ModelParams, WeightRule};
    use crate::numeric::normal_log_density;
    use crate::rng::StreamSeed;

    fn lg() -> LinearGaussian {
        LinearGaussian::new(ModelParams::new(0.8, 1.0, 1.0).unwrap()).unwrap()
    }

    /// Run `ks.len()` segments of length `t_len` with fixed N(0,1)
    /// initializers after the first.
    fn run(
        model: &LinearGaussian,
        ys: &[f64],
        t_len: usize,
        ks: &[usize],
        seed: u64,
    ) -> (Vec<SegmentOutput>, Vec<BoundaryMatrix>) {
        let proposal = BootstrapProposal { model };
        let mut segs = Vec::new();
        let mut inits = Vec::new();
        for (m, &k) in ks.iter().enumerate() {
            let init = if m == 0 {
                SegmentInitializer::ModelPrior
            } else {
                SegmentInitializer::Gaussian { mean: 0.0, var: 1.0 }
            };
            let cfg = SegmentConfig { index: m, start: m * t_len, len: t_len, particles: k };
            let out = run_segment(
                model,
                &proposal,
                WeightRule::Bootstrap,
                &init,
                cfg,
                ys,
                &mut StreamSeed(seed).stream(&[m as u64]),
            )
            .unwrap();
            segs.push(out);
            inits.push(init);
        }
        let bounds =
            (1..ks.len()).map(|m| boundary_matrix(model, &segs[m - 1], &segs[m], &inits[m]).unwrap()).collect();
        (segs, bounds)
    }

    /// Sum over all index tuples of prod_m B_m(k(m-1), k(m)) * weight(tuple).
    fn enumerate(segs: &[SegmentOutput], bounds: &[BoundaryMatrix], weight: &dyn Fn(&[usize]) -> f64) -> f64 {
        let ks: Vec<usize> = segs.iter().map(|s| s.particles()).collect();
        let mut idx = vec![0usize; ks.len()];
        let mut total = 0.0;
        loop {
            let mut prod = 1.0;
            for (m, b) in bounds.iter().enumerate() {
                prod *= b.log_entry(idx[m], idx[m + 1]).exp();
            }
            total += prod * weight(&idx);
            let mut d = ks.len();
            loop {
                if d == 0 {
                    return total;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < ks[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
    }

    #[test]
    fn single_particle_predictor_entry_is_zero() {
        let model = lg();
        let ys = vec![0.3, -0.1, 0.4, 1.0];
        let (segs, _) = run(&model, &ys, 2, &[1, 1], 1);
        let init = SegmentInitializer::PredictorMixture { anchors: segs[0].last_states(), t: 2 };
        let b = boundary_matrix(&model, &segs[0], &segs[1], &init).unwrap();
        assert_eq!(b.log_entry(0, 0), 0.0);
    }

    #[test]
    fn predictor_mixture_columns_average_to_one() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 8, 4).unwrap();
        let (segs, _) = run(&model, &ys, 4, &[40, 30], 2);
        let init = SegmentInitializer::PredictorMixture { anchors: segs[0].last_states(), t: 4 };
        let b = boundary_matrix(&model, &segs[0], &segs[1], &init).unwrap();
        for v in b.column_log_means() {
            assert!(v.abs() < 1e-12, "column log-mean {v}");
        }
    }

    #[test]
    fn boundary_entries_match_direct_ratio() {
        let model = lg();
        let p = *model.params();
        let (_, ys) = crate::model::simulate_hmm(p, 6, 5).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[7, 9], 3);
        let b = &bounds[0];
        assert_eq!((b.rows, b.cols), (7, 9));
        for i in 0..7 {
            for j in 0..9 {
                let xl = segs[0].last_state(i);
                let xf = segs[1].first_state(j);
                let direct = normal_log_density(xf, p.a * xl, p.innovation_var()) - normal_log_density(xf, 0.0, 1.0);
                assert!((b.log_entry(i, j) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominance_violation_detected() {
        let entries = vec![0.0, f64::NEG_INFINITY, -1.0, f64::NEG_INFINITY];
        let err = BoundaryMatrix::from_log_entries(1, 2, 2, entries).unwrap_err();
        assert_eq!(err, Error::DominanceViolation { segment: 1, particle: 1 });
        assert!(BoundaryMatrix::from_log_entries(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn single_segment_likelihood_is_mean_weight_product() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 5, 6).unwrap();
        let (segs, bounds) = run(&model, &ys, 5, &[50], 4);
        let join = Join::new(&segs, &bounds).unwrap();
        let expected: f64 = segs[0].log_wbar.iter().sum();
        assert_eq!(join.log_likelihood(LikelihoodForm::Chain).unwrap(), expected);
        assert_eq!(join.log_likelihood(LikelihoodForm::Product).unwrap(), expected);
    }

    #[test]
    fn two_segment_forms_agree() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 10, 7).unwrap();
        for seed in 0..10 {
            let (segs, bounds) = run(&model, &ys, 5, &[60, 45], seed);
            let join = Join::new(&segs, &bounds).unwrap();
            let c = join.log_likelihood(LikelihoodForm::Chain).unwrap();
            let p = join.log_likelihood(LikelihoodForm::Product).unwrap();
            assert!(((c - p) / p).abs() < 1e-12, "{c} vs {p}");
        }
    }

    #[test]
    fn chain_sum_matches_enumeration() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 9, 8).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[4, 5, 3], 9);
        let join = Join::new(&segs, &bounds).unwrap();
        let brute = enumerate(&segs, &bounds, &|_| 1.0);
        let chain = join.log_chain_sum().unwrap().exp();
        assert!(((chain - brute) / brute).abs() < 1e-12);
    }

    #[test]
    fn latent_estimate_matches_enumeration() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 9, 10).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[4, 3, 5], 11);
        let join = Join::new(&segs, &bounds).unwrap();
        let den = enumerate(&segs, &bounds, &|_| 1.0);
        for u in 0..9 {
            let m = u / 3;
            let num = enumerate(&segs, &bounds, &|idx| segs[m].state_at(idx[m], u));
            let est = join.latent_estimate(&Functional::Coordinate(u)).unwrap();
            assert!((est - num / den).abs() < 1e-12, "u={u}");
        }
        let coords = vec![1, 4, 5, 8];
        let num = enumerate(&segs, &bounds, &|idx| coords.iter().map(|&u| segs[u / 3].state_at(idx[u / 3], u)).sum());
        let est = join.latent_estimate(&Functional::Additive(coords.clone())).unwrap();
        assert!((est - num / den).abs() < 1e-12);
    }

    #[test]
    fn variance_estimate_matches_enumeration() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 9, 12).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[5, 4, 3], 13);
        let join = Join::new(&segs, &bounds).unwrap();
        let psi = Functional::Additive(vec![2, 3, 7]);
        let psi_of =
            |idx: &[usize]| -> f64 { [2usize, 3, 7].iter().map(|&u| segs[u / 3].state_at(idx[u / 3], u)).sum() };
        let center = join.latent_estimate(&psi).unwrap();
        let den = enumerate(&segs, &bounds, &|_| 1.0);
        let got = join.variance_estimate(&psi, center).unwrap();
        for (m, seg) in segs.iter().enumerate() {
            let k_m = seg.particles();
            let q: Vec<f64> = (0..k_m)
                .map(|j| {
                    let s = enumerate(&segs, &bounds, &|idx| {
                        if seg.ancestors[idx[m]] == j {
                            psi_of(idx) - center
                        } else {
                            0.0
                        }
                    });
                    k_m as f64 * s / den
                })
                .collect();
            let s2 = q.iter().map(|v| v * v).sum::<f64>() / k_m as f64;
            assert!((got.sigma2[m] - s2).abs() < 1e-10 * (1.0 + s2), "m={m}: {} vs {s2}", got.sigma2[m]);
        }
    }

    #[test]
    fn single_segment_estimates_are_classical() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 12, 14).unwrap();
        let (segs, bounds) = run(&model, &ys, 12, &[300], 15);
        let join = Join::new(&segs, &bounds).unwrap();
        let u = 11;
        let plain = (0..300).map(|k| segs[0].state_at(k, u)).sum::<f64>() / 300.0;
        let est = join.latent_estimate(&Functional::Coordinate(u)).unwrap();
        assert_eq!(est.to_bits(), plain.to_bits());

        let mut groups = vec![0.0; 300];
        for k in 0..300 {
            groups[segs[0].ancestors[k]] += segs[0].state_at(k, u) - plain;
        }
        let classical = groups.iter().map(|g| g * g).sum::<f64>() / 300.0;
        let v = join.variance_estimate(&Functional::Coordinate(u), est).unwrap();
        assert!((v.sigma2[0] - classical).abs() < 1e-12 * (1.0 + classical));
        assert!((v.stderr - (classical / 300.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_functional_is_exact() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 6, 16).unwrap();
        let (segs, bounds) = run(&model, &ys, 2, &[20, 20, 20], 17);
        let join = Join::new(&segs, &bounds).unwrap();
        assert_eq!(join.latent_estimate(&Functional::Constant(2.5)).unwrap(), 2.5);
        let v = join.variance_estimate(&Functional::Constant(2.5), 2.5).unwrap();
        assert!(v.sigma2.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_particle_variance_vanishes() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 6, 18).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[1, 1], 19);
        let join = Join::new(&segs, &bounds).unwrap();
        let psi = Functional::Coordinate(4);
        let c = join.latent_estimate(&psi).unwrap();
        assert_eq!(c, segs[1].state_at(0, 4));
        let v = join.variance_estimate(&psi, c).unwrap();
        assert!(v.sigma2.iter().all(|&s| s.abs() < 1e-24));
    }

    #[test]
    fn rescaling_boundaries_is_harmless() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 12, 20).unwrap();
        let (segs, bounds) = run(&model, &ys, 4, &[30, 25, 35], 21);
        let join = Join::new(&segs, &bounds).unwrap();
        let shifts = [3.7, -250.0];
        let moved: Vec<BoundaryMatrix> = bounds.iter().zip(shifts).map(|(b, s)| b.shifted(s).unwrap()).collect();
        let join2 = Join::new(&segs, &moved).unwrap();
        let psi = Functional::Coordinate(5);
        let (a, b) = (join.latent_estimate(&psi).unwrap(), join2.latent_estimate(&psi).unwrap());
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let (c1, c2) =
            (join.log_likelihood(LikelihoodForm::Chain).unwrap(), join2.log_likelihood(LikelihoodForm::Chain).unwrap());
        assert!((c2 - c1 - shifts.iter().sum::<f64>()).abs() < 1e-9);
        let (p1, p2) = (
            join.log_likelihood(LikelihoodForm::Product).unwrap(),
            join2.log_likelihood(LikelihoodForm::Product).unwrap(),
        );
        assert!((p2 - p1 - shifts.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 6, 22).unwrap();
        let (segs, bounds) = run(&model, &ys, 3, &[5, 6], 23);
        assert!(Join::new(&segs, &[]).is_err());
        assert!(Join::new(&segs[..1], &bounds).is_err());
        let wrong = BoundaryMatrix::from_log_entries(1, 6, 5, vec![0.0; 30]).unwrap();
        assert!(Join::new(&segs, &[wrong]).is_err());
        assert!(Join::new(&[], &[]).is_err());
        let join = Join::new(&segs, &bounds).unwrap();
        assert!(join.latent_estimate(&Functional::Coordinate(6)).is_err());
    }

    #[test]
    fn degenerate_chain_reported() {
        let model = lg();
        let (_, ys) = crate::model::simulate_hmm(*model.params(), 6, 24).unwrap();
        let (segs, _) = run(&model, &ys, 3, &[2, 2], 25);
        // Finite but so small that the rescaled forward vector underflows.
        let b = BoundaryMatrix::from_log_entries(1, 2, 2, vec![0.0, -1e6, -1e6, -1e6]).unwrap();
        let b = BoundaryMatrix { scaled: vec![0.0; 4], ..b };
        let bounds = [b];
        let join = Join::new(&segs, &bounds).unwrap();
        assert!(matches!(join.latent_estimate(&Functional::Coordinate(4)), Err(Error::DegenerateJoin { .. })));
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_particles(&[1.0, 1.0], 1000).unwrap(), vec![500, 500]);
        assert_eq!(allocate_particles(&[4.0, 1.0], 300).unwrap(), vec![200, 100]);
        assert_eq!(allocate_particles(&[0.0, 9.0], 100).unwrap(), vec![2, 98]);
        assert_eq!(allocate_particles(&[0.0, 0.0, 0.0], 10).unwrap(), vec![4, 3, 3]);
        assert_eq!(allocate_particles(&[1e-12, 1.0], 50).unwrap(), vec![2, 48]);
        assert!(allocate_particles(&[1.0, 1.0], 3).is_err());
        assert!(allocate_particles(&[-1.0, 1.0], 30).is_err());
        assert!(allocate_particles(&[], 30).is_err());
    }

    proptest::proptest! {
        #[test]
        fn allocation_spends_budget_and_respects_floor(
            s2 in proptest::collection::vec(0.0f64..100.0, 1..8),
            extra in 0usize..5000,
        ) {
            let budget = 2 * s2.len() + extra;
            let alloc = allocate_particles(&s2, budget).unwrap();
            proptest::prop_assert_eq!(alloc.iter().sum::<usize>(), budget);
            proptest::prop_assert!(alloc.iter().all(|&k| k >= 2));
        }

        #[test]
        fn allocation_is_near_lagrange_optimum(a in 0.01f64..50.0, b in 0.01f64..50.0, budget in 100usize..5000) {
            let alloc = allocate_particles(&[a, b], budget).unwrap();
            let cost = |k1: usize| a / k1 as f64 + b / (budget - k1) as f64;
            let best = (2..=budget - 2).map(cost).fold(f64::INFINITY, f64::min);
            let got = cost(alloc[0]);
            proptest::prop_assert!(got <= best * (1.0 + 1e-3), "{got} vs {best}");
        }
    }
}
