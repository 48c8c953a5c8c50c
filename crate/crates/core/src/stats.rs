//! Centered cross-covariance estimation with a mergeable accumulator.
//!
//! Observations are paired across roles: row `i` of every registered batch
//! belongs to the same sample. The accumulator keeps a running mean and
//! co-moment matrix of the concatenated vector, updated with the Welford /
//! Chan et al. recurrences so shards can be ingested independently and
//! merged at the end.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    X,
    U,
    V,
    Zb,
    Zf,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::X, Role::U, Role::V, Role::Zb, Role::Zf];

    pub fn name(self) -> &'static str {
        match self {
            Role::X => "x",
            Role::U => "u",
            Role::V => "v",
            Role::Zb => "zb",
            Role::Zf => "zf",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variable role '{s}'")))
    }
}

/// Observation rows for one variable role.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    role: Role,
    data: Matrix,
}

impl SampleBatch {
    /// Rows are observations. Zero rows are allowed (an empty shard); zero
    /// columns and non-finite entries are not.
    pub fn new(role: Role, data: Matrix) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::invalid(format!("{role} batch has zero columns")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "{role} batch has a non-finite entry in observation {}",
                pos % data.nrows()
            )));
        }
        Ok(Self { role, data })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_data(self) -> Matrix {
        self.data
    }

    /// Contiguous block of observations `[start, start + len)`.
    pub fn slice_rows(&self, start: usize, len: usize) -> SampleBatch {
        SampleBatch {
            role: self.role,
            data: self.data.rows(start, len).into_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovAccumulator {
    registration: Vec<(Role, usize)>,
    count: u64,
    mean: DVector<f64>,
    comoment: Matrix,
}

impl CovAccumulator {
    pub fn new(registration: &[(Role, usize)]) -> Result<Self> {
        if registration.is_empty() {
            return Err(Error::invalid("accumulator needs at least one role"));
        }
        for (i, (role, dim)) in registration.iter().enumerate() {
            if *dim == 0 {
                return Err(Error::invalid(format!(
                    "role {role} registered with dimension 0"
                )));
            }
            if registration[..i].iter().any(|(r, _)| r == role) {
                return Err(Error::invalid(format!("role {role} registered twice")));
            }
        }
        let d = registration.iter().map(|(_, k)| k).sum();
        Ok(Self {
            registration: registration.to_vec(),
            count: 0,
            mean: DVector::zeros(d),
            comoment: Matrix::zeros(d, d),
        })
    }

    /// Accumulator registered with the roles and widths of `batches`.
    pub fn for_batches(batches: &[&SampleBatch]) -> Result<Self> {
        let reg: Vec<_> = batches.iter().map(|b| (b.role(), b.cols())).collect();
        Self::new(&reg)
    }

    pub fn registration(&self) -> &[(Role, usize)] {
        &self.registration
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    fn joint_dim(&self) -> usize {
        self.mean.len()
    }

    /// Add one paired observation, one slice per registered role in
    /// registration order.
    pub fn accumulate(&mut self, observation: &[&[f64]]) -> Result<()> {
        if observation.len() != self.registration.len() {
            return Err(Error::invalid(format!(
                "observation has {} roles, accumulator expects {}",
                observation.len(),
                self.registration.len()
            )));
        }
        let mut joint = Vec::with_capacity(self.joint_dim());
        for (part, (role, dim)) in observation.iter().zip(&self.registration) {
            if part.len() != *dim {
                return Err(Error::invalid(format!(
                    "{role} observation has dimension {}, expected {dim}",
                    part.len()
                )));
            }
            if part.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{role} observation has a non-finite entry"
                )));
            }
            joint.extend_from_slice(part);
        }
        let x = DVector::from_vec(joint);
        self.count += 1;
        let n = self.count as f64;
        let delta = &x - &self.mean;
        self.mean += &delta / n;
        let delta_after = &x - &self.mean;
        self.comoment.ger(1.0, &delta, &delta_after, 1.0);
        Ok(())
    }

    /// Ingest a row-paired set of batches (same roles and order as the
    /// registration). Uses a two-pass shard estimate merged into the
    /// running state.
    pub fn accumulate_batches(&mut self, batches: &[&SampleBatch]) -> Result<()> {
        self.check_batches(batches)?;
        let rows = batches[0].rows();
        if rows == 0 {
            return Ok(());
        }
        let d = self.joint_dim();
        let mut joint = Matrix::zeros(rows, d);
        let mut offset = 0;
        for b in batches {
            joint.columns_mut(offset, b.cols()).copy_from(b.data());
            offset += b.cols();
        }
        let mean = joint.row_mean().transpose();
        for mut row in joint.row_iter_mut() {
            row -= mean.transpose();
        }
        let comoment = joint.transpose() * &joint;
        let shard = CovAccumulator {
            registration: self.registration.clone(),
            count: rows as u64,
            mean,
            comoment,
        };
        self.merge_from(&shard)
    }

    fn check_batches(&self, batches: &[&SampleBatch]) -> Result<()> {
        if batches.len() != self.registration.len() {
            return Err(Error::invalid(format!(
                "got {} batches, accumulator expects {}",
                batches.len(),
                self.registration.len()
            )));
        }
        let rows = batches[0].rows();
        for (b, (role, dim)) in batches.iter().zip(&self.registration) {
            if b.role() != *role || b.cols() != *dim {
                return Err(Error::invalid(format!(
                    "batch {}x{} ({}) does not match registered {role} with dimension {dim}",
                    b.rows(),
                    b.cols(),
                    b.role()
                )));
            }
            if b.rows() != rows {
                return Err(Error::invalid(format!(
                    "row counts differ: {} has {} rows, {} has {rows}",
                    b.role(),
                    b.rows(),
                    batches[0].role()
                )));
            }
        }
        Ok(())
    }

    /// Fold `other` into `self` (parallel-merge formula).
    pub fn merge_from(&mut self, other: &CovAccumulator) -> Result<()> {
        if self.registration != other.registration {
            return Err(Error::invalid(format!(
                "cannot merge accumulators with registrations {:?} and {:?}",
                self.registration, other.registration
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.copy_from(&other.mean);
            self.comoment.copy_from(&other.comoment);
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.comoment += &other.comoment;
        self.comoment.ger(na * nb / n, &delta, &delta, 1.0);
        self.mean += &delta * (nb / n);
        self.count += other.count;
        Ok(())
    }

    pub fn merge(mut self, other: &CovAccumulator) -> Result<CovAccumulator> {
        self.merge_from(other)?;
        Ok(self)
    }

    /// Unbiased (n - 1) covariance estimates around the sample mean.
    pub fn finalize(&self) -> Result<CovarianceBundle> {
        if self.count < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance needs at least 2 observations, have {}",
                self.count
            )));
        }
        let denom = (self.count - 1) as f64;
        let joint = (&self.comoment + self.comoment.transpose()) * (0.5 / denom);
        let mut means = BTreeMap::new();
        let mut blocks = BTreeMap::new();
        let offsets = offsets(&self.registration);
        for (i, &(a, da)) in self.registration.iter().enumerate() {
            means.insert(a, self.mean.rows(offsets[i], da).into_owned());
            for (j, &(b, db)) in self.registration.iter().enumerate().skip(i) {
                let block = joint.view((offsets[i], offsets[j]), (da, db)).into_owned();
                blocks.insert((a, b), block);
            }
        }
        Ok(CovarianceBundle {
            count: self.count,
            registration: self.registration.clone(),
            means,
            blocks,
        })
    }
}

fn offsets(reg: &[(Role, usize)]) -> Vec<usize> {
    reg.iter()
        .scan(0, |acc, (_, d)| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

/// Means and pairwise covariance blocks for a set of roles.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceBundle {
    count: u64,
    registration: Vec<(Role, usize)>,
    means: BTreeMap<Role, DVector<f64>>,
    /// Keyed by `(a, b)` with `a` registered no later than `b`.
    blocks: BTreeMap<(Role, Role), Matrix>,
}

impl CovarianceBundle {
    /// Reassemble a bundle from stored parts (e.g. files on disk). Every
    /// ordered pair `(a, b)` with `a` registered before or at `b` must be
    /// present in `blocks`.
    pub fn from_parts(
        count: u64,
        registration: Vec<(Role, usize)>,
        means: BTreeMap<Role, DVector<f64>>,
        blocks: BTreeMap<(Role, Role), Matrix>,
    ) -> Result<Self> {
        for (i, &(a, da)) in registration.iter().enumerate() {
            match means.get(&a) {
                Some(m) if m.len() == da => {}
                _ => return Err(Error::invalid(format!("missing or mis-sized mean for {a}"))),
            }
            for &(b, db) in &registration[i..] {
                match blocks.get(&(a, b)) {
                    Some(m) if m.shape() == (da, db) => {}
                    Some(m) => {
                        return Err(Error::invalid(format!(
                            "covariance block ({a}, {b}) is {}x{}, expected {da}x{db}",
                            m.nrows(),
                            m.ncols()
                        )))
                    }
                    None => {
                        return Err(Error::invalid(format!(
                            "missing covariance block ({a}, {b})"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            count,
            registration,
            means,
            blocks,
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn registration(&self) -> &[(Role, usize)] {
        &self.registration
    }

    pub fn has(&self, role: Role) -> bool {
        self.means.contains_key(&role)
    }

    pub fn dim(&self, role: Role) -> Option<usize> {
        self.means.get(&role).map(|m| m.len())
    }

    pub fn mean(&self, role: Role) -> Result<&DVector<f64>> {
        self.means
            .get(&role)
            .ok_or_else(|| Error::invalid(format!("bundle has no {role} statistics")))
    }

    /// `cov(a, b)`, shape `dim(a) x dim(b)`.
    pub fn cov(&self, a: Role, b: Role) -> Result<Matrix> {
        if let Some(m) = self.blocks.get(&(a, b)) {
            return Ok(m.clone());
        }
        if let Some(m) = self.blocks.get(&(b, a)) {
            return Ok(m.transpose());
        }
        Err(Error::invalid(format!(
            "bundle has no covariance between {a} and {b}"
        )))
    }

    /// Stored blocks in registration order, as `((a, b), matrix)`.
    pub fn blocks(&self) -> impl Iterator<Item = (&(Role, Role), &Matrix)> {
        self.blocks.iter()
    }

    pub fn sigma_xx(&self) -> Result<Matrix> {
        self.cov(Role::X, Role::X)
    }

    pub fn sigma_xzb(&self) -> Result<Matrix> {
        self.cov(Role::X, Role::Zb)
    }

    pub fn sigma_xzf(&self) -> Result<Matrix> {
        self.cov(Role::X, Role::Zf)
    }

    pub fn sigma_uu(&self) -> Result<Matrix> {
        self.cov(Role::U, Role::U)
    }

    pub fn sigma_uv(&self) -> Result<Matrix> {
        self.cov(Role::U, Role::V)
    }
}

/// One-shot estimate over a set of row-paired batches.
pub fn estimate(batches: &[&SampleBatch]) -> Result<CovarianceBundle> {
    let mut acc = CovAccumulator::for_batches(batches)?;
    acc.accumulate_batches(batches)?;
    acc.finalize()
}

/// Estimate by splitting rows into `shards` contiguous pieces, each
/// accumulated on its own thread, then merged in shard order.
pub fn estimate_sharded(batches: &[&SampleBatch], shards: usize) -> Result<CovarianceBundle> {
    let template = CovAccumulator::for_batches(batches)?;
    template.check_batches(batches)?;
    let rows = batches[0].rows();
    let shards = shards.clamp(1, rows.max(1));
    let bounds: Vec<(usize, usize)> = (0..shards)
        .map(|s| (s * rows / shards, (s + 1) * rows / shards))
        .collect();
    let partials: Vec<Result<CovAccumulator>> = std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let template = template.clone();
                scope.spawn(move || {
                    let pieces: Vec<SampleBatch> =
                        batches.iter().map(|b| b.slice_rows(lo, hi - lo)).collect();
                    let refs: Vec<&SampleBatch> = pieces.iter().collect();
                    let mut acc = template;
                    acc.accumulate_batches(&refs)?;
                    Ok(acc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("shard worker panicked"))
            .collect()
    });
    let mut total = template;
    for p in partials {
        total.merge_from(&p?)?;
    }
    total.finalize()
}
