//! Resource-block allocation matrices and projection of continuous actions.

use super::EnvError;

/// Slice-to-RB matrix `b` and UE-to-RB matrix `e`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Allocation {
    num_slices: usize,
    num_rbs: usize,
    num_ues: usize,
    b: Vec<bool>,
    e: Vec<bool>,
}

impl Allocation {
    pub fn empty(num_slices: usize, num_rbs: usize, num_ues: usize) -> Self {
        Self {
            num_slices,
            num_rbs,
            num_ues,
            b: vec![false; num_slices * num_rbs],
            e: vec![false; num_ues * num_rbs],
        }
    }

    pub fn from_matrices(
        num_slices: usize,
        num_rbs: usize,
        num_ues: usize,
        b: Vec<bool>,
        e: Vec<bool>,
    ) -> Result<Self, EnvError> {
        if b.len() != num_slices * num_rbs || e.len() != num_ues * num_rbs {
            return Err(EnvError::DimensionMismatch {
                expected: num_slices * num_rbs + num_ues * num_rbs,
                got: b.len() + e.len(),
            });
        }
        Ok(Self {
            num_slices,
            num_rbs,
            num_ues,
            b,
            e,
        })
    }

    pub fn num_slices(&self) -> usize {
        self.num_slices
    }

    pub fn num_rbs(&self) -> usize {
        self.num_rbs
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn b(&self, slice: usize, rb: usize) -> bool {
        self.b[slice * self.num_rbs + rb]
    }

    pub fn e(&self, ue: usize, rb: usize) -> bool {
        self.e[ue * self.num_rbs + rb]
    }

    pub fn set_b(&mut self, slice: usize, rb: usize, v: bool) {
        self.b[slice * self.num_rbs + rb] = v;
    }

    pub fn set_e(&mut self, ue: usize, rb: usize, v: bool) {
        self.e[ue * self.num_rbs + rb] = v;
    }

    pub fn b_matrix(&self) -> &[bool] {
        &self.b
    }

    pub fn e_matrix(&self) -> &[bool] {
        &self.e
    }

    /// RBs owned by `slice`.
    pub fn slice_rbs(&self, slice: usize) -> usize {
        (0..self.num_rbs).filter(|&k| self.b(slice, k)).count()
    }

    /// `Σ_l Σ_u Σ_k e_{u,k}·b_{l,k}`, the capacity-constrained quantity.
    pub fn assigned_pairs(&self) -> usize {
        let mut n = 0;
        for l in 0..self.num_slices {
            for u in 0..self.num_ues {
                for k in 0..self.num_rbs {
                    if self.e(u, k) && self.b(l, k) {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    /// Check capacity, one slice per RB, and that UEs only use their slice's RBs.
    pub fn validate(&self, ue_slices: &[usize]) -> Result<(), String> {
        if ue_slices.len() != self.num_ues {
            return Err(format!("{} UEs but {} slice labels", self.num_ues, ue_slices.len()));
        }
        if self.assigned_pairs() > self.num_rbs {
            return Err(format!(
                "capacity: {} assignments over {} RBs",
                self.assigned_pairs(),
                self.num_rbs
            ));
        }
        for k in 0..self.num_rbs {
            let owners = (0..self.num_slices).filter(|&l| self.b(l, k)).count();
            if owners > 1 {
                return Err(format!("RB {k} owned by {owners} slices"));
            }
            for (u, &l) in ue_slices.iter().enumerate() {
                if self.e(u, k) && !self.b(l, k) {
                    return Err(format!("UE {u} uses RB {k} not owned by its slice {l}"));
                }
            }
        }
        Ok(())
    }

    /// `b` then `e`, row-major, as 0/1 values.
    pub fn flatten(&self) -> Vec<f64> {
        self.b
            .iter()
            .chain(&self.e)
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect()
    }
}

pub fn raw_action_dim(num_slices: usize, num_rbs: usize, num_ues: usize) -> usize {
    (num_slices + num_ues) * num_rbs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub allocation: Allocation,
    /// `λ·Σ_k max(0, Σ_l soft_b_{l,k} − 1)` with `soft_b = (raw + 1)/2`,
    /// reported for logging; executed allocations are always hard.
    pub soft_penalty: f64,
}

/// Map a raw action in `[-1, 1]^dim` onto a feasible allocation.
///
/// The first `L·K` entries score slices per RB (slice-major), the remaining
/// `N·K` entries score UEs per RB (UE-major). Each RB goes to its best slice
/// and then to that slice's best UE; ties go to the lowest index.
pub fn project_action(
    raw: &[f64],
    num_slices: usize,
    num_rbs: usize,
    ue_slices: &[usize],
    relaxation_penalty: f64,
) -> Result<Projection, EnvError> {
    let num_ues = ue_slices.len();
    let dim = raw_action_dim(num_slices, num_rbs, num_ues);
    if raw.len() != dim {
        return Err(EnvError::DimensionMismatch {
            expected: dim,
            got: raw.len(),
        });
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite(format!("action component {i}")));
    }
    let (slice_scores, ue_scores) = raw.split_at(num_slices * num_rbs);
    let mut alloc = Allocation::empty(num_slices, num_rbs, num_ues);
    let mut soft_excess = 0.0;
    for k in 0..num_rbs {
        let mut best = 0;
        let mut soft_sum = 0.0;
        for l in 0..num_slices {
            let s = slice_scores[l * num_rbs + k];
            soft_sum += (s.clamp(-1.0, 1.0) + 1.0) / 2.0;
            if s > slice_scores[best * num_rbs + k] {
                best = l;
            }
        }
        soft_excess += (soft_sum - 1.0).max(0.0);
        alloc.set_b(best, k, true);

        let mut chosen: Option<usize> = None;
        for (u, &l) in ue_slices.iter().enumerate() {
            if l != best {
                continue;
            }
            let s = ue_scores[u * num_rbs + k];
            if chosen.is_none_or(|c| s > ue_scores[c * num_rbs + k]) {
                chosen = Some(u);
            }
        }
        if let Some(u) = chosen {
            alloc.set_e(u, k, true);
        }
    }
    Ok(Projection {
        allocation: alloc,
        soft_penalty: relaxation_penalty * soft_excess,
    })
}
