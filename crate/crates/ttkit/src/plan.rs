//! Plan construction and selection.
//!
//! A plan fixes the algorithm kind, the partition of the dimensions into the
//! staged set `M_mk` and the looped-over complement, thread-block geometry,
//! and the derived register/shared-memory/grid numbers. Plans are immutable
//! once built; selection either ranks them with the analytical cost model or
//! by exact simulation of their memory traffic.

use std::collections::HashSet;
use std::fmt;

use serde_json::json;

use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::index::{MultiIndex, Permutation, PositionTerms, TensorLayout, LANES};
use crate::{model, sim};

const L: u64 = LANES as u64;

/// Register-array budget per thread.
pub const MAX_REG: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum AlgorithmKind {
    Tiled,
    TiledCopy,
    Packed,
    PackedSplit,
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AlgorithmKind::Tiled => "Tiled",
            AlgorithmKind::TiledCopy => "TiledCopy",
            AlgorithmKind::Packed => "Packed",
            AlgorithmKind::PackedSplit => "PackedSplit",
        };
        f.write_str(s)
    }
}

/// The four orderings of a plan's dimension partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub mmk_in: MultiIndex,
    pub mmk_out: MultiIndex,
    pub mbar_in: MultiIndex,
    pub mbar_out: MultiIndex,
}

impl Partition {
    pub fn vol_mmk(&self) -> u64 {
        self.mmk_in.volume()
    }

    pub fn vol_mbar(&self) -> u64 {
        self.mbar_in.volume()
    }
}

/// Staged set built from the first `m` input dimensions and the first `k`
/// output dimensions (union, deduplicated). `mmk_in`/`mbar_in` list members
/// by ascending label, `mmk_out`/`mbar_out` in output order.
pub fn build_partition(
    layout: &TensorLayout,
    perm: &Permutation,
    m: usize,
    k: usize,
) -> Result<Partition> {
    let n = layout.rank();
    if perm.len() != n {
        return Err(Error::InvalidPermutation(format!(
            "permutation rank {} does not match layout rank {n}",
            perm.len()
        )));
    }
    if m < 1 || m > n || k < 1 || k > n {
        return Err(Error::InvalidPlan(format!(
            "m={m}, k={k} must lie in 1..={n}"
        )));
    }
    let mut staged = vec![false; n];
    for dim in 0..m {
        staged[dim] = true;
    }
    for &dim in &perm.order()[..k] {
        staged[dim] = true;
    }
    let in_labels: Vec<usize> = (0..n).filter(|&d| staged[d]).collect();
    let bar_in_labels: Vec<usize> = (0..n).filter(|&d| !staged[d]).collect();
    let out_labels: Vec<usize> = perm.order().iter().copied().filter(|&d| staged[d]).collect();
    let bar_out_labels: Vec<usize> =
        perm.order().iter().copied().filter(|&d| !staged[d]).collect();
    Ok(Partition {
        mmk_in: MultiIndex::from_labels(&in_labels, layout)?,
        mmk_out: MultiIndex::from_labels(&out_labels, layout)?,
        mbar_in: MultiIndex::from_labels(&bar_in_labels, layout)?,
        mbar_out: MultiIndex::from_labels(&bar_out_labels, layout)?,
    })
}

/// Thread-geometry knobs for plan enumeration.
#[derive(Debug, Clone)]
pub struct PlanConfig {
    /// Threads per block for the tiled kinds.
    pub tiled_threads: u32,
    /// Thread-block sizes enumerated for Packed and PackedSplit.
    pub packed_threads: Vec<u32>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { tiled_threads: 256, packed_threads: vec![128, 256, 512] }
    }
}

impl PlanConfig {
    fn validate(&self) -> Result<()> {
        for &t in std::iter::once(&self.tiled_threads).chain(&self.packed_threads) {
            if t == 0 || t % LANES as u32 != 0 {
                return Err(Error::InvalidPlan(format!(
                    "thread count {t} must be a positive multiple of {LANES}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransposePlan {
    kind: AlgorithmKind,
    m: usize,
    k: usize,
    partition: Partition,
    split_dim: Option<usize>,
    n_sp: u64,
    n_thread: u32,
    n_warp: u32,
    n_reg: u32,
    shmem_elems: u64,
    grid_blocks: u64,
    n_iter: u64,
    layout: TensorLayout,
    perm: Permutation,
}

impl TransposePlan {
    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn split_dim(&self) -> Option<usize> {
        self.split_dim
    }

    pub fn n_sp(&self) -> u64 {
        self.n_sp
    }

    pub fn n_thread(&self) -> u32 {
        self.n_thread
    }

    pub fn n_warp(&self) -> u32 {
        self.n_warp
    }

    pub fn n_reg(&self) -> u32 {
        self.n_reg
    }

    pub fn shmem_elems(&self) -> u64 {
        self.shmem_elems
    }

    pub fn shmem_bytes(&self) -> u64 {
        self.shmem_elems * self.layout.elem().bytes()
    }

    pub fn grid_blocks(&self) -> u64 {
        self.grid_blocks
    }

    pub fn n_iter(&self) -> u64 {
        self.n_iter
    }

    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    /// Split-chunk extent `ceil(d(g)/n_sp)`; 0 for non-split kinds.
    pub fn chunk_extent(&self) -> u64 {
        match self.split_dim {
            Some(g) => self.layout.extent(g).div_ceil(self.n_sp),
            None => 0,
        }
    }

    /// Tile grid axes for the tiled kinds: `(vol along x, vol along y)`.
    /// For Tiled these are `(d(0), d(w1))`; the copy variant walks M-bar
    /// slices on its y axis.
    pub fn tile_geometry(&self) -> Option<(u64, u64)> {
        match self.kind {
            AlgorithmKind::Tiled => {
                Some((self.layout.extent(0), self.layout.extent(self.perm.order()[0])))
            }
            AlgorithmKind::TiledCopy => {
                Some((self.layout.extent(0), self.partition.vol_mbar()))
            }
            _ => None,
        }
    }

    /// Independent work units a block claims: tiles for the tiled kinds,
    /// slices for Packed, slice-chunk pairs for PackedSplit.
    pub fn work_units(&self) -> u64 {
        match self.kind {
            AlgorithmKind::Tiled | AlgorithmKind::TiledCopy => {
                let (vx, vy) = self.tile_geometry().unwrap();
                vx.div_ceil(L) * vy.div_ceil(L)
                    * if self.kind == AlgorithmKind::Tiled {
                        self.partition.vol_mbar()
                    } else {
                        1
                    }
            }
            AlgorithmKind::Packed => self.partition.vol_mbar(),
            AlgorithmKind::PackedSplit => self.partition.vol_mbar() * self.n_sp,
        }
    }

    fn assemble(
        kind: AlgorithmKind,
        m: usize,
        k: usize,
        partition: Partition,
        split_dim: Option<usize>,
        n_sp: u64,
        n_thread: u32,
        shmem_elems: u64,
        layout: &TensorLayout,
        perm: &Permutation,
        device: &DeviceProfile,
    ) -> Result<TransposePlan> {
        let n_warp = n_thread / LANES as u32;
        let per_block_elems = match kind {
            AlgorithmKind::Tiled | AlgorithmKind::TiledCopy => L * L,
            AlgorithmKind::Packed => partition.vol_mmk(),
            AlgorithmKind::PackedSplit => shmem_elems,
        };
        let n_reg = per_block_elems.div_ceil(n_thread as u64);
        if !(1..=MAX_REG).contains(&n_reg) {
            return Err(Error::InvalidPlan(format!(
                "register count {n_reg} outside 1..={MAX_REG}"
            )));
        }
        let mut plan = TransposePlan {
            kind,
            m,
            k,
            partition,
            split_dim,
            n_sp,
            n_thread,
            n_warp,
            n_reg: n_reg as u32,
            shmem_elems,
            grid_blocks: 0,
            n_iter: 0,
            layout: layout.clone(),
            perm: perm.clone(),
        };
        let units = plan.work_units();
        let cap = device.n_sm as u64 * 32;
        plan.grid_blocks = units.min(cap).max(1);
        plan.n_iter = units.div_ceil(plan.grid_blocks);
        Ok(plan)
    }

    /// Human-readable dump of the plan parameters.
    pub fn describe(&self) -> String {
        format!("{self}")
    }

    /// JSON dump with 1-based dimension labels.
    pub fn dump_json(&self) -> serde_json::Value {
        let labels = |mi: &MultiIndex| -> Vec<u64> { mi.labels().map(|l| l as u64 + 1).collect() };
        let extents = |mi: &MultiIndex| -> Vec<u64> { mi.dims().iter().map(|&(_, d)| d).collect() };
        json!({
            "kind": self.kind.to_string(),
            "m": self.m,
            "k": self.k,
            "mmk_in": { "labels": labels(&self.partition.mmk_in), "extents": extents(&self.partition.mmk_in) },
            "mmk_out": { "labels": labels(&self.partition.mmk_out), "extents": extents(&self.partition.mmk_out) },
            "mbar_in": { "labels": labels(&self.partition.mbar_in), "extents": extents(&self.partition.mbar_in) },
            "mbar_out": { "labels": labels(&self.partition.mbar_out), "extents": extents(&self.partition.mbar_out) },
            "vol_mmk": self.partition.vol_mmk(),
            "vol_mbar": self.partition.vol_mbar(),
            "split_dim": self.split_dim.map(|g| g as u64 + 1),
            "n_sp": self.n_sp,
            "chunk_extent": if self.split_dim.is_some() { json!(self.chunk_extent()) } else { json!(null) },
            "n_thread": self.n_thread,
            "n_warp": self.n_warp,
            "n_reg": self.n_reg,
            "shmem_elems": self.shmem_elems,
            "shmem_bytes": self.shmem_bytes(),
            "grid_blocks": self.grid_blocks,
            "n_iter": self.n_iter,
        })
    }
}

impl fmt::Display for TransposePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_mi = |mi: &MultiIndex| -> String {
            mi.dims()
                .iter()
                .map(|&(l, d)| format!("{}:{d}", l + 1))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(
            f,
            "{} m={} k={} mmk_in=[{}] mmk_out=[{}] mbar=[{}]",
            self.kind,
            self.m,
            self.k,
            fmt_mi(&self.partition.mmk_in),
            fmt_mi(&self.partition.mmk_out),
            fmt_mi(&self.partition.mbar_in),
        )?;
        if let Some(g) = self.split_dim {
            write!(f, " split={} n_sp={} chunk={}", g + 1, self.n_sp, self.chunk_extent())?;
        }
        write!(
            f,
            " threads={} warps={} regs={} shmem={}B blocks={} iters={}",
            self.n_thread,
            self.n_warp,
            self.n_reg,
            self.shmem_bytes(),
            self.grid_blocks,
            self.n_iter
        )
    }
}

/// The tiled plan for this case: Tiled when `w_1 != 1`, the staging-free copy
/// variant otherwise. Always constructible.
pub fn plan_tiled(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
) -> Result<TransposePlan> {
    plan_tiled_with(layout, perm, device, &PlanConfig::default())
}

pub fn plan_tiled_with(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
    cfg: &PlanConfig,
) -> Result<TransposePlan> {
    cfg.validate()?;
    let partition = build_partition(layout, perm, 1, 1)?;
    let copy = perm.order()[0] == 0;
    let (kind, shmem_elems) = if copy {
        (AlgorithmKind::TiledCopy, 0)
    } else {
        (AlgorithmKind::Tiled, L * (L + 1))
    };
    TransposePlan::assemble(
        kind,
        1,
        1,
        partition,
        None,
        1,
        cfg.tiled_threads,
        shmem_elems,
        layout,
        perm,
        device,
    )
}

/// True when the staged orderings coincide, i.e. the staging buffer would
/// perform no reordering. Such candidates are covered by the tiled kinds and
/// are not enumerated.
fn no_reorder(p: &Partition) -> bool {
    p.mmk_in.dims() == p.mmk_out.dims()
}

/// All Packed candidates: one per distinct feasible partition and configured
/// thread count, with `n_reg = ceil(vol(M_mk)/n_thread)` capped at 8 and the
/// whole staged volume resident in shared memory.
pub fn enumerate_packed(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
    cfg: &PlanConfig,
) -> Result<Vec<TransposePlan>> {
    cfg.validate()?;
    let n = layout.rank();
    let cap_elems = device.shmem_capacity_elems(layout.elem().bytes());
    let mut plans = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for m in 1..=n {
        let mut any_fit = false;
        for k in 1..=n {
            let partition = build_partition(layout, perm, m, k)?;
            let vol = partition.vol_mmk();
            if vol > cap_elems {
                // Growing k only grows the staged set.
                break;
            }
            any_fit = true;
            if no_reorder(&partition) {
                continue;
            }
            let key: Vec<usize> = partition.mmk_in.labels().collect();
            if !seen.insert(key) {
                continue;
            }
            for &n_thread in &cfg.packed_threads {
                let plan = TransposePlan::assemble(
                    AlgorithmKind::Packed,
                    m,
                    k,
                    partition.clone(),
                    None,
                    1,
                    n_thread,
                    vol,
                    layout,
                    perm,
                    device,
                );
                if let Ok(plan) = plan {
                    plans.push(plan);
                }
            }
        }
        if !any_fit {
            // Larger m cannot fit either.
            break;
        }
    }
    Ok(plans)
}

/// All PackedSplit candidates. For each partition the largest-extent staged
/// dimension `g` (ties to the lowest label) is split into the smallest
/// `n_sp >= 2` chunks for which `vol(M_mk \ g) * ceil(d(g)/n_sp)` fits the
/// shared capacity with `n_reg <= 8`.
pub fn enumerate_packed_split(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
    cfg: &PlanConfig,
) -> Result<Vec<TransposePlan>> {
    cfg.validate()?;
    let n = layout.rank();
    let cap_elems = device.shmem_capacity_elems(layout.elem().bytes());
    let mut plans = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for m in 1..=n {
        for k in 1..=n {
            let partition = build_partition(layout, perm, m, k)?;
            if no_reorder(&partition) {
                continue;
            }
            let key: Vec<usize> = partition.mmk_in.labels().collect();
            if !seen.insert(key) {
                continue;
            }
            let &(g, d_g) = partition
                .mmk_in
                .dims()
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .expect("staged set is non-empty");
            if d_g < 2 {
                continue;
            }
            let vol_rest = partition.vol_mmk() / d_g;
            for &n_thread in &cfg.packed_threads {
                let budget = cap_elems.min(MAX_REG * n_thread as u64);
                let max_chunk = budget / vol_rest;
                if max_chunk == 0 {
                    continue;
                }
                let n_sp = d_g.div_ceil(max_chunk).max(2);
                if n_sp > d_g {
                    continue;
                }
                let chunk = d_g.div_ceil(n_sp);
                let shmem_elems = vol_rest * chunk;
                debug_assert!(shmem_elems <= cap_elems);
                let plan = TransposePlan::assemble(
                    AlgorithmKind::PackedSplit,
                    m,
                    k,
                    partition.clone(),
                    Some(g),
                    n_sp,
                    n_thread,
                    shmem_elems,
                    layout,
                    perm,
                    device,
                );
                if let Ok(plan) = plan {
                    plans.push(plan);
                }
            }
        }
    }
    Ok(plans)
}

/// Every plan that can run on the device, in a deterministic order:
/// the tiled plan first, then Packed and PackedSplit candidates sorted by
/// `(kind, m, k, n_sp, n_thread)`.
pub fn build_all_plans(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
) -> Result<Vec<TransposePlan>> {
    build_all_plans_with(layout, perm, device, &PlanConfig::default())
}

pub fn build_all_plans_with(
    layout: &TensorLayout,
    perm: &Permutation,
    device: &DeviceProfile,
    cfg: &PlanConfig,
) -> Result<Vec<TransposePlan>> {
    let mut plans = vec![plan_tiled_with(layout, perm, device, cfg)?];
    plans.extend(enumerate_packed(layout, perm, device, cfg)?);
    plans.extend(enumerate_packed_split(layout, perm, device, cfg)?);
    plans.sort_by_key(|p| (p.kind, p.m, p.k, p.n_sp, p.n_thread));
    Ok(plans)
}

/// Index of the plan with the lowest modeled cycle count; ties break toward
/// the earlier plan. `seed` feeds the statistical traffic sampler.
pub fn select_heuristic(
    plans: &[TransposePlan],
    device: &DeviceProfile,
    seed: u64,
) -> Result<usize> {
    if plans.is_empty() {
        return Err(Error::InvalidPlan("no plans to select from".into()));
    }
    let mut best = 0usize;
    let mut best_cycles = f64::INFINITY;
    for (i, plan) in plans.iter().enumerate() {
        let est = model::estimate_cycles(plan, device, seed)?;
        if est.total_cycles < best_cycles {
            best_cycles = est.total_cycles;
            best = i;
        }
    }
    Ok(best)
}

/// Weighted score of one exact traffic report. Partial store lines cost one
/// extra line fill each; shared transactions are scaled by the device's
/// shared-to-global latency ratio.
pub fn simulated_score(report: &model::TrafficReport, device: &DeviceProfile) -> f64 {
    report.ld_tran
        + report.st_tran
        + report.cl_part
        + report.shmem_tran * (device.shmem_lat / device.mem_baselat)
}

/// Index of the plan with the lowest exactly-simulated traffic score; the
/// tensor must fit the exact-simulation cap.
pub fn select_simulated(
    plans: &[TransposePlan],
    device: &DeviceProfile,
    cap: u64,
) -> Result<usize> {
    if plans.is_empty() {
        return Err(Error::InvalidPlan("no plans to select from".into()));
    }
    let vol = plans[0].layout().volume();
    if vol > cap {
        return Err(Error::VolumeOverCap { vol, cap });
    }
    let mut cfg = sim::SimConfig::from_profile(device);
    cfg.sim_cap = cap;
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (i, plan) in plans.iter().enumerate() {
        let report = sim::simulate_plan(plan, &cfg, sim::SimScope::Full)?;
        let score = simulated_score(&report, device);
        if score < best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(best)
}

/// Precomputed per-plan evaluation tables shared by the executor and the
/// simulator, so both walk exactly the same addresses.
#[derive(Debug)]
pub(crate) enum PlanTables {
    Tiled(TiledTables),
    TiledCopy(CopyTables),
    Packed(PackedTables),
    PackedSplit(SplitTables),
}

#[derive(Debug)]
pub(crate) struct TiledTables {
    pub major_in: PositionTerms,
    pub major_out: PositionTerms,
    pub vol_mbar: u64,
    /// Extent of dimension 0 (tile x axis).
    pub d_x: u64,
    /// Extent of dimension w1 (tile y axis).
    pub d_y: u64,
    /// Input stride of w1: reading row y starts at `y * stride_in_y`.
    pub stride_in_y: u64,
    /// Output stride of dimension 0.
    pub stride_out_x: u64,
}

#[derive(Debug)]
pub(crate) struct CopyTables {
    pub major_in: PositionTerms,
    pub major_out: PositionTerms,
    pub vol_mbar: u64,
    pub d_x: u64,
}

#[derive(Debug)]
pub(crate) struct MinorSet {
    pub minor_in: Vec<u64>,
    pub minor_out: Vec<u64>,
    pub shared: Vec<u64>,
}

impl MinorSet {
    fn build(
        mmk_in: &MultiIndex,
        mmk_out: &MultiIndex,
        layout: &TensorLayout,
        perm: &Permutation,
    ) -> Result<MinorSet> {
        let vol = mmk_in.volume();
        let t_in = PositionTerms::minor_in(mmk_in, layout);
        let t_out = PositionTerms::minor_out(mmk_out, layout, perm);
        let t_sh = PositionTerms::shared(mmk_out, mmk_in)?;
        let mut minor_in = Vec::with_capacity(vol as usize);
        let mut minor_out = Vec::with_capacity(vol as usize);
        let mut shared = Vec::with_capacity(vol as usize);
        for x in 0..vol {
            minor_in.push(t_in.eval(x));
            minor_out.push(t_out.eval(x));
            shared.push(t_sh.eval(x));
        }
        Ok(MinorSet { minor_in, minor_out, shared })
    }

    pub fn vol(&self) -> u64 {
        self.minor_in.len() as u64
    }
}

#[derive(Debug)]
pub(crate) struct PackedTables {
    pub major_in: PositionTerms,
    pub major_out: PositionTerms,
    pub vol_mbar: u64,
    pub minor: MinorSet,
}

#[derive(Debug)]
pub(crate) struct SplitTables {
    pub major_in: PositionTerms,
    pub major_out: PositionTerms,
    pub vol_mbar: u64,
    pub n_sp: u64,
    pub chunk_extent: u64,
    pub g_stride_in: u64,
    pub g_stride_out: u64,
    /// Tables for a full chunk.
    pub full: MinorSet,
    /// Tables for the final chunk when its extent differs.
    pub tail: Option<MinorSet>,
}

impl SplitTables {
    pub fn chunk_minor(&self, chunk: u64) -> &MinorSet {
        if chunk == self.n_sp - 1 {
            if let Some(tail) = &self.tail {
                return tail;
            }
        }
        &self.full
    }
}

fn with_extent(mi: &MultiIndex, label: usize, extent: u64) -> Result<MultiIndex> {
    let dims = mi
        .dims()
        .iter()
        .map(|&(l, d)| if l == label { (l, extent) } else { (l, d) })
        .collect();
    MultiIndex::new(dims)
}

impl PlanTables {
    pub fn new(plan: &TransposePlan) -> Result<PlanTables> {
        let layout = plan.layout();
        let perm = plan.perm();
        let p = plan.partition();
        let major_in = PositionTerms::major_in(&p.mbar_in, layout);
        let major_out = PositionTerms::major_out(&p.mbar_out, layout, perm);
        let vol_mbar = p.vol_mbar();
        match plan.kind() {
            AlgorithmKind::Tiled => {
                let w1 = perm.order()[0];
                Ok(PlanTables::Tiled(TiledTables {
                    major_in,
                    major_out,
                    vol_mbar,
                    d_x: layout.extent(0),
                    d_y: layout.extent(w1),
                    stride_in_y: layout.input_stride(w1),
                    stride_out_x: perm.output_stride(0, layout)?,
                }))
            }
            AlgorithmKind::TiledCopy => Ok(PlanTables::TiledCopy(CopyTables {
                major_in,
                major_out,
                vol_mbar,
                d_x: layout.extent(0),
            })),
            AlgorithmKind::Packed => Ok(PlanTables::Packed(PackedTables {
                major_in,
                major_out,
                vol_mbar,
                minor: MinorSet::build(&p.mmk_in, &p.mmk_out, layout, perm)?,
            })),
            AlgorithmKind::PackedSplit => {
                let g = plan
                    .split_dim()
                    .ok_or_else(|| Error::InvalidPlan("split plan without split dim".into()))?;
                let d_g = layout.extent(g);
                let chunk = plan.chunk_extent();
                let full_in = with_extent(&p.mmk_in, g, chunk)?;
                let full_out = with_extent(&p.mmk_out, g, chunk)?;
                let full = MinorSet::build(&full_in, &full_out, layout, perm)?;
                let tail_extent = d_g - (plan.n_sp() - 1) * chunk;
                let tail = if tail_extent != chunk {
                    let tin = with_extent(&p.mmk_in, g, tail_extent)?;
                    let tout = with_extent(&p.mmk_out, g, tail_extent)?;
                    Some(MinorSet::build(&tin, &tout, layout, perm)?)
                } else {
                    None
                };
                Ok(PlanTables::PackedSplit(SplitTables {
                    major_in,
                    major_out,
                    vol_mbar,
                    n_sp: plan.n_sp(),
                    chunk_extent: chunk,
                    g_stride_in: layout.input_stride(g),
                    g_stride_out: perm.output_stride(g, layout)?,
                    full,
                    tail,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::ElemSize;

    fn layout(extents: &[u64]) -> TensorLayout {
        TensorLayout::new(extents.to_vec(), ElemSize::B4).unwrap()
    }

    fn layout8(extents: &[u64]) -> TensorLayout {
        TensorLayout::new(extents.to_vec(), ElemSize::B8).unwrap()
    }

    fn device() -> DeviceProfile {
        DeviceProfile::kepler_k20x()
    }

    #[test]
    fn partition_full_tensor_tile() {
        let l = layout(&[6, 9]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let p = build_partition(&l, &perm, 1, 1).unwrap();
        assert_eq!(p.mmk_in.labels().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(p.vol_mmk(), 54);
        assert!(p.mbar_in.is_empty());
        assert_eq!(p.vol_mbar(), 1);
    }

    #[test]
    fn partition_overlap_union() {
        let l = layout(&[4, 5, 6]);
        let perm = Permutation::from_one_based(&[1, 3, 2]).unwrap();
        let p = build_partition(&l, &perm, 1, 1).unwrap();
        // w1 = dim 1 overlaps the leading input dim.
        assert_eq!(p.mmk_in.labels().collect::<Vec<_>>(), vec![0]);
        assert_eq!(p.vol_mmk(), 4);
        assert_eq!(p.mbar_in.labels().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn partition_rank4_everything_staged() {
        let l = layout(&[2, 3, 4, 5]);
        let perm = Permutation::from_one_based(&[3, 4, 1, 2]).unwrap();
        let p = build_partition(&l, &perm, 2, 2).unwrap();
        assert_eq!(p.mmk_in.labels().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(p.mmk_out.labels().collect::<Vec<_>>(), vec![2, 3, 0, 1]);
        assert!(p.mbar_in.is_empty());
        assert_eq!(p.vol_mmk() * p.vol_mbar(), l.volume());
    }

    #[test]
    fn partition_volume_product_invariant() {
        let l = layout(&[3, 4, 5, 2, 3]);
        let perm = Permutation::from_one_based(&[4, 2, 5, 1, 3]).unwrap();
        for m in 1..=5 {
            for k in 1..=5 {
                let p = build_partition(&l, &perm, m, k).unwrap();
                assert_eq!(p.vol_mmk() * p.vol_mbar(), l.volume());
            }
        }
        assert!(build_partition(&l, &perm, 0, 1).is_err());
        assert!(build_partition(&l, &perm, 1, 6).is_err());
    }

    #[test]
    fn tiled_plan_copy_variant() {
        let l = layout(&[64, 5, 7]);
        let perm = Permutation::from_one_based(&[1, 3, 2]).unwrap();
        let plan = plan_tiled(&l, &perm, &device()).unwrap();
        assert_eq!(plan.kind(), AlgorithmKind::TiledCopy);
        assert_eq!(plan.shmem_elems(), 0);
        assert_eq!((plan.m(), plan.k()), (1, 1));
    }

    #[test]
    fn tiled_plan_grid_geometry() {
        // 96 x 64 on the tile axes: 3 x 2 tiles per slice.
        let l = layout(&[96, 5, 64]);
        let perm = Permutation::from_one_based(&[3, 1, 2]).unwrap();
        let plan = plan_tiled(&l, &perm, &device()).unwrap();
        assert_eq!(plan.kind(), AlgorithmKind::Tiled);
        assert_eq!(plan.shmem_elems(), L * (L + 1));
        assert_eq!(plan.tile_geometry(), Some((96, 64)));
        assert_eq!(plan.work_units(), 3 * 2 * 5);
        assert_eq!(plan.n_warp(), 8);
    }

    #[test]
    fn packed_feasible_small_cube() {
        let l = layout8(&[4, 4, 4]);
        let perm = Permutation::from_one_based(&[3, 1, 2]).unwrap();
        let plans = enumerate_packed(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        // Staging the whole 64-element tensor is feasible: 64 * 8B is well
        // under 48KiB. Duplicate partitions keep their smallest (m, k).
        assert!(plans
            .iter()
            .any(|p| p.partition().vol_mmk() == 64 && p.shmem_elems() == 64));
        for p in &plans {
            assert!(p.shmem_bytes() <= device().shmem_capacity);
            assert!((1..=MAX_REG as u32).contains(&p.n_reg()));
        }
    }

    #[test]
    fn packed_register_boundary() {
        // vol(M_mk) = 4096 with 512 threads sits exactly at n_reg = 8.
        let l = layout(&[64, 64]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let plans = enumerate_packed(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        let at_512: Vec<_> = plans.iter().filter(|p| p.n_thread() == 512).collect();
        assert_eq!(at_512.len(), 1);
        assert_eq!(at_512[0].n_reg(), 8);

        // One element more pushes n_reg to 9: no candidate survives.
        let l = layout(&[17, 241]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let plans = enumerate_packed(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        assert!(plans.is_empty());
    }

    #[test]
    fn packed_split_minimal_split() {
        // Staged volume 32 x 1000; element budget tuned so that
        // vol_rest * ceil(1000/n_sp) must drop to 4096 elements.
        let mut dev = device();
        dev.shmem_capacity = 4096 * 4;
        let l = layout(&[32, 1000]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let cfg = PlanConfig { tiled_threads: 256, packed_threads: vec![512] };
        let plans = enumerate_packed_split(&l, &perm, &dev, &cfg).unwrap();
        assert_eq!(plans.len(), 1);
        let p = &plans[0];
        assert_eq!(p.split_dim(), Some(1));
        assert_eq!(p.n_sp(), 8);
        assert_eq!(p.chunk_extent(), 125);
        assert_eq!(p.shmem_elems(), 32 * 125);
        assert_eq!(p.n_reg(), 8);
    }

    #[test]
    fn packed_split_never_one() {
        let l = layout(&[16, 16, 16]);
        let perm = Permutation::from_one_based(&[3, 2, 1]).unwrap();
        let plans =
            enumerate_packed_split(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        assert!(!plans.is_empty());
        for p in &plans {
            assert!(p.n_sp() >= 2);
            assert!(p.shmem_bytes() <= device().shmem_capacity);
        }
    }

    #[test]
    fn packed_split_reaches_corner_case() {
        // Large first input dim, tiny first output dim: only PackedSplit can
        // stage it, since vol(M_mk) alone exceeds shared capacity.
        let l = layout(&[100_000, 2]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let packed = enumerate_packed(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        assert!(packed.is_empty());
        let split =
            enumerate_packed_split(&l, &perm, &device(), &PlanConfig::default()).unwrap();
        assert!(!split.is_empty());
        for p in &split {
            assert_eq!(p.split_dim(), Some(0));
            assert!(p.shmem_bytes() <= device().shmem_capacity);
        }
    }

    #[test]
    fn build_all_rank1_identity_is_single_copy() {
        let l = layout(&[1000]);
        let perm = Permutation::identity(1);
        let plans = build_all_plans(&l, &perm, &device()).unwrap();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].kind(), AlgorithmKind::TiledCopy);
    }

    #[test]
    fn build_all_rank2_swap_has_tiled_and_packed() {
        let l = layout(&[48, 40]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let plans = build_all_plans(&l, &perm, &device()).unwrap();
        assert_eq!(plans[0].kind(), AlgorithmKind::Tiled);
        assert!(plans.iter().filter(|p| p.kind() == AlgorithmKind::Packed).count() >= 1);
    }

    #[test]
    fn build_all_deterministic_order() {
        let l = layout(&[12, 10, 8, 6]);
        let perm = Permutation::from_one_based(&[3, 1, 4, 2]).unwrap();
        let a = build_all_plans(&l, &perm, &device()).unwrap();
        let b = build_all_plans(&l, &perm, &device()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
        let mut keys: Vec<_> =
            a.iter().map(|p| (p.kind(), p.m(), p.k(), p.n_sp(), p.n_thread())).collect();
        let sorted = {
            let mut s = keys.clone();
            s.sort();
            s
        };
        keys.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn work_units_and_grid() {
        let l = layout(&[40, 3, 50]);
        let perm = Permutation::from_one_based(&[3, 1, 2]).unwrap();
        let plan = plan_tiled(&l, &perm, &device()).unwrap();
        // ceil(40/32) * ceil(50/32) * 3 slices
        assert_eq!(plan.work_units(), 2 * 2 * 3);
        assert_eq!(plan.grid_blocks(), 12);
        assert_eq!(plan.n_iter(), 1);

        let big = layout(&[4096, 4096]);
        let perm2 = Permutation::from_one_based(&[2, 1]).unwrap();
        let plan2 = plan_tiled(&big, &perm2, &device()).unwrap();
        let units = 128 * 128;
        assert_eq!(plan2.work_units(), units);
        assert_eq!(plan2.grid_blocks(), device().n_sm as u64 * 32);
        assert_eq!(plan2.n_iter(), (units as u64).div_ceil(plan2.grid_blocks()));
    }

    #[test]
    fn dump_json_uses_one_based_labels() {
        let l = layout(&[8, 9]);
        let perm = Permutation::from_one_based(&[2, 1]).unwrap();
        let plan = plan_tiled(&l, &perm, &device()).unwrap();
        let v = plan.dump_json();
        assert_eq!(v["kind"], "Tiled");
        assert_eq!(v["mmk_in"]["labels"], json!([1, 2]));
        assert_eq!(v["mmk_out"]["labels"], json!([2, 1]));
        assert!(plan.describe().contains("Tiled"));
    }
}
