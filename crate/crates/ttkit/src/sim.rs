//! Exact software model of the memory system, used both as a verification
//! oracle and as the measurement backend for plan selection.
//!
//! The simulator walks a plan's complete warp schedule and pushes every
//! global load, global store, and shared-memory access through three
//! counters: 128-byte transaction coalescing, 32-byte store cache-line
//! classification, and bank-conflict replay counting. No timing is modeled
//! here; cycles come from the analytical model.

use std::io::Write;

use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::index::LANES;
use crate::model::TrafficReport;
use crate::plan::{AlgorithmKind, PlanTables, TransposePlan};

const L: u64 = LANES as u64;

/// Default element cap for full-tensor exact simulation.
pub const DEFAULT_SIM_CAP: u64 = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Global-memory transaction size, bytes.
    pub tran_size: u64,
    /// L2 store line size, bytes.
    pub l2_line: u64,
    pub bank_count: u64,
    /// Bank word width, bytes. 8-byte elements occupy two consecutive words
    /// and the conflict rule evaluates per word.
    pub bank_width: u64,
    /// Full-scope simulation cap, elements.
    pub sim_cap: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tran_size: 128,
            l2_line: 32,
            bank_count: 32,
            bank_width: 4,
            sim_cap: DEFAULT_SIM_CAP,
        }
    }
}

impl SimConfig {
    pub fn from_profile(p: &DeviceProfile) -> SimConfig {
        SimConfig {
            tran_size: p.tran_size as u64,
            l2_line: p.l2_line as u64,
            bank_count: p.bank_count as u64,
            bank_width: p.bank_width as u64,
            sim_cap: DEFAULT_SIM_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Global,
    Shared,
}

/// One lockstep memory access: up to [`LANES`] byte addresses, `None` for
/// inactive lanes.
#[derive(Debug, Clone)]
pub struct WarpAccess {
    pub lanes: Vec<Option<u64>>,
    pub kind: AccessKind,
    pub space: Space,
    pub bytes_per_lane: u64,
}

impl WarpAccess {
    pub fn new(kind: AccessKind, space: Space, bytes_per_lane: u64) -> Self {
        WarpAccess { lanes: vec![None; LANES], kind, space, bytes_per_lane }
    }

    pub fn active_lanes(&self) -> usize {
        self.lanes.iter().filter(|l| l.is_some()).count()
    }

    fn clear(&mut self) {
        self.lanes.iter_mut().for_each(|l| *l = None);
    }
}

/// Number of distinct `tran_size`-aligned segments touched by active lanes.
pub fn coalesce(access: &WarpAccess, cfg: &SimConfig) -> u64 {
    let mut segs: Vec<u64> = access
        .lanes
        .iter()
        .flatten()
        .map(|&addr| {
            debug_assert_eq!(addr / cfg.tran_size, (addr + access.bytes_per_lane - 1) / cfg.tran_size);
            addr / cfg.tran_size
        })
        .collect();
    segs.sort_unstable();
    segs.dedup();
    segs.len() as u64
}

/// Store-line classification for one warp store: a line whose every byte is
/// written counts as full, any other touched line as partial.
pub fn classify_store(access: &WarpAccess, cfg: &SimConfig) -> (u64, u64) {
    debug_assert_eq!(access.kind, AccessKind::Store);
    debug_assert!(cfg.l2_line <= 64);
    let full_mask: u64 = if cfg.l2_line == 64 { u64::MAX } else { (1u64 << cfg.l2_line) - 1 };
    let mut lines: Vec<(u64, u64)> = Vec::new();
    for &addr in access.lanes.iter().flatten() {
        let line = addr / cfg.l2_line;
        let offset = addr % cfg.l2_line;
        debug_assert!(offset + access.bytes_per_lane <= cfg.l2_line);
        let mask = ((1u64 << access.bytes_per_lane) - 1) << offset;
        match lines.iter_mut().find(|(l, _)| *l == line) {
            Some((_, m)) => *m |= mask,
            None => lines.push((line, mask)),
        }
    }
    let full = lines.iter().filter(|&&(_, m)| m == full_mask).count() as u64;
    let part = lines.len() as u64 - full;
    (full, part)
}

/// Aggregate line classification over a stream of warp stores. Lines are not
/// merged across warps; each warp store is classified on its own.
pub fn classify_store_lines<'a>(
    stores: impl IntoIterator<Item = &'a WarpAccess>,
    cfg: &SimConfig,
) -> (u64, u64) {
    let mut full = 0;
    let mut part = 0;
    for access in stores {
        let (f, p) = classify_store(access, cfg);
        full += f;
        part += p;
    }
    (full, part)
}

/// Shared-memory transactions for one warp access: the maximum over banks of
/// the number of distinct words requested in that bank. Lanes reading the
/// same word broadcast and count once.
pub fn bank_transactions(access: &WarpAccess, cfg: &SimConfig) -> u64 {
    debug_assert_eq!(access.space, Space::Shared);
    let mut words: Vec<u64> = Vec::new();
    for &addr in access.lanes.iter().flatten() {
        let first = addr / cfg.bank_width;
        let last = (addr + access.bytes_per_lane - 1) / cfg.bank_width;
        for w in first..=last {
            words.push(w);
        }
    }
    if words.is_empty() {
        return 0;
    }
    words.sort_unstable();
    words.dedup();
    let mut per_bank = vec![0u64; cfg.bank_count as usize];
    for w in words {
        per_bank[(w % cfg.bank_count) as usize] += 1;
    }
    per_bank.into_iter().max().unwrap()
}

/// What part of the plan to walk: the whole tensor or a single M-bar slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimScope {
    Full,
    Slice(u64),
}

#[derive(Debug, Default, Clone, Copy)]
struct Counts {
    ld_req: u64,
    st_req: u64,
    ld_tran: u64,
    st_tran: u64,
    cl_full: u64,
    cl_part: u64,
    sh_req: u64,
    sh_tran: u64,
}

struct Collector<'a> {
    cfg: &'a SimConfig,
    counts: Counts,
    elem_bytes: u64,
    /// Write-coverage counters over output positions, full scope only.
    coverage: Option<Vec<u8>>,
    trace: Option<&'a mut dyn Write>,
}

impl<'a> Collector<'a> {
    fn visit(&mut self, access: &WarpAccess) -> Result<()> {
        if access.active_lanes() == 0 {
            return Ok(());
        }
        let tran;
        match (access.space, access.kind) {
            (Space::Global, AccessKind::Load) => {
                tran = coalesce(access, self.cfg);
                self.counts.ld_req += 1;
                self.counts.ld_tran += tran;
            }
            (Space::Global, AccessKind::Store) => {
                tran = coalesce(access, self.cfg);
                self.counts.st_req += 1;
                self.counts.st_tran += tran;
                let (f, p) = classify_store(access, self.cfg);
                self.counts.cl_full += f;
                self.counts.cl_part += p;
                if let Some(cov) = &mut self.coverage {
                    for &addr in access.lanes.iter().flatten() {
                        let pos = addr / self.elem_bytes;
                        let slot = &mut cov[pos as usize];
                        *slot = slot.saturating_add(1);
                        if *slot > 1 {
                            return Err(Error::CoverageViolation { pos, count: *slot as u64 });
                        }
                    }
                }
            }
            (Space::Shared, _) => {
                tran = bank_transactions(access, self.cfg);
                self.counts.sh_req += 1;
                self.counts.sh_tran += tran;
            }
        }
        if let Some(out) = &mut self.trace {
            let space = match access.space {
                Space::Global => "G",
                Space::Shared => "S",
            };
            let kind = match access.kind {
                AccessKind::Load => "LD",
                AccessKind::Store => "ST",
            };
            if access.space == Space::Global {
                let mut segs: Vec<u64> = access
                    .lanes
                    .iter()
                    .flatten()
                    .map(|&a| a / self.cfg.tran_size)
                    .collect();
                segs.sort_unstable();
                segs.dedup();
                let segs: Vec<String> = segs.iter().map(|s| s.to_string()).collect();
                writeln!(
                    out,
                    "{space} {kind} act={} tran={tran} segs={}",
                    access.active_lanes(),
                    segs.join(",")
                )?;
            } else {
                writeln!(out, "{space} {kind} act={} tran={tran}", access.active_lanes())?;
            }
        }
        Ok(())
    }
}

/// Exact traffic counts for a plan, walking its complete warp schedule. In
/// full scope the walk also verifies that every output position is written
/// exactly once.
pub fn simulate_plan(
    plan: &TransposePlan,
    cfg: &SimConfig,
    scope: SimScope,
) -> Result<TrafficReport> {
    simulate_plan_impl(plan, cfg, scope, None)
}

/// [`simulate_plan`] with a per-access text trace.
pub fn simulate_plan_traced(
    plan: &TransposePlan,
    cfg: &SimConfig,
    scope: SimScope,
    trace: &mut dyn Write,
) -> Result<TrafficReport> {
    simulate_plan_impl(plan, cfg, scope, Some(trace))
}

fn simulate_plan_impl<'a>(
    plan: &TransposePlan,
    cfg: &'a SimConfig,
    scope: SimScope,
    trace: Option<&'a mut dyn Write>,
) -> Result<TrafficReport> {
    let vol = plan.layout().volume();
    if scope == SimScope::Full && vol > cfg.sim_cap {
        return Err(Error::VolumeOverCap { vol, cap: cfg.sim_cap });
    }
    if let SimScope::Slice(b) = scope {
        let vol_mbar = plan.partition().vol_mbar();
        if b >= vol_mbar {
            return Err(Error::PositionOutOfRange { pos: b, vol: vol_mbar });
        }
    }
    let tables = PlanTables::new(plan)?;
    let elem_bytes = plan.layout().elem().bytes();
    let mut collector = Collector {
        cfg,
        counts: Counts::default(),
        elem_bytes,
        coverage: match scope {
            SimScope::Full => Some(vec![0u8; vol as usize]),
            SimScope::Slice(_) => None,
        },
        trace,
    };
    walk_plan(plan, &tables, elem_bytes, scope, &mut |a| collector.visit(a))?;
    if let Some(cov) = &collector.coverage {
        if let Some(pos) = cov.iter().position(|&c| c == 0) {
            return Err(Error::CoverageViolation { pos: pos as u64, count: 0 });
        }
    }
    let c = collector.counts;
    Ok(TrafficReport {
        ld_req: c.ld_req as f64,
        st_req: c.st_req as f64,
        ld_tran: c.ld_tran as f64,
        st_tran: c.st_tran as f64,
        cl_full: c.cl_full as f64,
        cl_part: c.cl_part as f64,
        shmem_req: c.sh_req as f64,
        shmem_tran: c.sh_tran as f64,
        exact: true,
    })
}

/// Request counts over the full tensor, from plan geometry alone.
pub fn analytic_requests(plan: &TransposePlan) -> (u64, u64) {
    let vol_mbar = plan.partition().vol_mbar();
    match plan.kind() {
        AlgorithmKind::Tiled => {
            let (d_x, d_y) = plan.tile_geometry().unwrap();
            let ntx = d_x.div_ceil(L);
            let nty = d_y.div_ceil(L);
            // One read request per tile row, one write request per tile column.
            (vol_mbar * ntx * d_y, vol_mbar * nty * d_x)
        }
        AlgorithmKind::TiledCopy => {
            let d_x = plan.layout().extent(0);
            let ntx = d_x.div_ceil(L);
            (vol_mbar * ntx, vol_mbar * ntx)
        }
        AlgorithmKind::Packed => {
            let reqs = vol_mbar * plan.partition().vol_mmk().div_ceil(L);
            (reqs, reqs)
        }
        AlgorithmKind::PackedSplit => {
            let g = plan.split_dim().unwrap();
            let d_g = plan.layout().extent(g);
            let chunk = plan.chunk_extent();
            let vol_rest = plan.partition().vol_mmk() / d_g;
            let tail = d_g - (plan.n_sp() - 1) * chunk;
            let per_slice =
                (plan.n_sp() - 1) * (vol_rest * chunk).div_ceil(L) + (vol_rest * tail).div_ceil(L);
            (vol_mbar * per_slice, vol_mbar * per_slice)
        }
    }
}

pub(crate) fn walk_plan(
    plan: &TransposePlan,
    tables: &PlanTables,
    elem_bytes: u64,
    scope: SimScope,
    visit: &mut impl FnMut(&WarpAccess) -> Result<()>,
) -> Result<()> {
    match tables {
        PlanTables::Tiled(t) => {
            let slices: Box<dyn Iterator<Item = u64>> = match scope {
                SimScope::Full => Box::new(0..t.vol_mbar),
                SimScope::Slice(b) => Box::new(b..b + 1),
            };
            let ntx = t.d_x.div_ceil(L);
            let nty = t.d_y.div_ceil(L);
            let mut gl = WarpAccess::new(AccessKind::Load, Space::Global, elem_bytes);
            let mut gs = WarpAccess::new(AccessKind::Store, Space::Global, elem_bytes);
            let mut sl = WarpAccess::new(AccessKind::Load, Space::Shared, elem_bytes);
            let mut ss = WarpAccess::new(AccessKind::Store, Space::Shared, elem_bytes);
            for b in slices {
                let maj_in = t.major_in.eval(b);
                let maj_out = t.major_out.eval(b);
                for ty in 0..nty {
                    for tx in 0..ntx {
                        let x0 = tx * L;
                        let y0 = ty * L;
                        let w = L.min(t.d_x - x0);
                        let h = L.min(t.d_y - y0);
                        // Read phase: row loads, staging stores.
                        for yo in 0..h {
                            gl.clear();
                            ss.clear();
                            for xo in 0..w {
                                let pos = maj_in + (x0 + xo) + (y0 + yo) * t.stride_in_y;
                                gl.lanes[xo as usize] = Some(pos * elem_bytes);
                                ss.lanes[xo as usize] = Some((xo + yo * (L + 1)) * elem_bytes);
                            }
                            visit(&gl)?;
                            visit(&ss)?;
                        }
                        // Write phase: staging reads by column, row stores.
                        for xo in 0..w {
                            sl.clear();
                            gs.clear();
                            for yo in 0..h {
                                sl.lanes[yo as usize] = Some((xo + yo * (L + 1)) * elem_bytes);
                                let pos = maj_out + (y0 + yo) + (x0 + xo) * t.stride_out_x;
                                gs.lanes[yo as usize] = Some(pos * elem_bytes);
                            }
                            visit(&sl)?;
                            visit(&gs)?;
                        }
                    }
                }
            }
        }
        PlanTables::TiledCopy(t) => {
            let slices: Box<dyn Iterator<Item = u64>> = match scope {
                SimScope::Full => Box::new(0..t.vol_mbar),
                SimScope::Slice(b) => Box::new(b..b + 1),
            };
            let ntx = t.d_x.div_ceil(L);
            let mut gl = WarpAccess::new(AccessKind::Load, Space::Global, elem_bytes);
            let mut gs = WarpAccess::new(AccessKind::Store, Space::Global, elem_bytes);
            for b in slices {
                let maj_in = t.major_in.eval(b);
                let maj_out = t.major_out.eval(b);
                for tx in 0..ntx {
                    let x0 = tx * L;
                    let w = L.min(t.d_x - x0);
                    gl.clear();
                    gs.clear();
                    for xo in 0..w {
                        gl.lanes[xo as usize] = Some((maj_in + x0 + xo) * elem_bytes);
                        gs.lanes[xo as usize] = Some((maj_out + x0 + xo) * elem_bytes);
                    }
                    visit(&gl)?;
                    visit(&gs)?;
                }
            }
        }
        PlanTables::Packed(t) => {
            let slices: Box<dyn Iterator<Item = u64>> = match scope {
                SimScope::Full => Box::new(0..t.vol_mbar),
                SimScope::Slice(b) => Box::new(b..b + 1),
            };
            for b in slices {
                let maj_in = t.major_in.eval(b);
                let maj_out = t.major_out.eval(b);
                packed_slice(plan, &t.minor, maj_in, maj_out, elem_bytes, visit)?;
            }
        }
        PlanTables::PackedSplit(t) => {
            let slices: Box<dyn Iterator<Item = u64>> = match scope {
                SimScope::Full => Box::new(0..t.vol_mbar),
                SimScope::Slice(b) => Box::new(b..b + 1),
            };
            for b in slices {
                let maj_in = t.major_in.eval(b);
                let maj_out = t.major_out.eval(b);
                for chunk in 0..t.n_sp {
                    let minor = t.chunk_minor(chunk);
                    let off_in = chunk * t.chunk_extent * t.g_stride_in;
                    let off_out = chunk * t.chunk_extent * t.g_stride_out;
                    packed_slice(
                        plan,
                        minor,
                        maj_in + off_in,
                        maj_out + off_out,
                        elem_bytes,
                        visit,
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// One staged volume: contiguous-k loads into the staging buffer, then
/// transposed-order staging reads and minor-position stores. Threads cover
/// `k = j*n_thread + warp*32 + lane`.
fn packed_slice(
    plan: &TransposePlan,
    minor: &crate::plan::MinorSet,
    maj_in: u64,
    maj_out: u64,
    elem_bytes: u64,
    visit: &mut impl FnMut(&WarpAccess) -> Result<()>,
) -> Result<()> {
    let vol = minor.vol();
    let n_thread = plan.n_thread() as u64;
    let n_warp = plan.n_warp() as u64;
    let n_reg = plan.n_reg() as u64;
    let mut gl = WarpAccess::new(AccessKind::Load, Space::Global, elem_bytes);
    let mut gs = WarpAccess::new(AccessKind::Store, Space::Global, elem_bytes);
    let mut sl = WarpAccess::new(AccessKind::Load, Space::Shared, elem_bytes);
    let mut ss = WarpAccess::new(AccessKind::Store, Space::Shared, elem_bytes);
    for j in 0..n_reg {
        for w in 0..n_warp {
            let base = j * n_thread + w * L;
            if base >= vol {
                continue;
            }
            gl.clear();
            ss.clear();
            for lane in 0..L.min(vol - base) {
                let k = (base + lane) as usize;
                gl.lanes[lane as usize] = Some((maj_in + minor.minor_in[k]) * elem_bytes);
                ss.lanes[lane as usize] = Some((base + lane) * elem_bytes);
            }
            visit(&gl)?;
            visit(&ss)?;
        }
    }
    for j in 0..n_reg {
        for w in 0..n_warp {
            let base = j * n_thread + w * L;
            if base >= vol {
                continue;
            }
            sl.clear();
            gs.clear();
            for lane in 0..L.min(vol - base) {
                let k = (base + lane) as usize;
                sl.lanes[lane as usize] = Some(minor.shared[k] * elem_bytes);
                gs.lanes[lane as usize] = Some((maj_out + minor.minor_out[k]) * elem_bytes);
            }
            visit(&sl)?;
            visit(&gs)?;
        }
    }
    Ok(())
}
