//! Analytical cycle model for ranking plans without running them.
//!
//! Per plan, the estimated cost is
//! `cycles = (cycles_mem + cycles_shmem + cycles_ac) * N_iter`, where the
//! memory term follows the warp-overlap form
//! `cycles_mem = 2 * mem_lat * MLP * N_warp / MWP`. Memory latency grows with
//! the average number of transactions per request, stores to partial L2
//! lines count double, and MWP is capped by the per-warp bandwidth share and
//! by occupancy. Transaction counts are estimated statistically: ten random
//! M-bar slices are simulated exactly and their averages stand in for the
//! whole tensor.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::DeviceProfile;
use crate::error::{Error, Result};
use crate::index::LANES;
use crate::plan::{AlgorithmKind, PlanTables, TransposePlan};
use crate::sim::{self, SimConfig, SimScope};

const L: u64 = LANES as u64;

/// Exact or sampled memory-traffic counts for one plan execution.
///
/// Counts are `f64` because sampled reports scale per-slice averages up to
/// the full tensor; exact reports carry integral values and set `exact`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub ld_req: f64,
    pub st_req: f64,
    pub ld_tran: f64,
    pub st_tran: f64,
    pub cl_full: f64,
    pub cl_part: f64,
    pub shmem_req: f64,
    pub shmem_tran: f64,
    pub exact: bool,
}

/// Tile-grid composition of a tiled plan: full tiles, tiles cut in the
/// horizontal direction (width reduced to `h`), tiles cut in the vertical
/// direction (height reduced to `v`), and corner tiles cut in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileCensus {
    pub full: u64,
    pub horz: u64,
    pub vert: u64,
    pub corn: u64,
    /// Cut-tile height, `vol_k mod L`.
    pub v: u64,
    /// Cut-tile width, `vol_m mod L`.
    pub h: u64,
}

impl TileCensus {
    pub fn total(&self) -> u64 {
        self.full + self.horz + self.vert + self.corn
    }
}

pub fn tile_census(vol_m: u64, vol_k: u64, l: u64) -> TileCensus {
    let h = vol_m % l;
    let v = vol_k % l;
    let fx = vol_m / l;
    let fy = vol_k / l;
    TileCensus {
        full: fx * fy,
        horz: if h > 0 { fy } else { 0 },
        vert: if v > 0 { fx } else { 0 },
        corn: u64::from(h > 0 && v > 0),
        v,
        h,
    }
}

/// Average independent memory requests per warp for the staging tiled plan:
/// `[(L/R)(2 T_full + T_horz) + ceil(v/R)(T_vert + T_corn)
///   + ceil(h/R)(T_horz + T_corn)] / [2 (T_full + T_horz + T_vert + T_corn)]`.
pub fn mlp_tiled(census: &TileCensus, l: u64, r: u64) -> Result<f64> {
    let total = census.total();
    if total == 0 || r == 0 {
        return Err(Error::InvalidModelInput("empty tile grid".into()));
    }
    let l_over_r = l as f64 / r as f64;
    let num = l_over_r * (2 * census.full + census.horz) as f64
        + census.v.div_ceil(r) as f64 * (census.vert + census.corn) as f64
        + census.h.div_ceil(r) as f64 * (census.horz + census.corn) as f64;
    Ok(num / (2 * total) as f64)
}

/// Copy-variant form: `[(L/R)(T_full + T_horz) + ceil(v/R)(T_vert + T_corn)]
/// / (T_full + T_horz + T_vert + T_corn)`.
pub fn mlp_tiled_copy(census: &TileCensus, l: u64, r: u64) -> Result<f64> {
    let total = census.total();
    if total == 0 || r == 0 {
        return Err(Error::InvalidModelInput("empty tile grid".into()));
    }
    let l_over_r = l as f64 / r as f64;
    let num = l_over_r * (census.full + census.horz) as f64
        + census.v.div_ceil(r) as f64 * (census.vert + census.corn) as f64;
    Ok(num / total as f64)
}

/// The packed kinds pre-compute positions into register arrays; their
/// request parallelism is the register depth itself.
pub fn mlp_packed(n_reg: u32) -> f64 {
    n_reg as f64
}

/// Average transactions per memory request, with partial-line stores counted
/// twice: `(LD_tran + ST_tran (1 + CL_part/(CL_full+CL_part))) / (LD_req + ST_req)`.
pub fn tpr_mem(t: &TrafficReport) -> Result<f64> {
    let req = t.ld_req + t.st_req;
    if req <= 0.0 {
        return Err(Error::InvalidModelInput("no memory requests".into()));
    }
    let lines = t.cl_full + t.cl_part;
    let store_factor = if lines > 0.0 { 1.0 + t.cl_part / lines } else { 1.0 };
    Ok((t.ld_tran + t.st_tran * store_factor) / req)
}

fn clamp_tpr(tpr: f64) -> f64 {
    if tpr < 1.0 {
        log::warn!("transactions per request {tpr} below 1; clamping");
        1.0
    } else {
        tpr
    }
}

/// `mem_lat = mem_baselat + (TPR_mem - 1) * delta`, with sub-1 TPR values
/// clamped to 1.
pub fn mem_latency(p: &DeviceProfile, tpr: f64) -> f64 {
    p.mem_baselat + (clamp_tpr(tpr) - 1.0) * p.delta
}

/// Bytes moved over the bus per request:
/// `[TPR_mem (1 - cache_hit) + cache_hit] * TranSize`.
pub fn bytes_req(p: &DeviceProfile, tpr: f64) -> f64 {
    (clamp_tpr(tpr) * (1.0 - p.cache_hit) + p.cache_hit) * p.tran_size as f64
}

/// The warp-overlap cap and its constituents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwpTerms {
    pub mwp: f64,
    pub mwp_mem: f64,
    pub mwp_peak: f64,
    pub bw_warp: f64,
}

/// `MWP = min(MWP_mem * MLP, MWP_peak, N_warpsPerSM)` with
/// `MWP_mem = mem_lat / delta`, `MWP_peak = mem_BW / (BW_warp * N_SM)`, and
/// `BW_warp = Freq * Bytes_req / mem_lat`.
pub fn mwp(
    p: &DeviceProfile,
    mem_lat: f64,
    mlp: f64,
    n_warps_per_sm: f64,
    bytes_req: f64,
) -> MwpTerms {
    let bw_warp = p.freq * bytes_req / mem_lat;
    let mwp_peak = p.mem_bw / (bw_warp * p.n_sm as f64);
    let mwp_mem = mem_lat / p.delta;
    MwpTerms { mwp: (mwp_mem * mlp).min(mwp_peak).min(n_warps_per_sm), mwp_mem, mwp_peak, bw_warp }
}

/// `cycles_mem = 2 * mem_lat * MLP * N_warp / MWP`; the factor 2 covers the
/// load and store halves of an iteration.
pub fn cycles_mem(mem_lat: f64, mlp: f64, n_warp: u32, mwp: f64) -> f64 {
    2.0 * mem_lat * mlp * n_warp as f64 / mwp
}

/// `cycles_shmem = 2 * TPR_shmem * shmem_lat * MLP`.
pub fn cycles_shmem(p: &DeviceProfile, tpr_shmem: f64, mlp: f64) -> f64 {
    2.0 * tpr_shmem * p.shmem_lat * mlp
}

/// Resident warps per SM, bounded by the architecture limit and by how many
/// blocks the shared-memory capacity admits.
pub fn n_warps_per_sm(plan: &TransposePlan, p: &DeviceProfile) -> f64 {
    let max = p.max_warps_per_sm as f64;
    let shmem = plan.shmem_bytes();
    if shmem == 0 {
        return max;
    }
    let blocks = (p.shmem_capacity / shmem).max(1);
    max.min((blocks * plan.n_warp() as u64) as f64)
}

/// Average shared-memory transactions per staging read. The staging tile is
/// padded for the tiled kind, so it is exactly 1 there; the packed kinds run
/// their read offsets through the bank model, which costs at most the staged
/// volume. The copy kind has no staging buffer and is rejected.
pub fn tpr_shmem(plan: &TransposePlan, device: &DeviceProfile) -> Result<f64> {
    let cfg = SimConfig::from_profile(device);
    match plan.kind() {
        AlgorithmKind::Tiled => Ok(1.0),
        AlgorithmKind::TiledCopy => Err(Error::InvalidModelInput(
            "the copy kind uses no shared memory".into(),
        )),
        AlgorithmKind::Packed | AlgorithmKind::PackedSplit => {
            let tables = PlanTables::new(plan)?;
            match &tables {
                PlanTables::Packed(t) => {
                    let (req, tran) = staging_read_traffic(plan, &t.minor, &cfg);
                    Ok(tran as f64 / req as f64)
                }
                PlanTables::PackedSplit(t) => {
                    let (full_req, full_tran) = staging_read_traffic(plan, &t.full, &cfg);
                    let (tail_req, tail_tran) = match &t.tail {
                        Some(tail) => staging_read_traffic(plan, tail, &cfg),
                        None => (full_req, full_tran),
                    };
                    let n_full = t.n_sp - 1;
                    let req = n_full * full_req + tail_req;
                    let tran = n_full * full_tran + tail_tran;
                    Ok(tran as f64 / req as f64)
                }
                _ => unreachable!(),
            }
        }
    }
}

fn staging_read_traffic(
    plan: &TransposePlan,
    minor: &crate::plan::MinorSet,
    cfg: &SimConfig,
) -> (u64, u64) {
    let vol = minor.vol();
    let elem = plan.layout().elem().bytes();
    let n_thread = plan.n_thread() as u64;
    let mut access =
        sim::WarpAccess::new(sim::AccessKind::Load, sim::Space::Shared, elem);
    let mut req = 0u64;
    let mut tran = 0u64;
    for j in 0..plan.n_reg() as u64 {
        for w in 0..plan.n_warp() as u64 {
            let base = j * n_thread + w * L;
            if base >= vol {
                continue;
            }
            access.lanes.iter_mut().for_each(|l| *l = None);
            for lane in 0..L.min(vol - base) {
                access.lanes[lane as usize] =
                    Some(minor.shared[(base + lane) as usize] * elem);
            }
            req += 1;
            tran += sim::bank_transactions(&access, cfg);
        }
    }
    (req, tran)
}

/// Ten-sample statistical traffic estimate: up to ten distinct M-bar slices
/// are simulated exactly and their per-slice averages are scaled to the full
/// tensor; request counts come from plan geometry. Deterministic in `seed`.
pub fn sample_traffic(
    plan: &TransposePlan,
    device: &DeviceProfile,
    seed: u64,
) -> Result<TrafficReport> {
    let cfg = SimConfig::from_profile(device);
    let vol_mbar = plan.partition().vol_mbar();
    let samples: Vec<u64> = if vol_mbar <= 10 {
        (0..vol_mbar).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(10);
        while chosen.len() < 10 {
            let b = rng.random_range(0..vol_mbar);
            if !chosen.contains(&b) {
                chosen.push(b);
            }
        }
        chosen
    };
    let mut sums = [0.0f64; 6];
    for &b in &samples {
        let r = sim::simulate_plan(plan, &cfg, SimScope::Slice(b))?;
        for (acc, v) in sums.iter_mut().zip([
            r.ld_tran, r.st_tran, r.cl_full, r.cl_part, r.shmem_req, r.shmem_tran,
        ]) {
            *acc += v;
        }
    }
    let scale = vol_mbar as f64 / samples.len() as f64;
    let (ld_req, st_req) = sim::analytic_requests(plan);
    Ok(TrafficReport {
        ld_req: ld_req as f64,
        st_req: st_req as f64,
        ld_tran: sums[0] * scale,
        st_tran: sums[1] * scale,
        cl_full: sums[2] * scale,
        cl_part: sums[3] * scale,
        shmem_req: sums[4] * scale,
        shmem_tran: sums[5] * scale,
        exact: false,
    })
}

/// Full cost breakdown for one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub total_cycles: f64,
    pub cycles_mem: f64,
    pub cycles_shmem: f64,
    pub cycles_ac: f64,
    pub n_iter: u64,
    pub mem_lat: f64,
    pub tpr_mem: f64,
    pub tpr_shmem: f64,
    pub mlp: f64,
    pub mwp: f64,
    pub mwp_mem: f64,
    pub mwp_peak: f64,
    pub bw_warp: f64,
    pub bytes_req: f64,
    pub n_warps_per_sm: f64,
}

/// Cost estimate from an already-computed traffic report.
pub fn estimate_cycles_from_traffic(
    plan: &TransposePlan,
    device: &DeviceProfile,
    traffic: &TrafficReport,
) -> Result<CostEstimate> {
    let tpr = clamp_tpr(tpr_mem(traffic)?);
    let mlp = match plan.kind() {
        AlgorithmKind::Tiled => {
            let (vx, vy) = plan.tile_geometry().unwrap();
            mlp_tiled(&tile_census(vx, vy, L), L, plan.n_warp() as u64)?
        }
        AlgorithmKind::TiledCopy => {
            let (vx, vy) = plan.tile_geometry().unwrap();
            mlp_tiled_copy(&tile_census(vx, vy, L), L, plan.n_warp() as u64)?
        }
        AlgorithmKind::Packed | AlgorithmKind::PackedSplit => mlp_packed(plan.n_reg()),
    };
    let mem_lat = mem_latency(device, tpr);
    let breq = bytes_req(device, tpr);
    let warps = n_warps_per_sm(plan, device);
    let terms = mwp(device, mem_lat, mlp, warps, breq);
    let cyc_mem = cycles_mem(mem_lat, mlp, plan.n_warp(), terms.mwp);
    let (tpr_sh, cyc_sh) = match plan.kind() {
        AlgorithmKind::TiledCopy => (0.0, 0.0),
        _ => {
            let t = tpr_shmem(plan, device)?;
            (t, cycles_shmem(device, t, mlp))
        }
    };
    let n_iter = plan.n_iter();
    Ok(CostEstimate {
        total_cycles: (cyc_mem + cyc_sh + device.cycles_ac) * n_iter as f64,
        cycles_mem: cyc_mem,
        cycles_shmem: cyc_sh,
        cycles_ac: device.cycles_ac,
        n_iter,
        mem_lat,
        tpr_mem: tpr,
        tpr_shmem: tpr_sh,
        mlp,
        mwp: terms.mwp,
        mwp_mem: terms.mwp_mem,
        mwp_peak: terms.mwp_peak,
        bw_warp: terms.bw_warp,
        bytes_req: breq,
        n_warps_per_sm: warps,
    })
}

/// Cost estimate with sampled traffic; deterministic in `seed`.
pub fn estimate_cycles(
    plan: &TransposePlan,
    device: &DeviceProfile,
    seed: u64,
) -> Result<CostEstimate> {
    let traffic = sample_traffic(plan, device, seed)?;
    estimate_cycles_from_traffic(plan, device, &traffic)
}
