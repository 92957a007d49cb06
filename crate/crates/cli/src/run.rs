//! Case runner: plan building, selection, exact simulation, verified
//! execution, and the CSV/JSON/summary reporting around it.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use ttkit::exec::{
    measure_bandwidth, transpose_execute_new, transpose_scatter_new, TensorBuffer,
};
use ttkit::model::TrafficReport;
use ttkit::plan::{
    build_all_plans, select_heuristic, select_simulated, simulated_score, TransposePlan,
};
use ttkit::sim::{simulate_plan, SimConfig, SimScope};
use ttkit::{DeviceProfile, ElemSize, Error, Result, WriteMode};

use crate::cases::Case;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    Heuristic,
    Simulated,
    Both,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "heuristic" => Ok(SelectionMode::Heuristic),
            "simulated" => Ok(SelectionMode::Simulated),
            "both" => Ok(SelectionMode::Both),
            other => Err(format!("unknown mode `{other}` (heuristic|simulated|both)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub device: DeviceProfile,
    pub mode: SelectionMode,
    /// Threads the runner spreads cases over.
    pub workers: usize,
    /// Exact-simulation cap, elements.
    pub sim_cap: u64,
    pub seed: u64,
    /// Record wall-clock executor bandwidth. Off by default: timing is not
    /// reproducible, and bench output is byte-stable without it.
    pub measure: bool,
    pub measure_reps: u32,
}

impl RunConfig {
    pub fn new(device: DeviceProfile, seed: u64) -> Self {
        RunConfig {
            device,
            mode: SelectionMode::Heuristic,
            workers: 1,
            sim_cap: ttkit::sim::DEFAULT_SIM_CAP,
            seed,
            measure: false,
            measure_reps: 3,
        }
    }
}

/// Chosen-plan summary embedded in a record.
#[derive(Debug, Clone, Serialize)]
pub struct PlanChoice {
    pub index: usize,
    pub kind: String,
    pub m: usize,
    pub k: usize,
    pub n_sp: u64,
    pub n_thread: u32,
    pub n_reg: u32,
}

impl PlanChoice {
    fn new(index: usize, plan: &TransposePlan) -> Self {
        PlanChoice {
            index,
            kind: plan.kind().to_string(),
            m: plan.m(),
            k: plan.k(),
            n_sp: plan.n_sp(),
            n_thread: plan.n_thread(),
            n_reg: plan.n_reg(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub case_id: usize,
    pub tag: String,
    pub rank: usize,
    pub extents: Vec<u64>,
    /// 1-based permutation labels.
    pub perm: Vec<u64>,
    pub volume: u64,
    pub elem_bytes: u64,
    pub plans: usize,
    pub heuristic: Option<PlanChoice>,
    pub heuristic_cycles: Option<f64>,
    pub simulated: Option<PlanChoice>,
    pub simulated_score: Option<f64>,
    /// Selections agree (set when both ran).
    pub agree: Option<bool>,
    /// Exact traffic of the executed plan, volume permitting.
    pub traffic: Option<TrafficReport>,
    /// Executed-plan transactions relative to the aligned-streaming floor.
    pub efficiency: Option<f64>,
    pub executed: Option<PlanChoice>,
    pub executed_plan: Option<serde_json::Value>,
    pub verified: bool,
    pub bandwidth: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub cases: usize,
    pub failures: usize,
    pub verify_failures: usize,
    /// Fraction of dual-selection cases where both picked the same plan.
    pub agreement_rate: Option<f64>,
    pub efficiency_min: Option<f64>,
    pub efficiency_median: Option<f64>,
    pub efficiency_max: Option<f64>,
}

impl Summary {
    fn from_records(records: &[BenchRecord]) -> Summary {
        let failures = records.iter().filter(|r| r.error.is_some()).count();
        let verify_failures = records.iter().filter(|r| !r.verified).count();
        let agreements: Vec<bool> = records.iter().filter_map(|r| r.agree).collect();
        let agreement_rate = if agreements.is_empty() {
            None
        } else {
            Some(agreements.iter().filter(|&&a| a).count() as f64 / agreements.len() as f64)
        };
        let mut eff: Vec<f64> = records.iter().filter_map(|r| r.efficiency).collect();
        eff.sort_by(|a, b| a.total_cmp(b));
        let (efficiency_min, efficiency_median, efficiency_max) = if eff.is_empty() {
            (None, None, None)
        } else {
            (
                Some(eff[0]),
                Some(eff[eff.len() / 2]),
                Some(eff[eff.len() - 1]),
            )
        };
        Summary {
            cases: records.len(),
            failures,
            verify_failures,
            agreement_rate,
            efficiency_min,
            efficiency_median,
            efficiency_max,
        }
    }

    /// Fixed-width table for stdout.
    pub fn render(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        let mut s = String::new();
        s.push_str(&format!("{:<28}{:>10}\n", "cases", self.cases));
        s.push_str(&format!("{:<28}{:>10}\n", "failures", self.failures));
        s.push_str(&format!("{:<28}{:>10}\n", "verify failures", self.verify_failures));
        s.push_str(&format!(
            "{:<28}{:>10}\n",
            "heuristic/simulated agree",
            fmt_opt(self.agreement_rate)
        ));
        s.push_str(&format!(
            "{:<28}{:>10}\n",
            "traffic efficiency worst",
            fmt_opt(self.efficiency_min)
        ));
        s.push_str(&format!(
            "{:<28}{:>10}\n",
            "traffic efficiency median",
            fmt_opt(self.efficiency_median)
        ));
        s.push_str(&format!(
            "{:<28}{:>10}\n",
            "traffic efficiency best",
            fmt_opt(self.efficiency_max)
        ));
        s
    }
}

fn scramble(i: u64) -> u64 {
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn execute_verified(plan: &TransposePlan, elem: ElemSize) -> Result<bool> {
    match elem {
        ElemSize::B4 => {
            let input = TensorBuffer::<u32>::from_pattern(plan.layout().clone())?;
            let got = transpose_execute_new(plan, &input, 1)?;
            let oracle = transpose_scatter_new(&input, plan.perm())?;
            Ok(got.data() == oracle.data())
        }
        ElemSize::B8 => {
            let input = TensorBuffer::<u64>::from_pattern(plan.layout().clone())?;
            let got = transpose_execute_new(plan, &input, 1)?;
            let oracle = transpose_scatter_new(&input, plan.perm())?;
            Ok(got.data() == oracle.data())
        }
    }
}

/// Streaming floor for efficiency reporting: every byte moved once in
/// full transactions, loads plus stores.
fn ideal_transactions(volume: u64, elem: ElemSize, tran_size: u64) -> f64 {
    2.0 * (volume * elem.bytes()).div_ceil(tran_size) as f64
}

fn run_case(case: &Case, cfg: &RunConfig) -> BenchRecord {
    let mut record = BenchRecord {
        case_id: case.id,
        tag: case.tag.clone(),
        rank: case.layout.rank(),
        extents: case.layout.extents().to_vec(),
        perm: case.perm.to_one_based(),
        volume: case.layout.volume(),
        elem_bytes: case.layout.elem().bytes(),
        plans: 0,
        heuristic: None,
        heuristic_cycles: None,
        simulated: None,
        simulated_score: None,
        agree: None,
        traffic: None,
        efficiency: None,
        executed: None,
        executed_plan: None,
        verified: true,
        bandwidth: None,
        error: None,
    };
    let seed = cfg.seed ^ scramble(case.id as u64);
    let result = (|| -> Result<()> {
        let plans = build_all_plans(&case.layout, &case.perm, &cfg.device)?;
        record.plans = plans.len();
        let heur = if cfg.mode != SelectionMode::Simulated {
            let idx = select_heuristic(&plans, &cfg.device, seed)?;
            record.heuristic = Some(PlanChoice::new(idx, &plans[idx]));
            record.heuristic_cycles = Some(
                ttkit::model::estimate_cycles(&plans[idx], &cfg.device, seed)?.total_cycles,
            );
            Some(idx)
        } else {
            None
        };
        let simu = if cfg.mode != SelectionMode::Heuristic {
            let idx = select_simulated(&plans, &cfg.device, cfg.sim_cap)?;
            record.simulated = Some(PlanChoice::new(idx, &plans[idx]));
            Some(idx)
        } else {
            None
        };
        if let (Some(h), Some(s)) = (heur, simu) {
            record.agree = Some(h == s);
        }
        let executed = simu.or(heur).expect("at least one selection ran");
        let plan = &plans[executed];
        record.executed = Some(PlanChoice::new(executed, plan));
        record.executed_plan = Some(plan.dump_json());
        if case.layout.volume() <= cfg.sim_cap {
            let sim_cfg = {
                let mut c = SimConfig::from_profile(&cfg.device);
                c.sim_cap = cfg.sim_cap;
                c
            };
            let traffic = simulate_plan(plan, &sim_cfg, SimScope::Full)?;
            record.efficiency = Some(
                ideal_transactions(case.layout.volume(), case.layout.elem(), sim_cfg.tran_size)
                    / (traffic.ld_tran + traffic.st_tran),
            );
            if record.simulated.is_some() {
                record.simulated_score = Some(simulated_score(&traffic, &cfg.device));
            }
            record.traffic = Some(traffic);
        }
        record.verified = execute_verified(plan, case.layout.elem())?;
        if cfg.measure {
            record.bandwidth =
                Some(measure_bandwidth(plan, WriteMode::Write, cfg.measure_reps, 1)?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        record.error = Some(e.to_string());
    }
    record
}

/// Runs every case, in parallel across `workers` threads, and returns the
/// records in case order plus the aggregate summary. Per-case failures are
/// recorded and the run continues; verification failures are the caller's
/// exit-status signal.
pub fn run_bench(cases: &[Case], cfg: &RunConfig) -> Result<(Vec<BenchRecord>, Summary)> {
    if cases.is_empty() {
        return Err(Error::InvalidModelInput("no cases to run".into()));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<BenchRecord>>> = Mutex::new(vec![None; cases.len()]);
    let workers = cfg.workers.max(1).min(cases.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cases.len() {
                    break;
                }
                let record = run_case(&cases[i], cfg);
                slots.lock().unwrap()[i] = Some(record);
            });
        }
    });
    let records: Vec<BenchRecord> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every case produced a record"))
        .collect();
    let summary = Summary::from_records(&records);
    Ok((records, summary))
}

const CSV_HEADER: &[&str] = &[
    "case", "tag", "rank", "extents", "perm", "volume", "elem_bytes", "plans",
    "heur_kind", "heur_m", "heur_k", "heur_nsp", "heur_threads", "heur_regs",
    "heur_cycles", "sim_kind", "sim_score", "agree", "exec_kind", "ld_req", "st_req",
    "ld_tran", "st_tran", "cl_full", "cl_part", "shmem_req", "shmem_tran",
    "efficiency", "verified", "bandwidth_bytes_per_s", "error",
];

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Flat CSV, one row per record, stable column order.
pub fn write_csv(records: &[BenchRecord], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        let extents: Vec<String> = r.extents.iter().map(u64::to_string).collect();
        let perm: Vec<String> = r.perm.iter().map(u64::to_string).collect();
        let choice = |c: &Option<PlanChoice>, f: &dyn Fn(&PlanChoice) -> String| match c {
            Some(c) => f(c),
            None => String::new(),
        };
        let row = vec![
            r.case_id.to_string(),
            r.tag.clone(),
            r.rank.to_string(),
            extents.join("x"),
            perm.join("-"),
            r.volume.to_string(),
            r.elem_bytes.to_string(),
            r.plans.to_string(),
            choice(&r.heuristic, &|c| c.kind.clone()),
            choice(&r.heuristic, &|c| c.m.to_string()),
            choice(&r.heuristic, &|c| c.k.to_string()),
            choice(&r.heuristic, &|c| c.n_sp.to_string()),
            choice(&r.heuristic, &|c| c.n_thread.to_string()),
            choice(&r.heuristic, &|c| c.n_reg.to_string()),
            opt_str(&r.heuristic_cycles),
            choice(&r.simulated, &|c| c.kind.clone()),
            opt_str(&r.simulated_score),
            opt_str(&r.agree),
            choice(&r.executed, &|c| c.kind.clone()),
            opt_str(&r.traffic.as_ref().map(|t| t.ld_req)),
            opt_str(&r.traffic.as_ref().map(|t| t.st_req)),
            opt_str(&r.traffic.as_ref().map(|t| t.ld_tran)),
            opt_str(&r.traffic.as_ref().map(|t| t.st_tran)),
            opt_str(&r.traffic.as_ref().map(|t| t.cl_full)),
            opt_str(&r.traffic.as_ref().map(|t| t.cl_part)),
            opt_str(&r.traffic.as_ref().map(|t| t.shmem_req)),
            opt_str(&r.traffic.as_ref().map(|t| t.shmem_tran)),
            opt_str(&r.efficiency),
            r.verified.to_string(),
            opt_str(&r.bandwidth),
            opt_str(&r.error),
        ];
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Nested JSON: records with embedded plan dumps, plus the summary.
pub fn write_json(
    records: &[BenchRecord],
    summary: &Summary,
    out: &mut dyn Write,
) -> Result<()> {
    let doc = serde_json::json!({ "records": records, "summary": summary });
    serde_json::to_writer_pretty(&mut *out, &doc)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    out.write_all(b"\n")?;
    Ok(())
}
