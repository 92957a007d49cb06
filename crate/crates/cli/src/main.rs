use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ttkit::exec::{
    measure_bandwidth, transpose_execute, transpose_scatter_new, TensorBuffer,
};
use ttkit::model::estimate_cycles;
use ttkit::plan::{build_all_plans, select_heuristic};
use ttkit::sim::{simulate_plan, simulate_plan_traced, SimConfig, SimScope, DEFAULT_SIM_CAP};
use ttkit::{DeviceProfile, ElemSize, Permutation, TensorLayout, WriteMode};
use ttkit_cli::run::{run_bench, write_csv, write_json, RunConfig, SelectionMode};
use ttkit_cli::{dump_custom_cases, gen_set1, gen_set2, load_custom_cases, BenchSpec, Case};

#[derive(Parser)]
#[command(
    name = "ttkit",
    version,
    about = "Tensor transpose planning, traffic simulation, and execution"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enumerate the plans for one case and rank them with the cost model
    Plan(PlanArgs),
    /// Generate a benchmark set, run it with verification, and report
    Bench(BenchCmd),
    /// Exactly simulate the memory traffic of one plan
    Simulate(SimArgs),
    /// Execute a transpose on synthetic or file-backed tensors
    Exec(ExecArgs),
    /// Device profile utilities
    Profile(ProfileCmd),
}

#[derive(Args)]
struct CaseArgs {
    /// Tensor extents, comma-separated, stride-1 dimension first
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<u64>,
    /// Output permutation, 1-based labels, comma-separated
    #[arg(long, value_delimiter = ',', required = true)]
    perm: Vec<u64>,
    /// Element size in bytes (4 or 8)
    #[arg(long, default_value_t = 4)]
    elem: u64,
}

impl CaseArgs {
    fn build(&self) -> Result<(TensorLayout, Permutation)> {
        let elem = ElemSize::from_bytes(self.elem)?;
        let layout = TensorLayout::new(self.dims.clone(), elem)?;
        let perm = Permutation::from_one_based(&self.perm)?;
        if perm.len() != layout.rank() {
            bail!(
                "permutation rank {} does not match {} extents",
                perm.len(),
                layout.rank()
            );
        }
        Ok((layout, perm))
    }
}

fn load_device(name: &str) -> Result<DeviceProfile> {
    if let Some(p) = DeviceProfile::builtin(name) {
        return Ok(p);
    }
    let path = Path::new(name);
    if path.exists() {
        return DeviceProfile::load(path).with_context(|| format!("loading {name}"));
    }
    bail!(
        "unknown device `{name}`; use one of {:?} or a profile file path",
        DeviceProfile::builtin_names()
    )
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, default_value = "kepler-k20x")]
    device: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Emit the plan list as JSON instead of text
    #[arg(long)]
    json: bool,
}

fn cmd_plan(args: &PlanArgs) -> Result<()> {
    let (layout, perm) = args.case.build()?;
    let device = load_device(&args.device)?;
    let plans = build_all_plans(&layout, &perm, &device)?;
    let selected = select_heuristic(&plans, &device, args.seed)?;
    let estimates: Vec<_> = plans
        .iter()
        .map(|p| estimate_cycles(p, &device, args.seed))
        .collect::<ttkit::Result<_>>()?;
    if args.json {
        let items: Vec<serde_json::Value> = plans
            .iter()
            .zip(&estimates)
            .enumerate()
            .map(|(i, (p, est))| {
                let mut v = p.dump_json();
                v["index"] = serde_json::json!(i);
                v["selected"] = serde_json::json!(i == selected);
                v["estimate"] = serde_json::to_value(est).unwrap();
                v
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&items)?);
    } else {
        println!(
            "{} plans for dims {:?}, perm {:?} on {}",
            plans.len(),
            layout.extents(),
            perm.to_one_based(),
            device.name
        );
        for (i, (p, est)) in plans.iter().zip(&estimates).enumerate() {
            let mark = if i == selected { "*" } else { " " };
            println!("{mark}[{i:2}] {p}");
            println!(
                "      cycles={:.1} (mem={:.1} shmem={:.1} ac={:.1} iters={}) tpr_mem={:.3} mlp={:.2} mwp={:.2}",
                est.total_cycles,
                est.cycles_mem,
                est.cycles_shmem,
                est.cycles_ac,
                est.n_iter,
                est.tpr_mem,
                est.mlp,
                est.mwp
            );
        }
    }
    Ok(())
}

#[derive(Args)]
struct BenchCommon {
    #[arg(long, global = true, default_value = "kepler-k20x")]
    device: String,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Plan selection to study: heuristic, simulated, or both
    #[arg(long, global = true, default_value = "heuristic")]
    mode: SelectionMode,
    /// Threads the runner spreads cases over
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    /// Record format: csv or json
    #[arg(long, global = true, default_value = "csv")]
    out: String,
    /// Write records here; the summary then goes to stdout
    #[arg(long, global = true)]
    out_file: Option<PathBuf>,
    /// Exact-simulation cap in elements
    #[arg(long, global = true, default_value_t = DEFAULT_SIM_CAP)]
    sim_cap: u64,
    /// Measure wall-clock executor bandwidth (makes output non-reproducible)
    #[arg(long, global = true)]
    measure: bool,
}

#[derive(Args)]
struct Set1Args {
    /// Inclusive rank range, e.g. 2-7
    #[arg(long, default_value = "2-7")]
    ranks: String,
    /// Largest-to-smallest extent ratio classes
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u32, 5, 15])]
    ratios: Vec<u32>,
    /// Cases per (rank, ratio) pair
    #[arg(long, default_value_t = 25)]
    cases_per_rank: u32,
    /// Mean tensor volume in elements
    #[arg(long, default_value_t = (1u64 << 20) as f64)]
    mean_vol: f64,
    /// Volume standard deviation
    #[arg(long, default_value_t = (1u64 << 20) as f64 / 5.0)]
    sd_vol: f64,
    #[arg(long, default_value_t = 4)]
    elem: u64,
}

#[derive(Args)]
struct Set2Args {
    /// Divisor applied to the four large dimensions (1 = full size)
    #[arg(long, default_value_t = 4)]
    scale: u64,
    /// Random permutations per shape, on top of trivial and reverse
    #[arg(long, default_value_t = 50)]
    perms: u32,
    #[arg(long, default_value_t = 4)]
    elem: u64,
}

#[derive(Args)]
struct CustomArgs {
    /// Case file: one `extents | permutation` line per case
    #[arg(long)]
    file: PathBuf,
    #[arg(long, default_value_t = 4)]
    elem: u64,
    /// Print the parsed cases back in file format and exit
    #[arg(long)]
    dump: bool,
}

#[derive(Subcommand)]
enum BenchSet {
    /// Random tensors, ranks 2-7, ratio-classed extents
    Set1(Set1Args),
    /// Fixed rank-8 and rank-12 shapes with four large dimensions
    Set2(Set2Args),
    /// Cases from a file
    Custom(CustomArgs),
}

#[derive(Args)]
struct BenchCmd {
    #[command(subcommand)]
    set: BenchSet,
    #[command(flatten)]
    common: BenchCommon,
}

fn parse_ranks(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once('-')
        .map(|(a, b)| (a, b))
        .unwrap_or((s, s));
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn cmd_bench(args: &BenchCmd) -> Result<bool> {
    let cases: Vec<Case> = match &args.set {
        BenchSet::Set1(s) => {
            let mut spec = BenchSpec::new(args.common.seed);
            spec.ranks = parse_ranks(&s.ranks)?;
            spec.ratios = s.ratios.clone();
            spec.cases_per_rank = s.cases_per_rank;
            spec.mean_vol = s.mean_vol;
            spec.sd_vol = s.sd_vol;
            spec.elem = ElemSize::from_bytes(s.elem)?;
            gen_set1(&spec)?
        }
        BenchSet::Set2(s) => gen_set2(
            s.scale,
            s.perms,
            ElemSize::from_bytes(s.elem)?,
            args.common.seed,
        )?,
        BenchSet::Custom(s) => {
            let cases = load_custom_cases(&s.file, ElemSize::from_bytes(s.elem)?)?;
            if s.dump {
                print!("{}", dump_custom_cases(&cases));
                return Ok(true);
            }
            cases
        }
    };
    let mut cfg = RunConfig::new(load_device(&args.common.device)?, args.common.seed);
    cfg.mode = args.common.mode;
    cfg.workers = args.common.workers;
    cfg.sim_cap = args.common.sim_cap;
    cfg.measure = args.common.measure;
    let (records, summary) = run_bench(&cases, &cfg)?;

    let write_records = |out: &mut dyn Write| -> Result<()> {
        match args.common.out.as_str() {
            "csv" => write_csv(&records, out)?,
            "json" => write_json(&records, &summary, out)?,
            other => bail!("unknown output format `{other}` (csv|json)"),
        }
        Ok(())
    };
    match &args.common.out_file {
        Some(path) => {
            let mut f = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            write_records(&mut f)?;
            f.flush()?;
            print!("{}", summary.render());
        }
        None => {
            let stdout = io::stdout();
            write_records(&mut stdout.lock())?;
            eprint!("{}", summary.render());
        }
    }
    Ok(summary.verify_failures == 0)
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, default_value = "kepler-k20x")]
    device: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Simulate this plan index instead of the heuristic choice
    #[arg(long)]
    plan_index: Option<usize>,
    /// Simulate a single M-bar slice instead of the whole tensor
    #[arg(long)]
    slice: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SIM_CAP)]
    sim_cap: u64,
    /// Dump the address stream, one line per warp access
    #[arg(long)]
    trace: bool,
}

fn cmd_simulate(args: &SimArgs) -> Result<()> {
    let (layout, perm) = args.case.build()?;
    let device = load_device(&args.device)?;
    let plans = build_all_plans(&layout, &perm, &device)?;
    let index = match args.plan_index {
        Some(i) if i < plans.len() => i,
        Some(i) => bail!("plan index {i} out of range ({} plans)", plans.len()),
        None => select_heuristic(&plans, &device, args.seed)?,
    };
    let plan = &plans[index];
    let mut cfg = SimConfig::from_profile(&device);
    cfg.sim_cap = args.sim_cap;
    let scope = match args.slice {
        Some(b) => SimScope::Slice(b),
        None => SimScope::Full,
    };
    let report = if args.trace {
        let stdout = io::stdout();
        let mut out = stdout.lock();
        simulate_plan_traced(plan, &cfg, scope, &mut out)?
    } else {
        simulate_plan(plan, &cfg, scope)?
    };
    println!("plan [{index}] {plan}");
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[derive(Args)]
struct ExecArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, default_value = "kepler-k20x")]
    device: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Input tensor as flat little-endian binary; synthetic pattern if absent
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the transposed tensor here, flat little-endian binary
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "write")]
    mode: String,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    plan_index: Option<usize>,
    /// Skip the scattered-reference verification pass
    #[arg(long)]
    no_verify: bool,
    /// Also measure bandwidth over this many repetitions
    #[arg(long, default_value_t = 0)]
    reps: u32,
}

fn exec_typed<E: ttkit::Element>(
    args: &ExecArgs,
    plan: &ttkit::TransposePlan,
    layout: &TensorLayout,
    perm: &Permutation,
) -> Result<bool> {
    let input = match &args.input {
        Some(path) => {
            let bytes =
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            TensorBuffer::<E>::from_le_bytes(layout.clone(), &bytes)?
        }
        None => TensorBuffer::<E>::from_pattern(layout.clone())?,
    };
    let mode = match args.mode.as_str() {
        "write" => WriteMode::Write,
        "accumulate" => WriteMode::Accumulate,
        other => bail!("unknown mode `{other}` (write|accumulate)"),
    };
    let mut output = TensorBuffer::<E>::zeroed(layout.permuted(perm)?)?;
    transpose_execute(plan, &input, mode, args.workers, &mut output)?;
    let mut ok = true;
    if !args.no_verify {
        let oracle = transpose_scatter_new(&input, perm)?;
        ok = match mode {
            WriteMode::Write => output.data() == oracle.data(),
            // Each output position is written once, so accumulate onto a
            // zeroed buffer must equal the plain write.
            WriteMode::Accumulate => output.data() == oracle.data(),
        };
        println!("verify: {}", if ok { "ok" } else { "MISMATCH" });
    }
    if let Some(path) = &args.output {
        std::fs::write(path, output.to_le_bytes())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(ok)
}

fn cmd_exec(args: &ExecArgs) -> Result<bool> {
    let (layout, perm) = args.case.build()?;
    let device = load_device(&args.device)?;
    let plans = build_all_plans(&layout, &perm, &device)?;
    let index = match args.plan_index {
        Some(i) if i < plans.len() => i,
        Some(i) => bail!("plan index {i} out of range ({} plans)", plans.len()),
        None => select_heuristic(&plans, &device, args.seed)?,
    };
    let plan = &plans[index];
    println!("plan [{index}] {plan}");
    let ok = match layout.elem() {
        ElemSize::B4 => exec_typed::<u32>(args, plan, &layout, &perm)?,
        ElemSize::B8 => exec_typed::<u64>(args, plan, &layout, &perm)?,
    };
    if args.reps > 0 {
        let mode = if args.mode == "accumulate" {
            WriteMode::Accumulate
        } else {
            WriteMode::Write
        };
        let bw = measure_bandwidth(plan, mode, args.reps, args.workers)?;
        println!("bandwidth: {:.3} GB/s (median of {} reps)", bw / 1e9, args.reps);
    }
    Ok(ok)
}

#[derive(Subcommand)]
enum ProfileAction {
    /// List the built-in device profiles
    List,
}

#[derive(Args)]
struct ProfileCmd {
    #[command(subcommand)]
    action: ProfileAction,
}

fn cmd_profile(args: &ProfileCmd) -> Result<()> {
    match args.action {
        ProfileAction::List => {
            for name in DeviceProfile::builtin_names() {
                let p = DeviceProfile::builtin(name).unwrap();
                println!(
                    "{name}: delta={} mem_baselat={} shmem_lat={} cycles_ac={} n_sm={} freq={:.0}MHz mem_bw={:.0}GB/s shmem={}KiB",
                    p.delta,
                    p.mem_baselat,
                    p.shmem_lat,
                    p.cycles_ac,
                    p.n_sm,
                    p.freq / 1e6,
                    p.mem_bw / 1e9,
                    p.shmem_capacity / 1024
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Plan(args) => cmd_plan(args).map(|()| true),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Simulate(args) => cmd_simulate(args).map(|()| true),
        Cmd::Exec(args) => cmd_exec(args),
        Cmd::Profile(args) => cmd_profile(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
