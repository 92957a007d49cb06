//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test -p ttkit-cli --test acceptance -- --nocapture`.

use std::collections::HashMap;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use ttkit::exec::{transpose_execute_new, transpose_scatter_new, TensorBuffer};
use ttkit::index::{
    coords_from_position, p_major_in, p_major_out, p_minor_in, p_minor_out, p_shared,
    scalar_position, transpose_position,
};
use ttkit::model::{
    mem_latency, mlp_tiled, mlp_tiled_copy, sample_traffic, tile_census, tpr_mem, tpr_shmem,
    TrafficReport,
};
use ttkit::plan::{build_all_plans, build_partition, select_heuristic, AlgorithmKind};
use ttkit::sim::{bank_transactions, simulate_plan, AccessKind, SimConfig, SimScope, Space, WarpAccess};
use ttkit::{DeviceProfile, ElemSize, MultiIndex, Permutation, TensorLayout};
use ttkit_cli::arithmetic_intensity;

fn random_layout(rng: &mut ChaCha8Rng, rank: usize, max_vol: u64, elem: ElemSize) -> TensorLayout {
    let mut extents = vec![1u64; rank];
    let mut vol = 1u64;
    let rounds = rng.random_range(4..=40);
    for _ in 0..rounds {
        let i = rng.random_range(0..rank);
        let f = rng.random_range(2..=4u64);
        if vol * f <= max_vol {
            extents[i] *= f;
            vol *= f;
        }
    }
    TensorLayout::new(extents, elem).unwrap()
}

fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Permutation {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Permutation::new(order).unwrap()
}

fn kepler() -> DeviceProfile {
    DeviceProfile::kepler_k20x()
}

#[test]
fn criterion_1_index_math_oracle_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let identity: Vec<usize> = (0..12).collect();
    for case in 0..1000u64 {
        let rank = rng.random_range(1..=12);
        let layout = random_layout(&mut rng, rank, 1 << 18, ElemSize::B4);
        let perm = random_perm(&mut rng, rank);
        let vol = layout.volume();

        // Position round-trips under the permuted ordering.
        for _ in 0..1000 {
            let p = rng.random_range(0..vol);
            let coords = coords_from_position(p, perm.order(), &layout).unwrap();
            assert_eq!(scalar_position(&coords, perm.order(), &layout).unwrap(), p);
        }

        // The scatter map is a bijection on [0, vol).
        let mut seen = vec![false; vol as usize];
        for p in 0..vol {
            let q = transpose_position(p, &perm, &layout).unwrap() as usize;
            assert!(!seen[q], "case {case}: output slot {q} hit twice");
            seen[q] = true;
        }

        // Major/minor decomposition identities for a random partition.
        let m = rng.random_range(1..=rank);
        let k = rng.random_range(1..=rank);
        let part = build_partition(&layout, &perm, m, k).unwrap();
        assert_eq!(part.vol_mmk() * part.vol_mbar(), vol);

        let mut seen_in = vec![false; vol as usize];
        let mut seen_out = vec![false; vol as usize];
        for b in 0..part.vol_mbar() {
            let maj_in = p_major_in(b, &part.mbar_in, &layout).unwrap();
            let maj_out = p_major_out(b, &part.mbar_out, &layout, &perm).unwrap();
            for kk in 0..part.vol_mmk() {
                let p = maj_in + p_minor_in(kk, &part.mmk_in, &layout).unwrap();
                let q = maj_out + p_minor_out(kk, &part.mmk_out, &layout, &perm).unwrap();
                assert!(!seen_in[p as usize]);
                seen_in[p as usize] = true;
                assert!(!seen_out[q as usize]);
                seen_out[q as usize] = true;
            }
        }
        assert!(seen_in.iter().all(|&s| s));
        assert!(seen_out.iter().all(|&s| s));

        // Eq. 1 consistency: the scatter map agrees with the major/minor
        // sums when (b, k_in, k_out) linearize the same coordinates.
        let checks = vol.min(512);
        for _ in 0..checks {
            let mut coords = vec![0u64; rank];
            for (d, c) in coords.iter_mut().enumerate() {
                *c = rng.random_range(0..layout.extent(d));
            }
            let linearize = |mi: &MultiIndex| -> u64 {
                let mut x = 0u64;
                let mut acc = 1u64;
                for &(label, extent) in mi.dims() {
                    x += coords[label] * acc;
                    acc *= extent;
                }
                x
            };
            let b = linearize(&part.mbar_in);
            let k_in = linearize(&part.mmk_in);
            let k_out = linearize(&part.mmk_out);
            let p = p_major_in(b, &part.mbar_in, &layout).unwrap()
                + p_minor_in(k_in, &part.mmk_in, &layout).unwrap();
            let q = p_major_out(b, &part.mbar_out, &layout, &perm).unwrap()
                + p_minor_out(k_out, &part.mmk_out, &layout, &perm).unwrap();
            assert_eq!(
                scalar_position(&coords, &identity[..rank], &layout).unwrap(),
                p
            );
            assert_eq!(transpose_position(p, &perm, &layout).unwrap(), q);
        }

        // Staging positions permute the staged volume.
        if !part.mmk_in.is_empty() {
            let mut seen_sh = vec![false; part.vol_mmk() as usize];
            for kk in 0..part.vol_mmk() {
                let s = p_shared(kk, &part.mmk_out, &part.mmk_in).unwrap() as usize;
                assert!(!seen_sh[s]);
                seen_sh[s] = true;
            }
            assert!(seen_sh.iter().all(|&s| s));
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "index-math oracle suite took {elapsed:?}, budget 30s"
    );
    println!(
        "acceptance criterion 1 (index-math oracle suite, 1000 cases): PASS in {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_executor_bit_exact() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let device = kepler();
    let mut plan_runs = 0usize;
    for case in 0..500usize {
        // Mostly small tensors with a large tail up to the 2^22 cap.
        let max_vol = if case % 50 == 0 { 1 << 21 } else { 1 << 14 };
        let rank = rng.random_range(1..=12);
        let layout = random_layout(&mut rng, rank, max_vol, ElemSize::B4);
        let perm = random_perm(&mut rng, rank);
        assert!(layout.volume() <= 1 << 22);
        let input = TensorBuffer::<u32>::from_pattern(layout.clone()).unwrap();
        let oracle = transpose_scatter_new(&input, &perm).unwrap();
        let plans = build_all_plans(&layout, &perm, &device).unwrap();
        let mut seen_kinds: Vec<AlgorithmKind> = Vec::new();
        for plan in &plans {
            if seen_kinds.contains(&plan.kind()) {
                continue;
            }
            seen_kinds.push(plan.kind());
            let w1 = transpose_execute_new(plan, &input, 1).unwrap();
            let w4 = transpose_execute_new(plan, &input, 4).unwrap();
            let w16 = transpose_execute_new(plan, &input, 16).unwrap();
            assert_eq!(w1.data(), oracle.data(), "case {case} plan {plan}");
            assert_eq!(w1.data(), w4.data(), "case {case} plan {plan}");
            assert_eq!(w1.data(), w16.data(), "case {case} plan {plan}");
            plan_runs += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "executor suite took {elapsed:?}, budget 5min"
    );
    println!(
        "acceptance criterion 2 (executor vs scatter, 500 cases, {plan_runs} plan kinds, workers 1/4/16): PASS in {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_3_bank_conflict_reproduction() {
    let cfg = SimConfig::default();

    // Unpadded 32x32 tile, transposed column read: 32 transactions per
    // request, exactly.
    let mut unpadded = WarpAccess::new(AccessKind::Load, Space::Shared, 4);
    for lane in 0..32u64 {
        unpadded.lanes[lane as usize] = Some(lane * 32 * 4);
    }
    assert_eq!(bank_transactions(&unpadded, &cfg), 32);

    // Padded 32x33 tile: exactly 1.
    let mut padded = WarpAccess::new(AccessKind::Load, Space::Shared, 4);
    for lane in 0..32u64 {
        padded.lanes[lane as usize] = Some(lane * 33 * 4);
    }
    assert_eq!(bank_transactions(&padded, &cfg), 1);

    // End to end: the tiled plan's padded staging buffer is conflict-free in
    // both phases, and a packed plan whose staging read is the unpadded
    // column walk replays 32 ways on every request.
    let layout = TensorLayout::new(vec![32, 32], ElemSize::B4).unwrap();
    let perm = Permutation::from_one_based(&[2, 1]).unwrap();
    let device = kepler();
    let plans = build_all_plans(&layout, &perm, &device).unwrap();
    let tiled = plans.iter().find(|p| p.kind() == AlgorithmKind::Tiled).unwrap();
    let report = simulate_plan(tiled, &cfg, SimScope::Full).unwrap();
    assert_eq!(report.shmem_tran, report.shmem_req);
    let packed = plans.iter().find(|p| p.kind() == AlgorithmKind::Packed).unwrap();
    assert_eq!(tpr_shmem(packed, &device).unwrap(), 32.0);

    println!("acceptance criterion 3 (bank conflicts: unpadded 32, padded 1): PASS");
}

#[test]
fn criterion_4_mlp_closed_form() {
    let l = 32u64;
    for r in [1u64, 2, 4, 8] {
        for vol_m in [32u64, 64, 96, 128, 160] {
            for vol_k in [32u64, 64, 96, 128, 160] {
                let census = tile_census(vol_m, vol_k, l);
                let expect = l as f64 / r as f64;
                assert_eq!(mlp_tiled(&census, l, r).unwrap(), expect);
                assert_eq!(mlp_tiled_copy(&census, l, r).unwrap(), expect);
            }
        }
    }
    println!("acceptance criterion 4 (MLP = L/R on multiple-of-L tiles, R in {{1,2,4,8}}): PASS");
}

#[test]
fn criterion_5_model_plumbing() {
    // Partial-free store traffic reduces to plain transactions per request.
    for ld_req in [1u64, 7, 32, 100] {
        for st_req in [1u64, 5, 32, 90] {
            for ld_tran in [ld_req, 2 * ld_req, 3 * ld_req + 1] {
                for st_tran in [st_req, 2 * st_req + 1] {
                    let t = TrafficReport {
                        ld_req: ld_req as f64,
                        st_req: st_req as f64,
                        ld_tran: ld_tran as f64,
                        st_tran: st_tran as f64,
                        cl_full: (st_tran * 4) as f64,
                        cl_part: 0.0,
                        shmem_req: 0.0,
                        shmem_tran: 0.0,
                        exact: true,
                    };
                    let expect = (ld_tran + st_tran) as f64 / (ld_req + st_req) as f64;
                    assert_eq!(tpr_mem(&t).unwrap(), expect);
                }
            }
        }
    }

    // Published latency constants.
    let k = DeviceProfile::builtin("kepler-k20x").unwrap();
    assert_eq!((k.delta, k.mem_baselat, k.shmem_lat, k.cycles_ac), (14.0, 358.0, 11.0, 50.0));
    let m = DeviceProfile::builtin("maxwell-m40").unwrap();
    assert_eq!((m.delta, m.mem_baselat, m.shmem_lat, m.cycles_ac), (2.5, 385.0, 1.0, 220.0));
    let p = DeviceProfile::builtin("pascal-p100").unwrap();
    assert_eq!((p.delta, p.mem_baselat, p.shmem_lat, p.cycles_ac), (2.8, 485.0, 1.0, 260.0));

    assert_eq!(mem_latency(&k, 2.0), 372.0);

    println!("acceptance criterion 5 (Eq.-12 reduction, Table-1 constants, mem_lat(Kepler, 2) = 372): PASS");
}

/// Cases for criteria 6 and 7: random layouts, ranks 2..=8, volumes capped
/// well under 2^20.
fn model_cases(seed: u64, n: usize) -> Vec<(TensorLayout, Permutation)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rank = rng.random_range(2..=8);
            let max_vol = 1u64 << rng.random_range(10..=16);
            let layout = random_layout(&mut rng, rank, max_vol, ElemSize::B4);
            let perm = random_perm(&mut rng, rank);
            (layout, perm)
        })
        .collect()
}

#[test]
fn criterion_6_sampling_fidelity() {
    let start = Instant::now();
    let device = kepler();
    let cfg = SimConfig::default();
    let cases = model_cases(1006, 200);
    let mut within = 0usize;
    for (i, (layout, perm)) in cases.iter().enumerate() {
        assert!(layout.volume() <= 1 << 20);
        let plans = build_all_plans(layout, perm, &device).unwrap();
        // Validate the estimate on the plan the heuristic actually consumes.
        let pick = select_heuristic(&plans, &device, 1006 + i as u64).unwrap();
        let plan = &plans[pick];
        let slices = plan.partition().vol_mbar() as f64;
        let sampled = sample_traffic(plan, &device, 1006 + i as u64).unwrap();
        let exact = simulate_plan(plan, &cfg, SimScope::Full).unwrap();
        let ld_ok =
            (sampled.ld_tran / slices - exact.ld_tran / slices).abs() <= 0.25 * exact.ld_tran / slices;
        let st_ok =
            (sampled.st_tran / slices - exact.st_tran / slices).abs() <= 0.25 * exact.st_tran / slices;
        if ld_ok && st_ok {
            within += 1;
        }
    }
    let rate = within as f64 / cases.len() as f64;
    assert!(
        rate >= 0.90,
        "sampled LD/ST transactions within 25% of exact per-slice mean for only {within}/200 cases"
    );
    println!(
        "acceptance criterion 6 (ten-sample estimate within 25% of exact): PASS, {within}/200 cases in {:.1}s",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_7_heuristic_quality() {
    let start = Instant::now();
    let device = kepler();
    let cfg = SimConfig::default();
    let cases = model_cases(1007, 200);
    let mut within = 0usize;
    for (i, (layout, perm)) in cases.iter().enumerate() {
        let plans = build_all_plans(layout, perm, &device).unwrap();
        let pick = select_heuristic(&plans, &device, 1007 + i as u64).unwrap();
        // Exact global transactions are independent of the thread-block
        // size, so memoize per partition.
        let mut memo: HashMap<(AlgorithmKind, Vec<usize>, u64), f64> = HashMap::new();
        let mut global_tran = |idx: usize| -> f64 {
            let plan = &plans[idx];
            let key = (
                plan.kind(),
                plan.partition().mmk_in.labels().collect::<Vec<_>>(),
                plan.n_sp(),
            );
            *memo.entry(key).or_insert_with(|| {
                let r = simulate_plan(plan, &cfg, SimScope::Full).unwrap();
                r.ld_tran + r.st_tran
            })
        };
        let heur = global_tran(pick);
        let best = (0..plans.len())
            .map(&mut global_tran)
            .fold(f64::INFINITY, f64::min);
        if heur <= 1.5 * best + 1e-9 {
            within += 1;
        }
    }
    let rate = within as f64 / cases.len() as f64;
    assert!(
        rate >= 0.85,
        "heuristic within 1.5x of best exact traffic for only {within}/200 cases"
    );
    println!(
        "acceptance criterion 7 (heuristic within 1.5x of best plan traffic): PASS, {within}/200 cases in {:.1}s",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_8_bench_determinism() {
    let bin = env!("CARGO_BIN_EXE_ttkit");
    let dir = std::env::temp_dir();
    let out_a = dir.join("ttkit_acceptance_bench_a.csv");
    let out_b = dir.join("ttkit_acceptance_bench_b.csv");
    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(bin)
            .args([
                "bench",
                "set1",
                "--seed",
                "42",
                "--ranks",
                "2-4",
                "--cases-per-rank",
                "4",
                "--mean-vol",
                "65536",
                "--sd-vol",
                "8192",
                "--mode",
                "both",
                "--workers",
                "4",
                "--out",
                "csv",
                "--out-file",
            ])
            .arg(out)
            .status()
            .expect("bench run");
        assert!(status.success(), "bench set1 --seed 42 failed");
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "bench set1 --seed 42 CSV output differs between runs");
    std::fs::remove_file(&out_a).ok();
    std::fs::remove_file(&out_b).ok();
    println!("acceptance criterion 8 (bench set1 --seed 42 reproduces byte-identical CSV): PASS");
}

#[test]
fn criterion_9_arithmetic_intensity() {
    assert_eq!(arithmetic_intensity(9.0, 9.0, 9.0).unwrap(), 2.0);
    for v in [1.0f64, 4.0, 100.0] {
        let ai = arithmetic_intensity(v, v, v).unwrap();
        let expect = 2.0 / 3.0 * v.sqrt();
        assert!(
            (ai - expect).abs() <= 1e-12 * expect.max(1.0),
            "ai({v}) = {ai}, expected {expect}"
        );
    }
    println!("acceptance criterion 9 (arithmetic intensity: ai(9,9,9) = 2, symmetry (2/3)sqrt(V)): PASS");
}
