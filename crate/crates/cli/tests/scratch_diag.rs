use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use ttkit::model::estimate_cycles;
use ttkit::plan::{build_all_plans, select_heuristic};
use ttkit::sim::{simulate_plan, SimConfig, SimScope};
use ttkit::{DeviceProfile, ElemSize, Permutation, TensorLayout};

fn random_layout(rng: &mut ChaCha8Rng, rank: usize, max_vol: u64) -> TensorLayout {
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
    TensorLayout::new(extents, ElemSize::B4).unwrap()
}

#[test]
#[ignore]
fn diag_criterion7() {
    let device = DeviceProfile::kepler_k20x();
    let cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1007);
    let mut shown = 0;
    for i in 0..60usize {
        let rank = rng.random_range(2..=8);
        let max_vol = 1u64 << rng.random_range(10..=16);
        let layout = random_layout(&mut rng, rank, max_vol);
        let mut order: Vec<usize> = (0..rank).collect();
        order.shuffle(&mut rng);
        let perm = Permutation::new(order).unwrap();
        let plans = build_all_plans(&layout, &perm, &device).unwrap();
        let pick = select_heuristic(&plans, &device, 1007 + i as u64).unwrap();
        let traffics: Vec<f64> = plans
            .iter()
            .map(|p| {
                let r = simulate_plan(p, &cfg, SimScope::Full).unwrap();
                r.ld_tran + r.st_tran
            })
            .collect();
        let best = traffics.iter().cloned().fold(f64::INFINITY, f64::min);
        let heur = traffics[pick];
        if heur > 1.5 * best && shown < 6 {
            shown += 1;
            println!("== case {i} dims {:?} perm {:?} vol {}", layout.extents(), perm.to_one_based(), layout.volume());
            for (j, p) in plans.iter().enumerate() {
                let est = estimate_cycles(p, &device, 1007 + i as u64).unwrap();
                println!(
                    "  {}[{j:2}] {:11} m{} k{} nt{:3} traffic={:8.0} cycles={:10.1} (mem={:.1} sh={:.1} iters={}) mlp={:.2} mwp={:.2} tprm={:.2} tprsh={:.2} nwsm={}",
                    if j == pick { "*" } else { " " },
                    p.kind().to_string(), p.m(), p.k(), p.n_thread(),
                    traffics[j], est.total_cycles, est.cycles_mem, est.cycles_shmem, est.n_iter,
                    est.mlp, est.mwp, est.tpr_mem, est.tpr_shmem, est.n_warps_per_sm,
                );
            }
        }
    }
}
