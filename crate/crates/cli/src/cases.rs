//! Benchmark case generation and the custom case-file format.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ttkit::{ElemSize, Error, Permutation, Result, TensorLayout};

/// One benchmark case: a layout, the requested permutation, and a human tag.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: usize,
    pub layout: TensorLayout,
    pub perm: Permutation,
    pub tag: String,
}

/// Parameters for the randomized set-1 generator.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    /// Inclusive rank range.
    pub ranks: (usize, usize),
    /// Target mean tensor volume, elements.
    pub mean_vol: f64,
    /// Volume standard deviation.
    pub sd_vol: f64,
    /// Largest-to-smallest extent ratio classes, each of {1, 5, 15}.
    pub ratios: Vec<u32>,
    /// Random permutations drawn per (rank, ratio) pair.
    pub cases_per_rank: u32,
    pub elem: ElemSize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(seed: u64) -> Self {
        BenchSpec {
            ranks: (2, 7),
            mean_vol: (1u64 << 20) as f64,
            sd_vol: (1u64 << 20) as f64 / 5.0,
            ratios: vec![1, 5, 15],
            cases_per_rank: 25,
            elem: ElemSize::B4,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ranks.0 < 1 || self.ranks.0 > self.ranks.1 {
            return Err(Error::InvalidModelInput(format!(
                "bad rank range {:?}",
                self.ranks
            )));
        }
        if !(self.mean_vol > 0.0) || !(self.sd_vol >= 0.0) {
            return Err(Error::InvalidModelInput("volume parameters must be positive".into()));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| r < 1) {
            return Err(Error::InvalidModelInput("ratio classes must be >= 1".into()));
        }
        Ok(())
    }
}

fn log_err(x: &[u64], target: f64) -> f64 {
    (x.iter().map(|&v| (v as f64).ln()).sum::<f64>() - target.ln()).abs()
}

/// Most-equal integer extents whose product lands within 5% of `target`:
/// enumerates nondecreasing tuples drawn from a small band around the
/// rank-th root, preferring the lowest max:min ratio and then the lowest
/// volume error. Near-equal integer products can sit more than 5% apart, so
/// the realized ratio is allowed to drift up to 2 before giving up.
fn equal_class_extents(rank: usize, target: f64) -> Result<Vec<u64>> {
    let e = (target.powf(1.0 / rank as f64).round().max(1.0)) as u64;
    let lo = e.saturating_sub(3).max(1);
    let hi = e + 3;
    let tol = 1.05f64.ln();

    fn visit(
        rank: usize,
        lo: u64,
        hi: u64,
        target: f64,
        tol: f64,
        prefix: &mut Vec<u64>,
        best: &mut Option<(f64, f64, Vec<u64>)>,
    ) {
        if prefix.len() == rank {
            let q = *prefix.last().unwrap() as f64 / prefix[0] as f64;
            if q > 2.0 {
                return;
            }
            let err = log_err(prefix, target);
            if err > tol {
                return;
            }
            if best.as_ref().map_or(true, |(bq, be, _)| (q, err) < (*bq, *be)) {
                *best = Some((q, err, prefix.clone()));
            }
            return;
        }
        let start = prefix.last().copied().unwrap_or(lo).max(lo);
        for v in start..=hi {
            prefix.push(v);
            visit(rank, lo, hi, target, tol, prefix, best);
            prefix.pop();
        }
    }

    let mut best = None;
    visit(rank, lo, hi, target, tol, &mut Vec::with_capacity(rank), &mut best);
    best.map(|(_, _, x)| x).ok_or_else(|| {
        Error::InvalidModelInput(format!(
            "cannot reach volume {target} within 5% for rank {rank}, ratio 1"
        ))
    })
}

/// Greedy volume fit for the spread classes: single ±1 extent moves, paired
/// moves when no single move improves, constrained to keep max:min within
/// 10% of the nominal ratio.
fn search_to_volume(x: &mut Vec<u64>, target: f64, ratio: f64) -> bool {
    let ratio_ok = |x: &[u64]| {
        let mx = *x.iter().max().unwrap() as f64;
        let mn = *x.iter().min().unwrap() as f64;
        mn >= 1.0 && mx / mn >= ratio / 1.1 && mx / mn <= ratio * 1.1
    };
    let tol = 1.05f64.ln();
    let rank = x.len();
    for _ in 0..1000 {
        let current = log_err(x, target);
        if current <= tol {
            return true;
        }
        let mut best: Option<(Vec<u64>, f64)> = None;
        let mut consider = |y: Vec<u64>, best: &mut Option<(Vec<u64>, f64)>| {
            if !ratio_ok(&y) {
                return;
            }
            let e = log_err(&y, target);
            if e < current && best.as_ref().map_or(true, |(_, b)| e < *b) {
                *best = Some((y, e));
            }
        };
        for i in 0..rank {
            for delta in [-1i64, 1] {
                if x[i] as i64 + delta < 1 {
                    continue;
                }
                let mut y = x.clone();
                y[i] = (y[i] as i64 + delta) as u64;
                consider(y, &mut best);
            }
        }
        if best.is_none() {
            for i in 0..rank {
                for j in 0..rank {
                    if i == j {
                        continue;
                    }
                    for (di, dj) in [(-1i64, 1i64), (1, -1), (-1, -1), (1, 1)] {
                        if x[i] as i64 + di < 1 || x[j] as i64 + dj < 1 {
                            continue;
                        }
                        let mut y = x.clone();
                        y[i] = (y[i] as i64 + di) as u64;
                        y[j] = (y[j] as i64 + dj) as u64;
                        consider(y, &mut best);
                    }
                }
            }
        }
        match best {
            Some((y, _)) => *x = y,
            None => return false,
        }
    }
    log_err(x, target) <= tol
}

/// Integer extents whose product lands within 5% of `target`, geometrically
/// spanning the requested max:min ratio. For spread classes the endpoints
/// start near `e` and `ratio * e` with interior extents log-uniform between
/// them; the realized ratio stays within 10% of nominal. The returned order
/// is shuffled so no dimension is systematically the small or large one.
fn gen_extents(
    rng: &mut ChaCha8Rng,
    rank: usize,
    ratio: u32,
    target: f64,
) -> Result<Vec<u64>> {
    let r = ratio as f64;
    let mut x = if ratio == 1 {
        equal_class_extents(rank, target)?
    } else {
        let mut u = vec![1.0f64; rank];
        u[rank - 1] = r;
        for v in u.iter_mut().take(rank - 1).skip(1) {
            *v = r.powf(rng.random::<f64>());
        }
        let prod: f64 = u.iter().product();
        let s = (target / prod).powf(1.0 / rank as f64);
        let small = (s.round().max(2.0)) as u64;
        let big = small * ratio as u64;
        let mut x: Vec<u64> =
            u.iter().map(|&v| ((v * s).round() as u64).clamp(small, big)).collect();
        x[0] = small;
        x[rank - 1] = big;
        if !search_to_volume(&mut x, target, r) {
            return Err(Error::InvalidModelInput(format!(
                "cannot reach volume {target} within 5% for rank {rank}, ratio {ratio}"
            )));
        }
        x
    };
    x.shuffle(rng);
    Ok(x)
}

fn random_perm(rng: &mut ChaCha8Rng, n: usize) -> Permutation {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Permutation::new(order).expect("shuffled identity is a bijection")
}

/// Randomized benchmark set: per rank and ratio class, draws a target volume
/// from a clamped normal, generates extents spanning the ratio, and pairs
/// them with a fresh random permutation. Deterministic in the spec seed.
pub fn gen_set1(spec: &BenchSpec) -> Result<Vec<Case>> {
    spec.validate()?;
    let normal = Normal::new(spec.mean_vol, spec.sd_vol)
        .map_err(|e| Error::InvalidModelInput(format!("volume distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cases = Vec::new();
    for rank in spec.ranks.0..=spec.ranks.1 {
        for &ratio in &spec.ratios {
            for _ in 0..spec.cases_per_rank {
                let target = normal.sample(&mut rng).max(rank as f64);
                let extents = gen_extents(&mut rng, rank, ratio, target)?;
                let layout = TensorLayout::new(extents, spec.elem)?;
                let perm = random_perm(&mut rng, rank);
                cases.push(Case {
                    id: cases.len(),
                    layout,
                    perm,
                    tag: format!("set1 rank{rank} ratio{ratio}"),
                });
            }
        }
    }
    Ok(cases)
}

/// Fixed-shape benchmark set: a rank-8 and a rank-12 tensor, each with four
/// large trailing dimensions divided by `scale` (floor, minimum 2), paired
/// with the trivial permutation, the reverse permutation, and `random_perms`
/// random ones.
pub fn gen_set2(
    scale: u64,
    random_perms: u32,
    elem: ElemSize,
    seed: u64,
) -> Result<Vec<Case>> {
    let scale = scale.max(1);
    let shapes: [(&str, Vec<u64>, usize); 2] = [
        ("rank8", vec![5, 3, 2, 4, 35, 33, 37, 40], 4),
        ("rank12", vec![2, 3, 4, 3, 2, 2, 3, 2, 20, 18, 22, 24], 4),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for (name, mut extents, large) in shapes {
        let n = extents.len();
        for d in extents.iter_mut().skip(n - large) {
            *d = (*d / scale).max(2);
        }
        let layout = TensorLayout::new(extents, elem)?;
        let push = |perm: Permutation, kind: &str, cases: &mut Vec<Case>| {
            cases.push(Case {
                id: cases.len(),
                layout: layout.clone(),
                perm,
                tag: format!("set2 {name} {kind}"),
            });
        };
        push(Permutation::identity(n), "trivial", &mut cases);
        push(Permutation::reversed(n), "reverse", &mut cases);
        for _ in 0..random_perms {
            push(random_perm(&mut rng, n), "random", &mut cases);
        }
    }
    Ok(cases)
}

/// Parses a case file: one case per line, `extents | permutation`, both
/// comma-separated, permutation labels 1-based. `#` starts a comment.
pub fn load_custom_cases(path: &Path, elem: ElemSize) -> Result<Vec<Case>> {
    let text = std::fs::read_to_string(path)?;
    parse_custom_cases(&text, elem)
        .map_err(|e| Error::InvalidModelInput(format!("{}: {e}", path.display())))
}

fn parse_custom_cases(text: &str, elem: ElemSize) -> std::result::Result<Vec<Case>, String> {
    let mut cases = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (dims, perm) = line
            .split_once('|')
            .ok_or_else(|| format!("line {lineno}: expected `extents | permutation`"))?;
        let parse_list = |s: &str, what: &str| -> std::result::Result<Vec<u64>, String> {
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<u64>()
                        .map_err(|e| format!("line {lineno}: bad {what} `{}`: {e}", t.trim()))
                })
                .collect()
        };
        let extents = parse_list(dims, "extent")?;
        let order = parse_list(perm, "permutation label")?;
        let layout = TensorLayout::new(extents, elem)
            .map_err(|e| format!("line {lineno}: {e}"))?;
        let perm = Permutation::from_one_based(&order)
            .map_err(|e| format!("line {lineno}: {e}"))?;
        if perm.len() != layout.rank() {
            return Err(format!(
                "line {lineno}: permutation rank {} does not match {} extents",
                perm.len(),
                layout.rank()
            ));
        }
        cases.push(Case {
            id: cases.len(),
            layout,
            perm,
            tag: format!("custom line{lineno}"),
        });
    }
    Ok(cases)
}

/// Inverse of [`load_custom_cases`]: one `extents | permutation` line per
/// case.
pub fn dump_custom_cases(cases: &[Case]) -> String {
    let mut out = String::new();
    for case in cases {
        let dims: Vec<String> = case.layout.extents().iter().map(u64::to_string).collect();
        let perm: Vec<String> = case.perm.to_one_based().iter().map(u64::to_string).collect();
        out.push_str(&format!("{} | {}\n", dims.join(","), perm.join(",")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set1_ratio1_rank2_is_square() {
        let mut spec = BenchSpec::new(7);
        spec.ranks = (2, 2);
        spec.ratios = vec![1];
        spec.cases_per_rank = 10;
        for case in gen_set1(&spec).unwrap() {
            let e = case.layout.extents();
            assert_eq!(e[0], e[1]);
        }
    }

    #[test]
    fn set1_hits_volume_and_ratio_windows() {
        let mut spec = BenchSpec::new(11);
        spec.cases_per_rank = 6;
        let cases = gen_set1(&spec).unwrap();
        assert_eq!(cases.len(), 6 * 6 * 3);
        for case in &cases {
            let vol = case.layout.volume() as f64;
            // Per-draw 5% fit is checked by the replay test below; here just
            // bound against the distribution envelope.
            assert!(vol >= 1.0 && vol < spec.mean_vol + 7.0 * spec.sd_vol);
            let mx = *case.layout.extents().iter().max().unwrap() as f64;
            let mn = *case.layout.extents().iter().min().unwrap() as f64;
            let q = mx / mn;
            let ratio: f64 = match case.tag.split("ratio").nth(1).unwrap() {
                "1" => 1.0,
                "5" => 5.0,
                "15" => 15.0,
                other => panic!("tag {other}"),
            };
            if ratio == 1.0 {
                assert!(q <= 2.0, "{q} in {case:?}");
            } else {
                assert!(q >= ratio / 1.1 && q <= ratio * 1.1, "{q} vs {ratio} in {case:?}");
            }
        }
    }

    #[test]
    fn set1_ratio15_window_tight() {
        let mut spec = BenchSpec::new(3);
        spec.ranks = (2, 6);
        spec.ratios = vec![15];
        spec.cases_per_rank = 8;
        for case in gen_set1(&spec).unwrap() {
            let mx = *case.layout.extents().iter().max().unwrap() as f64;
            let mn = *case.layout.extents().iter().min().unwrap() as f64;
            assert!(mx / mn >= 13.5 && mx / mn <= 16.5, "{case:?}");
        }
    }

    #[test]
    fn set1_volume_within_five_percent_of_its_draw() {
        // Re-derive the per-case target by replaying the generator's rng.
        let mut spec = BenchSpec::new(19);
        spec.ranks = (3, 7);
        spec.ratios = vec![5];
        spec.cases_per_rank = 10;
        let cases = gen_set1(&spec).unwrap();
        let normal = Normal::new(spec.mean_vol, spec.sd_vol).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for case in &cases {
            let rank = case.layout.rank();
            let target = normal.sample(&mut rng).max(rank as f64);
            let _ = gen_extents(&mut rng, rank, 5, target).unwrap();
            let _ = random_perm(&mut rng, rank);
            let vol = case.layout.volume() as f64;
            assert!(
                (vol / target - 1.0).abs() <= 0.05,
                "volume {vol} vs target {target}"
            );
        }
    }

    #[test]
    fn set1_same_seed_same_cases() {
        let spec = {
            let mut s = BenchSpec::new(42);
            s.cases_per_rank = 3;
            s
        };
        let a = gen_set1(&spec).unwrap();
        let b = gen_set1(&spec).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.layout, y.layout);
            assert_eq!(x.perm, y.perm);
        }
    }

    #[test]
    fn set2_scale1_volumes() {
        let cases = gen_set2(1, 2, ElemSize::B8, 5).unwrap();
        let rank8 = cases.iter().find(|c| c.tag.contains("rank8")).unwrap();
        assert_eq!(rank8.layout.volume(), 205_128_000);
        let rank12 = cases.iter().find(|c| c.tag.contains("rank12")).unwrap();
        assert_eq!(rank12.layout.volume(), 328_458_240);
        // Trivial and reverse permutations present for both shapes.
        assert_eq!(cases.iter().filter(|c| c.tag.ends_with("trivial")).count(), 2);
        assert_eq!(cases.iter().filter(|c| c.tag.ends_with("reverse")).count(), 2);
        assert!(cases.iter().find(|c| c.tag == "set2 rank8 trivial").unwrap().perm.is_identity());
    }

    #[test]
    fn set2_scale_floors_large_dims() {
        let cases = gen_set2(16, 0, ElemSize::B4, 5).unwrap();
        let rank8 = cases.iter().find(|c| c.tag.contains("rank8")).unwrap();
        assert_eq!(rank8.layout.extents(), &[5, 3, 2, 4, 2, 2, 2, 2]);
        let rank12 = cases.iter().find(|c| c.tag.contains("rank12")).unwrap();
        assert_eq!(&rank12.layout.extents()[8..], &[2, 2, 2, 2]);
    }

    #[test]
    fn custom_cases_parse_and_round_trip() {
        let text = "2,3,4 | 3,1,2\n# comment\n\n8,8 | 2,1  # swap\n";
        let cases = parse_custom_cases(text, ElemSize::B4).unwrap();
        assert_eq!(cases.len(), 2);
        assert_eq!(cases[0].layout.extents(), &[2, 3, 4]);
        assert_eq!(cases[0].perm.order(), &[2, 0, 1]);
        let dumped = dump_custom_cases(&cases);
        let again = parse_custom_cases(&dumped, ElemSize::B4).unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(again[1].layout.extents(), cases[1].layout.extents());
        assert_eq!(again[1].perm.order(), cases[1].perm.order());
    }

    #[test]
    fn custom_cases_report_line_numbers() {
        let bad_perm = "2,3 | 1,1\n";
        let err = parse_custom_cases(bad_perm, ElemSize::B4).unwrap_err();
        assert!(err.contains("line 1"), "{err}");
        let bad_rank = "2,3 | 1\n";
        let err = parse_custom_cases(bad_rank, ElemSize::B4).unwrap_err();
        assert!(err.contains("line 1"), "{err}");
        let bad_num = "2,x | 1,2\n";
        let err = parse_custom_cases(bad_num, ElemSize::B4).unwrap_err();
        assert!(err.contains("line 1"), "{err}");
    }
}
