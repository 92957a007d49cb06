//! Host-side plan execution.
//!
//! Worker threads stand in for thread blocks: each claims work units (tiles,
//! slices, or slice-chunk pairs) from an atomic counter and runs the
//! sequential equivalent of the per-warp loops, including the staging buffer
//! with its padded row for the tiled kind. The index math is shared with the
//! simulator through the same per-plan tables, so the executor touches
//! exactly the addresses the simulator counts.
//!
//! The scattered reference transpose reads the input linearly and writes
//! through the scatter map; every plan execution is verified against it in
//! the tests.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::index::{ElemSize, Permutation, PosTerm, PositionTerms, TensorLayout, LANES};
use crate::plan::{MinorSet, PlanTables, TransposePlan};

const L: u64 = LANES as u64;

/// Element types the executor can move: opaque 4/8-byte words plus the IEEE
/// types needed for accumulation.
pub trait Element:
    Copy + Send + Sync + PartialEq + std::fmt::Debug + Zero + 'static
{
    const SIZE: ElemSize;

    fn write_le(self, out: &mut [u8]);
    fn read_le(src: &[u8]) -> Self;

    /// Addition used by accumulate mode: IEEE for floats, wrapping for the
    /// opaque integer words.
    fn accumulate(self, other: Self) -> Self;

    /// Deterministic per-position fill used by tests, benchmarks, and the
    /// CLI's synthetic inputs.
    fn pattern(i: u64) -> Self;
}

fn scramble(i: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = i.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Element for u32 {
    const SIZE: ElemSize = ElemSize::B4;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        u32::from_le_bytes(src.try_into().unwrap())
    }

    fn accumulate(self, other: Self) -> Self {
        self.wrapping_add(other)
    }

    fn pattern(i: u64) -> Self {
        (scramble(i) >> 32) as u32
    }
}

impl Element for u64 {
    const SIZE: ElemSize = ElemSize::B8;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        u64::from_le_bytes(src.try_into().unwrap())
    }

    fn accumulate(self, other: Self) -> Self {
        self.wrapping_add(other)
    }

    fn pattern(i: u64) -> Self {
        scramble(i)
    }
}

impl Element for f32 {
    const SIZE: ElemSize = ElemSize::B4;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        f32::from_le_bytes(src.try_into().unwrap())
    }

    fn accumulate(self, other: Self) -> Self {
        self + other
    }

    fn pattern(i: u64) -> Self {
        // Small integers stay exact under accumulation.
        (scramble(i) % 2048) as f32 - 1024.0
    }
}

impl Element for f64 {
    const SIZE: ElemSize = ElemSize::B8;

    fn write_le(self, out: &mut [u8]) {
        out.copy_from_slice(&self.to_le_bytes());
    }

    fn read_le(src: &[u8]) -> Self {
        f64::from_le_bytes(src.try_into().unwrap())
    }

    fn accumulate(self, other: Self) -> Self {
        self + other
    }

    fn pattern(i: u64) -> Self {
        (scramble(i) % (1 << 24)) as f64 - (1 << 23) as f64
    }
}

/// Contiguous tensor storage tied to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer<E: Element> {
    layout: TensorLayout,
    data: Vec<E>,
}

impl<E: Element> TensorBuffer<E> {
    fn check_layout(layout: &TensorLayout) -> Result<()> {
        if E::SIZE != layout.elem() {
            return Err(Error::InvalidLayout(format!(
                "element type is {} bytes but the layout declares {}",
                E::SIZE,
                layout.elem()
            )));
        }
        Ok(())
    }

    pub fn zeroed(layout: TensorLayout) -> Result<Self> {
        Self::check_layout(&layout)?;
        let data = vec![E::zero(); layout.volume() as usize];
        Ok(TensorBuffer { layout, data })
    }

    pub fn from_vec(layout: TensorLayout, data: Vec<E>) -> Result<Self> {
        Self::check_layout(&layout)?;
        if data.len() as u64 != layout.volume() {
            return Err(Error::InvalidLayout(format!(
                "buffer holds {} elements, layout volume is {}",
                data.len(),
                layout.volume()
            )));
        }
        Ok(TensorBuffer { layout, data })
    }

    pub fn from_pattern(layout: TensorLayout) -> Result<Self> {
        Self::check_layout(&layout)?;
        let data = (0..layout.volume()).map(E::pattern).collect();
        Ok(TensorBuffer { layout, data })
    }

    pub fn layout(&self) -> &TensorLayout {
        &self.layout
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let es = self.layout.elem().bytes() as usize;
        let mut out = vec![0u8; self.data.len() * es];
        for (i, &v) in self.data.iter().enumerate() {
            v.write_le(&mut out[i * es..(i + 1) * es]);
        }
        out
    }

    pub fn from_le_bytes(layout: TensorLayout, bytes: &[u8]) -> Result<Self> {
        Self::check_layout(&layout)?;
        let es = layout.elem().bytes() as usize;
        if bytes.len() as u64 != layout.volume_bytes() {
            return Err(Error::InvalidLayout(format!(
                "file holds {} bytes, layout needs {}",
                bytes.len(),
                layout.volume_bytes()
            )));
        }
        let data = bytes.chunks_exact(es).map(E::read_le).collect();
        Ok(TensorBuffer { layout, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    Write,
    /// Adds into the (pre-initialized) output instead of overwriting it.
    Accumulate,
}

fn scatter_terms(layout: &TensorLayout, perm: &Permutation) -> PositionTerms {
    let in_strides = layout.input_strides();
    let out_strides = perm.output_strides(layout);
    PositionTerms::new(
        (0..layout.rank())
            .map(|i| PosTerm {
                div: in_strides[i],
                modulo: layout.extent(i),
                stride: out_strides[i],
            })
            .collect(),
    )
}

fn check_pair<E: Element>(
    input: &TensorBuffer<E>,
    perm: &Permutation,
    output: &TensorBuffer<E>,
) -> Result<()> {
    let expect = input.layout.permuted(perm)?;
    if output.layout != expect {
        return Err(Error::PlanMismatch(format!(
            "output layout {:?} does not match permuted input {:?}",
            output.layout.extents(),
            expect.extents()
        )));
    }
    Ok(())
}

/// Scattered reference transpose: one linear read pass, writes (or
/// accumulates) through the scatter map.
pub fn transpose_scatter<E: Element>(
    input: &TensorBuffer<E>,
    perm: &Permutation,
    mode: WriteMode,
    output: &mut TensorBuffer<E>,
) -> Result<()> {
    check_pair(input, perm, output)?;
    let terms = scatter_terms(&input.layout, perm);
    let out = output.data_mut();
    for (p, &v) in input.data.iter().enumerate() {
        let q = terms.eval(p as u64) as usize;
        match mode {
            WriteMode::Write => out[q] = v,
            WriteMode::Accumulate => out[q] = out[q].accumulate(v),
        }
    }
    Ok(())
}

/// [`transpose_scatter`] into a fresh zeroed output.
pub fn transpose_scatter_new<E: Element>(
    input: &TensorBuffer<E>,
    perm: &Permutation,
) -> Result<TensorBuffer<E>> {
    let mut out = TensorBuffer::zeroed(input.layout.permuted(perm)?)?;
    transpose_scatter(input, perm, WriteMode::Write, &mut out)?;
    Ok(out)
}

struct OutPtr<E>(*mut E, usize);

unsafe impl<E> Send for OutPtr<E> {}
unsafe impl<E> Sync for OutPtr<E> {}

impl<E: Element> OutPtr<E> {
    /// Callers guarantee disjoint indices across threads (plan bijection).
    #[inline]
    unsafe fn write(&self, idx: u64, v: E, mode: WriteMode) {
        debug_assert!((idx as usize) < self.1);
        let slot = self.0.add(idx as usize);
        match mode {
            WriteMode::Write => *slot = v,
            WriteMode::Accumulate => *slot = (*slot).accumulate(v),
        }
    }
}

struct Runner<'a, E: Element> {
    tables: &'a PlanTables,
    input: &'a [E],
    out: OutPtr<E>,
    mode: WriteMode,
    n_thread: u64,
    n_warp: u64,
    n_reg: u64,
}

impl<'a, E: Element> Runner<'a, E> {
    fn scratch_len(&self) -> usize {
        match self.tables {
            PlanTables::Tiled(_) => (L * (L + 1)) as usize,
            PlanTables::TiledCopy(_) => 0,
            PlanTables::Packed(t) => t.minor.vol() as usize,
            PlanTables::PackedSplit(t) => t.full.vol() as usize,
        }
    }

    fn run_unit(&self, unit: u64, scratch: &mut [E]) {
        match self.tables {
            PlanTables::Tiled(t) => {
                let ntx = t.d_x.div_ceil(L);
                let nty = t.d_y.div_ceil(L);
                let per_slice = ntx * nty;
                let b = unit / per_slice;
                let tile = unit % per_slice;
                let x0 = (tile % ntx) * L;
                let y0 = (tile / ntx) * L;
                let w = L.min(t.d_x - x0);
                let h = L.min(t.d_y - y0);
                let maj_in = t.major_in.eval(b);
                let maj_out = t.major_out.eval(b);
                for yo in 0..h {
                    let row = maj_in + x0 + (y0 + yo) * t.stride_in_y;
                    for xo in 0..w {
                        scratch[(xo + yo * (L + 1)) as usize] =
                            self.input[(row + xo) as usize];
                    }
                }
                for xo in 0..w {
                    let col = maj_out + y0 + (x0 + xo) * t.stride_out_x;
                    for yo in 0..h {
                        let v = scratch[(xo + yo * (L + 1)) as usize];
                        unsafe { self.out.write(col + yo, v, self.mode) };
                    }
                }
            }
            PlanTables::TiledCopy(t) => {
                let ntx = t.d_x.div_ceil(L);
                let tx = unit % ntx;
                let chunk = unit / ntx;
                let x0 = tx * L;
                let w = L.min(t.d_x - x0);
                let rows = L.min(t.vol_mbar - chunk * L);
                for row in 0..rows {
                    let b = chunk * L + row;
                    let src = t.major_in.eval(b) + x0;
                    let dst = t.major_out.eval(b) + x0;
                    for xo in 0..w {
                        let v = self.input[(src + xo) as usize];
                        unsafe { self.out.write(dst + xo, v, self.mode) };
                    }
                }
            }
            PlanTables::Packed(t) => {
                let maj_in = t.major_in.eval(unit);
                let maj_out = t.major_out.eval(unit);
                self.packed_volume(&t.minor, maj_in, maj_out, scratch);
            }
            PlanTables::PackedSplit(t) => {
                let b = unit / t.n_sp;
                let chunk = unit % t.n_sp;
                let minor = t.chunk_minor(chunk);
                let maj_in = t.major_in.eval(b) + chunk * t.chunk_extent * t.g_stride_in;
                let maj_out = t.major_out.eval(b) + chunk * t.chunk_extent * t.g_stride_out;
                self.packed_volume(minor, maj_in, maj_out, scratch);
            }
        }
    }

    /// Stage one packed volume and drain it in transposed order, walking k in
    /// the same warp-block order as the simulator.
    fn packed_volume(&self, minor: &MinorSet, maj_in: u64, maj_out: u64, scratch: &mut [E]) {
        let vol = minor.vol();
        for j in 0..self.n_reg {
            for w in 0..self.n_warp {
                let base = j * self.n_thread + w * L;
                if base >= vol {
                    continue;
                }
                for k in base..(base + L).min(vol) {
                    scratch[k as usize] = self.input[(maj_in + minor.minor_in[k as usize]) as usize];
                }
            }
        }
        for j in 0..self.n_reg {
            for w in 0..self.n_warp {
                let base = j * self.n_thread + w * L;
                if base >= vol {
                    continue;
                }
                for k in base..(base + L).min(vol) {
                    let v = scratch[minor.shared[k as usize] as usize];
                    unsafe {
                        self.out.write(maj_out + minor.minor_out[k as usize], v, self.mode)
                    };
                }
            }
        }
    }
}

/// Runs `plan` on `input` with `workers` threads. The result is bit-identical
/// to [`transpose_scatter`] and independent of the worker count; each output
/// position is written by exactly one unit.
pub fn transpose_execute<E: Element>(
    plan: &TransposePlan,
    input: &TensorBuffer<E>,
    mode: WriteMode,
    workers: usize,
    output: &mut TensorBuffer<E>,
) -> Result<()> {
    if plan.layout() != &input.layout {
        return Err(Error::PlanMismatch(format!(
            "plan was built for extents {:?}, input has {:?}",
            plan.layout().extents(),
            input.layout.extents()
        )));
    }
    check_pair(input, plan.perm(), output)?;
    let tables = PlanTables::new(plan)?;
    let units = plan.work_units();
    let workers = workers.max(1);
    let out_len = output.data.len();
    let runner = Runner {
        tables: &tables,
        input: &input.data,
        out: OutPtr(output.data.as_mut_ptr(), out_len),
        mode,
        n_thread: plan.n_thread() as u64,
        n_warp: plan.n_warp() as u64,
        n_reg: plan.n_reg() as u64,
    };
    let counter = AtomicU64::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let mut scratch = vec![E::zero(); runner.scratch_len()];
                loop {
                    let unit = counter.fetch_add(1, Ordering::Relaxed);
                    if unit >= units {
                        break;
                    }
                    runner.run_unit(unit, &mut scratch);
                }
            });
        }
    });
    Ok(())
}

/// [`transpose_execute`] into a fresh zeroed output.
pub fn transpose_execute_new<E: Element>(
    plan: &TransposePlan,
    input: &TensorBuffer<E>,
    workers: usize,
) -> Result<TensorBuffer<E>> {
    let mut out = TensorBuffer::zeroed(input.layout.permuted(plan.perm())?)?;
    transpose_execute(plan, input, WriteMode::Write, workers, &mut out)?;
    Ok(out)
}

/// Effective bandwidth of one timed execution: 2 bytes moved per element for
/// a plain write, 3 for accumulate (input read, output read, output write).
pub fn bandwidth_from_duration(
    volume: u64,
    elem: ElemSize,
    mode: WriteMode,
    seconds: f64,
) -> f64 {
    let factor = match mode {
        WriteMode::Write => 2.0,
        WriteMode::Accumulate => 3.0,
    };
    factor * volume as f64 * elem.bytes() as f64 / seconds
}

/// Median-of-repetitions host bandwidth for a plan, on synthetic data.
/// Informational only; wall time is not reproducible.
pub fn measure_bandwidth(
    plan: &TransposePlan,
    mode: WriteMode,
    repetitions: u32,
    workers: usize,
) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::InvalidModelInput("repetitions must be >= 1".into()));
    }
    fn run<E: Element>(
        plan: &TransposePlan,
        mode: WriteMode,
        repetitions: u32,
        workers: usize,
    ) -> Result<f64> {
        let input = TensorBuffer::<E>::from_pattern(plan.layout().clone())?;
        let mut output = TensorBuffer::<E>::zeroed(plan.layout().permuted(plan.perm())?)?;
        let mut times: Vec<Duration> = Vec::with_capacity(repetitions as usize);
        for _ in 0..repetitions {
            let start = Instant::now();
            transpose_execute(plan, &input, mode, workers, &mut output)?;
            times.push(start.elapsed());
        }
        times.sort_unstable();
        let median = times[times.len() / 2];
        Ok(bandwidth_from_duration(
            plan.layout().volume(),
            plan.layout().elem(),
            mode,
            median.as_secs_f64().max(1e-9),
        ))
    }
    match plan.layout().elem() {
        ElemSize::B4 => run::<u32>(plan, mode, repetitions, workers),
        ElemSize::B8 => run::<u64>(plan, mode, repetitions, workers),
    }
}
