//! Integer index arithmetic for multidimensional permutations.
//!
//! A rank-n tensor stores element `(x_0, .., x_{n-1})` at the linear position
//! `sum_i x_i * stride(i)`, where the stride of a dimension under an ordering
//! is the product of the extents of all dimensions preceding it in that
//! ordering (its *cumulative volume*). Everything else in this crate reduces
//! to sums of `((x / c) % d) * ct` terms built from cumulative volumes:
//! the input-to-output scatter map, the per-slice major positions, and the
//! within-slice minor and staging-buffer positions.
//!
//! Dimension labels are 0-based `usize` throughout the library. User-facing
//! layers (CLI case files, plan dumps) use the conventional 1-based labels;
//! [`Permutation::from_one_based`] and [`Permutation::to_one_based`] are the
//! single conversion boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lanes per warp; also the tile edge used by the tiled plans.
pub const LANES: usize = 32;

/// Bytes per tensor element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemSize {
    B4,
    B8,
}

impl ElemSize {
    pub fn bytes(self) -> u64 {
        match self {
            ElemSize::B4 => 4,
            ElemSize::B8 => 8,
        }
    }

    pub fn from_bytes(bytes: u64) -> Result<Self> {
        match bytes {
            4 => Ok(ElemSize::B4),
            8 => Ok(ElemSize::B8),
            other => Err(Error::InvalidLayout(format!(
                "element size must be 4 or 8 bytes, got {other}"
            ))),
        }
    }
}

impl std::fmt::Display for ElemSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.bytes())
    }
}

/// Shape of a dense tensor: per-dimension extents plus the element size.
/// Dimension 0 is the stride-1 dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorLayout {
    extents: Vec<u64>,
    elem: ElemSize,
    volume: u64,
}

impl TensorLayout {
    /// Validates rank >= 1, every extent >= 1, and that both the element
    /// count and the byte size fit in 64 bits.
    pub fn new(extents: Vec<u64>, elem: ElemSize) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidLayout("rank must be at least 1".into()));
        }
        if let Some(&bad) = extents.iter().find(|&&d| d == 0) {
            return Err(Error::InvalidLayout(format!("extent {bad} must be >= 1")));
        }
        let mut volume: u64 = 1;
        for &d in &extents {
            volume = volume.checked_mul(d).ok_or(Error::VolumeOverflow)?;
        }
        // Byte positions must be addressable too.
        volume.checked_mul(elem.bytes()).ok_or(Error::VolumeOverflow)?;
        Ok(Self { extents, elem, volume })
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[u64] {
        &self.extents
    }

    pub fn extent(&self, dim: usize) -> u64 {
        self.extents[dim]
    }

    pub fn elem(&self) -> ElemSize {
        self.elem
    }

    pub fn volume(&self) -> u64 {
        self.volume
    }

    pub fn volume_bytes(&self) -> u64 {
        self.volume * self.elem.bytes()
    }

    /// Stride of `dim` in the input ordering, `c(dim, I)`.
    pub fn input_stride(&self, dim: usize) -> u64 {
        self.extents[..dim].iter().product()
    }

    /// All input strides, indexed by dimension label.
    pub fn input_strides(&self) -> Vec<u64> {
        let mut strides = Vec::with_capacity(self.rank());
        let mut acc = 1u64;
        for &d in &self.extents {
            strides.push(acc);
            acc *= d;
        }
        strides
    }

    /// Layout of the output tensor under `perm`: output dimension `j` has the
    /// extent of input dimension `w_j`.
    pub fn permuted(&self, perm: &Permutation) -> Result<TensorLayout> {
        if perm.len() != self.rank() {
            return Err(Error::InvalidPermutation(format!(
                "permutation rank {} does not match layout rank {}",
                perm.len(),
                self.rank()
            )));
        }
        let extents = perm.order().iter().map(|&w| self.extents[w]).collect();
        TensorLayout::new(extents, self.elem)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim >= self.rank() {
            return Err(Error::LabelOutOfRange { label: dim, rank: self.rank() });
        }
        Ok(())
    }
}

/// Output ordering of the dimensions: `order[j]` is the input dimension that
/// becomes output dimension `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    /// Validates that `order` is a bijection on `0..n`.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 {
            return Err(Error::InvalidPermutation("empty permutation".into()));
        }
        let mut seen = vec![false; n];
        for &w in &order {
            if w >= n {
                return Err(Error::InvalidPermutation(format!(
                    "label {w} out of range for rank {n}"
                )));
            }
            if seen[w] {
                return Err(Error::InvalidPermutation(format!("label {w} repeats")));
            }
            seen[w] = true;
        }
        Ok(Self { order })
    }

    /// Conversion from the external 1-based convention.
    pub fn from_one_based(order: &[u64]) -> Result<Self> {
        let zero_based = order
            .iter()
            .map(|&w| {
                if w == 0 {
                    Err(Error::InvalidPermutation("labels are 1-based, got 0".into()))
                } else {
                    Ok((w - 1) as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Permutation::new(zero_based)
    }

    pub fn to_one_based(&self) -> Vec<u64> {
        self.order.iter().map(|&w| w as u64 + 1).collect()
    }

    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect() }
    }

    pub fn reversed(n: usize) -> Self {
        Self { order: (0..n).rev().collect() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(j, &w)| j == w)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.order.len()];
        for (j, &w) in self.order.iter().enumerate() {
            inv[w] = j;
        }
        Permutation { order: inv }
    }

    /// Position of input dimension `dim` in the output ordering.
    pub fn output_position(&self, dim: usize) -> Result<usize> {
        self.order
            .iter()
            .position(|&w| w == dim)
            .ok_or(Error::LabelNotInOrdering { label: dim })
    }

    /// Stride of input dimension `dim` in the output tensor, `c(dim, O)`.
    pub fn output_stride(&self, dim: usize, layout: &TensorLayout) -> Result<u64> {
        let pos = self.output_position(dim)?;
        Ok(self.order[..pos].iter().map(|&w| layout.extent(w)).product())
    }

    /// All output strides, indexed by input dimension label.
    pub fn output_strides(&self, layout: &TensorLayout) -> Vec<u64> {
        let mut strides = vec![0u64; self.order.len()];
        let mut acc = 1u64;
        for &w in &self.order {
            strides[w] = acc;
            acc *= layout.extent(w);
        }
        strides
    }
}

/// An ordered set of dimensions treated as one composite index. Each member
/// carries its extent; the volume of an empty multi-index is 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    dims: Vec<(usize, u64)>,
}

impl MultiIndex {
    pub fn new(dims: Vec<(usize, u64)>) -> Result<Self> {
        for (i, &(label, extent)) in dims.iter().enumerate() {
            if extent == 0 {
                return Err(Error::InvalidMultiIndex(format!(
                    "extent of dimension {label} must be >= 1"
                )));
            }
            if dims[..i].iter().any(|&(l, _)| l == label) {
                return Err(Error::InvalidMultiIndex(format!("label {label} repeats")));
            }
        }
        Ok(Self { dims })
    }

    pub fn from_labels(labels: &[usize], layout: &TensorLayout) -> Result<Self> {
        let dims = labels
            .iter()
            .map(|&l| {
                layout.check_dim(l)?;
                Ok((l, layout.extent(l)))
            })
            .collect::<Result<Vec<_>>>()?;
        MultiIndex::new(dims)
    }

    pub fn dims(&self) -> &[(usize, u64)] {
        &self.dims
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.dims.iter().map(|&(l, _)| l)
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.dims.iter().any(|&(l, _)| l == label)
    }

    pub fn volume(&self) -> u64 {
        self.dims.iter().map(|&(_, d)| d).product()
    }

    /// Cumulative volume of `label` within this ordering: the product of the
    /// extents of all preceding members.
    pub fn cum_volume(&self, label: usize) -> Result<u64> {
        let pos = self
            .dims
            .iter()
            .position(|&(l, _)| l == label)
            .ok_or(Error::LabelNotInOrdering { label })?;
        Ok(self.dims[..pos].iter().map(|&(_, d)| d).product())
    }

    /// The same members reordered by ascending label (input order).
    pub fn sorted_by_label(&self) -> MultiIndex {
        let mut dims = self.dims.clone();
        dims.sort_by_key(|&(l, _)| l);
        MultiIndex { dims }
    }

    /// Per-member coordinates of linear index `x` under this ordering.
    pub fn decompose(&self, x: u64) -> Vec<(usize, u64)> {
        let mut out = Vec::with_capacity(self.dims.len());
        let mut rest = x;
        for &(label, extent) in &self.dims {
            out.push((label, rest % extent));
            rest /= extent;
        }
        out
    }
}

/// Cumulative volume `c(z, ordering)`: 1 if `z` is first, otherwise the
/// product of the extents of all dimensions preceding `z` in `ordering`.
pub fn cumulative_volume(z: usize, ordering: &[usize], layout: &TensorLayout) -> Result<u64> {
    layout.check_dim(z)?;
    let pos = ordering
        .iter()
        .position(|&w| w == z)
        .ok_or(Error::LabelNotInOrdering { label: z })?;
    let mut acc = 1u64;
    for &w in &ordering[..pos] {
        layout.check_dim(w)?;
        acc *= layout.extent(w);
    }
    Ok(acc)
}

/// Linear position of the element with coordinates `coords` (indexed by
/// dimension label) under `ordering`. Inverse of [`coords_from_position`].
pub fn scalar_position(coords: &[u64], ordering: &[usize], layout: &TensorLayout) -> Result<u64> {
    if coords.len() != layout.rank() || ordering.len() != layout.rank() {
        return Err(Error::InvalidLayout(format!(
            "expected {} coordinates and ordering labels",
            layout.rank()
        )));
    }
    for (dim, &x) in coords.iter().enumerate() {
        if x >= layout.extent(dim) {
            return Err(Error::CoordOutOfRange { dim, coord: x, extent: layout.extent(dim) });
        }
    }
    let mut pos = 0u64;
    let mut acc = 1u64;
    for &w in ordering {
        layout.check_dim(w)?;
        pos += coords[w] * acc;
        acc *= layout.extent(w);
    }
    Ok(pos)
}

/// Coordinates (indexed by dimension label) of linear position `p` under
/// `ordering`: `x_i = (p / c(w_i, ordering)) % d(w_i)`.
pub fn coords_from_position(p: u64, ordering: &[usize], layout: &TensorLayout) -> Result<Vec<u64>> {
    if p >= layout.volume() {
        return Err(Error::PositionOutOfRange { pos: p, vol: layout.volume() });
    }
    if ordering.len() != layout.rank() {
        return Err(Error::InvalidLayout(format!(
            "expected {} ordering labels",
            layout.rank()
        )));
    }
    let mut coords = vec![0u64; layout.rank()];
    let mut rest = p;
    for &w in ordering {
        layout.check_dim(w)?;
        coords[w] = rest % layout.extent(w);
        rest /= layout.extent(w);
    }
    Ok(coords)
}

/// Output-tensor position of the element stored at input position `p_in`:
/// the coordinates are read off with input strides and re-linearized with
/// output strides.
pub fn transpose_position(p_in: u64, perm: &Permutation, layout: &TensorLayout) -> Result<u64> {
    if p_in >= layout.volume() {
        return Err(Error::PositionOutOfRange { pos: p_in, vol: layout.volume() });
    }
    if perm.len() != layout.rank() {
        return Err(Error::InvalidPermutation(format!(
            "permutation rank {} does not match layout rank {}",
            perm.len(),
            layout.rank()
        )));
    }
    let mut pos = 0u64;
    let mut out_stride = 1u64;
    for &w in perm.order() {
        let coord = (p_in / layout.input_stride(w)) % layout.extent(w);
        pos += coord * out_stride;
        out_stride *= layout.extent(w);
    }
    Ok(pos)
}

fn check_slice_index(b: u64, vol: u64) -> Result<()> {
    if b >= vol {
        return Err(Error::PositionOutOfRange { pos: b, vol });
    }
    Ok(())
}

/// Major (per-slice) read position in the input tensor. `mbar_in` must list
/// the complement dimensions in input order (ascending labels); `b` indexes
/// its volume.
pub fn p_major_in(b: u64, mbar_in: &MultiIndex, layout: &TensorLayout) -> Result<u64> {
    check_slice_index(b, mbar_in.volume())?;
    let mut pos = 0u64;
    for (label, coord) in mbar_in.decompose(b) {
        layout.check_dim(label)?;
        pos += coord * layout.input_stride(label);
    }
    Ok(pos)
}

/// Major (per-slice) write position in the output tensor for the same slice
/// index `b` used by [`p_major_in`].
///
/// Coordinates are extracted from `b` with the ascending-label decomposition
/// (the one `p_major_in` uses) so that a given `b` denotes the same logical
/// slice on the read and write sides; only the strides come from the output
/// ordering.
pub fn p_major_out(
    b: u64,
    mbar_out: &MultiIndex,
    layout: &TensorLayout,
    perm: &Permutation,
) -> Result<u64> {
    check_slice_index(b, mbar_out.volume())?;
    let mut pos = 0u64;
    for (label, coord) in mbar_out.sorted_by_label().decompose(b) {
        layout.check_dim(label)?;
        pos += coord * perm.output_stride(label, layout)?;
    }
    Ok(pos)
}

/// Minor (within-slice) read position in the input tensor; `k` indexes the
/// staged volume in input order.
pub fn p_minor_in(k: u64, mmk_in: &MultiIndex, layout: &TensorLayout) -> Result<u64> {
    check_slice_index(k, mmk_in.volume())?;
    let mut pos = 0u64;
    for (label, coord) in mmk_in.decompose(k) {
        layout.check_dim(label)?;
        pos += coord * layout.input_stride(label);
    }
    Ok(pos)
}

/// Minor (within-slice) write position in the output tensor; `k` indexes the
/// staged volume in output order.
pub fn p_minor_out(
    k: u64,
    mmk_out: &MultiIndex,
    layout: &TensorLayout,
    perm: &Permutation,
) -> Result<u64> {
    check_slice_index(k, mmk_out.volume())?;
    let mut pos = 0u64;
    for (label, coord) in mmk_out.decompose(k) {
        layout.check_dim(label)?;
        pos += coord * perm.output_stride(label, layout)?;
    }
    Ok(pos)
}

/// Staging-buffer read position: `k` is decomposed in output order and
/// re-linearized with the input-order cumulative volumes of the staged
/// dimensions, so the write phase pulls each element from where the read
/// phase parked it.
pub fn p_shared(k: u64, mmk_out: &MultiIndex, mmk_in: &MultiIndex) -> Result<u64> {
    check_slice_index(k, mmk_out.volume())?;
    if mmk_in.len() != mmk_out.len() || mmk_out.labels().any(|l| !mmk_in.contains(l)) {
        return Err(Error::InvalidMultiIndex(
            "staging orderings must contain the same labels".into(),
        ));
    }
    let mut pos = 0u64;
    for (label, coord) in mmk_out.decompose(k) {
        pos += coord * mmk_in.cum_volume(label)?;
    }
    Ok(pos)
}

/// One `((x / div) % modulo) * stride` term of a position sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PosTerm {
    pub div: u64,
    pub modulo: u64,
    pub stride: u64,
}

/// A precomputed position sum, evaluated as `sum_i ((x / c_i) % d_i) * ct_i`.
/// This is the hot-path form of the position functions above; plans build
/// these tables once and both the executor and the simulator evaluate them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionTerms {
    terms: Vec<PosTerm>,
}

impl PositionTerms {
    pub fn new(terms: Vec<PosTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[PosTerm] {
        &self.terms
    }

    pub fn major_in(mbar_in: &MultiIndex, layout: &TensorLayout) -> Self {
        let mut acc = 1u64;
        let terms = mbar_in
            .dims()
            .iter()
            .map(|&(label, extent)| {
                let t = PosTerm { div: acc, modulo: extent, stride: layout.input_stride(label) };
                acc *= extent;
                t
            })
            .collect();
        Self { terms }
    }

    pub fn major_out(mbar_out: &MultiIndex, layout: &TensorLayout, perm: &Permutation) -> Self {
        let out_strides = perm.output_strides(layout);
        let mut acc = 1u64;
        let terms = mbar_out
            .sorted_by_label()
            .dims()
            .iter()
            .map(|&(label, extent)| {
                let t = PosTerm { div: acc, modulo: extent, stride: out_strides[label] };
                acc *= extent;
                t
            })
            .collect();
        Self { terms }
    }

    pub fn minor_in(mmk_in: &MultiIndex, layout: &TensorLayout) -> Self {
        Self::major_in(mmk_in, layout)
    }

    pub fn minor_out(mmk_out: &MultiIndex, layout: &TensorLayout, perm: &Permutation) -> Self {
        let out_strides = perm.output_strides(layout);
        let mut acc = 1u64;
        let terms = mmk_out
            .dims()
            .iter()
            .map(|&(label, extent)| {
                let t = PosTerm { div: acc, modulo: extent, stride: out_strides[label] };
                acc *= extent;
                t
            })
            .collect();
        Self { terms }
    }

    pub fn shared(mmk_out: &MultiIndex, mmk_in: &MultiIndex) -> Result<Self> {
        let mut acc = 1u64;
        let terms = mmk_out
            .dims()
            .iter()
            .map(|&(label, extent)| {
                let t = PosTerm { div: acc, modulo: extent, stride: mmk_in.cum_volume(label)? };
                acc *= extent;
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    pub fn eval(&self, x: u64) -> u64 {
        self.terms
            .iter()
            .map(|t| ((x / t.div) % t.modulo) * t.stride)
            .sum()
    }
}

/// Result of the lane-parallel position computation: the reduced sum as seen
/// by every lane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneVector {
    lanes: Vec<u64>,
}

impl LaneVector {
    pub fn lanes(&self) -> &[u64] {
        &self.lanes
    }

    /// The reduced value. The butterfly reduction leaves the same sum on
    /// every lane; this asserts that and returns it.
    pub fn value(&self) -> u64 {
        debug_assert!(self.lanes.windows(2).all(|w| w[0] == w[1]));
        self.lanes[0]
    }
}

/// Warp-style evaluation of a position sum: lane `i < h` computes the term
/// `((b / c[i]) % d[i]) * ct[i]`, lanes `>= h` contribute nothing, and an
/// XOR-butterfly reduction leaves the total on every lane.
///
/// Functionally equal to [`sequential_position`]; the lane vector form exists
/// so schedules that depend on the result being replicated across the warp
/// can assert exactly that.
pub fn lane_parallel_position(
    b: u64,
    c: &[u64],
    d: &[u64],
    ct: &[u64],
    h: usize,
    lane_count: usize,
) -> Result<LaneVector> {
    if h > lane_count {
        return Err(Error::TooManyLaneTerms { terms: h, lanes: lane_count });
    }
    if !lane_count.is_power_of_two() {
        return Err(Error::InvalidModelInput(format!(
            "lane count {lane_count} must be a power of two"
        )));
    }
    if c.len() < h || d.len() < h || ct.len() < h {
        return Err(Error::InvalidModelInput(format!(
            "lane arrays shorter than term count {h}"
        )));
    }
    let mut r: Vec<u64> = (0..lane_count)
        .map(|lane| {
            if lane < h {
                ((b / c[lane]) % d[lane]) * ct[lane]
            } else {
                0
            }
        })
        .collect();
    let mut step = lane_count / 2;
    while step >= 1 {
        let prev = r.clone();
        for lane in 0..lane_count {
            r[lane] = prev[lane] + prev[lane ^ step];
        }
        step /= 2;
    }
    Ok(LaneVector { lanes: r })
}

/// Straight-line reference for [`lane_parallel_position`].
pub fn sequential_position(b: u64, c: &[u64], d: &[u64], ct: &[u64], h: usize) -> u64 {
    (0..h).map(|i| ((b / c[i]) % d[i]) * ct[i]).sum()
}
