//! Dense and sparse voxel lattices.
//!
//! All storage uses one canonical linearization: x-major, then y, then z,
//! then channel. Tile extraction copies values out, and accumulation walks
//! tiles in the order it is given, so results never depend on aliasing or
//! on how work was scheduled.

use crate::blend::BlendMask;
use crate::error::{Error, Result};

pub type Coord = [usize; 3];

const AXES: [char; 3] = ['x', 'y', 'z'];

#[inline]
pub fn voxel_count(dims: Coord) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Coord, c: Coord) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

#[inline]
pub fn coord_of(dims: Coord, index: usize) -> Coord {
    let z = index % dims[2];
    let y = (index / dims[2]) % dims[1];
    let x = index / (dims[1] * dims[2]);
    [x, y, z]
}

/// Iterates every coordinate of `dims` in canonical order.
pub fn coords(dims: Coord) -> impl Iterator<Item = Coord> {
    (0..voxel_count(dims)).map(move |i| coord_of(dims, i))
}

/// Fails unless a cube of side `size` at `origin` fits inside `dims`.
pub fn check_tile_bounds(dims: Coord, origin: Coord, size: usize) -> Result<()> {
    for axis in 0..3 {
        if origin[axis] + size > dims[axis] {
            return Err(Error::OutOfBounds {
                axis: AXES[axis],
                origin: origin[axis],
                size,
                dim: dims[axis],
            });
        }
    }
    Ok(())
}

/// Position of a global voxel relative to a tile origin.
///
/// Components may be negative or exceed the tile; such values mean the tile
/// does not cover the voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalCoord(pub [i64; 3]);

impl LocalCoord {
    /// Returns the in-tile coordinate when it lies in `{0..size-1}^3`.
    pub fn within(self, size: usize) -> Option<Coord> {
        let s = size as i64;
        if self.0.iter().all(|&d| (0..s).contains(&d)) {
            Some([self.0[0] as usize, self.0[1] as usize, self.0[2] as usize])
        } else {
            None
        }
    }

    pub fn is_covered(self, size: usize) -> bool {
        self.within(size).is_some()
    }
}

pub fn map_global_to_local(global: Coord, origin: Coord) -> LocalCoord {
    LocalCoord([
        global[0] as i64 - origin[0] as i64,
        global[1] as i64 - origin[1] as i64,
        global[2] as i64 - origin[2] as i64,
    ])
}

/// A dense `X x Y x Z x C` lattice of 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWorld {
    dims: Coord,
    channels: usize,
    data: Vec<f32>,
}

impl DenseWorld {
    pub fn zeros(dims: Coord, channels: usize) -> Self {
        Self::filled(dims, channels, 0.0)
    }

    pub fn filled(dims: Coord, channels: usize, value: f32) -> Self {
        assert!(dims.iter().all(|&d| d > 0) && channels > 0, "empty world");
        Self {
            dims,
            channels,
            data: vec![value; voxel_count(dims) * channels],
        }
    }

    pub fn from_data(dims: Coord, channels: usize, data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) || channels == 0 {
            return Err(Error::ShapeMismatch(format!(
                "world dims {dims:?} x {channels} channels must be positive"
            )));
        }
        let expected = voxel_count(dims) * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "world {dims:?} x {channels} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "non-finite value at voxel {:?}",
                coord_of(dims, i / channels)
            )));
        }
        Ok(Self { dims, channels, data })
    }

    /// Builds a world by evaluating `f(coord, channel)` at every entry.
    pub fn from_fn(dims: Coord, channels: usize, mut f: impl FnMut(Coord, usize) -> f32) -> Self {
        let mut w = Self::zeros(dims, channels);
        for (i, c) in coords(dims).enumerate() {
            for ch in 0..channels {
                w.data[i * channels + ch] = f(c, ch);
            }
        }
        w
    }

    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn voxel(&self, c: Coord) -> &[f32] {
        let i = linear_index(self.dims, c) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn voxel_mut(&mut self, c: Coord) -> &mut [f32] {
        let i = linear_index(self.dims, c) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn get(&self, c: Coord, channel: usize) -> f32 {
        self.voxel(c)[channel]
    }

    pub fn set(&mut self, c: Coord, channel: usize, value: f32) {
        self.voxel_mut(c)[channel] = value;
    }

    pub fn bitwise_eq(&self, other: &DenseWorld) -> bool {
        self.dims == other.dims
            && self.channels == other.channels
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute per-entry difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &DenseWorld) -> Option<f64> {
        if self.dims != other.dims || self.channels != other.channels {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Copies a cube of side `size` starting at `origin`.
    pub fn extract_tile(&self, origin: Coord, size: usize) -> Result<TileView> {
        check_tile_bounds(self.dims, origin, size)?;
        let c = self.channels;
        let mut values = Vec::with_capacity(size * size * size * c);
        for lx in 0..size {
            for ly in 0..size {
                let start = linear_index(self.dims, [origin[0] + lx, origin[1] + ly, origin[2]]) * c;
                values.extend_from_slice(&self.data[start..start + size * c]);
            }
        }
        Ok(TileView {
            origin,
            size,
            channels: c,
            values,
        })
    }

    /// Writes tile values back without blending (later writes win).
    pub fn write_tile(&mut self, origin: Coord, size: usize, values: &[f32]) -> Result<()> {
        check_tile_bounds(self.dims, origin, size)?;
        let c = self.channels;
        if values.len() != size * size * size * c {
            return Err(Error::ShapeMismatch(format!(
                "tile of size {size} with {c} channels needs {} values, got {}",
                size * size * size * c,
                values.len()
            )));
        }
        for lx in 0..size {
            for ly in 0..size {
                let start = linear_index(self.dims, [origin[0] + lx, origin[1] + ly, origin[2]]) * c;
                let src = (lx * size + ly) * size * c;
                self.data[start..start + size * c].copy_from_slice(&values[src..src + size * c]);
            }
        }
        Ok(())
    }
}

/// A value copy of one cubic tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TileView {
    pub origin: Coord,
    pub size: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl TileView {
    pub fn local_index(&self, l: Coord) -> usize {
        ((l[0] * self.size + l[1]) * self.size + l[2]) * self.channels
    }

    pub fn voxel(&self, l: Coord) -> &[f32] {
        let i = self.local_index(l);
        &self.values[i..i + self.channels]
    }
}

/// Numerator and denominator lattices of the weighted tile average.
#[derive(Debug, Clone)]
pub struct Accumulator {
    dims: Coord,
    channels: usize,
    num: Vec<f64>,
    den: Vec<f64>,
}

impl Accumulator {
    pub fn new(dims: Coord, channels: usize) -> Self {
        Self {
            dims,
            channels,
            num: vec![0.0; voxel_count(dims) * channels],
            den: vec![0.0; voxel_count(dims)],
        }
    }

    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    /// Adds `mask * values` into the numerator and `mask` into the denominator
    /// over the tile footprint at `origin`.
    pub fn scatter(&mut self, values: &[f32], mask: &BlendMask, origin: Coord) -> Result<()> {
        let s = mask.size();
        check_tile_bounds(self.dims, origin, s)?;
        let c = self.channels;
        if values.len() != s * s * s * c {
            return Err(Error::ShapeMismatch(format!(
                "mask of size {s} does not match tile with {} values ({c} channels)",
                values.len()
            )));
        }
        let weights = mask.weights();
        for lx in 0..s {
            for ly in 0..s {
                for lz in 0..s {
                    let l = (lx * s + ly) * s + lz;
                    let beta = weights[l];
                    let g = linear_index(self.dims, [origin[0] + lx, origin[1] + ly, origin[2] + lz]);
                    self.den[g] += beta;
                    for ch in 0..c {
                        self.num[g * c + ch] += beta * values[l * c + ch] as f64;
                    }
                }
            }
        }
        Ok(())
    }

    /// Divides numerator by denominator once per voxel.
    pub fn resolve(&self) -> Result<DenseWorld> {
        let c = self.channels;
        let mut data = vec![0.0f32; self.num.len()];
        for (g, &den) in self.den.iter().enumerate() {
            if den <= 0.0 {
                let [x, y, z] = coord_of(self.dims, g);
                return Err(Error::Uncovered { x, y, z });
            }
            for ch in 0..c {
                data[g * c + ch] = (self.num[g * c + ch] / den) as f32;
            }
        }
        DenseWorld::from_data(self.dims, c, data)
    }
}

/// One occupied voxel's coordinate in a sparse lattice.
pub type SparseCoord = [u32; 3];

/// Occupied voxels with a `C`-vector each, strictly sorted in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWorld {
    dims: Coord,
    channels: usize,
    coords: Vec<SparseCoord>,
    values: Vec<f32>,
}

fn as_coord(c: SparseCoord) -> Coord {
    [c[0] as usize, c[1] as usize, c[2] as usize]
}

impl SparseWorld {
    pub fn empty(dims: Coord, channels: usize) -> Self {
        Self {
            dims,
            channels,
            coords: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Entries must already be strictly sorted and in bounds.
    pub fn from_sorted(dims: Coord, channels: usize, coords: Vec<SparseCoord>, values: Vec<f32>) -> Result<Self> {
        if values.len() != coords.len() * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} sparse entries with {channels} channels need {} values, got {}",
                coords.len(),
                coords.len() * channels,
                values.len()
            )));
        }
        for (i, c) in coords.iter().enumerate() {
            if (0..3).any(|a| c[a] as usize >= dims[a]) {
                return Err(Error::Format(format!("sparse coordinate {c:?} outside {dims:?}")));
            }
            if i > 0 && coords[i - 1] >= *c {
                return Err(Error::Format(format!(
                    "sparse coordinates not strictly sorted at entry {i} ({:?} then {c:?})",
                    coords[i - 1]
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite sparse value".into()));
        }
        Ok(Self {
            dims,
            channels,
            coords,
            values,
        })
    }

    /// Sorts `(coordinate, vector)` pairs; duplicates are rejected.
    pub fn from_entries(dims: Coord, channels: usize, mut entries: Vec<(SparseCoord, Vec<f32>)>) -> Result<Self> {
        entries.sort_by_key(|a| a.0);
        let mut coords = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len() * channels);
        for (c, v) in entries {
            if v.len() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "entry {c:?} has {} channels, expected {channels}",
                    v.len()
                )));
            }
            coords.push(c);
            values.extend(v);
        }
        Self::from_sorted(dims, channels, coords, values)
    }

    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[SparseCoord] {
        &self.coords
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn coord(&self, i: usize) -> Coord {
        as_coord(self.coords[i])
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn bitwise_eq(&self, other: &SparseWorld) -> bool {
        self.dims == other.dims
            && self.channels == other.channels
            && self.coords == other.coords
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Values scattered into a dense world, `fill` everywhere else.
    pub fn densify(&self, fill: f32) -> DenseWorld {
        let mut w = DenseWorld::filled(self.dims, self.channels, fill);
        for (i, c) in self.coords.iter().enumerate() {
            w.voxel_mut(as_coord(*c)).copy_from_slice(self.entry(i));
        }
        w
    }

    /// Single-channel occupancy lattice: 1 where occupied, 0 elsewhere.
    pub fn occupancy(&self) -> DenseWorld {
        let mut w = DenseWorld::zeros(self.dims, 1);
        for c in &self.coords {
            w.set(as_coord(*c), 0, 1.0);
        }
        w
    }

    /// Collects values at voxels whose occupancy exceeds `threshold` (strictly).
    pub fn sparsify(values: &DenseWorld, occupancy: &DenseWorld, threshold: f32) -> Result<Self> {
        if values.dims() != occupancy.dims() || occupancy.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "values {:?} vs occupancy {:?} x {} channels",
                values.dims(),
                occupancy.dims(),
                occupancy.channels()
            )));
        }
        let dims = values.dims();
        let mut coords = Vec::new();
        let mut data = Vec::new();
        for (i, &occ) in occupancy.data().iter().enumerate() {
            if occ > threshold {
                let c = coord_of(dims, i);
                coords.push([c[0] as u32, c[1] as u32, c[2] as u32]);
                data.extend_from_slice(values.voxel(c));
            }
        }
        Ok(Self {
            dims,
            channels: values.channels(),
            coords,
            values: data,
        })
    }

    /// Occupied voxels inside the cube at `origin`, in canonical order.
    pub fn extract_tile(&self, origin: Coord, size: usize) -> Result<SparseTile> {
        check_tile_bounds(self.dims, origin, size)?;
        let lo = [origin[0] as u32, 0, 0];
        let hi = [(origin[0] + size) as u32, 0, 0];
        let start = self.coords.partition_point(|c| *c < lo);
        let end = self.coords.partition_point(|c| *c < hi);
        let mut tile = SparseTile {
            origin,
            size,
            channels: self.channels,
            local: Vec::new(),
            members: Vec::new(),
            values: Vec::new(),
        };
        for i in start..end {
            let g = self.coord(i);
            if let Some(l) = map_global_to_local(g, origin).within(size) {
                tile.local.push(l);
                tile.members.push(i);
                tile.values.extend_from_slice(self.entry(i));
            }
        }
        Ok(tile)
    }
}

/// Occupied voxels of one tile, with local coordinates and source entry indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTile {
    pub origin: Coord,
    pub size: usize,
    pub channels: usize,
    pub local: Vec<Coord>,
    pub members: Vec<usize>,
    pub values: Vec<f32>,
}

impl SparseTile {
    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    /// Dense `S^3 * C` block with unoccupied voxels set to `fill`.
    pub fn to_dense_block(&self, fill: f32) -> Vec<f32> {
        let s = self.size;
        let c = self.channels;
        let mut block = vec![fill; s * s * s * c];
        for (k, l) in self.local.iter().enumerate() {
            let i = ((l[0] * s + l[1]) * s + l[2]) * c;
            block[i..i + c].copy_from_slice(&self.values[k * c..(k + 1) * c]);
        }
        block
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn local_mapping_examples() {
        assert_eq!(map_global_to_local([5, 5, 5], [5, 5, 5]), LocalCoord([0, 0, 0]));
        assert_eq!(map_global_to_local([9, 3, 0], [8, 0, 0]), LocalCoord([1, 3, 0]));
        let off = map_global_to_local([2, 0, 0], [8, 0, 0]);
        assert_eq!(off, LocalCoord([-6, 0, 0]));
        assert!(!off.is_covered(8));
    }

    #[test]
    fn full_cover_tile_is_whole_world() {
        let w = DenseWorld::from_fn([16, 16, 16], 2, |c, ch| (c[0] * 7 + c[1] * 3 + c[2] + ch) as f32);
        let t = w.extract_tile([0, 0, 0], 16).unwrap();
        assert_eq!(t.values, w.data());
    }

    #[test]
    fn constant_world_tile() {
        let w = DenseWorld::filled([12, 10, 9], 3, 7.0);
        let t = w.extract_tile([2, 1, 0], 8).unwrap();
        assert!(t.values.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn marked_voxel_lands_at_mapped_local() {
        let mut w = DenseWorld::zeros([16, 8, 8], 1);
        w.set([9, 0, 0], 0, 1.0);
        let t = w.extract_tile([8, 0, 0], 8).unwrap();
        let l = map_global_to_local([9, 0, 0], [8, 0, 0]).within(8).unwrap();
        assert_eq!(l, [1, 0, 0]);
        assert_eq!(t.voxel(l), &[1.0]);
        assert_eq!(t.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn tile_is_a_copy() {
        let w = DenseWorld::filled([8, 8, 8], 1, 1.0);
        let mut t = w.extract_tile([0, 0, 0], 4).unwrap();
        t.values[0] = 99.0;
        assert_eq!(w.get([0, 0, 0], 0), 1.0);
    }

    #[test]
    fn out_of_bounds_names_axis() {
        let w = DenseWorld::zeros([16, 16, 8], 1);
        match w.extract_tile([0, 0, 4], 8) {
            Err(Error::OutOfBounds { axis, .. }) => assert_eq!(axis, 'z'),
            other => panic!("expected bounds error, got {other:?}"),
        }
    }

    #[test]
    fn scatter_single_and_double() {
        let mask = BlendMask::uniform(4, 0.25);
        let mut acc = Accumulator::new([8, 8, 8], 2);
        let vals = vec![3.0f32; 4 * 4 * 4 * 2];
        acc.scatter(&vals, &mask, [2, 2, 2]).unwrap();
        let g = linear_index([8, 8, 8], [3, 3, 3]);
        assert_eq!(acc.numerator()[g * 2], 0.75);
        assert_eq!(acc.denominator()[g], 0.25);
        assert_eq!(acc.denominator()[linear_index([8, 8, 8], [0, 0, 0])], 0.0);
        acc.scatter(&vals, &mask, [2, 2, 2]).unwrap();
        assert_eq!(acc.numerator()[g * 2 + 1], 1.5);
        assert_eq!(acc.denominator()[g], 0.5);
    }

    #[test]
    fn scatter_overlap_matches_brute_force() {
        let mask = BlendMask::cosine(4);
        let dims = [6, 4, 4];
        let mut acc = Accumulator::new(dims, 1);
        acc.scatter(&vec![1.0; 64], &mask, [0, 0, 0]).unwrap();
        acc.scatter(&vec![5.0; 64], &mask, [2, 0, 0]).unwrap();
        for c in coords(dims) {
            let mut num = 0.0;
            let mut den = 0.0;
            for (origin, v) in [([0, 0, 0], 1.0), ([2, 0, 0], 5.0)] {
                if let Some(l) = map_global_to_local(c, origin).within(4) {
                    let b = crate::blend::cosine_weight(LocalCoord([l[0] as i64, l[1] as i64, l[2] as i64]), 4);
                    num += b * v;
                    den += b;
                }
            }
            let g = linear_index(dims, c);
            assert!((acc.numerator()[g] - num).abs() < 1e-12);
            assert!((acc.denominator()[g] - den).abs() < 1e-12);
        }
    }

    #[test]
    fn scatter_rejects_mask_mismatch() {
        let mut acc = Accumulator::new([8, 8, 8], 1);
        let err = acc.scatter(&[0.0; 27], &BlendMask::cosine(4), [0, 0, 0]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn resolve_reports_uncovered() {
        let mut acc = Accumulator::new([8, 4, 4], 1);
        acc.scatter(&vec![1.0; 64], &BlendMask::cosine(4), [0, 0, 0]).unwrap();
        assert!(matches!(acc.resolve(), Err(Error::Uncovered { x: 4, y: 0, z: 0 })));
    }

    #[test]
    fn sparse_tile_examples() {
        let dims = [8, 8, 8];
        let empty = SparseWorld::empty(dims, 1);
        assert!(empty.extract_tile([0, 0, 0], 4).unwrap().is_empty());

        let full = SparseWorld::sparsify(&DenseWorld::zeros(dims, 1), &DenseWorld::filled(dims, 1, 1.0), 0.5).unwrap();
        assert_eq!(full.extract_tile([4, 0, 4], 4).unwrap().len(), 64);

        // plane z = 6 against a tile spanning z in 4..8
        let plane = SparseWorld::sparsify(
            &DenseWorld::zeros(dims, 1),
            &DenseWorld::from_fn(dims, 1, |c, _| if c[2] == 6 { 1.0 } else { 0.0 }),
            0.5,
        )
        .unwrap();
        let t = plane.extract_tile([2, 4, 4], 4).unwrap();
        let brute = coords(dims)
            .filter(|c| c[2] == 6 && map_global_to_local(*c, [2, 4, 4]).is_covered(4))
            .count();
        assert_eq!(t.len(), brute);
        assert_eq!(t.len(), 16);
        assert!(t.local.iter().all(|l| l[2] == 2));
        assert!(t.members.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sparse_rejects_duplicates() {
        let r = SparseWorld::from_entries([4, 4, 4], 1, vec![([1, 1, 1], vec![0.0]), ([1, 1, 1], vec![1.0])]);
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn local_plus_origin_is_global(g in prop::array::uniform3(0usize..1000), o in prop::array::uniform3(0usize..1000)) {
            let l = map_global_to_local(g, o);
            for a in 0..3 {
                prop_assert_eq!(l.0[a] + o[a] as i64, g[a] as i64);
            }
        }

        #[test]
        fn extract_then_unit_scatter_reproduces(
            ox in 0usize..5, oy in 0usize..5, oz in 0usize..5, seed in any::<u64>()
        ) {
            let dims = [9, 9, 9];
            let noise = crate::noise::NoiseSource::new(seed, 0);
            let w = DenseWorld::from_fn(dims, 2, |c, ch| noise.normal(c, ch));
            let tile = w.extract_tile([ox, oy, oz], 4).unwrap();
            let mut acc = Accumulator::new(dims, 2);
            acc.scatter(&tile.values, &BlendMask::uniform(4, 1.0), [ox, oy, oz]).unwrap();
            for l in coords([4, 4, 4]) {
                let g = [ox + l[0], oy + l[1], oz + l[2]];
                let gi = linear_index(dims, g);
                for ch in 0..2 {
                    prop_assert_eq!((acc.numerator()[gi * 2 + ch] as f32).to_bits(), w.get(g, ch).to_bits());
                }
            }
        }

        #[test]
        fn densify_sparsify_round_trip(
            occupied in prop::collection::btree_set((0u32..6, 0u32..5, 0u32..4), 0..40),
            seed in any::<u64>()
        ) {
            let noise = crate::noise::NoiseSource::new(seed, 3);
            let entries: Vec<_> = occupied
                .iter()
                .map(|&(x, y, z)| ([x, y, z], vec![noise.normal([x as usize, y as usize, z as usize], 0), 2.5]))
                .collect();
            let s = SparseWorld::from_entries([6, 5, 4], 2, entries).unwrap();
            let back = SparseWorld::sparsify(&s.densify(0.0), &s.occupancy(), 0.5).unwrap();
            prop_assert!(back.bitwise_eq(&s));
        }
    }
}
