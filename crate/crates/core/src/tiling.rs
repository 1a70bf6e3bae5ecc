//! Overlapping cubic tile layouts.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{check_tile_bounds, coord_of, linear_index, voxel_count, Coord};

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Origins along one axis: `0, s, 2s, ...` with the last one clamped to `dim - size`.
pub fn axis_origins(dim: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut o = 0;
    while o + size < dim {
        o = (o + stride).min(dim - size);
        out.push(o);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLayout {
    dims: Coord,
    tile_size: usize,
    stride: usize,
    origins: Vec<Coord>,
}

fn check_sizes(dims: Coord, size: usize, stride: usize) -> Result<()> {
    if stride == 0 || stride > size {
        return Err(Error::InvalidStride { stride, size });
    }
    for a in 0..3 {
        if size > dims[a] {
            return Err(Error::WorldSmallerThanTile {
                axis: AXES[a],
                size,
                dim: dims[a],
            });
        }
    }
    Ok(())
}

impl TileLayout {
    /// Plans tiles of side `size` every `stride` voxels, covering the whole world.
    pub fn plan(dims: Coord, size: usize, stride: usize) -> Result<Self> {
        check_sizes(dims, size, stride)?;
        let [xs, ys, zs] = [0, 1, 2].map(|a| axis_origins(dims[a], size, stride));
        let mut origins = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    origins.push([x, y, z]);
                }
            }
        }
        Ok(Self {
            dims,
            tile_size: size,
            stride,
            origins,
        })
    }

    /// Non-overlapping layout for deterministic decoders (`stride == size`).
    ///
    /// When a dimension is not a multiple of `size` the last tile is clamped
    /// and overlaps its neighbour; writeback resolves it as "later tile wins".
    pub fn decode(dims: Coord, size: usize) -> Result<Self> {
        Self::plan(dims, size, size)
    }

    /// Explicit origins; bounds and ordering are checked but coverage is not.
    pub fn from_origins(dims: Coord, size: usize, stride: usize, origins: Vec<Coord>) -> Result<Self> {
        check_sizes(dims, size, stride)?;
        for (i, o) in origins.iter().enumerate() {
            check_tile_bounds(dims, *o, size)?;
            if i > 0 && origins[i - 1] >= *o {
                return Err(Error::InvalidLayout(format!(
                    "origins not strictly increasing at {i}: {:?} then {o:?}",
                    origins[i - 1]
                )));
            }
        }
        Ok(Self {
            dims,
            tile_size: size,
            stride,
            origins,
        })
    }

    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn origins(&self) -> &[Coord] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Distinct origin values per axis.
    pub fn axis_values(&self, axis: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.origins.iter().map(|o| o[axis]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn coverage(&self) -> CoverageReport {
        let mut counts = vec![0u32; voxel_count(self.dims)];
        let s = self.tile_size;
        for o in &self.origins {
            for x in o[0]..o[0] + s {
                for y in o[1]..o[1] + s {
                    let base = linear_index(self.dims, [x, y, o[2]]);
                    for c in &mut counts[base..base + s] {
                        *c += 1;
                    }
                }
            }
        }
        CoverageReport::from_counts(self.dims, counts)
    }
}

impl fmt::Display for TileLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dims {}x{}x{}  tile {}  stride {}  tiles {}",
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.tile_size,
            self.stride,
            self.origins.len()
        )?;
        for (a, axis) in AXES.iter().enumerate() {
            writeln!(f, "  {}-origins {:?}", axis, self.axis_values(a))?;
        }
        for (i, o) in self.origins.iter().enumerate() {
            writeln!(f, "  tile {i:4}  origin ({}, {}, {})", o[0], o[1], o[2])?;
        }
        Ok(())
    }
}

/// Per-voxel tile cover counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub dims: Coord,
    pub counts: Vec<u32>,
    pub min: u32,
    pub max: u32,
}

impl CoverageReport {
    fn from_counts(dims: Coord, counts: Vec<u32>) -> Self {
        let min = counts.iter().copied().min().unwrap_or(0);
        let max = counts.iter().copied().max().unwrap_or(0);
        Self { dims, counts, min, max }
    }

    pub fn is_complete(&self) -> bool {
        self.min >= 1
    }

    pub fn count(&self, c: Coord) -> u32 {
        self.counts[linear_index(self.dims, c)]
    }

    pub fn first_uncovered(&self) -> Option<Coord> {
        self.counts.iter().position(|&c| c == 0).map(|i| coord_of(self.dims, i))
    }

    /// Errors with the first uncovered voxel, if any.
    pub fn require_complete(&self) -> Result<()> {
        match self.first_uncovered() {
            Some([x, y, z]) => Err(Error::Uncovered { x, y, z }),
            None => Ok(()),
        }
    }

    /// cover count -> number of voxels.
    pub fn histogram(&self) -> BTreeMap<u32, usize> {
        let mut h = BTreeMap::new();
        for &c in &self.counts {
            *h.entry(c).or_insert(0) += 1;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::coords;
    use proptest::prelude::*;

    /// Independent coverage oracle: test each voxel against each tile.
    fn brute_cover(dims: Coord, layout: &TileLayout) -> Vec<u32> {
        coords(dims)
            .map(|c| {
                layout
                    .origins()
                    .iter()
                    .filter(|o| (0..3).all(|a| c[a] >= o[a] && c[a] < o[a] + layout.tile_size()))
                    .count() as u32
            })
            .collect()
    }

    #[test]
    fn tile_equals_world() {
        let l = TileLayout::plan([16, 16, 16], 16, 8).unwrap();
        assert_eq!(l.origins(), &[[0, 0, 0]]);
        let c = l.coverage();
        assert_eq!((c.min, c.max), (1, 1));
    }

    #[test]
    fn forty_by_twentyfour() {
        let l = TileLayout::plan([40, 24, 16], 16, 8).unwrap();
        assert_eq!(l.axis_values(0), vec![0, 8, 16, 24]);
        assert_eq!(l.axis_values(1), vec![0, 8]);
        assert_eq!(l.axis_values(2), vec![0]);
        assert_eq!(l.len(), 8);
        let brute = brute_cover([40, 24, 16], &l);
        assert!(brute.iter().all(|&c| c >= 1));
        assert_eq!(brute, l.coverage().counts);
    }

    #[test]
    fn clamped_last_origin() {
        let l = TileLayout::plan([20, 16, 16], 16, 8).unwrap();
        assert_eq!(l.axis_values(0), vec![0, 4]);
        let brute = brute_cover([20, 16, 16], &l);
        for x in 16..20 {
            assert!(brute[linear_index([20, 16, 16], [x, 3, 3])] >= 1);
        }
    }

    #[test]
    fn interior_band_covered_twice() {
        let l = TileLayout::plan([24, 16, 16], 16, 8).unwrap();
        let c = l.coverage();
        assert_eq!(c.counts, brute_cover([24, 16, 16], &l));
        for x in 0..24 {
            let expected = if (8..16).contains(&x) { 2 } else { 1 };
            assert_eq!(c.count([x, 5, 9]), expected, "x = {x}");
        }
        assert_eq!((c.min, c.max), (1, 2));
    }

    #[test]
    fn removed_tile_leaves_hole() {
        let l = TileLayout::plan([32, 16, 16], 16, 16).unwrap();
        let holed = TileLayout::from_origins([32, 16, 16], 16, 16, vec![l.origins()[0]]).unwrap();
        let c = holed.coverage();
        assert_eq!(c.min, 0);
        assert!(!c.is_complete());
        assert_eq!(c.first_uncovered(), Some([16, 0, 0]));
        assert!(matches!(c.require_complete(), Err(Error::Uncovered { x: 16, .. })));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            TileLayout::plan([8, 32, 32], 16, 8),
            Err(Error::WorldSmallerThanTile { axis: 'x', .. })
        ));
        assert!(matches!(
            TileLayout::plan([32, 32, 32], 16, 0),
            Err(Error::InvalidStride { .. })
        ));
        assert!(matches!(
            TileLayout::plan([32, 32, 32], 16, 17),
            Err(Error::InvalidStride { .. })
        ));
        assert!(TileLayout::from_origins([32, 16, 16], 16, 16, vec![[16, 0, 0], [0, 0, 0]]).is_err());
    }

    #[test]
    fn decode_layouts() {
        let l = TileLayout::decode([48, 32, 16], 16).unwrap();
        assert_eq!(l.len(), 6);
        let c = l.coverage();
        assert_eq!((c.min, c.max), (1, 1));
        assert_eq!(TileLayout::decode([16, 16, 16], 16).unwrap().len(), 1);
        let clamped = TileLayout::decode([20, 16, 16], 16).unwrap();
        assert_eq!(clamped.axis_values(0), vec![0, 4]);
        assert_eq!(clamped.coverage().max, 2);
    }

    proptest! {
        #[test]
        fn plan_always_covers(
            x in 4usize..40, y in 4usize..40, z in 4usize..40,
            size_pick in 0usize..3, stride_frac in 1usize..=4
        ) {
            let size = [4, 8, 16][size_pick].min(x).min(y).min(z);
            let stride = (size * stride_frac / 4).max(1);
            let l = TileLayout::plan([x, y, z], size, stride).unwrap();
            prop_assert!(l.coverage().min >= 1);
            prop_assert!(l.origins().windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(l.clone(), TileLayout::plan([x, y, z], size, stride).unwrap());
        }

        #[test]
        fn divisible_disjoint_tiles_cover_once(nx in 1usize..4, ny in 1usize..4, nz in 1usize..3, s in 1usize..6) {
            let l = TileLayout::plan([nx * s, ny * s, nz * s], s, s).unwrap();
            let c = l.coverage();
            prop_assert_eq!((c.min, c.max), (1, 1));
        }
    }
}
