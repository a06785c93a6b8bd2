//! Non-learned baseline codec: breadth-first octree occupancy coding of a
//! normalized cloud at a fixed depth. Occupancy bytes are emitted raw; the
//! baseline exists to provide a clean rate-distortion reference curve.

use std::collections::BTreeSet;

use crate::autodiff::ByteReader;
use crate::pointset::{Point, PointCloud};
use crate::{Error, Result};

pub const OCTREE_MAGIC: [u8; 4] = *b"VOCT";
pub const MAX_DEPTH: u8 = 12;

/// Root bounds for normalized clouds: the [-1, 1] cube.
pub const ROOT_MIN: Point = [-1.0, -1.0, -1.0];
pub const ROOT_MAX: Point = [1.0, 1.0, 1.0];

/// Breadth-first occupancy code. One byte per occupied internal node, one
/// bit per child, child order = (x_hi << 2) | (y_hi << 1) | z_hi.
#[derive(Debug, Clone, PartialEq)]
pub struct OctreeCode {
    pub depth: u8,
    pub min: Point,
    pub max: Point,
    pub occupancy: Vec<u8>,
}

type Cell = (u32, u32, u32);

fn check_depth(depth: u8) -> Result<()> {
    if depth < 1 || depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "octree depth {depth} outside 1..={MAX_DEPTH}"
        )));
    }
    Ok(())
}

pub fn octree_encode(pc: &PointCloud, depth: u8) -> Result<OctreeCode> {
    check_depth(depth)?;
    if pc.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let cells = 1u32 << depth;
    let side = ROOT_MAX[0] - ROOT_MIN[0];
    let mut leaves: BTreeSet<Cell> = BTreeSet::new();
    for p in &pc.points {
        for c in 0..3 {
            if p[c] < ROOT_MIN[c] || p[c] > ROOT_MAX[c] {
                return Err(Error::OutOfBounds(p[0], p[1], p[2]));
            }
        }
        let coord = |v: f64| -> u32 {
            let f = ((v - ROOT_MIN[0]) / side * cells as f64).floor();
            (f as i64).clamp(0, cells as i64 - 1) as u32
        };
        leaves.insert((coord(p[0]), coord(p[1]), coord(p[2])));
    }

    // occupied nodes per level, derived from the leaves
    let mut level_sets: Vec<BTreeSet<Cell>> = vec![BTreeSet::new(); depth as usize + 1];
    for &(x, y, z) in &leaves {
        for level in 0..=depth {
            let s = depth - level;
            level_sets[level as usize].insert((x >> s, y >> s, z >> s));
        }
    }

    let mut occupancy = Vec::new();
    let mut frontier: Vec<Cell> = vec![(0, 0, 0)];
    for level in 0..depth {
        let next_set = &level_sets[level as usize + 1];
        let mut next = Vec::new();
        for &(x, y, z) in &frontier {
            let mut byte = 0u8;
            for child in 0..8u8 {
                let cx = (x << 1) | (child >> 2) as u32;
                let cy = (y << 1) | ((child >> 1) & 1) as u32;
                let cz = (z << 1) | (child & 1) as u32;
                if next_set.contains(&(cx, cy, cz)) {
                    byte |= 1 << child;
                    next.push((cx, cy, cz));
                }
            }
            occupancy.push(byte);
        }
        frontier = next;
    }
    Ok(OctreeCode {
        depth,
        min: ROOT_MIN,
        max: ROOT_MAX,
        occupancy,
    })
}

/// Decode occupied leaf-cell centers, in breadth-first cell order.
pub fn octree_decode(code: &OctreeCode) -> Result<PointCloud> {
    check_depth(code.depth)?;
    let mut frontier: Vec<Cell> = vec![(0, 0, 0)];
    let mut pos = 0usize;
    for _ in 0..code.depth {
        let mut next = Vec::new();
        for &(x, y, z) in &frontier {
            let byte = *code
                .occupancy
                .get(pos)
                .ok_or_else(|| Error::Bitstream("truncated octree occupancy".into()))?;
            pos += 1;
            if byte == 0 {
                return Err(Error::Bitstream("occupied node with no children".into()));
            }
            for child in 0..8u8 {
                if byte & (1 << child) != 0 {
                    next.push((
                        (x << 1) | (child >> 2) as u32,
                        (y << 1) | ((child >> 1) & 1) as u32,
                        (z << 1) | (child & 1) as u32,
                    ));
                }
            }
        }
        frontier = next;
    }
    if pos != code.occupancy.len() {
        return Err(Error::Bitstream("trailing octree occupancy bytes".into()));
    }
    let cells = 1u32 << code.depth;
    let points = frontier
        .iter()
        .map(|&(x, y, z)| {
            let center = |min: f64, max: f64, i: u32| {
                min + (max - min) * (i as f64 + 0.5) / cells as f64
            };
            [
                center(code.min[0], code.max[0], x),
                center(code.min[1], code.max[1], y),
                center(code.min[2], code.max[2], z),
            ]
        })
        .collect();
    PointCloud::new(points)
}

/// Worst-case distance from any encoded point to its decoded leaf center.
pub fn error_bound(depth: u8) -> f64 {
    let side = ROOT_MAX[0] - ROOT_MIN[0];
    (3.0f64.sqrt() / 2.0) * side / (1u64 << depth) as f64
}

impl OctreeCode {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(53 + self.occupancy.len());
        out.extend_from_slice(&OCTREE_MAGIC);
        out.push(self.depth);
        for v in self.min.iter().chain(self.max.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.occupancy);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<OctreeCode> {
        let mut r = ByteReader::new(bytes);
        let trunc = |_| Error::Bitstream("truncated octree stream".into());
        if r.take(4).map_err(trunc)? != OCTREE_MAGIC {
            return Err(Error::Bitstream("bad octree magic".into()));
        }
        let depth = r.u8().map_err(trunc)?;
        check_depth(depth)?;
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for v in min.iter_mut().chain(max.iter_mut()) {
            *v = r.f64().map_err(trunc)?;
        }
        let occupancy = r.take(r.remaining()).unwrap().to_vec();
        Ok(OctreeCode { depth, min, max, occupancy })
    }

    /// Serialized size in bits, the rate used for baseline RD curves.
    pub fn bits(&self) -> usize {
        self.to_bytes().len() * 8
    }
}
