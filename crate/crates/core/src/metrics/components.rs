//! 3D connected-component labelling and volume filtering.

use serde::{Deserialize, Serialize};

use crate::volume::{component_volume_mm3, BinaryMask, Dims, Spacing};

/// Voxel adjacency: 6 shares a face, 26 shares a face, edge or corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "6")]
    Six,
    #[default]
    #[serde(rename = "26")]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }

    /// Neighbour offsets that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<(isize, isize, isize)> {
        let mut out = Vec::new();
        for dz in -1..=0isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity::Six && manhattan != 1 {
                        continue;
                    }
                    out.push((dx, dy, dz));
                }
            }
        }
        out
    }
}

/// Labelled components of a mask. Labels run `1..=count()` in order of each
/// component's first voxel in scan order; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    dims: Dims,
    spacing: Spacing,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl Components {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Voxel count of component `label` is `sizes()[label - 1]`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn volume_mm3(&self, label: u32) -> f64 {
        component_volume_mm3(self.sizes[label as usize - 1], self.spacing)
    }

    /// Renumbers labels through `map` (old label → new label, 0 drops the
    /// component); sizes follow.
    fn remap(&self, map: &[u32], new_count: usize) -> Components {
        let labels: Vec<u32> = self
            .labels
            .iter()
            .map(|&l| if l == 0 { 0 } else { map[l as usize] })
            .collect();
        let mut sizes = vec![0usize; new_count];
        for &l in &labels {
            if l != 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        Components {
            dims: self.dims,
            spacing: self.spacing,
            labels,
            sizes,
        }
    }

    /// Same partition with labels permuted by `perm` (a permutation of
    /// `1..=count()` given as `perm[old - 1] = new`).
    pub fn relabeled(&self, perm: &[u32]) -> Components {
        let mut map = vec![0u32; self.count() + 1];
        for (old, &new) in perm.iter().enumerate() {
            map[old + 1] = new;
        }
        self.remap(&map, self.count())
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let dims = mask.dims();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![0u32; dims.len()];
    let mut parent: Vec<u32> = vec![0];
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !mask.is_set(i) {
                    continue;
                }
                let mut current = 0u32;
                for &(dx, dy, dz) in &offsets {
                    let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= dims.nx as isize || ny >= dims.ny as isize {
                        continue;
                    }
                    let l = provisional[dims.index(nx as usize, ny as usize, nz as usize)];
                    if l == 0 {
                        continue;
                    }
                    if current == 0 {
                        current = l;
                    } else if current != l {
                        union(&mut parent, current, l);
                    }
                }
                if current == 0 {
                    current = parent.len() as u32;
                    parent.push(current);
                }
                provisional[i] = current;
            }
        }
    }
    // Final labels in order of first appearance of each root.
    let mut root_label = vec![0u32; parent.len()];
    let mut next = 0u32;
    let mut sizes = Vec::new();
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if root_label[root] == 0 {
            next += 1;
            root_label[root] = next;
            sizes.push(0);
        }
        *l = root_label[root];
        sizes[*l as usize - 1] += 1;
    }
    Components {
        dims,
        spacing: mask.spacing(),
        labels: provisional,
        sizes,
    }
}

/// Drops components smaller than `min_mm3` (a component of exactly
/// `min_mm3` is kept); survivors are renumbered in their original order.
pub fn filter_components_by_volume(components: &Components, min_mm3: f64) -> Components {
    let mut map = vec![0u32; components.count() + 1];
    let mut next = 0u32;
    for label in 1..=components.count() as u32 {
        if components.volume_mm3(label) >= min_mm3 {
            next += 1;
            map[label as usize] = next;
        }
    }
    components.remap(&map, next as usize)
}
