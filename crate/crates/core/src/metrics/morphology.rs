//! Connected-components labeling and the hole/fragment mask-quality scores.
//!
//! Labeling is a two-pass union-find over 8-connected neighborhoods.
//! `d_hole` counts pixels changed by filling interior background components
//! smaller than the area threshold; `d_frag` counts pixels changed by
//! removing foreground components smaller than the threshold.

use crate::geometry::Mask;
use ndarray::Array2;

pub const AREA_THRESHOLD: usize = 50;

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    pub area: usize,
    pub touches_border: bool,
}

/// Labels 8-connected components of `true` pixels. Label 0 marks `false`
/// pixels; component `i` (1-based) is described by `components[i - 1]`.
pub fn connected_components(mask: &Array2<bool>) -> (Array2<u32>, Vec<Component>) {
    let (h, w) = mask.dim();
    let mut provisional = Array2::<u32>::zeros((h, w));
    let mut sets = DisjointSets::new(h * w + 1);
    let mut next: u32 = 1;

    for r in 0..h {
        for c in 0..w {
            if !mask[(r, c)] {
                continue;
            }
            // Already-visited 8-neighbors: W, NW, N, NE.
            let mut label = 0u32;
            let mut neighbors = [0u32; 4];
            let mut count = 0;
            let push = |rr: i64, cc: i64, neighbors: &mut [u32; 4], count: &mut usize| {
                if rr >= 0 && cc >= 0 && (cc as usize) < w {
                    let l = provisional[(rr as usize, cc as usize)];
                    if l != 0 {
                        neighbors[*count] = l;
                        *count += 1;
                    }
                }
            };
            push(r as i64, c as i64 - 1, &mut neighbors, &mut count);
            push(r as i64 - 1, c as i64 - 1, &mut neighbors, &mut count);
            push(r as i64 - 1, c as i64, &mut neighbors, &mut count);
            push(r as i64 - 1, c as i64 + 1, &mut neighbors, &mut count);

            if count == 0 {
                label = next;
                next += 1;
            } else {
                for &n in &neighbors[..count] {
                    label = if label == 0 { n } else { label.min(n) };
                }
                for &n in &neighbors[..count] {
                    sets.union(label, n);
                }
            }
            provisional[(r, c)] = label;
        }
    }

    // Second pass: resolve roots and relabel compactly.
    let mut root_to_compact = vec![0u32; next as usize];
    let mut components: Vec<Component> = Vec::new();
    let mut labels = Array2::<u32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let p = provisional[(r, c)];
            if p == 0 {
                continue;
            }
            let root = sets.find(p);
            let compact = if root_to_compact[root as usize] == 0 {
                components.push(Component {
                    area: 0,
                    touches_border: false,
                });
                let id = components.len() as u32;
                root_to_compact[root as usize] = id;
                id
            } else {
                root_to_compact[root as usize]
            };
            labels[(r, c)] = compact;
            let comp = &mut components[(compact - 1) as usize];
            comp.area += 1;
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                comp.touches_border = true;
            }
        }
    }
    (labels, components)
}

fn binary(mask: &Mask) -> Array2<bool> {
    mask.data().mapv(|v| v > 0.5)
}

/// Pixels changed by filling interior holes smaller than `threshold`.
pub fn d_hole_with_threshold(mask: &Mask, threshold: usize) -> usize {
    let fg = binary(mask);
    let bg = fg.mapv(|v| !v);
    let (labels, components) = connected_components(&bg);
    let mut changed = 0usize;
    for label in labels.iter() {
        if *label == 0 {
            continue;
        }
        let comp = &components[(*label - 1) as usize];
        if !comp.touches_border && comp.area < threshold {
            changed += 1;
        }
    }
    changed
}

/// Pixels changed by removing foreground fragments smaller than `threshold`.
pub fn d_frag_with_threshold(mask: &Mask, threshold: usize) -> usize {
    let fg = binary(mask);
    let (labels, components) = connected_components(&fg);
    let mut changed = 0usize;
    for label in labels.iter() {
        if *label == 0 {
            continue;
        }
        if components[(*label - 1) as usize].area < threshold {
            changed += 1;
        }
    }
    changed
}

/// Hole score at the standard threshold of 50 pixels.
pub fn d_hole(mask: &Mask) -> usize {
    d_hole_with_threshold(mask, AREA_THRESHOLD)
}

/// Fragment score at the standard threshold of 50 pixels.
pub fn d_frag(mask: &Mask) -> usize {
    d_frag_with_threshold(mask, AREA_THRESHOLD)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&[u8]]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Mask::from_fn(h, w, |r, c| rows[r][c] as f32)
    }

    #[test]
    fn solid_square_is_clean() {
        let m = Mask::from_fn(24, 24, |r, c| {
            if (2..22).contains(&r) && (2..22).contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(d_hole(&m), 0);
        assert_eq!(d_frag(&m), 0);
    }

    #[test]
    fn single_missing_interior_pixel_is_a_hole() {
        let m = Mask::from_fn(14, 14, |r, c| {
            let inside = (2..12).contains(&r) && (2..12).contains(&c);
            if inside && !(r == 7 && c == 7) {
                1.0
            } else {
                0.0
            }
        });
        // 10x10 square (area 100) with one pixel removed.
        assert_eq!(d_hole(&m), 1);
        assert_eq!(d_frag(&m), 0);
    }

    #[test]
    fn small_fragment_is_removed() {
        let m = Mask::from_fn(32, 32, |r, c| {
            let big = (2..22).contains(&r) && (2..22).contains(&c);
            let frag = (26..29).contains(&r) && (26..29).contains(&c);
            if big || frag {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(d_frag(&m), 9);
        assert_eq!(d_hole(&m), 0);
    }

    #[test]
    fn border_touching_background_is_not_a_hole() {
        // A bay open to the border has small area but must not be filled.
        let m = mask_from(&[
            &[1, 1, 1, 1, 1],
            &[1, 0, 0, 0, 1],
            &[1, 1, 0, 1, 1],
            &[1, 1, 0, 1, 1],
        ]);
        // The background pocket connects to row 3 ... actually the pocket
        // reaches the bottom border through column 2.
        assert_eq!(d_hole(&m), 0);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = mask_from(&[
            &[1, 0, 0],
            &[0, 1, 0],
            &[0, 0, 1],
        ]);
        let (_, components) = connected_components(&m.data().mapv(|v| v > 0.5));
        assert_eq!(components.len(), 1);
        assert_eq!(components[0].area, 3);
        // All three pixels form one sub-threshold fragment.
        assert_eq!(d_frag(&m), 3);
    }

    #[test]
    fn empty_mask_scores_zero() {
        let m = Mask::zeros(16, 16);
        assert_eq!(d_hole(&m), 0);
        assert_eq!(d_frag(&m), 0);
    }

    #[test]
    fn labels_partition_the_foreground() {
        let m = mask_from(&[
            &[1, 1, 0, 1],
            &[0, 0, 0, 1],
            &[1, 0, 1, 0],
        ]);
        let (labels, components) = connected_components(&m.data().mapv(|v| v > 0.5));
        let total: usize = components.iter().map(|c| c.area).sum();
        assert_eq!(total, m.count_above(0.5));
        for ((r, c), l) in labels.indexed_iter() {
            assert_eq!(*l > 0, m.data()[(r, c)] > 0.5);
        }
        // {(0,0),(0,1)}, {(0,3),(1,3)}, {(2,0)}, {(2,2)} with 8-connectivity:
        // (2,2) touches (1,3)? No: they are diagonal -> yes they connect.
        assert_eq!(components.len(), 3);
    }
}
