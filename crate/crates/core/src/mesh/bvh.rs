//! Bounding volume hierarchy over triangle faces, used to answer ray queries
//! in time sublinear in the face count.

use nalgebra::{Point3, Vector3};

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Point3<f64>, eps: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - eps && p[k] <= self.max[k] + eps)
    }

    fn longest_axis(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    /// Slab test; returns the entry parameter if the ray overlaps the box
    /// within `[0, max_t]`.
    #[inline]
    fn ray_entry(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = max_t;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            // NaN (0 * inf) compares false and leaves the interval untouched.
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf { first: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

const LEAF_SIZE: usize = 4;

/// Median-split BVH over face indices.
#[derive(Clone, Debug)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(face_bounds: &[Aabb]) -> Self {
        let centroids: Vec<Point3<f64>> = face_bounds.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..face_bounds.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * face_bounds.len() / LEAF_SIZE + 1);
        build_recursive(&mut nodes, &mut order, 0, face_bounds, &centroids);
        Self { nodes, order }
    }

    /// Calls `visit` for every face whose bounds overlap the ray segment.
    pub fn for_each_candidate(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        max_t: f64,
        mut visit: impl FnMut(usize),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack: [u32; 64] = [0; 64];
        let mut top = 1usize;
        while top > 0 {
            top -= 1;
            let node = &self.nodes[stack[top] as usize];
            if node.bounds.ray_entry(origin, &inv_dir, max_t).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for &f in &self.order[first as usize..(first + count) as usize] {
                        visit(f as usize);
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack[top] = right;
                    stack[top + 1] = left;
                    top += 2;
                }
            }
        }
    }
}

fn build_recursive(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    offset: usize,
    face_bounds: &[Aabb],
    centroids: &[Point3<f64>],
) -> u32 {
    let bounds = order
        .iter()
        .fold(Aabb::empty(), |acc, &f| acc.union(&face_bounds[f as usize]));
    let index = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                first: offset as u32,
                count: order.len() as u32,
            },
        });
        return index;
    }
    let centroid_bounds = Aabb::from_points(order.iter().map(|&f| &centroids[f as usize]));
    let axis = centroid_bounds.longest_axis();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf { first: 0, count: 0 },
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_recursive(nodes, lo, offset, face_bounds, centroids);
    let right = build_recursive(nodes, hi, offset + mid, face_bounds, centroids);
    nodes[index as usize].kind = NodeKind::Inner { left, right };
    index
}
