//! Deterministic solid meshes with known volumes.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use crate::mesh::TriangleMesh;

#[derive(Default)]
struct Builder {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl Builder {
    fn vertex(&mut self, p: Point3<f64>) -> usize {
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    /// Adds the convex quad `a b c d` as two triangles, wound so the normal
    /// points along `outward`.
    fn quad(&mut self, mut q: [usize; 4], outward: Vector3<f64>) {
        let [a, b, c, _] = q;
        let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
        if n.dot(&outward) < 0.0 {
            q.reverse();
        }
        self.faces.push([q[0], q[1], q[2]]);
        self.faces.push([q[0], q[2], q[3]]);
    }

    /// Axis-aligned box; `skip` omits the face whose outward normal is
    /// `-x` (`Some(false)`) or `+x` (`Some(true)`).
    fn cuboid(&mut self, center: Point3<f64>, half: Vector3<f64>, skip: Option<bool>) -> [usize; 8] {
        let mut v = [0usize; 8];
        for (i, slot) in v.iter_mut().enumerate() {
            let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
            *slot = self.vertex(center + Vector3::new(s(1) * half.x, s(2) * half.y, s(4) * half.z));
        }
        if skip != Some(false) {
            self.quad([v[0], v[2], v[6], v[4]], -Vector3::x());
        }
        if skip != Some(true) {
            self.quad([v[1], v[3], v[7], v[5]], Vector3::x());
        }
        self.quad([v[0], v[1], v[5], v[4]], -Vector3::y());
        self.quad([v[2], v[3], v[7], v[6]], Vector3::y());
        self.quad([v[0], v[1], v[3], v[2]], -Vector3::z());
        self.quad([v[4], v[5], v[7], v[6]], Vector3::z());
        v
    }

    fn build(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.faces).expect("fixture meshes are valid")
    }
}

/// Axis-aligned cube of the given side, centered at the origin: 8 vertices,
/// 12 triangles.
pub fn cube(side: f64) -> TriangleMesh {
    box_mesh(Point3::origin(), Vector3::repeat(0.5 * side))
}

/// Axis-aligned box with the given center and half-extents.
pub fn box_mesh(center: Point3<f64>, half_extents: Vector3<f64>) -> TriangleMesh {
    let mut b = Builder::default();
    b.cuboid(center, half_extents, None);
    b.build()
}

/// Two disjoint unit cubes centered at `(-2, 0, 0)` and `(2, 0, 0)`.
pub fn twin_cubes() -> TriangleMesh {
    let mut b = Builder::default();
    b.cuboid(Point3::new(-2.0, 0.0, 0.0), Vector3::repeat(0.5), None);
    b.cuboid(Point3::new(2.0, 0.0, 0.0), Vector3::repeat(0.5), None);
    b.build()
}

/// Half side of the square bridge joining the dumbbell's cubes.
pub const BRIDGE_HALF_WIDTH: f64 = 0.1;

/// Two unit cubes at `x = ±2` joined by a 0.2 x 0.2 square prism spanning
/// the gap `[-1.5, 1.5]`, forming one connected watertight solid of volume
/// 2.12.
pub fn dumbbell() -> TriangleMesh {
    let mut b = Builder::default();
    let w = BRIDGE_HALF_WIDTH;
    let mut rings = [[0usize; 4]; 2];
    for (side, ring) in [-1.0f64, 1.0].into_iter().zip(rings.iter_mut()) {
        let center = Point3::new(2.0 * side, 0.0, 0.0);
        // The inner face (pointing toward the origin) is replaced by an
        // annulus around the bridge opening.
        let open_plus_x = side < 0.0;
        let v = b.cuboid(center, Vector3::repeat(0.5), Some(open_plus_x));
        let x = 2.0 * side - 0.5 * side;
        let outer = if open_plus_x {
            [v[1], v[3], v[7], v[5]]
        } else {
            [v[0], v[2], v[6], v[4]]
        };
        // Outer corners in (y, z): (-,-), (+,-), (+,+), (-,+).
        let inner = [
            b.vertex(Point3::new(x, -w, -w)),
            b.vertex(Point3::new(x, w, -w)),
            b.vertex(Point3::new(x, w, w)),
            b.vertex(Point3::new(x, -w, w)),
        ];
        let outward = Vector3::x() * -side;
        for k in 0..4 {
            let n = (k + 1) % 4;
            b.quad([outer[k], outer[n], inner[n], inner[k]], outward);
        }
        *ring = inner;
    }
    let [left, right] = rings;
    let normals = [-Vector3::z(), Vector3::y(), Vector3::z(), -Vector3::y()];
    for k in 0..4 {
        let n = (k + 1) % 4;
        b.quad([left[k], left[n], right[n], right[k]], normals[k]);
    }
    b.build()
}

/// Subdivided icosahedron projected onto a sphere: `20 * 4^subdivisions`
/// faces.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Point3::from(Vector3::from(*c).normalize()))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                mid[k] = *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    let m = (vertices[a].coords + vertices[b].coords).normalize();
                    vertices.push(Point3::from(m));
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = Point3::from(v.coords * radius);
    }
    for f in &mut faces {
        let [a, b, c] = f.map(|i| vertices[i]);
        let centroid = (a.coords + b.coords + c.coords) / 3.0;
        if (b - a).cross(&(c - a)).dot(&centroid) < 0.0 {
            f.swap(1, 2);
        }
    }
    TriangleMesh::new(vertices, faces).expect("icosphere is valid")
}
