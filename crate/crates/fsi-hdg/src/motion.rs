//! Weighted-harmonic mesh displacement on the fluid submesh: continuous P_k
//! vector field driven by Dirichlet data, zero on the outer fluid boundary
//! and equal to the (averaged) structure displacement trace on the interface.
//!
//! The stiffness (kappa grad eta, grad m) acts component-wise with one scalar
//! matrix, so everything here is assembled in scalar mesh-node space.

use crate::dofs::{DofMap, MeshNodeClass};
use crate::geometry::{mat_vec, RefTables, Vec2};
use crate::linalg::SparseMatrix;
use crate::mesh::Mesh;

/// Scalar CG stiffness in mesh-node indices (shared by both components).
pub struct MotionStiffness {
    pub n_nodes: usize,
    pub triplets: Vec<(usize, usize, f64)>,
}

/// Local stiffness of one fluid element: entry (i, j) couples the element's
/// i-th and j-th mesh nodes in basis layout order.
pub fn element_stiffness(
    mesh: &Mesh,
    tab: &RefTables,
    element: usize,
    kappa: &dyn Fn(Vec2) -> f64,
) -> Vec<Vec<f64>> {
    let np = tab.np_k;
    let (origin, jac) = mesh.element_map(element);
    let detb = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let binvt = [
        [jac[1][1] / detb, -jac[1][0] / detb],
        [-jac[0][1] / detb, jac[0][0] / detb],
    ];
    let mut s = vec![vec![0.0; np]; np];
    for (q, wm) in tab.vol_w.iter().enumerate() {
        let xi = tab.vol_pts[q];
        let p = [
            origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
            origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
        ];
        let w = wm * detb * kappa(p);
        let mut g: Vec<Vec2> = Vec::with_capacity(np);
        for i in 0..np {
            let gm = [tab.tri.grads[(q * np + i) * 2], tab.tri.grads[(q * np + i) * 2 + 1]];
            g.push(mat_vec(&binvt, &gm));
        }
        for i in 0..np {
            for j in 0..np {
                s[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    s
}

/// Assembles the scalar stiffness over all fluid elements.
pub fn assemble_motion(
    mesh: &Mesh,
    dm: &DofMap,
    tab: &RefTables,
    kappa: &dyn Fn(Vec2) -> f64,
) -> MotionStiffness {
    let mut triplets = Vec::new();
    for (pos, &element) in dm.fluid_elements.iter().enumerate() {
        let local = element_stiffness(mesh, tab, element, kappa);
        let nodes = &dm.mesh_nodes.elem_nodes[pos];
        for (i, &ni) in nodes.iter().enumerate() {
            for (j, &nj) in nodes.iter().enumerate() {
                triplets.push((ni, nj, local[i][j]));
            }
        }
    }
    MotionStiffness { n_nodes: dm.mesh_nodes.coords.len(), triplets }
}

/// Interface Dirichlet values from per-facet displacement-trace coefficients:
/// facet-interior nodes copy; shared vertices average over incident facets.
/// `dtrace` maps an interface facet id to its nt trace node values.
pub fn interface_bc_values(
    dm: &DofMap,
    dtrace: &dyn Fn(usize) -> Vec<Vec2>,
) -> Vec<(usize, Vec2)> {
    dm.mesh_nodes
        .interface_constraints
        .iter()
        .map(|c| {
            let mut v = [0.0; 2];
            for &(facet, idx, w) in &c.terms {
                let tv = dtrace(facet);
                v[0] += w * tv[idx][0];
                v[1] += w * tv[idx][1];
            }
            (c.node, v)
        })
        .collect()
}

/// Solves the harmonic extension with zero outer data and the given interface
/// values; returns displacements for every mesh node.
pub fn solve_motion(
    mesh: &Mesh,
    dm: &DofMap,
    tab: &RefTables,
    kappa: &dyn Fn(Vec2) -> f64,
    interface_values: &[(usize, Vec2)],
    load: Option<&[Vec2]>,
) -> Vec<Vec2> {
    let stiff = assemble_motion(mesh, dm, tab, kappa);
    let n = stiff.n_nodes;
    let mut fixed: Vec<Option<Vec2>> = vec![None; n];
    for (node, class) in dm.mesh_nodes.class.iter().enumerate() {
        if *class == MeshNodeClass::OuterBoundary {
            fixed[node] = Some([0.0; 2]);
        }
    }
    for &(node, v) in interface_values {
        fixed[node] = Some(v);
    }
    // Reduced numbering of free nodes.
    let mut index: Vec<isize> = vec![-1; n];
    let mut free = Vec::new();
    for node in 0..n {
        if fixed[node].is_none() {
            index[node] = free.len() as isize;
            free.push(node);
        }
    }
    let mut out: Vec<Vec2> = (0..n).map(|i| fixed[i].unwrap_or([0.0; 2])).collect();
    if free.is_empty() {
        return out;
    }
    let mut reduced = Vec::new();
    let mut rhs = vec![[0.0; 2]; free.len()];
    if let Some(l) = load {
        for (r, &node) in free.iter().enumerate() {
            rhs[r] = l[node];
        }
    }
    for &(i, j, v) in &stiff.triplets {
        if index[i] < 0 {
            continue;
        }
        let r = index[i] as usize;
        if let Some(bc) = fixed[j] {
            rhs[r][0] -= v * bc[0];
            rhs[r][1] -= v * bc[1];
        } else {
            reduced.push((r, index[j] as usize, v));
        }
    }
    let m = SparseMatrix::from_triplets(free.len(), free.len(), &reduced)
        .expect("reduced indices in range");
    let lu = crate::linalg::lu_factor(&m).expect("motion stiffness is SPD on free nodes");
    for c in 0..2 {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let x = lu.solve(&b).expect("motion solve");
        for (r, &node) in free.iter().enumerate() {
            out[node][c] = x[r];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use nalgebra::DMatrix;

    #[test]
    fn linear_element_stiffness_is_textbook_laplacian() {
        // Master triangle: gradients (-1,-1), (1,0), (0,1), area 1/2.
        use crate::mesh::{BoundaryLabel, Region, Triangle};
        use std::collections::BTreeMap;
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let triangles = vec![
            Triangle { vertices: [0, 1, 2], region: Region::Fluid },
            Triangle { vertices: [1, 3, 2], region: Region::Fluid },
        ];
        let mut boundary = BTreeMap::new();
        for edge in [(0, 1), (1, 3), (2, 3), (0, 2)] {
            boundary.insert(edge, BoundaryLabel::FluidWall);
        }
        let mesh = Mesh::from_raw(vertices, triangles, &boundary).unwrap();
        let tab = RefTables::build(1, 4, 4);
        let s = element_stiffness(&mesh, &tab, 0, &|_| 1.0);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (s[i][j] - expect[i][j]).abs() < 1e-14,
                    "({i},{j}): {} vs {}",
                    s[i][j],
                    expect[i][j]
                );
            }
        }
        // kappa = 2 doubles every entry.
        let s2 = element_stiffness(&mesh, &tab, 0, &|_| 2.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((s2[i][j] - 2.0 * s[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn assembled_stiffness_symmetric_and_positive_definite_on_free_nodes() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 2);
        let tab = RefTables::build(2, 6, 6);
        let stiff = assemble_motion(&mesh, &dm, &tab, &|p| 1.0 + 0.3 * p[0]);
        let n = stiff.n_nodes;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for &(i, j, v) in &stiff.triplets {
            dense[(i, j)] += v;
        }
        assert!((&dense - dense.transpose()).amax() < 1e-14);
        // Restrict to free (non-Dirichlet) nodes and factor.
        let free: Vec<usize> = (0..n)
            .filter(|&i| dm.mesh_nodes.class[i] == MeshNodeClass::Interior)
            .collect();
        assert!(!free.is_empty());
        let mut sub = DMatrix::zeros(free.len(), free.len());
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                sub[(a, b)] = dense[(i, j)];
            }
        }
        assert!(sub.cholesky().is_some(), "free-node stiffness not SPD");
    }

    #[test]
    fn interface_values_copy_and_average() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let k = 2;
        let dm = DofMap::build(&mesh, k);
        let nt = dm.nt;
        // Zero trace -> zero BC.
        let zero = interface_bc_values(&dm, &|_| vec![[0.0; 2]; nt]);
        assert!(zero.iter().all(|(_, v)| v[0] == 0.0 && v[1] == 0.0));
        // Continuous trace d(y) = (y, 2y): every node gets the exact value.
        let cont = interface_bc_values(&dm, &|facet| {
            let [lo, hi] = mesh.facets()[facet].vertices;
            let (a, b) = (mesh.vertices()[lo], mesh.vertices()[hi]);
            crate::basis::segment_nodes(k)
                .iter()
                .map(|&t| {
                    let y = a[1] + t * (b[1] - a[1]);
                    [y, 2.0 * y]
                })
                .collect()
        });
        for &(node, v) in &cont {
            let y = dm.mesh_nodes.coords[node][1];
            assert!((v[0] - y).abs() < 1e-14 && (v[1] - 2.0 * y).abs() < 1e-14);
        }
        // Traces differing by eps at a shared vertex average to the midpoint.
        let eps = 1e-3;
        let shifted = interface_bc_values(&dm, &|facet| {
            let [lo, hi] = mesh.facets()[facet].vertices;
            let (a, b) = (mesh.vertices()[lo], mesh.vertices()[hi]);
            // Lower facet reports y, upper facet reports y + eps.
            let offset = if a[1].min(b[1]) > 0.49 { eps } else { 0.0 };
            crate::basis::segment_nodes(k)
                .iter()
                .map(|&t| {
                    let y = a[1] + t * (b[1] - a[1]);
                    [y + offset, 0.0]
                })
                .collect()
        });
        // The vertex at y = 0.5 is shared by the two interface facets.
        let mid: Vec<_> = shifted
            .iter()
            .filter(|(node, _)| {
                let c = dm.mesh_nodes.coords[*node];
                (c[1] - 0.5).abs() < 1e-12 && c[0] > 0.49
            })
            .collect();
        assert_eq!(mid.len(), 1);
        assert!((mid[0].1[0] - (0.5 + eps / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_interface_data_gives_zero_displacement() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 2);
        let tab = RefTables::build(2, 6, 6);
        let bc = interface_bc_values(&dm, &|_| vec![[0.0; 2]; dm.nt]);
        let eta = solve_motion(&mesh, &dm, &tab, &|_| 1.0, &bc, None);
        for v in &eta {
            assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
        }
    }

    #[test]
    fn harmonic_extension_respects_componentwise_bounds() {
        // Constant interface displacement delta, zero outer boundary:
        // the discrete harmonic extension stays within [0, delta] up to a
        // tiny overshoot tolerance.
        let mesh = Mesh::build_structured_square(6, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 2);
        let tab = RefTables::build(2, 6, 6);
        let delta = 0.01;
        let bc = interface_bc_values(&dm, &|_| vec![[delta, -delta]; dm.nt]);
        let eta = solve_motion(&mesh, &dm, &tab, &|_| 1.0, &bc, None);
        for v in &eta {
            assert!(v[0] >= -1e-12 && v[0] <= delta * (1.0 + 1e-6), "x comp {}", v[0]);
            assert!(v[1] <= 1e-12 && v[1] >= -delta * (1.0 + 1e-6), "y comp {}", v[1]);
        }
    }
}
