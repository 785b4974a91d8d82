//! Global degree-of-freedom layout.
//!
//! Fields (stress is eliminated element-locally and owns no global dofs):
//! fluid velocity [P_k]^2 and pressure P_{k-1} per fluid element; fluid
//! velocity/pressure traces [P_k]^2 / P_k per fluid facet; structure velocity
//! and displacement [P_k]^2 per solid element; structure velocity/displacement
//! traces per solid facet; continuous [P_k]^2 mesh displacement on the fluid
//! submesh; one optional scalar pressure-gauge multiplier.
//!
//! On interface facets the structure velocity trace is identified with the
//! fluid velocity trace: both sides address the same coefficients, which is
//! what couples the momentum balances into one shared trace row.
//!
//! The state vector stores every coefficient including Dirichlet-masked ones
//! (masked slots hold boundary values); the unknown vector excludes them.
//! Unknown index == residual row index throughout the solver.

use std::ops::Range;

use crate::basis::{segment_ndofs, triangle_ndofs, triangle_nodes};
use crate::mesh::{BoundaryLabel, FacetKind, Mesh, Region, LOCAL_EDGES};

pub const MASKED: i64 = -1;

/// Classification of a mesh-displacement node, in masking priority order:
/// outer Dirichlet wins over the interface constraint at shared corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshNodeClass {
    OuterBoundary,
    Interface,
    Interior,
}

/// Interface constraint for one mesh-displacement node: the node's value is
/// the weighted average of structure displacement trace values (vertex nodes
/// average their adjacent interface facets; edge nodes copy their facet node).
#[derive(Debug, Clone)]
pub struct InterfaceNodeConstraint {
    pub node: usize,
    /// (facet id, trace node index, weight)
    pub terms: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct MeshNodeTable {
    pub coords: Vec<[f64; 2]>,
    pub class: Vec<MeshNodeClass>,
    /// Per fluid element (in fluid-element order): global node ids in the
    /// triangle basis layout order.
    pub elem_nodes: Vec<Vec<usize>>,
    pub interface_constraints: Vec<InterfaceNodeConstraint>,
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub k: usize,
    /// Scalar dofs: P_k element, P_{k-1} element, P_k facet trace.
    pub np_k: usize,
    pub np_km1: usize,
    pub nt: usize,

    pub fluid_elements: Vec<usize>,
    pub solid_elements: Vec<usize>,
    fluid_elem_pos: Vec<usize>,
    solid_elem_pos: Vec<usize>,
    pub fluid_facets: Vec<usize>,
    pub solid_facets: Vec<usize>,
    /// Solid facets that own their velocity-trace storage (excludes interface).
    pub solid_own_trace_facets: Vec<usize>,
    pub interface_facets: Vec<usize>,
    fluid_facet_pos: Vec<usize>,
    solid_facet_pos: Vec<usize>,
    solid_own_trace_pos: Vec<usize>,

    pub off_fluid_vel: usize,
    pub off_fluid_pres: usize,
    pub off_fluid_vtrace: usize,
    pub off_fluid_ptrace: usize,
    pub off_struct_vel: usize,
    pub off_struct_disp: usize,
    pub off_struct_vtrace: usize,
    pub off_struct_dtrace: usize,
    pub off_mesh_disp: usize,
    pub off_gauge: usize,
    pub state_len: usize,

    pub gauge_active: bool,
    pub mesh_nodes: MeshNodeTable,

    unknown_of_state: Vec<i64>,
    state_of_unknown: Vec<usize>,
}

const INVALID: usize = usize::MAX;

impl DofMap {
    pub fn build(mesh: &Mesh, k: usize) -> Self {
        assert!((1..=3).contains(&k), "polynomial degree must be 1, 2, or 3");
        let np_k = triangle_ndofs(k);
        let np_km1 = triangle_ndofs(k - 1);
        let nt = segment_ndofs(k);

        let fluid_elements: Vec<usize> = mesh.elements_in(Region::Fluid).collect();
        let solid_elements: Vec<usize> = mesh.elements_in(Region::Solid).collect();
        let mut fluid_elem_pos = vec![INVALID; mesh.triangles().len()];
        for (p, &e) in fluid_elements.iter().enumerate() {
            fluid_elem_pos[e] = p;
        }
        let mut solid_elem_pos = vec![INVALID; mesh.triangles().len()];
        for (p, &e) in solid_elements.iter().enumerate() {
            solid_elem_pos[e] = p;
        }

        let mut fluid_facets = Vec::new();
        let mut solid_facets = Vec::new();
        let mut solid_own_trace_facets = Vec::new();
        let mut interface_facets = Vec::new();
        let nf = mesh.facets().len();
        let mut fluid_facet_pos = vec![INVALID; nf];
        let mut solid_facet_pos = vec![INVALID; nf];
        let mut solid_own_trace_pos = vec![INVALID; nf];
        for (fi, facet) in mesh.facets().iter().enumerate() {
            if facet.kind.is_fluid_side() {
                fluid_facet_pos[fi] = fluid_facets.len();
                fluid_facets.push(fi);
            }
            if facet.kind.is_solid_side() {
                solid_facet_pos[fi] = solid_facets.len();
                solid_facets.push(fi);
                if facet.kind != FacetKind::Interface {
                    solid_own_trace_pos[fi] = solid_own_trace_facets.len();
                    solid_own_trace_facets.push(fi);
                }
            }
            if facet.kind == FacetKind::Interface {
                interface_facets.push(fi);
            }
        }

        let mesh_nodes = build_mesh_nodes(mesh, k, &fluid_elements);
        // A constant pressure shift is only a null mode when the flow is
        // enclosed AND there is no interface: coupled to a compressible solid,
        // the shift changes the interface traction and is resisted, so the
        // pressure level is determined and pinning it would be inconsistent.
        let gauge_active =
            !mesh.has_outlet() && interface_facets.is_empty() && !fluid_elements.is_empty();

        let off_fluid_vel = 0;
        let off_fluid_pres = off_fluid_vel + fluid_elements.len() * 2 * np_k;
        let off_fluid_vtrace = off_fluid_pres + fluid_elements.len() * np_km1;
        let off_fluid_ptrace = off_fluid_vtrace + fluid_facets.len() * 2 * nt;
        let off_struct_vel = off_fluid_ptrace + fluid_facets.len() * nt;
        let off_struct_disp = off_struct_vel + solid_elements.len() * 2 * np_k;
        let off_struct_vtrace = off_struct_disp + solid_elements.len() * 2 * np_k;
        let off_struct_dtrace = off_struct_vtrace + solid_own_trace_facets.len() * 2 * nt;
        let off_mesh_disp = off_struct_dtrace + solid_facets.len() * 2 * nt;
        let off_gauge = off_mesh_disp + mesh_nodes.coords.len() * 2;
        let state_len = off_gauge + usize::from(gauge_active);

        // Dirichlet masks.
        let mut masked = vec![false; state_len];
        for &fi in &fluid_facets {
            if matches!(
                mesh.facets()[fi].kind,
                FacetKind::Boundary(BoundaryLabel::FluidWall) | FacetKind::Boundary(BoundaryLabel::Inlet)
            ) {
                let base = off_fluid_vtrace + fluid_facet_pos[fi] * 2 * nt;
                for d in 0..2 * nt {
                    masked[base + d] = true;
                }
            }
        }
        for &fi in &solid_facets {
            if mesh.facets()[fi].kind == FacetKind::Boundary(BoundaryLabel::SolidClamp) {
                let vbase = off_struct_vtrace + solid_own_trace_pos[fi] * 2 * nt;
                let dbase = off_struct_dtrace + solid_facet_pos[fi] * 2 * nt;
                for d in 0..2 * nt {
                    masked[vbase + d] = true;
                    masked[dbase + d] = true;
                }
            }
        }
        for (node, class) in mesh_nodes.class.iter().enumerate() {
            if *class == MeshNodeClass::OuterBoundary {
                masked[off_mesh_disp + 2 * node] = true;
                masked[off_mesh_disp + 2 * node + 1] = true;
            }
        }

        let mut unknown_of_state = vec![MASKED; state_len];
        let mut state_of_unknown = Vec::with_capacity(state_len);
        for (s, &m) in masked.iter().enumerate() {
            if !m {
                unknown_of_state[s] = state_of_unknown.len() as i64;
                state_of_unknown.push(s);
            }
        }

        Self {
            k,
            np_k,
            np_km1,
            nt,
            fluid_elements,
            solid_elements,
            fluid_elem_pos,
            solid_elem_pos,
            fluid_facets,
            solid_facets,
            solid_own_trace_facets,
            interface_facets,
            fluid_facet_pos,
            solid_facet_pos,
            solid_own_trace_pos,
            off_fluid_vel,
            off_fluid_pres,
            off_fluid_vtrace,
            off_fluid_ptrace,
            off_struct_vel,
            off_struct_disp,
            off_struct_vtrace,
            off_struct_dtrace,
            off_mesh_disp,
            off_gauge,
            state_len,
            gauge_active,
            mesh_nodes,
            unknown_of_state,
            state_of_unknown,
        }
    }

    pub fn n_unknowns(&self) -> usize {
        self.state_of_unknown.len()
    }

    pub fn unknown_of(&self, state_idx: usize) -> Option<usize> {
        let u = self.unknown_of_state[state_idx];
        (u != MASKED).then_some(u as usize)
    }

    pub fn state_of(&self, unknown: usize) -> usize {
        self.state_of_unknown[unknown]
    }

    pub fn fluid_elem_position(&self, element: usize) -> usize {
        let p = self.fluid_elem_pos[element];
        debug_assert_ne!(p, INVALID);
        p
    }

    pub fn solid_elem_position(&self, element: usize) -> usize {
        let p = self.solid_elem_pos[element];
        debug_assert_ne!(p, INVALID);
        p
    }

    pub fn fluid_facet_position(&self, facet: usize) -> usize {
        let p = self.fluid_facet_pos[facet];
        debug_assert_ne!(p, INVALID);
        p
    }

    pub fn solid_facet_position(&self, facet: usize) -> usize {
        let p = self.solid_facet_pos[facet];
        debug_assert_ne!(p, INVALID);
        p
    }

    /// State slots of the fluid velocity on an element (node-major, x then y).
    pub fn fluid_vel(&self, element: usize) -> Range<usize> {
        let p = self.fluid_elem_position(element);
        let base = self.off_fluid_vel + p * 2 * self.np_k;
        base..base + 2 * self.np_k
    }

    pub fn fluid_pres(&self, element: usize) -> Range<usize> {
        let p = self.fluid_elem_position(element);
        let base = self.off_fluid_pres + p * self.np_km1;
        base..base + self.np_km1
    }

    pub fn fluid_vtrace(&self, facet: usize) -> Range<usize> {
        let p = self.fluid_facet_position(facet);
        let base = self.off_fluid_vtrace + p * 2 * self.nt;
        base..base + 2 * self.nt
    }

    pub fn fluid_ptrace(&self, facet: usize) -> Range<usize> {
        let p = self.fluid_facet_position(facet);
        let base = self.off_fluid_ptrace + p * self.nt;
        base..base + self.nt
    }

    pub fn struct_vel(&self, element: usize) -> Range<usize> {
        let p = self.solid_elem_position(element);
        let base = self.off_struct_vel + p * 2 * self.np_k;
        base..base + 2 * self.np_k
    }

    pub fn struct_disp(&self, element: usize) -> Range<usize> {
        let p = self.solid_elem_position(element);
        let base = self.off_struct_disp + p * 2 * self.np_k;
        base..base + 2 * self.np_k
    }

    /// Structure velocity trace slots; on interface facets this redirects to
    /// the shared fluid velocity trace.
    pub fn struct_vtrace(&self, facet: usize) -> Range<usize> {
        let own = self.solid_own_trace_pos[facet];
        if own == INVALID {
            self.fluid_vtrace(facet)
        } else {
            let base = self.off_struct_vtrace + own * 2 * self.nt;
            base..base + 2 * self.nt
        }
    }

    pub fn struct_dtrace(&self, facet: usize) -> Range<usize> {
        let p = self.solid_facet_position(facet);
        let base = self.off_struct_dtrace + p * 2 * self.nt;
        base..base + 2 * self.nt
    }

    pub fn mesh_disp_node(&self, node: usize) -> Range<usize> {
        let base = self.off_mesh_disp + 2 * node;
        base..base + 2
    }

    pub fn mesh_disp_all(&self) -> Range<usize> {
        self.off_mesh_disp..self.off_mesh_disp + 2 * self.mesh_nodes.coords.len()
    }

    pub fn gauge(&self) -> Option<usize> {
        self.gauge_active.then_some(self.off_gauge)
    }

    /// Mesh-displacement state slots of one fluid element in basis node order.
    pub fn mesh_disp_elem_states(&self, element: usize) -> Vec<usize> {
        let p = self.fluid_elem_position(element);
        let mut out = Vec::with_capacity(2 * self.np_k);
        for &node in &self.mesh_nodes.elem_nodes[p] {
            out.push(self.off_mesh_disp + 2 * node);
            out.push(self.off_mesh_disp + 2 * node + 1);
        }
        out
    }
}

fn build_mesh_nodes(mesh: &Mesh, k: usize, fluid_elements: &[usize]) -> MeshNodeTable {
    let nv = mesh.vertices().len();
    let mut vertex_node = vec![INVALID; nv];
    let mut coords: Vec<[f64; 2]> = Vec::new();
    let mut class: Vec<MeshNodeClass> = Vec::new();

    // Vertex classification over all facets (outer fluid boundary wins).
    let mut vertex_class = vec![MeshNodeClass::Interior; nv];
    let mut vertex_interface_facets: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (fi, facet) in mesh.facets().iter().enumerate() {
        match facet.kind {
            FacetKind::Boundary(BoundaryLabel::FluidWall)
            | FacetKind::Boundary(BoundaryLabel::Inlet)
            | FacetKind::Boundary(BoundaryLabel::Outlet) => {
                for &v in &facet.vertices {
                    vertex_class[v] = MeshNodeClass::OuterBoundary;
                }
            }
            FacetKind::Interface => {
                for &v in &facet.vertices {
                    if vertex_class[v] != MeshNodeClass::OuterBoundary {
                        vertex_class[v] = MeshNodeClass::Interface;
                    }
                    vertex_interface_facets[v].push(fi);
                }
            }
            _ => {}
        }
    }
    // A vertex may have been classified by an interface facet before an outer
    // facet was seen; the loop above already gives outer priority for the
    // boundary kinds, but an interface-adjacent vertex can still be promoted
    // afterwards, so re-scan boundaries once more for strictness.
    for facet in mesh.facets() {
        if matches!(
            facet.kind,
            FacetKind::Boundary(BoundaryLabel::FluidWall)
                | FacetKind::Boundary(BoundaryLabel::Inlet)
                | FacetKind::Boundary(BoundaryLabel::Outlet)
        ) {
            for &v in &facet.vertices {
                vertex_class[v] = MeshNodeClass::OuterBoundary;
            }
        }
    }

    // Edge nodes: k-1 per fluid facet, indexed along the canonical direction.
    let mut edge_nodes: Vec<Vec<usize>> = vec![Vec::new(); mesh.facets().len()];
    let ref_nodes = triangle_nodes(k);
    let np_k = ref_nodes.len();

    let mut elem_nodes: Vec<Vec<usize>> = Vec::with_capacity(fluid_elements.len());
    for &e in fluid_elements {
        let tri = mesh.triangles()[e];
        let facets = mesh.triangle_facets(e);
        let mut nodes = Vec::with_capacity(np_k);
        // Vertices first (basis layout puts them first for k >= 1).
        for &v in &tri.vertices {
            if vertex_node[v] == INVALID {
                vertex_node[v] = coords.len();
                coords.push(mesh.vertices()[v]);
                class.push(vertex_class[v]);
            }
            nodes.push(vertex_node[v]);
        }
        // Edge nodes in local-edge order.
        for (le, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
            if k < 2 {
                break;
            }
            let fi = facets[le];
            let facet = &mesh.facets()[fi];
            let side = facet
                .sides
                .iter()
                .find(|s| s.element == e)
                .expect("element listed on its own facet");
            if edge_nodes[fi].is_empty() {
                let facet_class = match facet.kind {
                    FacetKind::Boundary(BoundaryLabel::FluidWall)
                    | FacetKind::Boundary(BoundaryLabel::Inlet)
                    | FacetKind::Boundary(BoundaryLabel::Outlet) => MeshNodeClass::OuterBoundary,
                    FacetKind::Interface => MeshNodeClass::Interface,
                    _ => MeshNodeClass::Interior,
                };
                let (pa, pb) = (
                    mesh.vertices()[facet.vertices[0]],
                    mesh.vertices()[facet.vertices[1]],
                );
                for i in 1..k {
                    let t = i as f64 / k as f64;
                    edge_nodes[fi].push(coords.len());
                    coords.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
                    class.push(facet_class);
                }
            }
            let (ga, gb) = (tri.vertices[a], tri.vertices[b]);
            debug_assert_eq!(side.same_direction, ga < gb);
            for i in 1..k {
                // Local node at fraction i/k along a -> b; canonical index in
                // the facet's low -> high direction.
                let canonical = if side.same_direction { i } else { k - i };
                nodes.push(edge_nodes[fi][canonical - 1]);
            }
        }
        // Interior nodes are element-private.
        for extra in nodes.len()..np_k {
            let p = ref_nodes[extra];
            let (origin, jac) = mesh.element_map(e);
            coords.push([
                origin[0] + jac[0][0] * p[0] + jac[0][1] * p[1],
                origin[1] + jac[1][0] * p[0] + jac[1][1] * p[1],
            ]);
            class.push(MeshNodeClass::Interior);
            nodes.push(coords.len() - 1);
        }
        debug_assert_eq!(nodes.len(), np_k);
        elem_nodes.push(nodes);
    }

    // Interface constraints: edge nodes copy their facet's trace node; vertex
    // nodes average the endpoint values of their adjacent interface facets.
    let mut interface_constraints = Vec::new();
    for (node, cls) in class.iter().enumerate() {
        if *cls != MeshNodeClass::Interface {
            continue;
        }
        // Vertex node?
        let vertex = vertex_node
            .iter()
            .position(|&vn| vn == node)
            .map(|v| v as i64)
            .unwrap_or(-1);
        if vertex >= 0 {
            let v = vertex as usize;
            let adj = &vertex_interface_facets[v];
            debug_assert!(!adj.is_empty());
            let w = 1.0 / adj.len() as f64;
            let terms = adj
                .iter()
                .map(|&fi| {
                    let idx = if mesh.facets()[fi].vertices[0] == v { 0 } else { k };
                    (fi, idx, w)
                })
                .collect();
            interface_constraints.push(InterfaceNodeConstraint { node, terms });
        } else {
            // Edge node: find its facet and canonical index.
            let mut found = None;
            'outer: for (fi, list) in edge_nodes.iter().enumerate() {
                for (pos, &n) in list.iter().enumerate() {
                    if n == node {
                        found = Some((fi, pos + 1));
                        break 'outer;
                    }
                }
            }
            let (fi, idx) = found.expect("interface edge node must lie on an interface facet");
            interface_constraints.push(InterfaceNodeConstraint {
                node,
                terms: vec![(fi, idx, 1.0)],
            });
        }
    }

    MeshNodeTable {
        coords,
        class,
        elem_nodes,
        interface_constraints,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    #[test]
    fn local_sizes_match_for_k1() {
        let mesh = Mesh::build_structured_square(2, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 1);
        // Per fluid element: velocity 6, pressure 1; per facet: velocity trace
        // 4, pressure trace 2 (so a lone triangle would carry 6 + 12 of them).
        assert_eq!(dm.np_k, 3);
        assert_eq!(dm.np_km1, 1);
        assert_eq!(dm.nt, 2);
        let e = dm.fluid_elements[0];
        assert_eq!(dm.fluid_vel(e).len(), 6);
        assert_eq!(dm.fluid_pres(e).len(), 1);
        let f = dm.fluid_facets[0];
        assert_eq!(dm.fluid_vtrace(f).len(), 4);
        assert_eq!(dm.fluid_ptrace(f).len(), 2);
    }

    #[test]
    fn state_count_audit_n2_k1() {
        let mesh = Mesh::build_structured_square(2, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 1);
        let n_f = dm.fluid_elements.len(); // 4
        let n_s = dm.solid_elements.len(); // 4
        let ff = dm.fluid_facets.len();
        let sf = dm.solid_facets.len();
        let sof = dm.solid_own_trace_facets.len();
        let nodes = dm.mesh_nodes.coords.len();
        let expected_state = n_f * 6 + n_f * 1 + ff * 4 + ff * 2 + n_s * 6 + n_s * 6 + sof * 4
            + sf * 4
            + nodes * 2; // interface present: pressure level determined, no gauge
        assert!(!dm.gauge_active);
        assert_eq!(dm.state_len, expected_state);

        // Masked: fluid traces on the outer fluid boundary, structure traces
        // on the clamped boundary (velocity + displacement), mesh displacement
        // on outer fluid boundary nodes.
        let mesh_f = &mesh;
        let fluid_wall_facets = mesh_f
            .facets()
            .iter()
            .filter(|f| matches!(f.kind, FacetKind::Boundary(BoundaryLabel::FluidWall)))
            .count();
        let clamp_facets = mesh_f
            .facets()
            .iter()
            .filter(|f| matches!(f.kind, FacetKind::Boundary(BoundaryLabel::SolidClamp)))
            .count();
        let outer_nodes = dm
            .mesh_nodes
            .class
            .iter()
            .filter(|c| **c == MeshNodeClass::OuterBoundary)
            .count();
        let masked = fluid_wall_facets * 4 + clamp_facets * (4 + 4) + outer_nodes * 2;
        assert_eq!(dm.n_unknowns(), dm.state_len - masked);
    }

    #[test]
    fn interface_traces_are_identified() {
        let mesh = Mesh::build_structured_square(2, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 2);
        for &fi in &dm.interface_facets {
            assert_eq!(dm.struct_vtrace(fi), dm.fluid_vtrace(fi));
            assert_ne!(dm.struct_dtrace(fi), dm.fluid_vtrace(fi));
        }
        // Non-interface solid facets own distinct storage.
        for &fi in &dm.solid_own_trace_facets {
            assert!(dm.struct_vtrace(fi).start >= dm.off_struct_vtrace);
        }
    }

    #[test]
    fn dirichlet_masks_follow_labels() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 1);
        for (fi, facet) in mesh.facets().iter().enumerate() {
            match facet.kind {
                FacetKind::Boundary(BoundaryLabel::FluidWall) => {
                    for s in dm.fluid_vtrace(fi) {
                        assert!(dm.unknown_of(s).is_none());
                    }
                    // Pressure traces are never masked.
                    for s in dm.fluid_ptrace(fi) {
                        assert!(dm.unknown_of(s).is_some());
                    }
                }
                FacetKind::Boundary(BoundaryLabel::SolidClamp) => {
                    for s in dm.struct_vtrace(fi).chain(dm.struct_dtrace(fi)) {
                        assert!(dm.unknown_of(s).is_none());
                    }
                }
                FacetKind::Interface => {
                    for s in dm.fluid_vtrace(fi).chain(dm.struct_dtrace(fi)) {
                        assert!(dm.unknown_of(s).is_some());
                    }
                }
                _ => {}
            }
        }
    }

    #[test]
    fn mesh_nodes_classified_with_outer_priority() {
        let mesh = Mesh::build_structured_square(4, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 1);
        // Interface endpoints on the outer boundary must be OuterBoundary.
        let mut interface_nodes = 0;
        for (node, cls) in dm.mesh_nodes.class.iter().enumerate() {
            let [x, y] = dm.mesh_nodes.coords[node];
            if (x - 0.5).abs() < 1e-14 && (y == 0.0 || y == 1.0) {
                assert_eq!(*cls, MeshNodeClass::OuterBoundary);
            }
            if *cls == MeshNodeClass::Interface {
                interface_nodes += 1;
                assert!((x - 0.5).abs() < 1e-14);
            }
        }
        // Interior interface vertices: (0.5, 0.25), (0.5, 0.5), (0.5, 0.75).
        assert_eq!(interface_nodes, 3);
        // Each gets a constraint; interior vertices average two facets.
        assert_eq!(dm.mesh_nodes.interface_constraints.len(), 3);
        for c in &dm.mesh_nodes.interface_constraints {
            assert_eq!(c.terms.len(), 2);
            assert!((c.terms.iter().map(|t| t.2).sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn k2_edge_nodes_shared_between_elements() {
        let mesh = Mesh::build_structured_square(2, 0.5).unwrap();
        let dm = DofMap::build(&mesh, 2);
        // CG node count for P2 on the fluid submesh: vertices + one per edge.
        let nv_fluid: std::collections::HashSet<usize> = mesh
            .elements_in(Region::Fluid)
            .flat_map(|e| mesh.triangles()[e].vertices)
            .collect();
        let fluid_edges = mesh
            .facets()
            .iter()
            .filter(|f| f.kind.is_fluid_side())
            .count();
        assert_eq!(dm.mesh_nodes.coords.len(), nv_fluid.len() + fluid_edges);
        // Shared edges appear once: count node references.
        let mut refs = std::collections::HashMap::new();
        for nodes in &dm.mesh_nodes.elem_nodes {
            for &n in nodes {
                *refs.entry(n).or_insert(0usize) += 1;
            }
        }
        assert!(refs.values().any(|&c| c > 1));
    }

    #[test]
    fn gauge_present_only_for_enclosed_all_fluid_domains() {
        // Coupled square: enclosed but with an interface -> no gauge.
        let square = Mesh::build_structured_square(2, 0.5).unwrap();
        assert!(DofMap::build(&square, 1).gauge().is_none());
        // All-fluid enclosed cavity -> constant pressure is a null mode.
        use crate::mesh::Triangle;
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
        let cavity = Mesh::from_raw(vertices, triangles, &boundary).unwrap();
        assert!(DofMap::build(&cavity, 1).gauge().is_some());
    }
}
